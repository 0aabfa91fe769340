from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Optional, Tuple, Union

import numpy as np
from scipy import optimize

from ..config_loader import section
from ..errors import CalibrationError, InfimumNotInteriorError, ParameterError, SolverError
from ..logging import run_logger
from .laws import Draw, Family, GaussianLaw, StepLaw, TwoPointLaw, build_law, tilted_lattice


RHO_TOL = 1e-12
CRITICAL_TOL = 1e-10
_TINY = 1e-6
_T_MAX = 1e4


def solver_tol(name: str, default: float) -> float:
    return float(section("solver", {name: default})[name])


@dataclass
class StepModel:
    """Step law of the branching random walk together with its branching factor b.

    ``rho`` and ``phi_at_rho`` are filled by :func:`find_rho`; after that the
    model is treated as immutable and may be shared between threads.
    """

    law: StepLaw
    b: int
    rho: Optional[float] = None
    phi_at_rho: Optional[float] = None
    critical: bool = False
    _tilted: Optional["TiltedStep"] = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if isinstance(self.b, bool) or int(self.b) != self.b or self.b < 2:
            raise ParameterError(f"branching factor b={self.b!r} must be an integer >= 2")
        self.b = int(self.b)

    @property
    def family(self) -> Family:
        return self.law.family

    @property
    def laplace_domain(self) -> Tuple[float, float]:
        return self.law.domain

    @property
    def is_lattice(self) -> bool:
        return self.law.is_lattice

    def require_rho(self) -> float:
        if self.rho is None:
            find_rho(self)
        assert self.rho is not None
        return self.rho

    def tilted(self) -> "TiltedStep":
        rho = self.require_rho()
        if self._tilted is None or self._tilted.rho != rho:
            self._tilted = TiltedStep(self)
        return self._tilted

    def to_spec(self) -> Dict[str, Any]:
        return {"family": self.family.value, "params": self.law.params(), "b": self.b}

    @classmethod
    def from_spec(cls, spec: Dict[str, Any]) -> "StepModel":
        """Build from ``{family, params, b}``; ``calibrate: true`` solves the free parameter."""
        family = Family(spec["family"])
        params = dict(spec.get("params") or {})
        if spec.get("calibrate"):
            return calibrate_critical(family, spec["b"], **params)
        model = cls(build_law(family, params), spec["b"])
        find_rho(model)
        model.critical = abs(criticality_residual(model)) <= solver_tol("critical_tol", CRITICAL_TOL)
        return model


@dataclass
class TiltedStep:
    """Step law under the change of measure dQ/dP = e^{rho y}/phi(rho)."""

    base: StepModel
    law: StepLaw = field(init=False)
    rho: float = field(init=False)

    def __post_init__(self) -> None:
        rho = self.rho = self.base.require_rho()
        self.law = self.base.law.tilt(rho, self.base.phi_at_rho)

    def density_ratio(self, y):
        return np.exp(self.base.rho * np.asarray(y, dtype=float)) / self.base.phi_at_rho

    def mean(self) -> float:
        return self.law.mean()

    def sample(self, rng: np.random.Generator, size: Optional[int] = None) -> Draw:
        return self.law.sample(rng, size)

    def lattice(self):
        return self.law.lattice()


def laplace(model: Union[StepModel, StepLaw], t: float) -> float:
    law = model.law if isinstance(model, StepModel) else model
    return law.laplace(t)


def _bisect_derivative(law: StepLaw, lo: float, hi: float) -> float:
    try:
        return optimize.bisect(law.laplace_prime, lo, hi, xtol=1e-15, rtol=1e-15, maxiter=400)
    except (ValueError, RuntimeError) as e:
        raise SolverError(f"bisection on phi' failed in [{lo}, {hi}]: {e}") from e


def find_rho(model: StepModel, tol: Optional[float] = None) -> float:
    """Locate the positive minimizer of phi and cache it on the model.

    ``tol`` defaults to ``rho_tol`` of the solver config.
    """
    if tol is None:
        tol = solver_tol("rho_tol", RHO_TOL)
    if tol <= 0:
        raise ParameterError("tol must be positive")
    law = model.law
    lo = _TINY
    if not law.laplace_prime(lo) < 0:
        raise InfimumNotInteriorError("phi is nondecreasing at 0+: the infimum is not at a positive interior point")
    hi = 2.0 * lo
    while True:
        if hi > _T_MAX:
            raise InfimumNotInteriorError("no sign change of phi' before the domain edge")
        try:
            d = law.laplace_prime(hi)
        except OverflowError:
            d = math.inf
        if not math.isfinite(d):
            raise InfimumNotInteriorError("phi overflows before its derivative changes sign")
        if d > 0:
            break
        if d == 0:
            lo = hi
            break
        lo, hi = hi, 2.0 * hi
    rho = lo if law.laplace_prime(lo) == 0 else _bisect_derivative(law, lo, hi)
    phi = law.laplace(rho)
    residual = abs(law.laplace_prime(rho))
    if residual > tol * max(1.0, phi):
        raise SolverError(f"|phi'(rho)|={residual:.3e} above tolerance {tol:.1e}")
    model.rho = rho
    model.phi_at_rho = phi
    run_logger.log_solver("find_rho", family=model.family.value, rho=rho, phi_at_rho=phi, residual=residual)
    return rho


def laplace_minimizer(law: StepLaw) -> float:
    """Unconstrained minimizer of phi (may be negative)."""
    d0 = law.laplace_prime(0.0)
    if d0 == 0:
        return 0.0
    direction = 1.0 if d0 < 0 else -1.0
    near, far = 0.0, direction
    while law.laplace_prime(far) * direction < 0:
        near, far = far, 2.0 * far
        if abs(far) > _T_MAX:
            raise InfimumNotInteriorError("phi has no interior minimizer")
    lo, hi = sorted((near, far))
    return _bisect_derivative(law, lo, hi)


def criticality_residual(model: StepModel) -> float:
    """phi(rho) - 1/b; positive means supercritical (survival), negative subcritical."""
    model.require_rho()
    return model.phi_at_rho - 1.0 / model.b


def calibrate_by_root(build: Callable[[float], StepLaw], b: int, lo: float, hi: float) -> StepModel:
    """Solve min_t phi_theta(t) = 1/b over a free parameter theta bracketed by [lo, hi]."""

    def residual(theta: float) -> float:
        model = StepModel(build(theta), b)
        find_rho(model)
        return criticality_residual(model)

    try:
        theta = optimize.brentq(residual, lo, hi, xtol=1e-15, rtol=1e-15, maxiter=500)
    except ValueError as e:
        raise CalibrationError(f"no critical parameter in [{lo}, {hi}]: {e}") from e
    return _finish(StepModel(build(theta), b))


def _finish(model: StepModel) -> StepModel:
    find_rho(model)
    res = criticality_residual(model)
    tol = solver_tol("critical_tol", CRITICAL_TOL)
    if abs(res) > tol:
        raise CalibrationError(f"criticality residual {res:.3e} above {tol:.0e}")
    model.critical = True
    return model


def calibrate_critical(family: Union[str, Family], b: int, **fixed: Any) -> StepModel:
    """Return a critical model, phi(rho) = 1/b, solving the family's free parameter."""
    if isinstance(b, bool) or int(b) != b or b < 2:
        raise ParameterError(f"branching factor b={b!r} must be an integer >= 2")
    b = int(b)
    family = Family(family)

    if family is Family.TWO_POINT:
        if "p" in fixed:
            raise CalibrationError("two_point with fixed p has no free parameter")
        x = 1.0 / (b * b)
        # (1 - sqrt(1 - x)) / 2 without cancellation
        p = x / (2.0 * (1.0 + math.sqrt(1.0 - x)))
        return _finish(StepModel(TwoPointLaw(p), b))

    if family is Family.GAUSSIAN:
        mu, sigma = fixed.get("mu"), fixed.get("sigma")
        if mu is not None and sigma is not None:
            raise CalibrationError("gaussian with fixed mu and sigma has no free parameter")
        if mu is None:
            sigma = 1.0 if sigma is None else float(sigma)
            return _finish(StepModel(GaussianLaw(-sigma * math.sqrt(2.0 * math.log(b)), sigma), b))
        if mu >= 0:
            raise CalibrationError("gaussian with mu >= 0 cannot be made critical")
        return _finish(StepModel(GaussianLaw(mu, -mu / math.sqrt(2.0 * math.log(b))), b))

    # user_lattice: the free parameter is an exponential tilt s of the weights
    if "tilt" in fixed or "probs" in fixed:
        raise CalibrationError("user_lattice with fixed probabilities has no free parameter")
    support, weights = fixed.get("support"), fixed.get("weights")
    if support is None or weights is None:
        raise CalibrationError("user_lattice calibration needs support and weights")
    base = tilted_lattice(support, weights, 0.0)
    rho0 = laplace_minimizer(base)
    build = lambda s: tilted_lattice(support, weights, s)  # noqa: E731
    hi = rho0 - 1e-3
    width = 1.0
    while True:
        lo = rho0 - width
        model = StepModel(build(lo), b)
        find_rho(model)
        if criticality_residual(model) < 0:
            break
        width *= 2.0
        if width > _T_MAX:
            raise CalibrationError("no tilt makes the lattice law critical")
    return calibrate_by_root(build, b, lo, hi)


def sample_step(model: Union[StepModel, StepLaw], rng: np.random.Generator, size: Optional[int] = None) -> Draw:
    law = model.law if isinstance(model, StepModel) else model
    return law.sample(rng, size)


def sample_tilted_step(model: StepModel, rng: np.random.Generator, size: Optional[int] = None) -> Draw:
    return model.tilted().sample(rng, size)
