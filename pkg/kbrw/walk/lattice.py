from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional, Tuple

import numpy as np
from scipy import linalg

from ..config import Config
from ..config_loader import section
from ..errors import ParameterError, ResourceError, SolverError
from .engine import Exit


BoundaryFn = Callable[[np.ndarray], np.ndarray]


def default_max_states() -> int:
    """KBRW_MAX_STATES when set, else max_states of the solver config."""
    return Config.MAX_STATES or int(section("solver", {"max_states": 5000})["max_states"])


def _zero(s: np.ndarray) -> np.ndarray:
    return np.zeros_like(s, dtype=float)


def _one(s: np.ndarray) -> np.ndarray:
    return np.ones_like(s, dtype=float)


@dataclass
class LatticeStrip:
    """Integer walk on the interior states lower..upper.

    A step that lands strictly above ``upper`` or strictly below ``lower`` is
    absorbed; Q is the substochastic interior transition matrix.
    """

    lower: int
    upper: int
    support: np.ndarray
    probs: np.ndarray
    max_states: Optional[int] = None
    _lu: Optional[Tuple[np.ndarray, np.ndarray]] = field(default=None, init=False, repr=False)

    def __post_init__(self) -> None:
        if int(self.lower) != self.lower or int(self.upper) != self.upper:
            raise ParameterError("strip barriers must be integers")
        self.lower, self.upper = int(self.lower), int(self.upper)
        if self.lower > self.upper:
            raise ParameterError(f"lower={self.lower} above upper={self.upper}")
        self.support = np.asarray(self.support, dtype=np.int64)
        self.probs = np.asarray(self.probs, dtype=float)
        if self.max_states is None:
            self.max_states = default_max_states()
        if self.size > self.max_states:
            raise ResourceError(f"strip has {self.size} states, cap is {self.max_states}")
        n = self.size
        q = np.zeros((n, n))
        rows = np.arange(n)
        for y, p in zip(self.support, self.probs):
            cols = rows + y
            keep = (cols >= 0) & (cols < n)
            q[rows[keep], cols[keep]] += p
        self.Q = q

    @classmethod
    def from_law(cls, law, lower: int, upper: int, max_states: Optional[int] = None) -> "LatticeStrip":
        lattice = getattr(law, "law", law).lattice()
        if lattice is None:
            raise ParameterError("exact solvers need an integer-lattice step law")
        support, probs = lattice
        return cls(lower, upper, support, probs, max_states)

    @property
    def size(self) -> int:
        return self.upper - self.lower + 1

    @property
    def states(self) -> np.ndarray:
        return np.arange(self.lower, self.upper + 1)

    def index(self, z: int) -> int:
        if int(z) != z or not self.lower <= z <= self.upper:
            raise ParameterError(f"z={z} is not an interior state of [{self.lower}, {self.upper}]")
        return int(z) - self.lower

    def exit_vector(self, top: BoundaryFn = _zero, bottom: BoundaryFn = _zero) -> np.ndarray:
        """r(i) = E_i[f(S_1); S_1 absorbed], f = top above upper, bottom below lower."""
        states = self.states
        r = np.zeros(self.size)
        for y, p in zip(self.support, self.probs):
            landing = states + y
            above = landing > self.upper
            below = landing < self.lower
            if above.any():
                r[above] += p * top(landing[above].astype(float))
            if below.any():
                r[below] += p * bottom(landing[below].astype(float))
        return r

    def factor(self) -> Tuple[np.ndarray, np.ndarray]:
        if self._lu is None:
            # I - Q is a row diagonally dominant M-matrix; its transpose factors
            # without row interchanges and the triangular solves stay sign-definite
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                lu = linalg.lu_factor((np.eye(self.size) - self.Q).T)
            pivots = np.abs(np.diag(lu[0]))
            if not np.all(np.isfinite(pivots)) or pivots.min() <= 1e-13 * max(1.0, pivots.max()):
                raise SolverError("I - Q is singular: the walk never leaves the strip")
            self._lu = lu
        return self._lu

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """Solve (I - Q) x = rhs."""
        return linalg.lu_solve(self.factor(), rhs, trans=1)


def fundamental_matrix(strip: LatticeStrip) -> np.ndarray:
    """N = (I - Q)^{-1}; N[i, j] is the expected number of visits to j from i."""
    return strip.solve(np.eye(strip.size))


def hitting_vector(strip: LatticeStrip) -> np.ndarray:
    return strip.solve(strip.exit_vector(top=_one))


def exact_hitting_probability(strip: LatticeStrip, z: int) -> float:
    """P^z(exit above upper before below lower)."""
    i = strip.index(z)
    return float(hitting_vector(strip)[i])


class GreenQuantity(str, Enum):
    PATH_0_TO_K = "path0tok"
    PATH_K_TO_K = "pathktok"
    PATH_K_TO_0 = "pathkto0"

    @property
    def side(self) -> Exit:
        return Exit.BOTTOM if self is GreenQuantity.PATH_K_TO_0 else Exit.TOP

    def start(self, strip: LatticeStrip, x: float = 0.0) -> int:
        if self is GreenQuantity.PATH_0_TO_K:
            return strip.lower
        return strip.upper - int(x)

    def scaling(self, k: float, x: float = 0.0) -> float:
        """Factor that turns the quantity into a statistic bounded in k."""
        if self is GreenQuantity.PATH_0_TO_K:
            return float(k)
        if self is GreenQuantity.PATH_K_TO_K:
            return k * k / (1.0 + x)
        return 1.0 / (1.0 + x)


def exact_green_sums(strip: LatticeStrip, start: int, quantity: GreenQuantity) -> float:
    """Exact weighted Green sum on the strip with R = S - lower and k = upper - lower.

    Top quantities: E[e^{U} sum_{l<=tau} e^{-R_l}(R_l + 1); exit top].
    Bottom quantity: E[e^{-L} sum_{l<=tau} e^{-R_l}(k - R_l + 1); exit bottom].
    The sum over interior visits is N applied to weight * boundary term; the
    exit position itself is the one-step absorbed term.
    """
    i = strip.index(start)
    lower, upper = strip.lower, strip.upper
    span = float(upper - lower)
    r_int = (strip.states - lower).astype(float)

    if GreenQuantity(quantity).side is Exit.TOP:
        boundary = lambda s: np.exp(s - upper)  # noqa: E731
        weight = lambda r: np.exp(-r) * (r + 1.0)  # noqa: E731
        h = strip.solve(strip.exit_vector(top=boundary))
        last = strip.exit_vector(top=lambda s: boundary(s) * weight(s - lower))
    else:
        boundary = lambda s: np.exp(-(lower - s))  # noqa: E731
        weight = lambda r: np.exp(-r) * (span - r + 1.0)  # noqa: E731
        h = strip.solve(strip.exit_vector(bottom=boundary))
        last = strip.exit_vector(bottom=lambda s: boundary(s) * weight(s - lower))
    total = strip.solve(weight(r_int) * h + last)
    return float(total[i])


def exact_passage_constant(law, x: int, k: int) -> float:
    """k * P^x(tau_k^+ < tau_0^-), which tends to x + E^x[L_0] as k grows."""
    strip = LatticeStrip.from_law(law, 0, k)
    return k * exact_hitting_probability(strip, x)


def gamblers_ruin(z: float, k: float) -> float:
    """Closed form (z + 1)/(k + 2) for the simple symmetric walk on 0..k."""
    return (z + 1.0) / (k + 2.0)
