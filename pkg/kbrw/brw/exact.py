"""Exact lattice recursions for branching counts on a strip.

Moment recursions are solved for the tilted profiles f(y) = e^{-rho(y - a)} m(y),
whose transition weights b p(s) e^{rho s} have total mass b phi(rho) = 1 at
criticality. Every right-hand side is nonnegative, so small profile values
keep their relative accuracy.
"""
from __future__ import annotations

from typing import Optional, Tuple

import numpy as np

from ..config_loader import section
from ..errors import ConvergenceError, DomainError, ParameterError
from ..logging import run_logger
from ..model.step_model import CRITICAL_TOL, StepModel
from ..walk.lattice import LatticeStrip


_SOLVER_DEFAULTS = {"fixed_point_tol": 1e-12, "fixed_point_max_sweeps": 10**6}


def _integer(value, name: str) -> int:
    if int(value) != value:
        raise ParameterError(f"{name}={value} must be an integer")
    return int(value)


def _branching_strip(model: StepModel, lower: int, upper: int) -> Tuple[LatticeStrip, float]:
    lattice = model.law.lattice()
    if lattice is None:
        raise ParameterError("exact branching recursions need an integer-lattice step law")
    rho = model.require_rho()
    support, probs = lattice
    weights = model.b * probs * np.exp(rho * support)
    mass = float(weights.sum())
    if mass > 1.0 + 10 * model.b * CRITICAL_TOL:
        raise DomainError(f"b * phi(rho) = {mass:.12g} > 1: the model is supercritical")
    return LatticeStrip(lower, upper, support, weights), rho


def first_moment_profile(model: StepModel, a: int, k: int) -> np.ndarray:
    """E^y[Z(a, k)] for y = a..k."""
    strip, rho = _branching_strip(model, a, k)
    f = strip.solve(strip.exit_vector(bottom=lambda s: np.exp(rho * (a - s))))
    return np.exp(rho * (strip.states - a)) * f


def second_moment_profile(model: StepModel, a: int, k: int) -> np.ndarray:
    """E^y[Z(a, k)^2] for y = a..k.

    Uses m2 = b Q m2 + b r + ((b-1)/b) m1^2, since the mean over one step of
    m1 (extended by 1 below a, 0 above k) is m1/b.
    """
    strip, rho = _branching_strip(model, a, k)
    b = model.b
    r = strip.exit_vector(bottom=lambda s: np.exp(rho * (a - s)))
    f = strip.solve(r)
    grow = np.exp(rho * (strip.states - a))
    w = strip.solve(r + (b - 1) / b * grow * f * f)
    return grow * w


def _check_order(a: int, k: int) -> None:
    if not a < k:
        raise ParameterError(f"need a < k, got a={a}, k={k}")


def exact_brw_first_moment(model: StepModel, a, k, y) -> float:
    a, k, y = _integer(a, "a"), _integer(k, "k"), _integer(y, "y")
    _check_order(a, k)
    if y < a:
        return 1.0
    if y > k:
        return 0.0
    return float(first_moment_profile(model, a, k)[y - a])


def exact_brw_second_moment(model: StepModel, a, k, y) -> float:
    a, k, y = _integer(a, "a"), _integer(k, "k"), _integer(y, "y")
    _check_order(a, k)
    if y < a:
        return 1.0
    if y > k:
        return 0.0
    return float(second_moment_profile(model, a, k)[y - a])


def _h_profiles(model: StepModel, k: int, second: bool):
    strip, rho = _branching_strip(model, 0, k)
    r = strip.exit_vector(top=lambda s: np.exp(-rho * (s - k)))
    g = strip.solve(r)
    shrink = np.exp(rho * (strip.states - k))
    h1 = shrink * g
    if not second:
        return h1, None
    b = model.b
    g2 = strip.solve(r + (b - 1) / b * shrink * g * g)
    return h1, shrink * g2


def _h_value(model: StepModel, k, x, second: bool) -> float:
    k, x = _integer(k, "k"), _integer(x, "x")
    if k < 0:
        raise ParameterError(f"k={k} must be >= 0")
    if x < 0:
        return 0.0
    if x > k:
        return 1.0
    h1, h2 = _h_profiles(model, k, second)
    return float((h2 if second else h1)[x])


def exact_h_first_moment(model: StepModel, k, x) -> float:
    """E^x[H(k)]: particles first going above k with every ancestor in [0, k]."""
    return _h_value(model, k, x, second=False)


def exact_h_second_moment(model: StepModel, k, x) -> float:
    return _h_value(model, k, x, second=True)


def max_tail_bounds(model: StepModel, k, x) -> Tuple[float, float]:
    """Bounds on P^x(M > k): E[H]^2/E[H^2] from below, min(1, E[H]) from above."""
    k, x = _integer(k, "k"), _integer(x, "x")
    if x > k:
        return 1.0, 1.0
    if x < 0:
        raise ParameterError(f"x={x} must be >= 0")
    h1, h2 = _h_profiles(model, k, second=True)
    m1, m2 = float(h1[x]), float(h2[x])
    lower = m1 * m1 / m2 if m2 > 0 else 0.0
    return lower, min(1.0, m1)


def exact_progeny_mean(model: StepModel, x, k) -> float:
    """E^x[Z] on the strip [0, k], from Z0 + Hk = 1 + (b - 1) Z."""
    k, x = _integer(k, "k"), _integer(x, "x")
    if not 0 <= x <= k:
        raise ParameterError(f"need 0 <= x <= k, got x={x}, k={k}")
    killed = float(first_moment_profile(model, 0, k)[x])
    absorbed = exact_h_first_moment(model, k, x)
    return (killed + absorbed - 1.0) / (model.b - 1)


def exact_strip_survival(model: StepModel, k, x, tol: Optional[float] = None,
                         max_sweeps: Optional[int] = None) -> float:
    """P^x(M >= k) on the integer lattice.

    The iterate is the reaching probability s = 1 - q of the maximal fixed point
    q = (sum_s p(s) q~(y + s))^b, started from q = 1. Interior states are
    0..k-1; landing at k or above counts as reaching. Sweeps stop when the
    change relative to s is at most ``tol``.
    """
    solver = section("solver", _SOLVER_DEFAULTS)
    tol = float(solver["fixed_point_tol"] if tol is None else tol)
    max_sweeps = int(solver["fixed_point_max_sweeps"] if max_sweeps is None else max_sweeps)
    k, x = _integer(k, "k"), _integer(x, "x")
    if x < 0 or x > k:
        raise ParameterError(f"need 0 <= x <= k, got x={x}, k={k}")
    if x == k:
        return 1.0

    strip = LatticeStrip.from_law(model, 0, k - 1)
    reach = strip.exit_vector(top=lambda s: np.ones_like(s))
    b = model.b
    s = np.zeros(strip.size)
    with np.errstate(divide="ignore"):
        for sweep in range(1, max_sweeps + 1):
            u = np.minimum(strip.Q @ s + reach, 1.0)
            new = -np.expm1(b * np.log1p(-u))
            change = float(np.max(np.abs(new - s) / np.maximum(new, np.finfo(float).tiny)))
            s = new
            if change <= tol:
                run_logger.log_solver("strip_survival", k=k, sweeps=sweep, change=change)
                return float(s[x])
    raise ConvergenceError(f"strip survival for k={k} did not converge in {max_sweeps} sweeps")


def strip_survival_profile(model: StepModel, k_values, x: int = 0) -> np.ndarray:
    return np.array([exact_strip_survival(model, k, x) for k in k_values])