from __future__ import annotations

import math

from scipy import optimize

from ..errors import DomainError, ParameterError, SolverError
from ..model.step_model import StepModel, solver_tol

ROOT_REL_TOL = 1e-10


def _solve_level(rho: float, n: float) -> float:
    """Larger root of e^{rho k}/k = n, i.e. rho k - ln k = ln n."""
    if not n > math.e * rho:
        raise DomainError(f"n={n:g} <= e*rho={math.e * rho:g}: e^(rho k)/k = n has no root above 1/rho")
    log_n = math.log(n)

    def residual(k: float) -> float:
        return rho * k - math.log(k) - log_n

    lo = 1.0 / rho
    hi = (log_n + (2.0 * math.log(log_n) if log_n > 1 else 0.0)) / rho + 10.0
    if residual(hi) < 0:
        raise DomainError(f"no root of e^(rho k)/k = {n:g} in [{lo:g}, {hi:g}]")
    try:
        k = optimize.bisect(residual, lo, hi, xtol=1e-14, maxiter=500)
    except (ValueError, RuntimeError) as e:
        raise SolverError(f"level bisection failed: {e}") from e
    # log-scale residual is the relative residual of e^{rho k}/k
    if abs(math.expm1(residual(k))) > solver_tol("root_rel_tol", ROOT_REL_TOL):
        raise SolverError(f"level k={k} misses e^(rho k)/k = {n:g}")
    return k


def choose_k_upper(model: StepModel, n: float) -> float:
    """k with e^{rho k}/k = n, the level of the upper-bound construction."""
    return _solve_level(model.require_rho(), float(n))


def choose_k_lower(model: StepModel, n: float, mu: float) -> float:
    """k with mu e^{rho k}/(2k) = n, the level of the lower-bound construction."""
    if not mu > 0:
        raise ParameterError(f"mu={mu} must be positive")
    return _solve_level(model.require_rho(), 2.0 * float(n) / float(mu))
