from __future__ import annotations

import math
from typing import Optional

import numpy as np

from ..config_loader import section
from ..errors import ParameterError
from ..estimators.reports import MomentReport, Source
from ..logging import run_logger
from .engine import Exit, run_walk_batch


BOUNDARY_MAX_STEPS = 10 ** 5
BOUNDARY_THETA = 1.0


def boundary_max_steps() -> int:
    return int(section("caps", {"boundary_max_steps": BOUNDARY_MAX_STEPS})["boundary_max_steps"])


def estimate_boundary_moments(step, level: float, side: Exit, reps: int, rng: np.random.Generator,
                              theta: Optional[float] = None, max_steps: Optional[int] = None) -> MomentReport:
    """Monte Carlo E^0[e^{U_k}] (side=top, k >= 0) or E^0[e^{theta L_k}] (side=bottom, k <= 0).

    ``theta`` defaults to ``boundary_theta`` of the solver config and ``max_steps``
    to ``boundary_max_steps`` of the caps config.
    """
    side = Exit(side)
    max_steps = max_steps or boundary_max_steps()
    if side is Exit.TOP:
        if level < 0:
            raise ParameterError("overshoot level must be >= 0")
        batch = run_walk_batch(step, 0.0, -math.inf, level, rng, reps, max_steps=max_steps)
        done = batch.exit == 1
        samples = np.exp(batch.overshoot[done])
    else:
        if level > 0:
            raise ParameterError("undershoot level must be <= 0")
        batch = run_walk_batch(step, 0.0, level, math.inf, rng, reps, max_steps=max_steps)
        done = batch.exit == -1
        if theta is None:
            theta = float(section("solver", {"boundary_theta": BOUNDARY_THETA})["boundary_theta"])
        samples = np.exp(theta * batch.undershoot[done])
    censored = int(batch.censored.sum())
    run_logger.log_censoring("boundary_walk", censored, reps, reason="max_steps")
    return MomentReport.from_samples(samples, Source.DIRECT_MC, censored=censored)


def estimate_passage_constant(step, x: float, reps: int, rng: np.random.Generator,
                              max_steps: Optional[int] = None) -> MomentReport:
    """Estimate c(x) = x + E^x[L_0], the constant in P^x(tau_k^+ < tau_0^-) ~ c(x)/k."""
    max_steps = max_steps or boundary_max_steps()
    if x < 0:
        raise ParameterError("x must be >= 0")
    batch = run_walk_batch(step, float(x), 0.0, math.inf, rng, reps, max_steps=max_steps)
    done = batch.exit == -1
    censored = int(batch.censored.sum())
    run_logger.log_censoring("passage_walk", censored, reps, reason="max_steps")
    report = MomentReport.from_samples(batch.undershoot[done], Source.DIRECT_MC, censored=censored)
    report.value += float(x)
    return report
