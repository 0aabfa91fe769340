"""Bracketing constructions for P^x(Z > n).

Lower: P^x(M >= k) * P^k(Z(a, k) > n) at the level where mu e^{rho k}/(2k) = n.
The product is a lower-bound construction, not a consistent estimator of the
tail, and is labelled as such.

Upper: P^x(Z > n) <= E^x[Z0_strip^2]/m^2 + P^x(M >= k) at e^{rho k}/k = n,
where m = 1 + (b - 1) n is the leaf count equivalent of Z > n.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from functools import partial
from typing import Any, Dict, Optional

from ..brw.engine import BrwConfig, run_brw, run_brw_from_top
from ..brw.exact import exact_strip_survival, second_moment_profile
from ..config_loader import section
from ..errors import DomainError, ParameterError
from ..logging import run_logger
from ..model.step_model import StepModel
from ..runner.pool import map_blocks
from ..runner.seeding import derive_replication_seed
from ..schemas import Caps
from .levels import choose_k_lower, choose_k_upper
from .moments import moment_Zak_many_to_one
from .reports import Source
from .tail import progeny_threshold_for_leaves, z_for_confidence


LOWER_LABEL = "lower-bound-biased"
UPPER_LABEL = "upper-bound"

PILOT_STREAM = 1
STAGE1_STREAM = 2
STAGE2_STREAM = 3


@dataclass
class StageEstimate:
    p: float
    stderr: float
    source: Source
    reps: int = 0
    hits: int = 0
    excluded: int = 0


@dataclass
class TwoStageEstimate:
    estimate: float
    stderr: float
    ci_lo: float
    ci_hi: float
    k_star: float
    mu_hat: float
    stage1: StageEstimate
    stage2: StageEstimate
    label: str = LOWER_LABEL
    censor_warning: bool = False

    def to_dict(self) -> Dict[str, Any]:
        out = dataclasses.asdict(self)
        for stage in ("stage1", "stage2"):
            out[stage]["source"] = getattr(self, stage).source.value
        return out


@dataclass
class UpperBoundEstimate:
    value: float
    k: int
    second_moment_term: float
    max_term: float
    label: str = UPPER_LABEL

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)


def _binomial(hits: int, reps: int) -> StageEstimate:
    p = hits / reps if reps else math.nan
    stderr = math.sqrt(p * (1.0 - p) / reps) if reps else math.nan
    return StageEstimate(p, stderr, Source.DIRECT_MC, reps, hits)


def _stage1_block(config: BrwConfig, level: float, seed: int, block_index: int, start: int, stop: int):
    hits = censored = 0
    for i in range(start, stop):
        run = run_brw(config, derive_replication_seed(seed, i, STAGE1_STREAM))
        if run.M >= level:
            hits += 1
        elif run.censored:
            censored += 1
    return hits, censored


def _stage2_block(model: StepModel, a: float, k: float, n: float, caps: Caps, seed: int,
                  block_index: int, start: int, stop: int):
    hits = censored = 0
    for i in range(start, stop):
        run = run_brw_from_top(model, a, k, caps, derive_replication_seed(seed, i, STAGE2_STREAM))
        if run.Zak > n:
            hits += 1
        elif run.censored:
            censored += 1
    return hits, censored


def _tree_tally(task, reps: int, workers: Optional[int]) -> StageEstimate:
    block_size = int(section("solver", {"tree_block_size": 1024})["tree_block_size"])
    parts = map_blocks(task, reps, block_size, workers)
    hits = sum(h for h, _ in parts)
    excluded = sum(c for _, c in parts)
    stage = _binomial(hits, reps - excluded)
    stage.excluded = excluded
    return stage


def two_stage_tail(model: StepModel, x: float, a: float, n: float, reps_stage1: int, reps_stage2: int,
                   seed: int, workers: Optional[int] = None, caps: Optional[Caps] = None,
                   pilot_k: Optional[float] = None, pilot_reps: int = 20000,
                   confidence: float = 0.95) -> TwoStageEstimate:
    """Two-stage product estimate with a delta-method interval."""
    if x < 0 or a < 0:
        raise ParameterError("x and a must be >= 0")
    if reps_stage1 < 1 or reps_stage2 < 1:
        raise ParameterError("stage replication counts must be >= 1")
    caps = caps or Caps()
    rho = model.require_rho()

    # mu from E^k[Z(a, k)] ~ mu e^{rho k}/k at a pilot level
    k_pilot = float(pilot_k if pilot_k is not None else math.floor(a) + 10)
    if not k_pilot > a:
        raise ParameterError(f"pilot level {k_pilot} must exceed a={a}")
    pilot = moment_Zak_many_to_one(model, k_pilot, a, k_pilot, pilot_reps,
                                   derive_replication_seed(seed, 0, PILOT_STREAM))
    mu_hat = k_pilot * math.exp(-rho * k_pilot) * pilot.value
    k_star = choose_k_lower(model, n, mu_hat)
    if not k_star > a:
        raise DomainError(f"level k*={k_star:.4g} does not exceed a={a}; increase n")

    if x >= k_star:
        stage1 = StageEstimate(1.0, 0.0, Source.EXACT_LATTICE)
    elif model.is_lattice and float(x).is_integer():
        stage1 = StageEstimate(exact_strip_survival(model, math.ceil(k_star), int(x)), 0.0, Source.EXACT_LATTICE)
    else:
        config = BrwConfig(model, x=float(x), k=k_star, caps=caps)
        stage1 = _tree_tally(partial(_stage1_block, config, k_star, seed), reps_stage1, workers)

    stage2 = _tree_tally(partial(_stage2_block, model, a, k_star, n, caps, seed), reps_stage2, workers)

    estimate = stage1.p * stage2.p
    stderr = math.sqrt((stage2.p * stage1.stderr) ** 2 + (stage1.p * stage2.stderr) ** 2)
    z = z_for_confidence(confidence)
    ci_lo = max(0.0, estimate - z * stderr)
    ci_hi = min(1.0, estimate + z * stderr)

    warn_fraction = float(section("solver", {"censor_warn_fraction": 0.01})["censor_warn_fraction"])
    censor_warning = stage2.excluded > warn_fraction * reps_stage2
    if stage2.excluded:
        # excluded trees may all exceed n
        worst = (stage2.hits + stage2.excluded) / reps_stage2
        ci_hi = min(1.0, max(ci_hi, stage1.p * worst + z * stage1.stderr * worst))
    run_logger.log_censoring("two_stage_stage2", stage2.excluded, reps_stage2, reason="caps")
    if censor_warning:
        run_logger.log_warning("two-stage interval widened for censored stage-2 trees",
                               excluded=stage2.excluded, reps=reps_stage2)

    return TwoStageEstimate(estimate, stderr, ci_lo, ci_hi, k_star, mu_hat, stage1, stage2,
                            censor_warning=censor_warning)


def upper_bound_tail(model: StepModel, x: int, n: float) -> UpperBoundEstimate:
    """Exact upper-bound construction at the integer level ceil(choose_k_upper(n))."""
    x = int(x)
    if x < 0:
        raise ParameterError("x must be >= 0")
    k = max(1, math.ceil(choose_k_upper(model, n)))
    if x >= k:
        return UpperBoundEstimate(1.0, k, math.nan, 1.0)
    # with M < k every particle stays in [0, k - 1], so Z(0, k - 1) is the leaf count
    second = float(second_moment_profile(model, 0, k - 1)[x])
    m = progeny_threshold_for_leaves(n, model.b)
    max_term = exact_strip_survival(model, k, x)
    value = float(min(1.0, second / m ** 2 + max_term))
    return UpperBoundEstimate(value, k, second / m ** 2, max_term)


def scaled_tail(n: float, p: float, x: float, rho: float) -> float:
    """n ln^2(n) p / ((1 + x) e^{rho x})."""
    return float(n * math.log(n) ** 2 * p / ((1.0 + x) * math.exp(rho * x)))


def not_above_direct(estimate: float, hits: int, reps: int, sigmas: float = 3.0) -> Optional[bool]:
    """Whether a lower-bound estimate stays below p_hat (1 + sigmas * relative stderr).

    None when the direct run saw no hits, so there is nothing to compare against.
    """
    if reps < 1 or hits < 1:
        return None
    p = hits / reps
    relative = math.sqrt((1.0 - p) / hits)
    return estimate <= p * (1.0 + sigmas * relative)
