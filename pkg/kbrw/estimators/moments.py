"""First moments of Z(a, k) and H(k) from three sources.

many-to-one: one tilted walk per sample.
    E^y[Z(a, k)] = e^{rho(y - a)} E_Q^y[e^{rho L_a}; exit below a]
    E^x[H(k)]    = e^{rho(x - k)} E_Q^x[e^{-rho U_k}; exit above k]
direct: one branching tree per sample.
exact: lattice recursions from kbrw.brw.exact.
"""
from __future__ import annotations

import math
from functools import partial
from typing import Dict, Optional

import numpy as np

from ..brw.engine import BrwConfig, run_brw
from ..brw.exact import exact_brw_first_moment, exact_h_first_moment
from ..config_loader import section
from ..errors import ParameterError
from ..logging import run_logger
from ..model.step_model import StepModel
from ..runner.pool import map_blocks
from ..runner.seeding import derive_replication_seed
from ..schemas import Caps
from ..walk.engine import run_walk_batch
from .reports import MomentReport, Source


def _walk_samples(model: StepModel, start: float, lower: float, upper: float, reps: int,
                  rng: np.random.Generator, weight) -> tuple:
    """Tilted walks in fixed-size batches; returns (weighted samples, censored count)."""
    if reps < 1:
        raise ParameterError("reps must be >= 1")
    block = int(section("solver", {"walk_block_size": 4096})["walk_block_size"])
    tilted = model.tilted()
    parts, censored = [], 0
    for offset in range(0, reps, block):
        batch = run_walk_batch(tilted, start, lower, upper, rng, min(block, reps - offset))
        censored += int(batch.censored.sum())
        parts.append(weight(batch)[~batch.censored])
    return np.concatenate(parts), censored


def zak_scale(model: StepModel, y: float, a: float, k: float) -> float:
    """Factor making E^y[Z(a, k)] bounded in k; k e^{-rho(k - a)} at y = k."""
    return k * math.exp(-model.require_rho() * (y - a)) / (k - y + 1.0)


def h_scale(model: StepModel, x: float, k: float) -> float:
    return k * math.exp(model.require_rho() * (k - x)) / (1.0 + x)


def moment_Zak_many_to_one(model: StepModel, y: float, a: float, k: float, reps: int,
                           rng: np.random.Generator) -> MomentReport:
    if not a <= y <= k:
        raise ParameterError(f"need a <= y <= k, got y={y}, a={a}, k={k}")
    rho = model.require_rho()

    def weight(batch):
        return np.where(batch.exit == -1, np.exp(rho * np.nan_to_num(batch.undershoot)), 0.0)

    samples, censored = _walk_samples(model, y, a, k, reps, rng, weight)
    run_logger.log_censoring("many_to_one_zak", censored, reps, reason="max_steps")
    report = MomentReport.from_samples(samples, Source.MANY_TO_ONE_IS, math.exp(rho * (y - a)), censored)
    return report.with_scale(zak_scale(model, y, a, k))


def moment_H_many_to_one(model: StepModel, x: float, k: float, reps: int,
                         rng: np.random.Generator) -> MomentReport:
    if not 0 <= x <= k:
        raise ParameterError(f"need 0 <= x <= k, got x={x}, k={k}")
    rho = model.require_rho()

    def weight(batch):
        return np.where(batch.exit == 1, np.exp(-rho * np.nan_to_num(batch.overshoot)), 0.0)

    samples, censored = _walk_samples(model, x, 0.0, k, reps, rng, weight)
    run_logger.log_censoring("many_to_one_h", censored, reps, reason="max_steps")
    report = MomentReport.from_samples(samples, Source.MANY_TO_ONE_IS, math.exp(rho * (x - k)), censored)
    return report.with_scale(h_scale(model, x, k))


def _count_block(config: BrwConfig, field_name: str, seed: int, stream: int,
                 block_index: int, start: int, stop: int):
    values, censored = [], 0
    for i in range(start, stop):
        run = run_brw(config, derive_replication_seed(seed, i, stream))
        if run.censored:
            censored += 1
        else:
            values.append(getattr(run, field_name))
    return np.asarray(values, dtype=float), censored


def _direct(config: BrwConfig, field_name: str, reps: int, seed: int, workers: Optional[int],
            stream: int) -> MomentReport:
    block_size = int(section("solver", {"tree_block_size": 1024})["tree_block_size"])
    task = partial(_count_block, config, field_name, seed, stream)
    parts = map_blocks(task, reps, block_size, workers)
    samples = np.concatenate([values for values, _ in parts])
    censored = sum(c for _, c in parts)
    run_logger.log_censoring(f"direct_{field_name}", censored, reps, reason="caps")
    return MomentReport.from_samples(samples, Source.DIRECT_MC, censored=censored)


def moment_Zak_direct(model: StepModel, y: float, a: float, k: float, reps: int, seed: int,
                      workers: Optional[int] = None, caps: Optional[Caps] = None, stream: int = 0) -> MomentReport:
    config = BrwConfig(model, x=float(y), a=float(a), k=float(k), caps=caps or Caps())
    config.validate()
    return _direct(config, "Zak", reps, seed, workers, stream).with_scale(zak_scale(model, y, a, k))


def moment_H_direct(model: StepModel, x: float, k: float, reps: int, seed: int,
                    workers: Optional[int] = None, caps: Optional[Caps] = None, stream: int = 0) -> MomentReport:
    config = BrwConfig(model, x=float(x), k=float(k), caps=caps or Caps())
    config.validate()
    return _direct(config, "Hk", reps, seed, workers, stream).with_scale(h_scale(model, x, k))


def moment_Zak_exact(model: StepModel, y: int, a: int, k: int) -> MomentReport:
    report = MomentReport.exact(exact_brw_first_moment(model, a, k, y))
    return report.with_scale(zak_scale(model, y, a, k))


def moment_H_exact(model: StepModel, x: int, k: int) -> MomentReport:
    return MomentReport.exact(exact_h_first_moment(model, k, x)).with_scale(h_scale(model, x, k))


def pairwise_agreement(reports: Dict[str, MomentReport], sigmas: float = 3.0) -> Dict[str, bool]:
    """Agreement of every pair of sources, keyed ``"a~b"``."""
    names = sorted(reports)
    return {
        f"{first}~{second}": reports[first].agrees_with(reports[second], sigmas)
        for i, first in enumerate(names)
        for second in names[i + 1:]
    }
