from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from functools import partial
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from ..brw.engine import BrwConfig, run_brw
from ..brw.exact import exact_strip_survival
from ..config_loader import section
from ..errors import ConfigError, ParameterError
from ..logging import run_logger
from ..model.step_model import StepModel
from ..runner.pool import map_blocks, reduce_blocks
from ..runner.seeding import derive_replication_seed


Z_KIND = "Z"
M_KIND = "M"


def z_for_confidence(confidence: float) -> float:
    if not 0.0 < confidence < 1.0:
        raise ParameterError(f"confidence={confidence} must lie in (0, 1)")
    return float(stats.norm.ppf(0.5 + confidence / 2.0))


def wilson_ci(hits: int, reps: int, z: float = 1.96) -> Tuple[float, float]:
    """Wilson score interval for hits out of reps."""
    if reps < 1 or not 0 <= hits <= reps:
        raise ParameterError(f"need 0 <= hits <= reps and reps >= 1, got {hits}/{reps}")
    p_hat = hits / reps
    denominator = 1 + z ** 2 / reps
    center = (p_hat + z ** 2 / (2 * reps)) / denominator
    spread = z * math.sqrt((p_hat * (1 - p_hat) + z ** 2 / (4 * reps)) / reps) / denominator
    lower = 0.0 if hits == 0 else max(0.0, center - spread)
    upper = 1.0 if hits == reps else min(1.0, center + spread)
    return lower, upper


def band_ratio(values: Sequence[float]) -> float:
    """max/min over a grid of scaled statistics; inf if any value is not positive."""
    arr = np.asarray(values, dtype=float)
    if arr.size == 0 or not np.all(np.isfinite(arr)) or np.any(arr <= 0):
        return math.inf
    return float(arr.max() / arr.min())


def progeny_threshold_for_leaves(n: float, b: int) -> float:
    """Z > n  iff  Z0 > 1 + (b - 1) n, by the leaf identity Z0 = 1 + (b - 1) Z."""
    return 1.0 + (b - 1) * float(n)


@dataclass
class TailCurve:
    """Exceedance tallies over a threshold grid.

    For ``kind == "Z"`` a hit is Z > n; for ``kind == "M"`` it is M >= k.
    A censored run certifies the counted value, so it is a hit where that
    settles the event and is excluded from the denominator elsewhere.
    ``exact`` replaces the Monte Carlo ratio when the curve comes from a solver.
    """

    kind: str
    thresholds: np.ndarray
    hits: np.ndarray
    excluded: np.ndarray
    total_reps: int
    censored_reps: int = 0
    x: float = 0.0
    rho: float = 1.0
    z: float = 1.96
    exact: Optional[np.ndarray] = field(default=None, repr=False)

    @classmethod
    def tally(cls, kind: str, thresholds: Sequence[float], values: np.ndarray, censored: np.ndarray,
              x: float, rho: float, z: float = 1.96) -> "TailCurve":
        grid = np.asarray(thresholds, dtype=float)
        values = np.asarray(values, dtype=float)
        censored = np.asarray(censored, dtype=bool)
        exceed = values[:, None] > grid[None, :] if kind == Z_KIND else values[:, None] >= grid[None, :]
        hits = np.sum(exceed, axis=0)
        # a censored run that has not yet settled the event is excluded
        excluded = np.sum(censored[:, None] & ~exceed, axis=0)
        return cls(kind, grid, hits.astype(np.int64), excluded.astype(np.int64), int(values.size),
                   int(censored.sum()), float(x), float(rho), z)

    @classmethod
    def from_exact(cls, kind: str, thresholds: Sequence[float], probabilities: Sequence[float],
                   x: float, rho: float) -> "TailCurve":
        grid = np.asarray(thresholds, dtype=float)
        zeros = np.zeros(grid.size, dtype=np.int64)
        return cls(kind, grid, zeros, zeros.copy(), 0, 0, float(x), float(rho),
                   exact=np.asarray(probabilities, dtype=float))

    @property
    def reps(self) -> np.ndarray:
        return self.total_reps - self.excluded

    @property
    def p_hat(self) -> np.ndarray:
        if self.exact is not None:
            return self.exact
        reps = self.reps
        return np.where(reps > 0, self.hits / np.maximum(reps, 1), np.nan)

    @property
    def ci(self) -> Tuple[np.ndarray, np.ndarray]:
        if self.exact is not None:
            return self.exact.copy(), self.exact.copy()
        bounds = [wilson_ci(int(h), int(r), self.z) if r > 0 else (math.nan, math.nan)
                  for h, r in zip(self.hits, self.reps)]
        lo, hi = zip(*bounds)
        return np.array(lo), np.array(hi)

    @property
    def scaled(self) -> np.ndarray:
        t, p = self.thresholds, self.p_hat
        if self.kind == Z_KIND:
            with np.errstate(divide="ignore", invalid="ignore"):
                log_n = np.log(np.where(t > 1, t, np.nan))
            return t * log_n ** 2 * p / ((1.0 + self.x) * math.exp(self.rho * self.x))
        return t * np.exp(self.rho * (t - self.x)) * p / (1.0 + self.x)

    def merge(self, other: "TailCurve") -> "TailCurve":
        """Exact reduction of two curves over disjoint replications."""
        if self.exact is not None or other.exact is not None:
            raise ParameterError("solver curves cannot be merged")
        if self.kind != other.kind or not np.array_equal(self.thresholds, other.thresholds) \
                or self.x != other.x or self.rho != other.rho:
            raise ParameterError("tail curves differ in kind, grid, start or rho")
        return dataclasses.replace(
            self,
            hits=self.hits + other.hits,
            excluded=self.excluded + other.excluded,
            total_reps=self.total_reps + other.total_reps,
            censored_reps=self.censored_reps + other.censored_reps,
        )

    def rows(self) -> List[Dict[str, Any]]:
        lo, hi = self.ci
        return [
            {
                "threshold": float(t),
                "hits": int(h),
                "reps": int(r) if self.exact is None else 0,
                "p_hat": float(p),
                "ci_lo": float(a),
                "ci_hi": float(b),
                "scaled": float(s),
            }
            for t, h, r, p, a, b, s in zip(self.thresholds, self.hits, self.reps, self.p_hat, lo, hi, self.scaled)
        ]

    def summary(self) -> Dict[str, Any]:
        return {
            "kind": self.kind,
            "total_reps": self.total_reps,
            "censored_reps": self.censored_reps,
            "excluded": [int(e) for e in self.excluded],
            "band_ratio": band_ratio(self.scaled),
        }


def _tail_block(config: BrwConfig, kind: str, grid: Tuple[float, ...], seed: int, stream: int, rho: float,
                block_index: int, start: int, stop: int) -> TailCurve:
    values = np.empty(stop - start)
    censored = np.zeros(stop - start, dtype=bool)
    for j, i in enumerate(range(start, stop)):
        run = run_brw(config, derive_replication_seed(seed, i, stream))
        values[j] = run.Z if kind == Z_KIND else run.M
        censored[j] = run.censored
    return TailCurve.tally(kind, grid, values, censored, config.x, rho)


def _check_grid(grid: Sequence[float]) -> Tuple[float, ...]:
    grid = tuple(float(t) for t in grid)
    if not grid:
        raise ParameterError("threshold grid is empty")
    if any(b < a for a, b in zip(grid, grid[1:])):
        raise ParameterError("threshold grid must be ascending")
    return grid


def _run_tail(config: BrwConfig, kind: str, grid: Tuple[float, ...], reps: int, seed: int,
              workers: Optional[int], stream: int) -> TailCurve:
    config.validate()
    rho = config.model.require_rho()
    block_size = int(section("solver", {"tree_block_size": 1024})["tree_block_size"])
    task = partial(_tail_block, config, kind, grid, seed, stream, rho)
    curve = reduce_blocks(TailCurve.merge, map_blocks(task, reps, block_size, workers))
    run_logger.log_censoring(f"tail_{kind}", curve.censored_reps, curve.total_reps, reason="caps")
    return curve


def tail_curve_Z(config: BrwConfig, n_grid: Sequence[float], reps: int, seed: int,
                 workers: Optional[int] = None, stream: int = 0) -> TailCurve:
    """Monte Carlo P^x(Z > n) over ``n_grid``; replication i uses stream (seed, i)."""
    grid = _check_grid(n_grid)
    if grid[-1] > config.caps.max_total_counted:
        raise ConfigError(f"threshold {grid[-1]:g} exceeds max_total_counted={config.caps.max_total_counted}")
    return _run_tail(config, Z_KIND, grid, reps, seed, workers, stream)


def tail_curve_M(config: BrwConfig, k_grid: Sequence[float], reps: int, seed: int,
                 workers: Optional[int] = None, stream: int = 0) -> TailCurve:
    """Monte Carlo P^x(M >= k) over ``k_grid``.

    Without a top level, particles are absorbed above max(k_grid): the events
    M >= k for k in the grid are settled before any absorption.
    """
    grid = _check_grid(k_grid)
    if config.k is None and grid[-1] >= config.x:
        config = dataclasses.replace(config, a=None, k=grid[-1])
    return _run_tail(config, M_KIND, grid, reps, seed, workers, stream)


def tail_curve_M_exact(model: StepModel, k_grid: Sequence[float], x: int) -> TailCurve:
    """P^x(M >= k) from the strip fixed point, one solve per grid point."""
    grid = _check_grid(k_grid)
    probs = [1.0 if k <= x else exact_strip_survival(model, math.ceil(k), x) for k in grid]
    return TailCurve.from_exact(M_KIND, grid, probs, x, model.require_rho())
