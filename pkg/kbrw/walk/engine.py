from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Any, Optional

import numpy as np

from ..errors import CensoredWalkError, ParameterError


DEFAULT_MAX_STEPS = 10 ** 8
_BLOCK = 256


class Exit(str, Enum):
    TOP = "top"
    BOTTOM = "bottom"


@dataclass(frozen=True)
class Transform:
    """Affine map R = scale * S + shift used for the weighted Green sums.

    ``span`` is the k in the bottom weight e^{-R}(k - R + 1); by default it is
    the image length of the strip.
    """

    scale: float = 1.0
    shift: float = 0.0
    span: Optional[float] = None

    def __call__(self, s):
        return self.scale * s + self.shift

    def resolve_span(self, lower: float, upper: float) -> float:
        if self.span is not None:
            return float(self.span)
        return abs(self.scale) * (upper - lower)


IDENTITY = Transform()


def as_step(step: Any):
    """Accept a StepModel, a TiltedStep or a bare law; return something with ``sample``."""
    law = getattr(step, "law", None)
    if law is not None and hasattr(law, "sample"):
        return law
    if hasattr(step, "sample"):
        return step
    raise ParameterError(f"{step!r} cannot draw steps")


def top_weight(r):
    return np.exp(-r) * (r + 1.0)


def bottom_weight(r, span: float):
    return np.exp(-r) * (span - r + 1.0)


@dataclass
class WalkFunctionals:
    exit: Exit
    steps_taken: int
    overshoot: Optional[float] = None
    undershoot: Optional[float] = None
    green_top: Optional[float] = None
    green_bottom: Optional[float] = None


def _check_strip(start: float, lower: float, upper: float, max_steps: int) -> None:
    if not lower <= start <= upper:
        raise ParameterError(f"start={start} not inside [{lower}, {upper}]")
    if max_steps <= 0:
        raise ParameterError("max_steps must be positive")


def run_two_barrier_walk(step, start: float, lower: float, upper: float,
                         transform: Transform = IDENTITY, rng: Optional[np.random.Generator] = None,
                         max_steps: int = DEFAULT_MAX_STEPS) -> WalkFunctionals:
    """Run one walk until S > upper or S < lower and record its boundary functionals."""
    _check_strip(start, lower, upper, max_steps)
    step = as_step(step)
    rng = rng if rng is not None else np.random.default_rng()
    span = transform.resolve_span(lower, upper)

    r0 = transform(start)
    sum_top = float(top_weight(r0))
    sum_bottom = float(bottom_weight(r0, span))
    pos = float(start)
    taken = 0
    while taken < max_steps:
        n = min(_BLOCK, max_steps - taken)
        path = pos + np.cumsum(np.asarray(step.sample(rng, n), dtype=float))
        out = np.flatnonzero((path > upper) | (path < lower))
        stop = int(out[0]) + 1 if out.size else n
        r = transform(path[:stop])
        sum_top += float(np.sum(top_weight(r)))
        sum_bottom += float(np.sum(bottom_weight(r, span)))
        taken += stop
        pos = float(path[stop - 1])
        if out.size:
            if pos > upper:
                u = pos - upper
                return WalkFunctionals(Exit.TOP, taken, overshoot=u, green_top=math.exp(u) * sum_top)
            ell = lower - pos
            return WalkFunctionals(Exit.BOTTOM, taken, undershoot=ell, green_bottom=math.exp(-ell) * sum_bottom)
    raise CensoredWalkError(
        f"walk still inside ({lower}, {upper}) after {max_steps} steps",
        position=pos,
        steps=taken,
        partial={"green_top_sum": sum_top, "green_bottom_sum": sum_bottom},
    )


@dataclass
class WalkBatch:
    """Outcomes of independent walks; exit is +1 (top), -1 (bottom) or 0 (censored)."""

    exit: np.ndarray
    steps: np.ndarray
    overshoot: np.ndarray
    undershoot: np.ndarray
    green_top: np.ndarray
    green_bottom: np.ndarray

    @property
    def censored(self) -> np.ndarray:
        return self.exit == 0

    @property
    def reps(self) -> int:
        return int(self.exit.size)

    def functionals(self, i: int) -> WalkFunctionals:
        code = int(self.exit[i])
        if code == 0:
            raise CensoredWalkError(f"walk {i} was censored", position=math.nan, steps=int(self.steps[i]))
        if code > 0:
            return WalkFunctionals(Exit.TOP, int(self.steps[i]), overshoot=float(self.overshoot[i]),
                                   green_top=float(self.green_top[i]))
        return WalkFunctionals(Exit.BOTTOM, int(self.steps[i]), undershoot=float(self.undershoot[i]),
                               green_bottom=float(self.green_bottom[i]))


def run_walk_batch(step, start: float, lower: float, upper: float, rng: np.random.Generator, reps: int,
                   transform: Transform = IDENTITY, max_steps: int = DEFAULT_MAX_STEPS,
                   green: bool = False) -> WalkBatch:
    """Vectorized :func:`run_two_barrier_walk` over ``reps`` independent walks.

    Either barrier may be infinite for single-barrier functionals. Censored
    walks are flagged instead of raising.
    """
    _check_strip(start, lower, upper, max_steps)
    if reps < 1:
        raise ParameterError("reps must be >= 1")
    step = as_step(step)

    pos = np.full(reps, float(start))
    exit_code = np.zeros(reps, dtype=np.int8)
    steps = np.zeros(reps, dtype=np.int64)
    nan = np.full(reps, np.nan)
    overshoot, undershoot = nan.copy(), nan.copy()
    g_top, g_bottom = nan.copy(), nan.copy()

    span = transform.resolve_span(lower, upper) if green else 0.0
    if green:
        r0 = transform(float(start))
        sum_top = np.full(reps, float(top_weight(r0)))
        sum_bottom = np.full(reps, float(bottom_weight(r0, span)))

    active = np.arange(reps)
    taken = 0
    while active.size and taken < max_steps:
        pos[active] += np.asarray(step.sample(rng, active.size), dtype=float)
        taken += 1
        current = pos[active]
        if green:
            r = transform(current)
            sum_top[active] += top_weight(r)
            sum_bottom[active] += bottom_weight(r, span)
        up = current > upper
        down = current < lower
        if up.any():
            idx = active[up]
            exit_code[idx] = 1
            steps[idx] = taken
            overshoot[idx] = pos[idx] - upper
            if green:
                g_top[idx] = np.exp(overshoot[idx]) * sum_top[idx]
        if down.any():
            idx = active[down]
            exit_code[idx] = -1
            steps[idx] = taken
            undershoot[idx] = lower - pos[idx]
            if green:
                g_bottom[idx] = np.exp(-undershoot[idx]) * sum_bottom[idx]
        active = active[~(up | down)]
    steps[active] = taken
    return WalkBatch(exit_code, steps, overshoot, undershoot, g_top, g_bottom)
