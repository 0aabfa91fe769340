from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, Optional

import numpy as np

from ..errors import ParameterError
from ..model.step_model import StepModel
from ..schemas import Caps


@dataclass
class BrwConfig:
    """One branching random walk: start x, optional counting level a, optional top k.

    With ``k`` set, children landing strictly above k are absorbed and counted
    in ``Hk``. With ``a`` set, ``Zak`` counts particles that first go below a
    while every strict ancestor stayed in [a, k].
    """

    model: StepModel
    x: float = 0.0
    a: Optional[float] = None
    k: Optional[float] = None
    caps: Caps = field(default_factory=Caps)

    def validate(self) -> None:
        if not math.isfinite(self.x) or self.x < 0:
            raise ParameterError(f"start x={self.x} must be finite and >= 0")
        if self.a is not None and (not math.isfinite(self.a) or self.a < 0):
            raise ParameterError(f"count level a={self.a} must be finite and >= 0")
        if self.k is not None:
            if not math.isfinite(self.k):
                raise ParameterError("top level k must be finite")
            if self.x > self.k:
                raise ParameterError(f"start x={self.x} lies above the top level k={self.k}")
            if self.a is not None and not self.a < self.k:
                raise ParameterError(f"need a < k, got a={self.a}, k={self.k}")


@dataclass
class BrwRun:
    Z: int
    Z0: int
    Zak: int
    Hk: int
    M: float
    T_ext: int
    censored: bool = False
    censor_reason: Optional[str] = None

    def leaf_identity_holds(self, b: int) -> bool:
        """Z0 + Hk = 1 + (b - 1) Z on a finished run; Hk is 0 without a top level."""
        return self.Z0 + self.Hk == 1 + (b - 1) * self.Z

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def run_brw(config: BrwConfig, rng: np.random.Generator) -> BrwRun:
    """Generation-synchronous simulation of one tree.

    Only the positions of the current generation are kept. A censored run
    certifies Z >= run.Z and M >= run.M.
    """
    config.validate()
    model, caps = config.model, config.caps
    law, b = model.law, model.b
    top = math.inf if config.k is None else float(config.k)
    track_a = config.a is not None
    a = float(config.a) if track_a else 0.0

    positions = np.array([float(config.x)])
    # in_band[i]: particle i and all its ancestors lie in [a, k]
    in_band = np.array([track_a and config.x >= a])
    Z, Z0, Hk = 1, 0, 0
    Zak = 1 if track_a and config.x < a else 0
    M = float(config.x)
    generation = 0

    def censored(reason: str) -> BrwRun:
        return BrwRun(Z, Z0, Zak, Hk, M, generation, True, reason)

    while positions.size:
        if generation >= caps.max_generations:
            return censored("max_generations")
        n_children = positions.size * b
        if n_children > caps.max_population:
            return censored("max_population")

        children = np.repeat(positions, b) + law.sample(rng, n_children)
        generation += 1
        killed = children < 0
        absorbed = children > top
        alive = ~(killed | absorbed)

        Z0 += int(np.count_nonzero(killed))
        Hk += int(np.count_nonzero(absorbed))
        if track_a:
            parent_band = np.repeat(in_band, b)
            Zak += int(np.count_nonzero(parent_band & (children < a)))
            in_band = (parent_band & (children >= a))[alive]

        reached = children[~killed]
        if reached.size:
            M = max(M, float(reached.max()))
        positions = children[alive]
        Z += positions.size
        if Z > caps.max_total_counted:
            return censored("max_total_counted")

    return BrwRun(Z, Z0, Zak, Hk, M, generation)


def run_brw_from_top(model: StepModel, a: float, k: float, caps: Optional[Caps], rng: np.random.Generator) -> BrwRun:
    """Z(a, k) started from level k itself (legal since the top exit is strict)."""
    if not a < k:
        raise ParameterError(f"need a < k, got a={a}, k={k}")
    return run_brw(BrwConfig(model, x=float(k), a=float(a), k=float(k), caps=caps or Caps()), rng)
