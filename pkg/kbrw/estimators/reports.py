from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from enum import Enum
from typing import Any, Dict, Optional

import numpy as np


class Source(str, Enum):
    DIRECT_MC = "direct_mc"
    MANY_TO_ONE_IS = "many_to_one_is"
    EXACT_LATTICE = "exact_lattice"


@dataclass
class MomentReport:
    """A moment value with its provenance and uncertainty.

    Exact sources carry ``stderr == 0`` and a solver ``tolerance``; Monte Carlo
    sources carry a standard error and the number of usable samples. Samples
    with no spread (typically all zero for a rare count) get the rule-of-three
    standard error instead of zero.
    """

    value: float
    stderr: float
    source: Source
    reps: int = 0
    scaled: Optional[float] = None
    tolerance: float = 0.0
    censored: int = 0
    censor_warning: bool = False

    @classmethod
    def from_samples(cls, samples: np.ndarray, source: Source, factor: float = 1.0,
                     censored: int = 0, warn_fraction: float = 0.01) -> "MomentReport":
        samples = np.asarray(samples, dtype=float)
        n = samples.size
        if n == 0:
            return cls(math.nan, math.nan, source, 0, censored=censored, censor_warning=censored > 0)
        mean = float(np.mean(samples))
        stderr = float(np.std(samples, ddof=1) / math.sqrt(n)) if n > 1 else math.inf
        if stderr == 0.0:
            # no spread seen: rule of three, 3 * stderr = 3/n events of size max(1, |mean|)
            stderr = max(1.0, abs(mean)) / n
        total = n + censored
        return cls(
            value=factor * mean,
            stderr=abs(factor) * stderr,
            source=source,
            reps=n,
            censored=censored,
            censor_warning=total > 0 and censored / total > warn_fraction,
        )

    @classmethod
    def exact(cls, value: float, tolerance: float = 1e-10) -> "MomentReport":
        return cls(float(value), 0.0, Source.EXACT_LATTICE, 0, tolerance=tolerance)

    def with_scale(self, factor: float) -> "MomentReport":
        self.scaled = self.value * factor
        return self

    def agrees_with(self, other: "MomentReport", sigmas: float = 3.0) -> bool:
        """Pairwise agreement within combined standard errors plus solver tolerances."""
        combined = math.sqrt(self.stderr ** 2 + other.stderr ** 2)
        slack = sigmas * combined + self.tolerance * max(1.0, abs(self.value)) \
            + other.tolerance * max(1.0, abs(other.value))
        return abs(self.value - other.value) <= slack

    def to_dict(self) -> Dict[str, Any]:
        out = asdict(self)
        out["source"] = self.source.value
        return out
