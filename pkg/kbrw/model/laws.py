from __future__ import annotations

import math
from abc import ABC, abstractmethod
from enum import Enum
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np

from ..errors import DomainError, ParameterError


class Family(str, Enum):
    TWO_POINT = "two_point"
    GAUSSIAN = "gaussian"
    USER_LATTICE = "user_lattice"


Draw = Union[float, np.ndarray]


class StepLaw(ABC):
    """A step distribution with a Laplace transform finite on ``domain``."""

    family: Family
    # phi is finite on the whole real line for every supported family
    domain: Tuple[float, float] = (-math.inf, math.inf)

    def _check(self, t: float) -> None:
        lo, hi = self.domain
        if not (math.isfinite(t) and lo < t < hi):
            raise DomainError(f"t={t!r} outside the Laplace domain ({lo}, {hi})")

    @abstractmethod
    def laplace(self, t: float) -> float:
        raise NotImplementedError

    def laplace_prime(self, t: float) -> float:
        # central differences for laws without a closed-form derivative
        h = 1e-6 * (1.0 + abs(t))
        return (self.laplace(t + h) - self.laplace(t - h)) / (2.0 * h)

    @abstractmethod
    def mean(self) -> float:
        raise NotImplementedError

    @abstractmethod
    def sample(self, rng: np.random.Generator, size: Optional[int] = None) -> Draw:
        raise NotImplementedError

    @abstractmethod
    def tilt(self, rho: float, phi_rho: float) -> "StepLaw":
        """Law with density e^{rho y}/phi(rho) against this one."""
        raise NotImplementedError

    @abstractmethod
    def params(self) -> Dict[str, Any]:
        raise NotImplementedError

    def lattice(self) -> Optional[Tuple[np.ndarray, np.ndarray]]:
        """Integer support and probabilities, or None for non-lattice laws."""
        return None

    @property
    def is_lattice(self) -> bool:
        return self.lattice() is not None


class TwoPointLaw(StepLaw):
    family = Family.TWO_POINT

    def __init__(self, p: float) -> None:
        if not (0.0 <= p <= 1.0):
            raise ParameterError(f"two_point probability p={p} not in [0, 1]")
        self.p = float(p)

    def laplace(self, t: float) -> float:
        self._check(t)
        return self.p * math.exp(t) + (1.0 - self.p) * math.exp(-t)

    def laplace_prime(self, t: float) -> float:
        self._check(t)
        return self.p * math.exp(t) - (1.0 - self.p) * math.exp(-t)

    def mean(self) -> float:
        return 2.0 * self.p - 1.0

    def sample(self, rng: np.random.Generator, size: Optional[int] = None) -> Draw:
        u = rng.random(size)
        if size is None:
            return 1.0 if u < self.p else -1.0
        return np.where(u < self.p, 1.0, -1.0)

    def tilt(self, rho: float, phi_rho: float) -> "TwoPointLaw":
        return TwoPointLaw(min(1.0, self.p * math.exp(rho) / phi_rho))

    def params(self) -> Dict[str, Any]:
        return {"p": self.p}

    def lattice(self) -> Tuple[np.ndarray, np.ndarray]:
        return np.array([-1, 1], dtype=np.int64), np.array([1.0 - self.p, self.p])


class GaussianLaw(StepLaw):
    family = Family.GAUSSIAN

    def __init__(self, mu: float, sigma: float) -> None:
        if not (sigma > 0.0 and math.isfinite(sigma)):
            raise ParameterError(f"gaussian sigma={sigma} must be a positive number")
        if not math.isfinite(mu):
            raise ParameterError(f"gaussian mu={mu} must be finite")
        self.mu = float(mu)
        self.sigma = float(sigma)

    def laplace(self, t: float) -> float:
        self._check(t)
        return math.exp(self.mu * t + 0.5 * self.sigma ** 2 * t * t)

    def laplace_prime(self, t: float) -> float:
        return (self.mu + self.sigma ** 2 * t) * self.laplace(t)

    def mean(self) -> float:
        return self.mu

    def sample(self, rng: np.random.Generator, size: Optional[int] = None) -> Draw:
        return rng.normal(self.mu, self.sigma, size)

    def tilt(self, rho: float, phi_rho: float) -> "GaussianLaw":
        # exponential tilting of a gaussian is a mean shift
        return GaussianLaw(self.mu + self.sigma ** 2 * rho, self.sigma)

    def params(self) -> Dict[str, Any]:
        return {"mu": self.mu, "sigma": self.sigma}


class LatticeLaw(StepLaw):
    """Finitely supported integer law."""

    family = Family.USER_LATTICE

    def __init__(self, support, probs) -> None:
        support_arr = np.asarray(support)
        probs_arr = np.asarray(probs, dtype=float)
        if support_arr.ndim != 1 or support_arr.shape != probs_arr.shape or support_arr.size == 0:
            raise ParameterError("user_lattice support and probabilities must be 1-D arrays of equal length")
        if not np.all(np.equal(np.mod(support_arr, 1), 0)):
            raise ParameterError("user_lattice support must be integers")
        if np.any(probs_arr < 0):
            raise ParameterError("user_lattice probabilities must be nonnegative")
        if abs(probs_arr.sum() - 1.0) > 1e-12:
            raise ParameterError(f"user_lattice probabilities sum to {probs_arr.sum()!r}, not 1")
        support_int = support_arr.astype(np.int64)
        if len(set(support_int.tolist())) != support_int.size:
            raise ParameterError("user_lattice support points must be distinct")
        charged = support_int[probs_arr > 0]
        if not (np.any(charged > 0) and np.any(charged < 0)):
            raise ParameterError("user_lattice law needs a positive and a negative support point")
        order = np.argsort(support_int)
        self.support = support_int[order]
        self.probs = probs_arr[order]
        self._cdf = np.cumsum(self.probs)

    def laplace(self, t: float) -> float:
        self._check(t)
        return float(np.sum(self.probs * np.exp(t * self.support)))

    def laplace_prime(self, t: float) -> float:
        self._check(t)
        return float(np.sum(self.support * self.probs * np.exp(t * self.support)))

    def mean(self) -> float:
        return float(np.sum(self.support * self.probs))

    def sample(self, rng: np.random.Generator, size: Optional[int] = None) -> Draw:
        u = rng.random(size)
        idx = np.minimum(np.searchsorted(self._cdf, u, side="right"), self.support.size - 1)
        if size is None:
            return float(self.support[int(idx)])
        return self.support[idx].astype(float)

    def tilt(self, rho: float, phi_rho: float) -> "LatticeLaw":
        weights = self.probs * np.exp(rho * self.support) / phi_rho
        # renormalize away the rounding in phi_rho
        return LatticeLaw(self.support, weights / weights.sum())

    def params(self) -> Dict[str, Any]:
        return {"support": self.support.tolist(), "probs": self.probs.tolist()}

    def lattice(self) -> Tuple[np.ndarray, np.ndarray]:
        return self.support, self.probs


def tilted_lattice(support, weights, s: float) -> LatticeLaw:
    """Lattice law with probabilities proportional to weights * e^{s y}."""
    support_arr = np.asarray(support, dtype=np.int64)
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0) or not np.any(w > 0):
        raise ParameterError("user_lattice weights must be nonnegative and not all zero")
    with np.errstate(divide="ignore"):
        log_w = np.where(w > 0, np.log(w), -np.inf) + s * support_arr
    log_w -= np.max(log_w)
    probs = np.exp(log_w)
    return LatticeLaw(support_arr, probs / probs.sum())


def build_law(family: Union[str, Family], params: Dict[str, Any]) -> StepLaw:
    try:
        family = Family(family)
    except ValueError as e:
        raise ParameterError(f"unknown step family {family!r}") from e
    try:
        if family is Family.TWO_POINT:
            return TwoPointLaw(params["p"])
        if family is Family.GAUSSIAN:
            return GaussianLaw(params["mu"], params["sigma"])
        if "probs" in params:
            return LatticeLaw(params["support"], params["probs"])
        return tilted_lattice(params["support"], params["weights"], float(params.get("tilt", 0.0)))
    except KeyError as e:
        raise ParameterError(f"{family.value} params missing {e.args[0]}") from e
