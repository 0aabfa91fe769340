from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Any, Callable, Dict, List

import numpy as np

from ..brw.engine import BrwConfig, run_brw
from ..brw.exact import exact_brw_first_moment, exact_brw_second_moment, exact_strip_survival
from ..config_loader import section
from ..errors import KbrwError
from ..estimators.moments import (
    moment_H_direct,
    moment_H_exact,
    moment_H_many_to_one,
    moment_Zak_direct,
    moment_Zak_exact,
    moment_Zak_many_to_one,
    pairwise_agreement,
)
from ..estimators.tail import TailCurve, band_ratio, tail_curve_Z
from ..estimators.two_stage import not_above_direct, scaled_tail, two_stage_tail
from ..logging import run_logger
from ..model.laws import TwoPointLaw
from ..model.step_model import StepModel, calibrate_critical
from ..schemas import BandTolerances, Caps
from ..walk.boundary import estimate_boundary_moments, estimate_passage_constant
from ..walk.engine import Exit, run_walk_batch
from ..walk.lattice import (
    GreenQuantity,
    LatticeStrip,
    exact_green_sums,
    exact_hitting_probability,
    exact_passage_constant,
    gamblers_ruin,
)
from .seeding import derive_replication_seed, replication_key


CheckHandler = Callable[["Settings"], Dict[str, Any]]

_SCALE_DEFAULTS = {
    "quick": {"reps_walk": 20000, "reps_tree": 20000, "reps_tail": 200000, "reps_stage2": 200,
              "reps_overshoot": 20000},
    "full": {"reps_walk": 100000, "reps_tree": 100000, "reps_tail": 10000000, "reps_stage2": 2000,
             "reps_overshoot": 1000000},
}


class CheckError(Exception):
    pass


@dataclass
class Settings:
    seed: int
    full: bool
    workers: int
    bands: BandTolerances
    reps_walk: int
    reps_tree: int
    reps_tail: int
    reps_stage2: int
    reps_overshoot: int

    @classmethod
    def load(cls, seed: int, full: bool, workers: int) -> "Settings":
        scale = "full" if full else "quick"
        acceptance = section("acceptance", {})
        reps = {**_SCALE_DEFAULTS[scale], **(acceptance.get(scale) or {})}
        return cls(seed, full, workers, BandTolerances.from_config(), **reps)

    def rng(self, stream: int) -> np.random.Generator:
        return derive_replication_seed(self.seed, 0, stream)


class CheckRegistry:
    def __init__(self) -> None:
        self._checks: Dict[str, Dict[str, Any]] = {}

    def register(self, name: str, description: str, handler: CheckHandler, full_only: bool = False) -> None:
        self._checks[name] = {
            "name": name,
            "description": description,
            "handler": handler,
            "full_only": full_only,
        }

    def names(self) -> List[str]:
        return list(self._checks)

    def execute(self, name: str, settings: Settings) -> Dict[str, Any]:
        check = self._checks.get(name)
        if not check:
            raise CheckError(f"Unknown check: {name}")
        if check["full_only"] and not settings.full:
            return {"name": name, "status": "skipped", "description": check["description"]}
        started = time.perf_counter()
        try:
            details = check["handler"](settings)
            status = "passed" if details.pop("passed") else "failed"
        except KbrwError as e:
            details, status = e.to_dict(), "error"
        if status != "passed":
            run_logger.log_warning(f"selftest check {name} {status}", check=name, details=details)
        return {
            "name": name,
            "status": status,
            "description": check["description"],
            "runtime": round(time.perf_counter() - started, 3),
            **details,
        }

    def run_all(self, settings: Settings) -> Dict[str, Any]:
        results = [self.execute(name, settings) for name in self._checks]
        return {
            "passed": all(r["status"] in ("passed", "skipped") for r in results),
            "full": settings.full,
            "checks": results,
        }


def _critical_two_point() -> StepModel:
    return calibrate_critical("two_point", 2)


# Checks

def check_calibration(settings: Settings) -> Dict[str, Any]:
    two_point = _critical_two_point()
    gaussian = calibrate_critical("gaussian", 2, sigma=1.0)
    expected = {
        "two_point_p": (two_point.law.p, (2 - math.sqrt(3)) / 4),
        "two_point_rho": (two_point.rho, math.log(2 + math.sqrt(3))),
        "gaussian_mu": (gaussian.law.mu, -math.sqrt(2 * math.log(2))),
        "gaussian_rho": (gaussian.rho, math.sqrt(2 * math.log(2))),
    }
    errors = {name: abs(got - want) for name, (got, want) in expected.items()}
    return {"passed": max(errors.values()) <= 1e-6, "errors": errors}


def check_tilt_centering(settings: Settings) -> Dict[str, Any]:
    draws = 10 ** 6 if settings.full else 10 ** 5
    out = {}
    for i, model in enumerate((_critical_two_point(), calibrate_critical("gaussian", 2, sigma=1.0))):
        sample = np.asarray(model.tilted().sample(settings.rng(10 + i), draws), dtype=float)
        stderr = sample.std(ddof=1) / math.sqrt(draws)
        out[model.family.value] = {"mean": float(sample.mean()), "stderr": float(stderr)}
    passed = all(abs(v["mean"]) <= 3 * v["stderr"] for v in out.values())
    return {"passed": passed, "families": out}


def check_gamblers_ruin(settings: Settings) -> Dict[str, Any]:
    simple = TwoPointLaw(0.5)
    rng = settings.rng(20)
    pairs = [(z, k) for k in (4, 9, 15, 30) for z in (0, 1, k // 2, k - 1, k)]
    worst_exact, worst_mc = 0.0, 0.0
    for z, k in pairs:
        strip = LatticeStrip.from_law(simple, 0, k)
        exact = exact_hitting_probability(strip, z)
        worst_exact = max(worst_exact, abs(exact - gamblers_ruin(z, k)))
        batch = run_walk_batch(simple, z, 0, k, rng, settings.reps_walk)
        freq = float(np.mean(batch.exit == 1))
        stderr = math.sqrt(exact * (1 - exact) / settings.reps_walk)
        worst_mc = max(worst_mc, abs(freq - exact) / stderr)
    return {"passed": worst_exact <= 1e-12 and worst_mc <= 3.5, "pairs": len(pairs),
            "max_exact_error": worst_exact, "max_mc_sigmas": worst_mc}


def check_boundary_functionals(settings: Settings) -> Dict[str, Any]:
    simple = TwoPointLaw(0.5)
    overshoot = estimate_boundary_moments(simple, 7.0, Exit.TOP, 2000, settings.rng(25))
    passage = estimate_passage_constant(simple, 3.0, 2000, settings.rng(26))
    exact_passage = {k: exact_passage_constant(simple, 3, k) for k in (50, 100, 200)}
    gaussian = calibrate_critical("gaussian", 2, sigma=1.0)
    # centered walks take heavy-tailed times to reach a level; quick mode uses lower ones
    levels = (5.0, 10.0, 20.0) if settings.full else (2.0, 4.0, 8.0)
    gaussian_overshoot = [
        estimate_boundary_moments(gaussian.tilted(), k, Exit.TOP, settings.reps_overshoot,
                                  settings.rng(27 + i)).value
        for i, k in enumerate(levels)
    ]
    ratio = band_ratio(gaussian_overshoot)
    passed = (
        abs(overshoot.value - math.e) <= 1e-12
        and abs(passage.value - 4.0) <= 1e-12
        and all(abs(v - 4.0) <= 0.5 for v in exact_passage.values())
        and ratio <= settings.bands.overshoot_ratio
    )
    return {"passed": passed, "simple_overshoot": overshoot.value, "simple_passage": passage.value,
            "exact_passage": exact_passage, "gaussian_overshoot_ratio": ratio}


def check_leaf_identity(settings: Settings) -> Dict[str, Any]:
    runs = 10 ** 4 if settings.full else 2000
    lattice_b3 = calibrate_critical("user_lattice", 3, support=[-2, -1, 1], weights=[1, 2, 1])
    failures = {}
    for label, config in {
        "b2": BrwConfig(_critical_two_point()),
        "b3": BrwConfig(lattice_b3),
        "b2_strip": BrwConfig(_critical_two_point(), k=6.0),
        "b3_strip": BrwConfig(lattice_b3, k=6.0),
    }.items():
        bad = 0
        for i in range(runs):
            run = run_brw(config, derive_replication_seed(settings.seed, i, 30))
            if not run.censored and not run.leaf_identity_holds(config.model.b):
                bad += 1
        failures[label] = bad
    return {"passed": not any(failures.values()), "runs_each": runs, "failures": failures}


def check_dual_first_moments(settings: Settings) -> Dict[str, Any]:
    model = _critical_two_point()
    sigmas = settings.bands.agreement_sigmas
    results = {}
    for y, a, k in [(4, 0, 4), (6, 0, 6), (3, 1, 6), (8, 2, 8), (5, 0, 8)]:
        reports = {
            "exact_lattice": moment_Zak_exact(model, y, a, k),
            "many_to_one_is": moment_Zak_many_to_one(model, y, a, k, settings.reps_walk, settings.rng(40)),
            "direct_mc": moment_Zak_direct(model, y, a, k, settings.reps_tree, settings.seed, settings.workers,
                                           stream=41),
        }
        results[f"Zak({y},{a},{k})"] = pairwise_agreement(reports, sigmas)
    # E^0[H_10] is about 4e-8, out of reach of direct trees; start near the top instead
    for x, k in [(9, 10), (8, 10), (4, 6)]:
        reports = {
            "exact_lattice": moment_H_exact(model, x, k),
            "many_to_one_is": moment_H_many_to_one(model, x, k, settings.reps_walk, settings.rng(42)),
            "direct_mc": moment_H_direct(model, x, k, settings.reps_tree, settings.seed, settings.workers,
                                         stream=43),
        }
        results[f"H({x},{k})"] = pairwise_agreement(reports, sigmas)
    passed = all(all(pairs.values()) for pairs in results.values())
    return {"passed": passed, "agreement": results}


def check_exact_bands(settings: Settings) -> Dict[str, Any]:
    model = _critical_two_point()
    rho = model.rho
    ks = list(range(8, 31, 2))
    first = [k * math.exp(-rho * k) * exact_brw_first_moment(model, 0, k, k) for k in ks]
    second = [k * k * math.exp(-2 * rho * k) * exact_brw_second_moment(model, 0, k, k) for k in ks]
    maximum = [k * math.exp(rho * k) * exact_strip_survival(model, k, 0) for k in ks]
    ratios = {"first_moment": band_ratio(first), "second_moment": band_ratio(second),
              "max_tail": band_ratio(maximum)}
    limit = settings.bands.exact_ratio
    return {"passed": all(r <= limit for r in ratios.values()), "ratios": ratios, "limit": limit}


def check_green_bands(settings: Settings) -> Dict[str, Any]:
    model = _critical_two_point()
    ratios = {}
    for quantity in GreenQuantity:
        scaled = []
        for k in (10, 20, 40, 80):
            strip = LatticeStrip.from_law(model.tilted(), 0, k)
            scaled.append(exact_green_sums(strip, quantity.start(strip), quantity) * quantity.scaling(k))
        ratios[quantity.value] = band_ratio(scaled)
    limit = settings.bands.exact_ratio
    return {"passed": all(r <= limit for r in ratios.values()), "ratios": ratios, "limit": limit}


def check_tail_band(settings: Settings) -> Dict[str, Any]:
    model = _critical_two_point()
    curve = tail_curve_Z(BrwConfig(model), [10, 100, 1000], settings.reps_tail, settings.seed, settings.workers,
                         stream=50)
    ratio = band_ratio(curve.scaled)
    return {"passed": ratio <= settings.bands.mc_ratio, "ratio": ratio,
            "scaled": [float(s) for s in curve.scaled]}


def check_two_stage(settings: Settings) -> Dict[str, Any]:
    model = _critical_two_point()
    grid = [1e3, 1e4, 1e5]
    direct = tail_curve_Z(BrwConfig(model), grid, settings.reps_tail, settings.seed, settings.workers, stream=51)
    scaled, below = [], {}
    for i, n in enumerate(grid):
        result = two_stage_tail(model, 0.0, 0.0, n, settings.reps_tree, settings.reps_stage2, settings.seed,
                                settings.workers, Caps())
        scaled.append(scaled_tail(n, result.estimate, 0.0, model.rho))
        below[f"{n:g}"] = not_above_direct(result.estimate, int(direct.hits[i]), int(direct.reps[i]))
    ratio = band_ratio(scaled)
    passed = ratio <= settings.bands.two_stage_ratio and all(v is not False for v in below.values())
    return {"passed": passed, "ratio": ratio, "scaled": scaled, "below_direct": below}


def check_determinism(settings: Settings) -> Dict[str, Any]:
    vector_ok = replication_key(0, 0) == (0xE220A8397B1DCDAF, 0)
    model = _critical_two_point()
    curves: List[TailCurve] = [
        tail_curve_Z(BrwConfig(model), [1, 5, 20], 3000, settings.seed, workers=w, stream=60) for w in (1, 2)
    ]
    same = np.array_equal(curves[0].hits, curves[1].hits) and np.array_equal(curves[0].excluded, curves[1].excluded)
    return {"passed": vector_ok and same, "test_vector": vector_ok, "workers_agree": same}


def build_registry() -> CheckRegistry:
    registry = CheckRegistry()
    registry.register("calibration", "closed-form critical parameters and rho", check_calibration)
    registry.register("tilt_centering", "tilted step has mean zero", check_tilt_centering)
    registry.register("gamblers_ruin", "exact and simulated exit probabilities", check_gamblers_ruin)
    registry.register("boundary_functionals", "overshoot and passage constants of the boundary walks",
                      check_boundary_functionals)
    registry.register("leaf_identity", "Z0 + Hk = 1 + (b-1) Z on every finished tree", check_leaf_identity)
    registry.register("dual_first_moments", "exact, many-to-one and direct first moments agree",
                      check_dual_first_moments)
    registry.register("exact_bands", "scaled first/second moments and maximum tail stay in band",
                      check_exact_bands)
    registry.register("green_bands", "scaled Green sums stay in band over a doubling grid", check_green_bands)
    registry.register("tail_band", "n ln^2(n) P(Z > n) stays in band", check_tail_band, full_only=True)
    registry.register("two_stage", "two-stage scaled tail stays in band and below the direct tail", check_two_stage,
                      full_only=True)
    registry.register("determinism", "seed vector and worker-count independence", check_determinism)
    return registry


def run_selftest(seed: int = 0, full: bool = False, workers: int = 1) -> Dict[str, Any]:
    return build_registry().run_all(Settings.load(seed, full, workers))
