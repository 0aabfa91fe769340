from __future__ import annotations

import csv
import json
import math
import os
import time
from dataclasses import dataclass, field
from functools import partial
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np
from pydantic import ValidationError

from .. import __version__
from ..brw.engine import BrwConfig, BrwRun, run_brw
from ..brw.exact import exact_brw_second_moment, exact_h_second_moment, max_tail_bounds
from ..config_loader import section
from ..errors import KbrwError, ParameterError
from ..estimators.levels import choose_k_lower, choose_k_upper
from ..estimators.moments import (
    moment_H_direct,
    moment_H_exact,
    moment_H_many_to_one,
    moment_Zak_direct,
    moment_Zak_exact,
    moment_Zak_many_to_one,
    pairwise_agreement,
)
from ..estimators.tail import band_ratio, tail_curve_M, tail_curve_M_exact, tail_curve_Z
from ..estimators.two_stage import scaled_tail, two_stage_tail, upper_bound_tail
from ..logging import run_logger
from ..model.step_model import StepModel, calibrate_critical, criticality_residual
from ..schemas import Caps, ExperimentConfig, parse_grid
from ..walk.engine import Transform, run_walk_batch
from ..walk.lattice import GreenQuantity, LatticeStrip, exact_green_sums, exact_hitting_probability
from .pool import map_blocks
from .seeding import derive_replication_seed


Rows = List[Dict[str, Any]]
Handler = Callable[[ExperimentConfig], Tuple[Dict[str, Any], Optional[Rows]]]


@dataclass
class ExperimentResult:
    exit_code: int
    payload: Dict[str, Any]
    artifacts: List[str] = field(default_factory=list)


_REQUIRED = object()


def _param(cfg: ExperimentConfig, name: str, default: Any = _REQUIRED, cast: Callable = float) -> Any:
    value = cfg.params.get(name)
    if value is None:
        if default is _REQUIRED:
            raise ParameterError(f"{cfg.command} needs --{name.replace('_', '-')}")
        return default
    try:
        return cast(value)
    except (TypeError, ValueError) as e:
        raise ParameterError(f"bad value for {name}: {value!r}") from e


def _grid(cfg: ExperimentConfig, name: str = "grid") -> List[float]:
    value = cfg.params.get(name)
    if value is None:
        raise ParameterError(f"{cfg.command} needs --{name}")
    return parse_grid(value) if isinstance(value, str) else [float(v) for v in value]


def load_model(cfg: ExperimentConfig) -> StepModel:
    if cfg.model is None:
        raise ParameterError(f"{cfg.command} needs --model")
    return StepModel.from_spec(cfg.model.model_dump())


def _caps(cfg: ExperimentConfig) -> Caps:
    overrides = cfg.params.get("caps") or {}
    base = Caps.from_config().model_dump()
    base.update(overrides)
    return Caps(**base)


def _model_summary(model: StepModel) -> Dict[str, Any]:
    return {**model.to_spec(), "rho": model.rho, "phi_at_rho": model.phi_at_rho}


def _regime(residual: float, tol: float) -> str:
    if abs(residual) <= tol:
        return "critical"
    return "supercritical" if residual > 0 else "subcritical"


# Subcommand handlers

def handle_calibrate(cfg: ExperimentConfig):
    family = cfg.params.get("family") or (cfg.model.family if cfg.model else None)
    b = cfg.params.get("b") or (cfg.model.b if cfg.model else None)
    if family is None or b is None:
        raise ParameterError("calibrate needs --family and --b")
    fixed = dict(cfg.params.get("fixed") or {})
    model = calibrate_critical(family, int(b), **fixed)
    residual = criticality_residual(model)
    tol = float(section("solver", {"critical_tol": 1e-10})["critical_tol"])
    return {
        "family": model.family.value,
        "b": model.b,
        "params": model.law.params(),
        "rho": model.rho,
        "phi_at_rho": model.phi_at_rho,
        "residual": residual,
        "regime": _regime(residual, tol),
        "residual_sign": "phi(rho) - 1/b; > 0 supercritical, < 0 subcritical",
    }, None


def handle_walk(cfg: ExperimentConfig):
    model = load_model(cfg)
    seed = cfg.require_seed()
    start, lower, upper = _param(cfg, "start"), _param(cfg, "lower"), _param(cfg, "upper")
    reps = _param(cfg, "reps", 1000, int)
    tilted = bool(cfg.params.get("tilted", True))
    step = model.tilted() if tilted else model
    transform = Transform(shift=-lower) if math.isfinite(lower) else Transform()
    max_steps = int(section("caps", {"max_steps": 10**8})["max_steps"])
    batch = run_walk_batch(step, start, lower, upper, derive_replication_seed(seed, 0), reps,
                           transform=transform, max_steps=max_steps, green=True)
    run_logger.log_censoring("walk", int(batch.censored.sum()), reps, reason="max_steps")
    names = {1: "top", -1: "bottom", 0: "censored"}
    rows = [
        {
            "exit": names[int(batch.exit[i])],
            "steps": int(batch.steps[i]),
            "overshoot": float(batch.overshoot[i]),
            "undershoot": float(batch.undershoot[i]),
            "green_top": float(batch.green_top[i]),
            "green_bottom": float(batch.green_bottom[i]),
        }
        for i in range(reps)
    ]
    done = ~batch.censored
    top_fraction = float(np.mean(batch.exit[done] == 1)) if done.any() else math.nan
    summary: Dict[str, Any] = {"top_fraction": top_fraction, "censored": int(batch.censored.sum()),
                               "tilted": tilted, "resolved_model": _model_summary(model)}
    if model.is_lattice and float(start).is_integer() and float(lower).is_integer() \
            and float(upper).is_integer():
        strip = LatticeStrip.from_law(step, int(lower), int(upper))
        summary["exact_top_probability"] = exact_hitting_probability(strip, int(start))
    return summary, rows


def _brw_block(config: BrwConfig, seed: int, block_index: int, start: int, stop: int) -> List[BrwRun]:
    return [run_brw(config, derive_replication_seed(seed, i)) for i in range(start, stop)]


def handle_brw(cfg: ExperimentConfig):
    model = load_model(cfg)
    seed = cfg.require_seed()
    config = BrwConfig(model, x=_param(cfg, "x", 0.0), a=_param(cfg, "a", None),
                       k=_param(cfg, "k", None), caps=_caps(cfg))
    config.validate()
    reps = _param(cfg, "reps", 1000, int)
    block_size = int(section("solver", {"tree_block_size": 1024})["tree_block_size"])
    runs = [run for block in map_blocks(partial(_brw_block, config, seed), reps, block_size, cfg.workers)
            for run in block]
    rows = [{"rep": i, **{key: value for key, value in run.to_dict().items() if key != "censor_reason"}}
            for i, run in enumerate(runs)]
    censored = sum(run.censored for run in runs)
    run_logger.log_censoring("brw", censored, reps, reason="caps")
    finished = [run for run in runs if not run.censored]
    return {
        "resolved_model": _model_summary(model),
        "censored": censored,
        "leaf_identity_holds": all(run.leaf_identity_holds(model.b) for run in finished),
        "mean_Z": float(np.mean([run.Z for run in finished])) if finished else math.nan,
    }, rows


def handle_tail_z(cfg: ExperimentConfig):
    model = load_model(cfg)
    config = BrwConfig(model, x=_param(cfg, "x", 0.0), caps=_caps(cfg))
    curve = tail_curve_Z(config, _grid(cfg), _param(cfg, "reps", 10000, int), cfg.require_seed(), cfg.workers)
    return {**curve.summary(), "resolved_model": _model_summary(model)}, curve.rows()


def handle_tail_max(cfg: ExperimentConfig):
    model = load_model(cfg)
    x = _param(cfg, "x", 0.0)
    if cfg.params.get("exact"):
        if not float(x).is_integer():
            raise ParameterError("exact maximum tail needs an integer start")
        curve = tail_curve_M_exact(model, _grid(cfg), int(x))
    else:
        config = BrwConfig(model, x=x, caps=_caps(cfg))
        curve = tail_curve_M(config, _grid(cfg), _param(cfg, "reps", 10000, int), cfg.require_seed(),
                             cfg.workers)
    return {**curve.summary(), "resolved_model": _model_summary(model)}, curve.rows()


def handle_moments(cfg: ExperimentConfig):
    model = load_model(cfg)
    seed = cfg.require_seed()
    quantity = cfg.params.get("quantity", "zak")
    k = _param(cfg, "k")
    reps = _param(cfg, "reps", 10000, int)
    walk_rng = derive_replication_seed(seed, 0, stream=1)
    reports = {}
    lattice_point = model.is_lattice and float(k).is_integer()
    if quantity == "zak":
        y, a = _param(cfg, "y", k), _param(cfg, "a", 0.0)
        reports["many_to_one_is"] = moment_Zak_many_to_one(model, y, a, k, reps, walk_rng)
        reports["direct_mc"] = moment_Zak_direct(model, y, a, k, reps, seed, cfg.workers, _caps(cfg))
        if lattice_point and float(y).is_integer() and float(a).is_integer():
            reports["exact_lattice"] = moment_Zak_exact(model, int(y), int(a), int(k))
            extra = {"second_moment": exact_brw_second_moment(model, int(a), int(k), int(y))}
        else:
            extra = {}
    elif quantity == "h":
        x = _param(cfg, "x", 0.0)
        reports["many_to_one_is"] = moment_H_many_to_one(model, x, k, reps, walk_rng)
        reports["direct_mc"] = moment_H_direct(model, x, k, reps, seed, cfg.workers, _caps(cfg))
        if lattice_point and float(x).is_integer():
            reports["exact_lattice"] = moment_H_exact(model, int(x), int(k))
            lower, upper = max_tail_bounds(model, int(k), int(x))
            extra = {"second_moment": exact_h_second_moment(model, int(k), int(x)),
                     "max_tail_bounds": [lower, upper]}
        else:
            extra = {}
    else:
        raise ParameterError(f"unknown quantity {quantity!r}; use zak or h")
    agreement = pairwise_agreement(reports, cfg.bands.agreement_sigmas)
    if not all(agreement.values()):
        run_logger.log_warning("moment sources disagree", agreement=agreement)
    return {
        "resolved_model": _model_summary(model),
        "quantity": quantity,
        "reports": {name: report.to_dict() for name, report in reports.items()},
        "agreement": agreement,
        **extra,
    }, None


def handle_green(cfg: ExperimentConfig):
    model = load_model(cfg)
    x = _param(cfg, "x", 0.0)
    quantities = [GreenQuantity(q) for q in (cfg.params.get("quantities") or [q.value for q in GreenQuantity])]
    step = model.tilted() if cfg.params.get("tilted", True) else model
    rows = []
    for k in _grid(cfg):
        strip = LatticeStrip.from_law(step, 0, int(k))
        for quantity in quantities:
            value = exact_green_sums(strip, quantity.start(strip, x), quantity)
            rows.append({"k": int(k), "quantity": quantity.value, "value": value,
                         "scaled": value * quantity.scaling(k, x)})
    bands = {q.value: band_ratio([r["scaled"] for r in rows if r["quantity"] == q.value]) for q in quantities}
    return {"band_ratio": bands, "resolved_model": _model_summary(model)}, rows


def handle_two_stage(cfg: ExperimentConfig):
    model = load_model(cfg)
    seed = cfg.require_seed()
    x, a = _param(cfg, "x", 0.0), _param(cfg, "a", 0.0)
    reps1 = _param(cfg, "reps_stage1", 10000, int)
    reps2 = _param(cfg, "reps_stage2", 200, int)
    rows = []
    for n in _grid(cfg):
        result = two_stage_tail(model, x, a, n, reps1, reps2, seed, cfg.workers, _caps(cfg))
        row = {
            "n": n,
            "estimate": result.estimate,
            "ci_lo": result.ci_lo,
            "ci_hi": result.ci_hi,
            "k_star": result.k_star,
            "scaled": scaled_tail(n, result.estimate, x, model.rho),
            "label": result.label,
        }
        if model.is_lattice and float(x).is_integer():
            row["upper_bound"] = upper_bound_tail(model, int(x), n).value
        rows.append(row)
    return {"resolved_model": _model_summary(model),
            "band_ratio": band_ratio([r["scaled"] for r in rows]),
            "k_upper": [choose_k_upper(model, r["n"]) for r in rows],
            "k_lower_mu2": [choose_k_lower(model, r["n"], 2.0) for r in rows]}, rows


HANDLERS: Dict[str, Handler] = {
    "calibrate": handle_calibrate,
    "walk": handle_walk,
    "brw": handle_brw,
    "tail-z": handle_tail_z,
    "tail-max": handle_tail_max,
    "moments": handle_moments,
    "green": handle_green,
    "two-stage": handle_two_stage,
}


# Artifacts

def _cell(value: Any) -> Any:
    if isinstance(value, (bool, np.bool_)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return value


def write_csv(path: str, rows: Rows, version: str, config_hash: str) -> None:
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    columns: List[str] = []
    for row in rows:
        columns.extend(c for c in row if c not in columns)
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(f"# kbrw {version} config={config_hash[:16]}\n")
        writer = csv.DictWriter(f, fieldnames=columns, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({c: _cell(row.get(c, "")) for c in columns})


def write_json(path: str, payload: Dict[str, Any]) -> None:
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True, default=str)
        f.write("\n")


def _sanitize(value: Any) -> Any:
    if isinstance(value, dict):
        return {k: _sanitize(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_sanitize(v) for v in value]
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else str(value)
    if isinstance(value, np.integer):
        return int(value)
    return value


def error_payload(error: Exception) -> Dict[str, Any]:
    if isinstance(error, KbrwError):
        return error.to_dict()
    if isinstance(error, ValidationError):
        return {"error": "ValidationError", "message": str(error), "exit_code": 2}
    return {"error": type(error).__name__, "message": str(error), "exit_code": 1}


def run_experiment(cfg: ExperimentConfig, write: bool = True) -> ExperimentResult:
    """Dispatch one subcommand, write its artifacts, map failures to exit codes."""
    started = time.perf_counter()
    config_hash = cfg.config_hash()
    run_logger.log_run_start(cfg.command, cfg.seed, config_hash, cfg.workers)
    handler = HANDLERS.get(cfg.command)
    try:
        if handler is None:
            raise ParameterError(f"unknown command {cfg.command!r}")
        payload, rows = handler(cfg)
    except (KbrwError, ValidationError) as e:
        result = ExperimentResult(error_payload(e)["exit_code"], error_payload(e))
        run_logger.log_run_end(cfg.command, result.exit_code, time.perf_counter() - started)
        return result

    runtime = time.perf_counter() - started
    model = cfg.model.model_dump() if cfg.model else None
    payload = _sanitize({
        **payload,
        "command": cfg.command,
        "model": model,
        "rho": payload.get("rho", (payload.get("resolved_model") or {}).get("rho")),
        "seed": cfg.seed,
        "runtime": runtime,
        "config_hash": config_hash,
        "version": __version__,
    })
    artifacts = []
    if write:
        stem = os.path.join(cfg.output_dir, cfg.command)
        if rows is not None:
            write_csv(stem + ".csv", rows, __version__, config_hash)
            run_logger.log_artifact(stem + ".csv", "csv", len(rows))
            artifacts.append(stem + ".csv")
        write_json(stem + ".json", payload)
        run_logger.log_artifact(stem + ".json", "json", 1)
        artifacts.append(stem + ".json")
    run_logger.log_run_end(cfg.command, 0, runtime)
    return ExperimentResult(0, payload, artifacts)
