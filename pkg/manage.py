import json
import sys

import click
from pydantic import ValidationError

from kbrw.config import Config
from kbrw.runner.experiment import error_payload, run_experiment
from kbrw.runner.selftest import run_selftest
from kbrw.schemas import ExperimentConfig


def _emit(payload, exit_code: int) -> None:
    click.echo(json.dumps(payload, indent=2, sort_keys=True, default=str))
    sys.exit(exit_code)


def _run(command: str, model_file, seed, workers, output_dir, **params) -> None:
    """Validate, dispatch and exit with the experiment status."""
    try:
        cfg = ExperimentConfig(
            command=command,
            model_file=model_file,
            seed=seed,
            workers=workers or Config.WORKERS,
            output_dir=output_dir or Config.OUTPUT_DIR,
            params={k: v for k, v in params.items() if v is not None},
        )
    except ValidationError as e:
        _emit(error_payload(e), 2)
        return
    result = run_experiment(cfg)
    _emit(result.payload, result.exit_code)


def _parse_caps(ctx, param, value):
    if value is None:
        return None
    try:
        caps = json.loads(value)
    except json.JSONDecodeError as e:
        raise click.BadParameter(f"--caps must be a JSON object: {e}")
    if not isinstance(caps, dict):
        raise click.BadParameter("--caps must be a JSON object")
    return caps


def common_options(fn):
    """Options shared by every simulation subcommand."""
    fn = click.option("--output-dir", type=click.Path(file_okay=False), default=None,
                      help="Artifact directory (KBRW_OUTPUT_DIR)")(fn)
    fn = click.option("--workers", type=click.IntRange(min=1), default=None,
                      help="Worker processes (KBRW_WORKERS)")(fn)
    fn = click.option("--seed", type=click.IntRange(0, 2**64 - 1), default=None,
                      help="64-bit master seed")(fn)
    fn = click.option("--model", "model_file", type=click.Path(exists=True, dir_okay=False), default=None,
                      help="Model JSON file, e.g. config/models/two_point_b2.json")(fn)
    return fn


@click.group()
def cli():
    """Critical killed branching random walk experiments."""


@cli.command("calibrate")
@click.option("--family", type=click.Choice(["two_point", "gaussian", "user_lattice"]), required=True)
@click.option("--b", type=click.IntRange(min=2), required=True, help="Branching factor")
@click.option("--mu", type=float, default=None, help="Fix the gaussian mean")
@click.option("--sigma", type=float, default=None, help="Fix the gaussian standard deviation")
@click.option("--support", type=str, default=None, help="Lattice support, e.g. -2,-1,1")
@click.option("--weights", type=str, default=None, help="Lattice weights, e.g. 1,2,1")
@click.option("--output-dir", type=click.Path(file_okay=False), default=None)
def calibrate_command(family, b, mu, sigma, support, weights, output_dir):
    """Solve the free parameter so that phi(rho) = 1/b."""
    fixed = {}
    if mu is not None:
        fixed["mu"] = mu
    if sigma is not None:
        fixed["sigma"] = sigma
    if support is not None:
        fixed["support"] = [int(s) for s in support.split(",")]
    if weights is not None:
        fixed["weights"] = [float(w) for w in weights.split(",")]
    _run("calibrate", None, None, None, output_dir, family=family, b=b, fixed=fixed)


@cli.command("walk")
@common_options
@click.option("--start", type=float, required=True)
@click.option("--lower", type=float, required=True)
@click.option("--upper", type=float, required=True)
@click.option("--reps", type=click.IntRange(min=1), default=1000)
@click.option("--tilted/--untilted", default=True, help="Walk under the tilted law")
def walk_command(model_file, seed, workers, output_dir, start, lower, upper, reps, tilted):
    """Two-barrier walks: exit side, overshoot, undershoot and Green sums."""
    _run("walk", model_file, seed, workers, output_dir, start=start, lower=lower, upper=upper, reps=reps,
         tilted=tilted)


@cli.command("brw")
@common_options
@click.option("--x", type=float, default=0.0, help="Start position")
@click.option("--a", type=float, default=None, help="Counting level")
@click.option("--k", type=float, default=None, help="Absorbing top level")
@click.option("--reps", type=click.IntRange(min=1), default=1000)
@click.option("--caps", type=str, default=None, callback=_parse_caps, help="JSON overrides of the caps")
def brw_command(model_file, seed, workers, output_dir, x, a, k, reps, caps):
    """Per-run counts Z, Z0, Zak, Hk, M, T_ext."""
    _run("brw", model_file, seed, workers, output_dir, x=x, a=a, k=k, reps=reps, caps=caps)


@cli.command("tail-z")
@common_options
@click.option("--x", type=float, default=0.0)
@click.option("--grid", type=str, required=True, help="Ascending thresholds, e.g. 10,100,1000")
@click.option("--reps", type=click.IntRange(min=1), default=10000)
@click.option("--caps", type=str, default=None, callback=_parse_caps)
def tail_z_command(model_file, seed, workers, output_dir, x, grid, reps, caps):
    """Tail curve of the total progeny."""
    _run("tail-z", model_file, seed, workers, output_dir, x=x, grid=grid, reps=reps, caps=caps)


@cli.command("tail-max")
@common_options
@click.option("--x", type=float, default=0.0)
@click.option("--grid", type=str, required=True, help="Ascending levels, e.g. 3,5,8")
@click.option("--reps", type=click.IntRange(min=1), default=10000)
@click.option("--exact", is_flag=True, help="Use the lattice fixed point instead of simulation")
@click.option("--caps", type=str, default=None, callback=_parse_caps)
def tail_max_command(model_file, seed, workers, output_dir, x, grid, reps, exact, caps):
    """Tail curve of the maximum, P(M >= k)."""
    _run("tail-max", model_file, seed, workers, output_dir, x=x, grid=grid, reps=reps, exact=exact or None,
         caps=caps)


@cli.command("moments")
@common_options
@click.option("--quantity", type=click.Choice(["zak", "h"]), default="zak")
@click.option("--y", type=float, default=None, help="Start for Z(a,k); defaults to k")
@click.option("--x", type=float, default=0.0, help="Start for H(k)")
@click.option("--a", type=float, default=0.0)
@click.option("--k", type=float, required=True)
@click.option("--reps", type=click.IntRange(min=1), default=10000)
def moments_command(model_file, seed, workers, output_dir, quantity, y, x, a, k, reps):
    """First moments from every available source and their agreement."""
    _run("moments", model_file, seed, workers, output_dir, quantity=quantity, y=y, x=x, a=a, k=k, reps=reps)


@cli.command("green")
@common_options
@click.option("--x", type=float, default=0.0)
@click.option("--grid", type=str, required=True, help="Strip widths k, e.g. 10,20,40")
def green_command(model_file, seed, workers, output_dir, x, grid):
    """Exact weighted Green sums over a k grid."""
    _run("green", model_file, seed, workers, output_dir, x=x, grid=grid)


@cli.command("two-stage")
@common_options
@click.option("--x", type=float, default=0.0)
@click.option("--a", type=float, default=0.0)
@click.option("--grid", type=str, required=True, help="Tail thresholds n")
@click.option("--reps-stage1", type=click.IntRange(min=1), default=10000)
@click.option("--reps-stage2", type=click.IntRange(min=1), default=200)
@click.option("--caps", type=str, default=None, callback=_parse_caps)
def two_stage_command(model_file, seed, workers, output_dir, x, a, grid, reps_stage1, reps_stage2, caps):
    """Two-stage lower-bound tail estimate, with the exact upper bound for lattice models."""
    _run("two-stage", model_file, seed, workers, output_dir, x=x, a=a, grid=grid,
         reps_stage1=reps_stage1, reps_stage2=reps_stage2, caps=caps)


@cli.command("selftest")
@click.option("--seed", type=click.IntRange(0, 2**64 - 1), default=0)
@click.option("--workers", type=click.IntRange(min=1), default=None)
@click.option("--full", is_flag=True, help="Run every check at full replication counts")
def selftest_command(seed, workers, full):
    """Run the acceptance checks and print a JSON report."""
    report = run_selftest(seed=seed, full=full, workers=workers or Config.WORKERS)
    _emit(report, 0 if report["passed"] else 1)


if __name__ == "__main__":
    cli()
