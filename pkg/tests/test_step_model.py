import math

import numpy as np
import pytest

from kbrw.errors import CalibrationError, InfimumNotInteriorError, ParameterError
from kbrw.model.laws import GaussianLaw, LatticeLaw, TwoPointLaw, build_law
from kbrw.model.step_model import (
    StepModel,
    calibrate_critical,
    criticality_residual,
    find_rho,
    laplace,
    sample_step,
    sample_tilted_step,
)


def test_two_point_calibration_closed_form(two_point):
    assert two_point.law.p == pytest.approx((2 - math.sqrt(3)) / 4, abs=1e-12)
    assert two_point.law.p == pytest.approx(0.0669873, abs=1e-7)
    assert two_point.rho == pytest.approx(math.log(2 + math.sqrt(3)), abs=1e-9)
    assert two_point.rho == pytest.approx(1.3169579, abs=1e-7)
    assert two_point.phi_at_rho == pytest.approx(0.5, abs=1e-10)
    assert two_point.critical


def test_gaussian_calibration_closed_form():
    model = calibrate_critical("gaussian", 2, sigma=1.0)
    assert model.law.mu == pytest.approx(-math.sqrt(2 * math.log(2)), abs=1e-12)
    assert model.rho == pytest.approx(1.1774100, abs=1e-6)
    assert model.phi_at_rho == pytest.approx(0.5, abs=1e-10)


def test_gaussian_calibration_with_fixed_mu():
    model = calibrate_critical("gaussian", 3, mu=-2.0)
    assert abs(criticality_residual(model)) <= 1e-10
    assert model.rho == pytest.approx(-model.law.mu / model.law.sigma ** 2)


def test_user_lattice_calibration_is_critical():
    model = calibrate_critical("user_lattice", 3, support=[-2, -1, 1], weights=[1, 2, 1])
    assert abs(criticality_residual(model)) <= 1e-10
    assert model.is_lattice
    assert model.law.laplace_prime(model.rho) == pytest.approx(0.0, abs=1e-10)


def test_from_spec_uncalibrated_model_is_flagged_critical():
    model = StepModel.from_spec({"family": "two_point", "params": {"p": 0.0669872981077807}, "b": 2})
    assert model.critical
    assert model.rho == pytest.approx(1.3169579, abs=1e-7)


def test_residual_sign_marks_regime():
    supercritical = StepModel(TwoPointLaw(0.1), 2)
    subcritical = StepModel(TwoPointLaw(0.05), 2)
    assert criticality_residual(supercritical) > 0
    assert criticality_residual(subcritical) < 0


def test_find_rho_rejects_nonnegative_drift():
    with pytest.raises(InfimumNotInteriorError):
        find_rho(StepModel(TwoPointLaw(0.5), 2))
    with pytest.raises(InfimumNotInteriorError):
        find_rho(StepModel(GaussianLaw(0.3, 1.0), 2))


def test_invalid_parameters():
    with pytest.raises(ParameterError):
        StepModel(TwoPointLaw(0.1), 1)
    with pytest.raises(ParameterError):
        TwoPointLaw(1.5)
    with pytest.raises(ParameterError):
        GaussianLaw(-1.0, 0.0)
    with pytest.raises(ParameterError):
        LatticeLaw([1, 2], [0.5, 0.5])
    with pytest.raises(CalibrationError):
        calibrate_critical("two_point", 2, p=0.1)
    with pytest.raises(CalibrationError):
        calibrate_critical("gaussian", 2, mu=0.5)


def test_tilted_law_is_centered(two_point):
    tilted = two_point.tilted()
    assert tilted.law.p == pytest.approx(0.5, abs=1e-12)
    assert tilted.mean() == pytest.approx(0.0, abs=1e-12)
    gaussian = calibrate_critical("gaussian", 2, sigma=1.0)
    assert gaussian.tilted().mean() == pytest.approx(0.0, abs=1e-9)


def test_tilted_sample_mean_within_three_stderr():
    model = calibrate_critical("user_lattice", 3, support=[-2, -1, 1], weights=[1, 2, 1])
    rng = np.random.default_rng(7)
    draws = np.asarray(model.tilted().sample(rng, 200000), dtype=float)
    stderr = draws.std(ddof=1) / math.sqrt(draws.size)
    assert abs(draws.mean()) <= 3 * stderr


def test_density_ratio_matches_tilt(two_point):
    tilted = two_point.tilted()
    ratio = tilted.density_ratio(np.array([1.0, -1.0]))
    assert ratio[0] * two_point.law.p == pytest.approx(tilted.law.p)
    assert ratio[1] * (1 - two_point.law.p) == pytest.approx(1 - tilted.law.p)


def test_build_law_and_laplace():
    law = build_law("user_lattice", {"support": [-1, 1], "probs": [0.75, 0.25]})
    assert laplace(law, 0.0) == pytest.approx(1.0)
    assert laplace(law, 1.0) == pytest.approx(0.75 / math.e + 0.25 * math.e)


def test_sample_step_means(two_point):
    rng = np.random.default_rng(11)
    draws = np.asarray(sample_step(two_point, rng, 10**6), dtype=float)
    assert abs(draws.mean() - (2 * two_point.law.p - 1)) <= 3 * draws.std(ddof=1) / 1000
    gaussian = calibrate_critical("gaussian", 2, sigma=1.0)
    tilted = np.asarray(sample_tilted_step(gaussian, rng, 10**6), dtype=float)
    assert abs(tilted.mean()) <= 3 / 1000
    assert isinstance(sample_step(two_point, rng), float)


def test_build_law_reports_missing_params():
    with pytest.raises(ParameterError, match="missing p"):
        build_law("two_point", {})
    with pytest.raises(ParameterError, match="missing sigma"):
        StepModel.from_spec({"family": "gaussian", "params": {"mu": -1.0}, "b": 2})
    with pytest.raises(ParameterError):
        build_law("cauchy", {})


def test_critical_tolerance_comes_from_solver_config(tmp_path, monkeypatch):
    import json
    from kbrw.config import Config

    spec = {"family": "two_point", "params": {"p": 0.1}, "b": 2}
    assert not StepModel.from_spec(spec).critical
    (tmp_path / "solver.json").write_text(json.dumps({"critical_tol": 1.0}))
    monkeypatch.setattr(Config, "CONFIG_DIR", str(tmp_path))
    assert StepModel.from_spec(spec).critical
