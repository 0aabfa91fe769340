import math

import numpy as np
import pytest

from kbrw.brw.engine import BrwConfig, run_brw
from kbrw.brw.exact import (
    exact_brw_first_moment,
    exact_brw_second_moment,
    exact_h_first_moment,
    exact_h_second_moment,
    exact_progeny_mean,
    exact_strip_survival,
    max_tail_bounds,
    strip_survival_profile,
)
from kbrw.errors import ConvergenceError, DomainError, ParameterError
from kbrw.estimators.tail import band_ratio
from kbrw.model.laws import GaussianLaw, TwoPointLaw
from kbrw.model.step_model import StepModel
from kbrw.runner.seeding import derive_replication_seed


def test_first_moment_two_state_strip(two_point):
    p = two_point.law.p
    m0 = exact_brw_first_moment(two_point, 0, 1, 0)
    assert m0 == pytest.approx(2 * (1 - p) / (1 - 4 * p * (1 - p)), rel=1e-12)
    assert m0 == pytest.approx(2.4880339, abs=1e-7)
    assert exact_brw_first_moment(two_point, 0, 1, 1) == pytest.approx(2 * (1 - p) * m0, rel=1e-12)


def test_first_moment_outside_strip(two_point):
    assert exact_brw_first_moment(two_point, 2, 6, 1) == 1.0
    assert exact_brw_first_moment(two_point, 2, 6, 7) == 0.0
    assert exact_h_first_moment(two_point, 6, 7) == 1.0
    assert exact_h_first_moment(two_point, 6, -1) == 0.0


def test_first_moment_scaling_band(two_point):
    rho = two_point.rho
    ks = list(range(8, 31, 2))
    scaled = [k * math.exp(-rho * k) * exact_brw_first_moment(two_point, 0, k, k) for k in ks]
    assert band_ratio(scaled) <= 2.0


def test_second_moment_dominates_square(two_point):
    for k in (5, 10, 20):
        first = exact_brw_first_moment(two_point, 0, k, k)
        second = exact_brw_second_moment(two_point, 0, k, k)
        assert second >= first ** 2


def test_h_second_moment_is_same_order_as_first(two_point):
    ratios = [exact_h_second_moment(two_point, k, 0) / exact_h_first_moment(two_point, k, 0) for k in (10, 20, 40)]
    assert min(ratios) >= 1.0
    assert band_ratio(ratios) <= 3.0


def test_strip_survival_single_state(two_point):
    p = two_point.law.p
    assert exact_strip_survival(two_point, 1, 0) == pytest.approx(1 - (1 - p) ** 2, rel=1e-10)


def test_strip_survival_matches_hand_fixed_point(two_point):
    p = two_point.law.p
    q = 1.0
    for _ in range(10000):
        q = (p * ((1 - p) * q) ** 2 + (1 - p)) ** 2
    assert exact_strip_survival(two_point, 2, 0) == pytest.approx(1 - q, rel=1e-9)


def test_strip_survival_at_start_level_is_one(two_point):
    assert exact_strip_survival(two_point, 4, 4) == 1.0


def test_strip_survival_decreasing_and_scaled_band(two_point):
    ks = list(range(2, 31, 2))
    profile = strip_survival_profile(two_point, ks)
    assert np.all(np.diff(profile) < 0)
    scaled = [k * math.exp(two_point.rho * k) * s for k, s in zip(ks[3:], profile[3:])]
    assert band_ratio(scaled) <= 2.0


def test_strip_survival_agrees_with_simulation(two_point):
    k, reps = 4, 20000
    config = BrwConfig(two_point, x=0.0, k=float(k))
    hits = sum(run_brw(config, derive_replication_seed(21, i)).M >= k for i in range(reps))
    exact = exact_strip_survival(two_point, k, 0)
    stderr = math.sqrt(exact * (1 - exact) / reps)
    assert abs(hits / reps - exact) <= 4 * stderr


def test_max_tail_bounds_bracket_exact(two_point):
    for k in (3, 8, 15):
        lower, upper = max_tail_bounds(two_point, k, 0)
        # P(M > k) is P(M >= k + 1) on the lattice
        exact = exact_strip_survival(two_point, k + 1, 0)
        assert lower <= exact * (1 + 1e-9)
        assert exact <= upper * (1 + 1e-9)


def test_progeny_mean_matches_simulation(two_point):
    k, reps = 6, 20000
    config = BrwConfig(two_point, x=0.0, k=float(k))
    totals = np.array([run_brw(config, derive_replication_seed(22, i)).Z for i in range(reps)], dtype=float)
    exact = exact_progeny_mean(two_point, 0, k)
    assert abs(totals.mean() - exact) <= 4 * totals.std(ddof=1) / math.sqrt(reps)


def test_supercritical_lattice_model_is_rejected():
    supercritical = StepModel(TwoPointLaw(0.1), 2)
    with pytest.raises(DomainError):
        exact_brw_first_moment(supercritical, 0, 5, 3)


def test_exact_solvers_need_lattice_laws():
    gaussian = StepModel(GaussianLaw(-1.0, 1.0), 2)
    with pytest.raises(ParameterError):
        exact_brw_first_moment(gaussian, 0, 5, 3)
    with pytest.raises(ParameterError):
        exact_brw_first_moment(StepModel(TwoPointLaw(0.05), 2), 0, 5, 2.5)


def test_strip_survival_sweep_cap(two_point):
    with pytest.raises(ConvergenceError):
        exact_strip_survival(two_point, 20, 0, max_sweeps=2)


def test_second_moment_hand_solve_on_two_states(two_point):
    p = two_point.law.p
    m0 = 2 * (1 - p) / (1 - 4 * p * (1 - p))
    m1 = 2 * (1 - p) * m0
    # each child contributes 1 below 0, Z from its landing state inside, 0 above 1
    m2_0 = (2 * (1 - p) + p * m1 ** 2 + m0 ** 2 / 2) / (1 - 4 * p * (1 - p))
    m2_1 = 2 * (1 - p) * m2_0 + m1 ** 2 / 2
    assert exact_brw_second_moment(two_point, 0, 1, 0) == pytest.approx(m2_0, rel=1e-9)
    assert exact_brw_second_moment(two_point, 0, 1, 1) == pytest.approx(m2_1, rel=1e-9)
    assert m2_0 == pytest.approx(8.5401, abs=1e-4)
    assert m2_1 == pytest.approx(26.7136, abs=1e-4)


def test_second_moment_dominates_first_moment(two_point):
    for a, k in [(0, 1), (0, 6), (2, 8)]:
        for y in range(a, k + 1):
            first = exact_brw_first_moment(two_point, a, k, y)
            second = exact_brw_second_moment(two_point, a, k, y)
            assert second >= first * (1 - 1e-12)
            assert second >= first ** 2 * (1 - 1e-12)


def test_strip_survival_nondecreasing_in_start(two_point):
    for k in (3, 8, 15):
        values = [exact_strip_survival(two_point, k, x) for x in range(k + 1)]
        assert all(b >= a * (1 - 1e-12) for a, b in zip(values, values[1:]))
        assert values[-1] == 1.0
