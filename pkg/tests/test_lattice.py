import numpy as np
import pytest

from kbrw.errors import ParameterError, ResourceError, SolverError
from kbrw.estimators.tail import band_ratio
from kbrw.model.laws import LatticeLaw, TwoPointLaw
from kbrw.walk.engine import Exit, Transform, run_walk_batch
from kbrw.walk.lattice import (
    GreenQuantity,
    LatticeStrip,
    exact_green_sums,
    exact_hitting_probability,
    exact_passage_constant,
    fundamental_matrix,
    gamblers_ruin,
)


def test_gamblers_ruin_exact(simple_walk):
    strip = LatticeStrip.from_law(simple_walk, 0, 9)
    assert exact_hitting_probability(strip, 3) == pytest.approx(4 / 11, abs=1e-12)
    assert exact_hitting_probability(strip, 0) == pytest.approx(1 / 11, abs=1e-12)


def test_gamblers_ruin_closed_form_over_grid(simple_walk):
    for k in (5, 12, 40):
        strip = LatticeStrip.from_law(simple_walk, 0, k)
        for z in range(k + 1):
            assert exact_hitting_probability(strip, z) == pytest.approx(gamblers_ruin(z, k), abs=1e-12)


def test_tilted_critical_two_point_equals_simple_walk(two_point, simple_walk):
    tilted = LatticeStrip.from_law(two_point.tilted(), 0, 9)
    simple = LatticeStrip.from_law(simple_walk, 0, 9)
    assert exact_hitting_probability(tilted, 3) == pytest.approx(exact_hitting_probability(simple, 3), abs=1e-12)


def test_fundamental_matrix_two_states(simple_walk):
    strip = LatticeStrip.from_law(simple_walk, 0, 1)
    n = fundamental_matrix(strip)
    assert n[0, 0] == pytest.approx(4 / 3)
    assert n[0, 1] == pytest.approx(2 / 3)


def test_hitting_probability_nondecreasing_in_start():
    law = LatticeLaw([-2, -1, 1, 3], [0.2, 0.3, 0.4, 0.1])
    strip = LatticeStrip.from_law(law, 0, 25)
    values = [exact_hitting_probability(strip, z) for z in range(26)]
    assert all(b >= a - 1e-14 for a, b in zip(values, values[1:]))


def test_passage_band_over_strip_widths(simple_walk):
    ratios = []
    for k in (10, 20, 50, 100, 200):
        strip = LatticeStrip.from_law(simple_walk, 0, k)
        ratios.extend((k + 1) * exact_hitting_probability(strip, z) / (z + 1) for z in range(0, k + 1, 5))
    assert band_ratio(ratios) <= 2.0


def test_passage_constant_converges(simple_walk):
    for k in (50, 100, 200):
        assert abs(exact_passage_constant(simple_walk, 3, k) - 4.0) <= 0.5


def test_green_bands(two_point):
    tilted = two_point.tilted()
    for quantity in GreenQuantity:
        scaled = []
        for k in (10, 20, 40):
            strip = LatticeStrip.from_law(tilted, 0, k)
            value = exact_green_sums(strip, quantity.start(strip), quantity)
            assert value > 0
            scaled.append(value * quantity.scaling(k))
        assert band_ratio(scaled) <= 2.0


def test_green_start_uses_distance_from_top(simple_walk):
    strip = LatticeStrip.from_law(simple_walk, 0, 20)
    assert GreenQuantity.PATH_0_TO_K.start(strip, 3) == 0
    assert GreenQuantity.PATH_K_TO_K.start(strip, 3) == 17
    assert GreenQuantity.PATH_K_TO_0.side.value == "bottom"


def test_degenerate_law_is_singular():
    # a one-point law at 0 never leaves the strip
    stuck = LatticeStrip(0, 3, np.array([0]), np.array([1.0]))
    with pytest.raises(SolverError):
        stuck.solve(np.ones(stuck.size))


def test_state_cap_and_bad_states(simple_walk):
    with pytest.raises(ResourceError):
        LatticeStrip.from_law(simple_walk, 0, 100, max_states=50)
    strip = LatticeStrip.from_law(simple_walk, 0, 5)
    with pytest.raises(ParameterError):
        strip.index(6)
    with pytest.raises(ParameterError):
        LatticeStrip.from_law(TwoPointLaw(0.5), 3, 1)


def test_simulated_green_sums_match_exact(two_point):
    tilted = two_point.tilted()
    lower, upper = 2, 10
    strip = LatticeStrip.from_law(tilted, lower, upper)
    rng = np.random.default_rng(31)
    for quantity in GreenQuantity:
        start = quantity.start(strip)
        exact = exact_green_sums(strip, start, quantity)
        batch = run_walk_batch(tilted, start, lower, upper, rng, 20000, transform=Transform(shift=-lower),
                               green=True)
        values = batch.green_top if quantity.side is Exit.TOP else batch.green_bottom
        # walks leaving through the other side contribute zero
        samples = np.nan_to_num(values, nan=0.0)
        stderr = samples.std(ddof=1) / np.sqrt(samples.size)
        assert abs(samples.mean() - exact) <= 4 * stderr, quantity
