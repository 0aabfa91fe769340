import math

import pytest

from kbrw.errors import DomainError, ParameterError
from kbrw.estimators.levels import choose_k_lower, choose_k_upper


def test_upper_level_for_ten_thousand(two_point):
    k = choose_k_upper(two_point, 1e4)
    assert 8 < k < 9
    assert math.exp(two_point.rho * k) / k == pytest.approx(1e4, rel=1e-10)


def test_level_gap_tends_to_inverse_rho(two_point):
    inverse = 1 / two_point.rho
    far = choose_k_upper(two_point, 1e12) - choose_k_upper(two_point, 1e12 / math.e)
    near = choose_k_upper(two_point, 1e6) - choose_k_upper(two_point, 1e6 / math.e)
    assert abs(far - inverse) <= 0.05 * inverse
    assert abs(near - inverse) <= 0.10 * inverse


def test_lower_level_solves_its_equation(two_point):
    mu = 0.7
    k = choose_k_lower(two_point, 1e5, mu)
    assert mu * math.exp(two_point.rho * k) / (2 * k) == pytest.approx(1e5, rel=1e-10)
    assert choose_k_lower(two_point, 1e5, 2.0) == pytest.approx(choose_k_upper(two_point, 1e5))


def test_level_domain(two_point):
    with pytest.raises(DomainError):
        choose_k_upper(two_point, 1.0)
    with pytest.raises(ParameterError):
        choose_k_lower(two_point, 1e5, 0.0)
