import numpy as np
import pytest

from src.errors import BadLambda, DegenerateStart, OutOfRange
from src.ladder import build_ladder, expected_depth, interval_masses, mu, mu_k
from tests.conftest import random_instances


def test_mu_on_uniform(uniform):
    assert mu(uniform, 0.5, 0.2) == pytest.approx(0.6)
    assert mu_k(uniform, 0.5, 0.2, 2) == pytest.approx(0.8)
    assert mu_k(uniform, 0.5, 0.2, 0) == pytest.approx(0.2)


def test_inverse_returns_zero_without_preimage(uniform):
    assert mu_k(uniform, 0.5, 0.8, -2) == pytest.approx(0.2)
    # μ²(0) = 0.75 on the uniform
    assert mu_k(uniform, 0.5, 0.7, -2) == 0.0
    np.testing.assert_array_equal(mu_k(uniform, 0.5, np.array([0.1, 0.5]), -1), [0.0, 0.0])


def test_bad_lambda(uniform):
    for lam in (0.0, 1.0, 1.5, -0.1):
        with pytest.raises(BadLambda):
            mu(uniform, lam, 0.2)


def test_ladder_on_uniform(uniform):
    ladder = build_ladder(uniform, 0.5, 0.0, eps=1e-3)
    assert ladder.depth == 10
    assert ladder.depth == expected_depth(uniform, 0.5, 0.0, 1e-3)
    assert ladder.points[:3] == pytest.approx((0.0, 0.5, 0.75))
    assert ladder.residual_tail < 1e-3


def test_ladder_errors(uniform):
    with pytest.raises(DegenerateStart):
        build_ladder(uniform, 0.5, 1.0)
    with pytest.raises(OutOfRange):
        build_ladder(uniform, 0.5, 0.2, eps=0.0)
    with pytest.raises(BadLambda):
        build_ladder(uniform, 1.0, 0.2)


def test_interval_masses_sum_to_tail(uniform):
    ladder = build_ladder(uniform, 0.311, 0.3)
    rows = interval_masses(ladder)
    assert [r[0] for r in rows] == list(range(ladder.depth + 1))
    assert sum(r[2] for r in rows) == pytest.approx(0.7, abs=1e-12)


@pytest.mark.parametrize("lam", [0.311, 0.5])
@pytest.mark.parametrize("c", [0.0, 0.3, 0.7])
def test_ladder_law_on_random_instances(lam, c):
    for inst in random_instances(20):
        F = inst.buyer
        ladder = build_ladder(F, lam, c)
        tail0 = 1.0 - F.cdf(c)
        for k, point in enumerate(ladder.points):
            assert 1.0 - F.cdf(point) == pytest.approx((1.0 - lam) ** k * tail0, abs=1e-12)


@pytest.mark.parametrize("lam", [0.311, 0.5])
def test_two_step_inverse_round_trip(lam):
    xs = np.linspace(0.0, 0.95, 39)
    for inst in random_instances(20):
        F = inst.buyer
        back = mu_k(F, lam, mu_k(F, lam, xs, 2), -2)
        np.testing.assert_allclose(back, xs, atol=1e-12)
        below = np.linspace(0.0, mu_k(F, lam, 0.0, 2), 5)[1:-1]
        np.testing.assert_array_equal(mu_k(F, lam, below, -2), 0.0)


@pytest.mark.parametrize("a, b", [(1, 1), (1, 2), (2, 3)])
def test_composition_is_consistent(a, b):
    x = np.linspace(0.0, 0.95, 20)
    for inst in random_instances(10, seed=8):
        F = inst.buyer
        np.testing.assert_allclose(
            mu_k(F, 0.4, x, a + b), mu_k(F, 0.4, mu_k(F, 0.4, x, a), b), atol=1e-9
        )


def test_mu_is_monotone_in_point_and_lambda():
    x = np.linspace(0.0, 1.0, 201)
    lams = np.linspace(0.05, 0.95, 19)
    for inst in random_instances(10, seed=9):
        F = inst.buyer
        assert np.all(np.diff(mu(F, 0.3, x)) >= -1e-12)
        for point in (0.0, 0.25, 0.6):
            assert np.all(np.diff([mu(F, lam, point) for lam in lams]) >= -1e-12)
