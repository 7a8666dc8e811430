import numpy as np
import pytest

from src.distributions import Instance, make_piecewise_linear, rescale_to_unit
from src.errors import BadAlpha, OutOfSupport
from src.mechanisms import (
    buyer_optimal_price,
    buyer_optimal_prices,
    buyer_pricing,
    evaluate,
    first_best,
    fixed_price,
    fixed_price_gft,
    mixture,
    seller_optimal_price,
    seller_optimal_prices,
    seller_pricing,
)
from tests.conftest import random_instances


def test_uniform_exact_values(uniform_instance):
    assert first_best(uniform_instance) == pytest.approx(1 / 6, abs=1e-9)
    fixed = fixed_price(uniform_instance)
    assert fixed.gft == pytest.approx(1 / 8, abs=1e-9)
    assert fixed.detail['price'] == pytest.approx(0.5, abs=1e-6)
    assert seller_pricing(uniform_instance).gft == pytest.approx(1 / 8, abs=1e-9)
    assert buyer_pricing(uniform_instance).gft == pytest.approx(1 / 8, abs=1e-9)


def test_uniform_profit_and_utility(uniform_instance):
    # ∫ ((1 − c)/2)² dc
    assert seller_pricing(uniform_instance).detail['profit'] == pytest.approx(1 / 12, abs=1e-9)
    assert buyer_pricing(uniform_instance).detail['utility'] == pytest.approx(1 / 12, abs=1e-9)


def test_optimal_prices_on_uniform(uniform):
    assert seller_optimal_price(uniform, 0.2) == pytest.approx(0.6)
    assert buyer_optimal_price(uniform, 0.8) == pytest.approx(0.4)
    assert seller_optimal_price(uniform, 1.0) == pytest.approx(1.0)
    assert buyer_optimal_price(uniform, 0.0) == pytest.approx(0.0)
    with pytest.raises(OutOfSupport):
        seller_optimal_price(uniform, 1.2)


def test_optimal_prices_beat_a_price_grid(skewed_instance):
    F, G = skewed_instance.buyer, skewed_instance.seller
    grid = np.linspace(0, 1, 2001)
    costs = np.linspace(0, 1, 21)
    prices, profits, _ = seller_optimal_prices(F, costs)
    for c, p, best in zip(costs, prices, profits):
        brute = (grid - c) * (1 - np.asarray(F.cdf(grid)))
        assert best >= brute.max() - 1e-12
        assert p >= c
    values = np.linspace(0, 1, 21)
    prices, utilities, _ = buyer_optimal_prices(G, values)
    for v, p, best in zip(values, prices, utilities):
        brute = (v - grid) * np.asarray(G.cdf(grid))
        assert best >= brute.max() - 1e-12
        assert p <= v


def test_fixed_price_gft_closed_form(uniform_instance):
    # (p − p²)/2 on the uniform pair
    for p in (0.1, 0.3, 0.5, 0.9):
        assert fixed_price_gft(uniform_instance, p) == pytest.approx((p - p * p) / 2)


def _midpoint_seller_gft(inst, cells=20000):
    F, G = inst.buyer, inst.seller
    edges = np.linspace(0, 1, cells + 1)
    c = 0.5 * (edges[1:] + edges[:-1])
    r = seller_optimal_prices(F, c)[0]
    surplus = F.tail_expectation(r) - c * (1 - np.asarray(F.cdf(r)))
    return float(np.sum(surplus * G.density(c)) / cells)


def _midpoint_buyer_gft(inst, cells=20000):
    F, G = inst.buyer, inst.seller
    edges = np.linspace(0, 1, cells + 1)
    v = 0.5 * (edges[1:] + edges[:-1])
    p = buyer_optimal_prices(G, v)[0]
    surplus = v * np.asarray(G.cdf(p)) - (G.mean - G.tail_expectation(p))
    return float(np.sum(surplus * F.density(v)) / cells)


def test_posted_pricing_matches_direct_quadrature(skewed_instance):
    assert seller_pricing(skewed_instance).gft == pytest.approx(_midpoint_seller_gft(skewed_instance), abs=1e-6)
    assert buyer_pricing(skewed_instance).gft == pytest.approx(_midpoint_buyer_gft(skewed_instance), abs=1e-6)


def test_buyer_pricing_direct_quadrature_on_random_instances():
    for inst in random_instances(5, seed=11):
        assert buyer_pricing(inst).gft == pytest.approx(_midpoint_buyer_gft(inst), abs=1e-5)


def test_first_best_dominates_every_mechanism():
    for inst in random_instances(10):
        fb = first_best(inst)
        assert fixed_price(inst).gft <= fb + 1e-12
        assert seller_pricing(inst, check=False).gft <= fb + 1e-12
        assert buyer_pricing(inst, check=False).gft <= fb + 1e-12


def test_mixture_weights(uniform_instance, skewed_instance):
    sp = seller_pricing(skewed_instance).gft
    bp = buyer_pricing(skewed_instance).gft
    assert mixture(skewed_instance, 1.0).gft == sp
    assert mixture(skewed_instance, 0.0).gft == bp
    assert mixture(skewed_instance, 0.25).gft == pytest.approx(0.25 * sp + 0.75 * bp)
    with pytest.raises(BadAlpha):
        mixture(uniform_instance, 1.5)


def test_fixed_price_half_approximation_iid():
    for inst in random_instances(20, seed=5):
        iid = Instance(inst.buyer, inst.buyer)
        assert fixed_price(iid).gft >= first_best(iid) / 2 - 1e-9


def test_seller_pricing_e_approximation_on_uniform(uniform_instance):
    assert seller_pricing(uniform_instance).gft >= first_best(uniform_instance) / np.e


def test_evaluate_reports_in_original_units():
    F = make_piecewise_linear([[0, 0], [1, 1]])
    report = evaluate(Instance(F, F))
    assert report['fb'] == pytest.approx(1 / 6, abs=1e-9)
    assert report['ratios']['fb_over_best'] == pytest.approx(4 / 3, abs=1e-8)

    G, _ = rescale_to_unit([[10, 0], [20, 1]])
    scaled = evaluate(Instance(G, G))
    assert scaled['fb'] == pytest.approx(10 / 6, abs=1e-8)
    assert scaled['fixedp']['p'] == pytest.approx(15.0, abs=1e-5)


def test_fixed_price_beats_dense_grid():
    grid = np.linspace(0.0, 1.0, 10_001)
    for inst in random_instances(10, seed=31):
        outcome = fixed_price(inst)
        brute = np.asarray(fixed_price_gft(inst, grid))
        assert outcome.gft >= brute.max() - 1e-9
        assert outcome.gft == pytest.approx(float(fixed_price_gft(inst, outcome.detail['price'])), abs=1e-12)


def test_mirrored_tie_rule_matches_buyer_bid():
    # a seller with cost 0 is indifferent between asking 0.125 and 0.5
    F = make_piecewise_linear([[0, 0], [0.2, 0.8], [1, 1]])
    assert seller_optimal_prices(F, [0.0])[0][0] == pytest.approx(0.125)
    assert seller_optimal_prices(F, [0.0], largest=True)[0][0] == pytest.approx(0.5)

    G = F.reflect()
    assert buyer_optimal_price(G, 1.0) == pytest.approx(0.5)
    mirrored = 1.0 - seller_optimal_prices(G.reflect(), [0.0], largest=True)[0][0]
    assert mirrored == pytest.approx(buyer_optimal_price(G, 1.0))
