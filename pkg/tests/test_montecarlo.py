import numpy as np
import pytest

from src.distributions import Instance, make_piecewise_linear
from src.errors import BadAlpha, BadCount, UnknownMechanism
from src.mechanisms import seller_pricing
from src.montecarlo import Play, cross_validate, parse_mechanism, simulate


@pytest.mark.parametrize("text, expected", [
    ('fb', ('fb', None)),
    ('seller', ('seller', None)),
    ('mixture(0.3)', ('mixture', 0.3)),
    ('mixture(1)', ('mixture', 1.0)),
])
def test_parse_mechanism(text, expected):
    assert parse_mechanism(text) == expected


def test_parse_mechanism_errors():
    with pytest.raises(UnknownMechanism):
        parse_mechanism('auction')
    with pytest.raises(BadAlpha):
        parse_mechanism('mixture(1.5)')


def test_minimum_sample_size(uniform_instance):
    with pytest.raises(BadCount):
        simulate(uniform_instance, 'seller', 999, seed=1)


def test_simulation_is_deterministic(uniform_instance):
    a = simulate(uniform_instance, 'buyer', 100_000, seed=9)
    b = simulate(uniform_instance, 'buyer', 100_000, seed=9)
    assert a == b
    assert cross_validate(uniform_instance, 20_000, seed=4) == cross_validate(uniform_instance, 20_000, seed=4)


def test_uniform_reconciliation(uniform_instance):
    reports = {r.mechanism: r for r in cross_validate(uniform_instance, 1_000_000, seed=2024)}
    assert reports['fb'].analytic == pytest.approx(1 / 6, abs=1e-9)
    for name in ('fixed', 'seller', 'buyer'):
        assert reports[name].analytic == pytest.approx(1 / 8, abs=1e-9)
    for report in reports.values():
        assert report.n == 1_000_000
        assert report.stderr > 0
        assert abs(report.z) <= 4
        assert not report.flagged
        assert report.bb_violations == 0
        assert report.ir_violations == 0


def test_degenerate_mixture_equals_seller(skewed_instance):
    seller = simulate(skewed_instance, 'seller', 50_000, seed=17)
    degenerate = simulate(skewed_instance, 'mixture(1)', 50_000, seed=17)
    assert degenerate.mean == seller.mean
    assert degenerate.stderr == seller.stderr
    assert degenerate.analytic == seller.analytic


def test_separated_supports_trade_almost_always():
    buyer = make_piecewise_linear([[0, 0], [0.9, 0.01], [1, 1]])
    seller = make_piecewise_linear([[0, 0], [0.1, 0.99], [1, 1]])
    report = simulate(Instance(buyer, seller), 'fixed', 50_000, seed=3)
    assert report.trade_frequency > 0.95
    assert report.ir_violations == 0


def _posting(price_of_cost):
    def optimiser(F, costs):
        c = np.asarray(costs, dtype=float)
        return price_of_cost(c), np.zeros(len(c)), np.zeros(len(c), dtype=int)
    return optimiser


def test_seller_posting_below_cost_is_caught(uniform_instance, monkeypatch):
    monkeypatch.setattr('src.montecarlo.seller_optimal_prices', _posting(lambda c: c - 0.1))
    report = simulate(uniform_instance, 'seller', 20_000, seed=5)
    # the buyer still accepts whenever v ≥ c − 0.1, so the seller trades at a loss
    assert report.trade_frequency > 0.5
    assert report.ir_violations > 0
    assert report.bb_violations == 0
    assert report.flagged


def test_constant_sample_away_from_analytic_is_flagged(uniform_instance, monkeypatch):
    monkeypatch.setattr('src.montecarlo.seller_optimal_prices', _posting(lambda c: np.full(len(c), 2.0)))
    report = simulate(uniform_instance, 'seller', 5_000, seed=5)
    assert report.trade_frequency == 0.0
    assert report.stderr == 0.0
    assert np.isfinite(report.z) and report.z < -4
    assert report.flagged


def test_play_audit():
    play = Play(
        trade=np.array([True, False, True]),
        paid=np.array([0.5, 0.1, 0.4]),
        received=np.array([0.6, 0.0, 0.4]),
    )
    values = np.array([0.7, 0.9, 0.3])
    costs = np.array([0.2, 0.0, 0.1])
    # a deficit on the first pair, a payment without trade on the second,
    # a buyer paying above its value on the third
    assert play.audit(values, costs) == (2, 1)
    assert Play(np.array([True])).audit(values[:1], costs[:1]) == (0, 0)


def test_seeded_runs_stay_within_four_standard_errors(skewed_instance):
    analytic = seller_pricing(skewed_instance).gft
    within = 0
    for seed in range(50):
        report = simulate(skewed_instance, 'seller', 100_000, seed=seed)
        assert report.analytic == pytest.approx(analytic, abs=1e-12)
        within += abs(report.z) <= 4
    assert within >= 49
