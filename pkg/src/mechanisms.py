import logging
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Any, Dict, Tuple

import numpy as np
from scipy.optimize import minimize_scalar

from src.config import OPT_TOL, SUBDIVISIONS, TIE_TOL
from src.distributions import ArrayLike, Distribution, Instance, _scalar_or_array
from src.errors import BadAlpha, OutOfSupport

logger = logging.getLogger(__name__)

GAUSS_NODES, GAUSS_WEIGHTS = np.polynomial.legendre.leggauss(3)
BISECT_STEPS = 60
FIXED_PRICE_PIECES = 8
FIXED_PRICE_XATOL = 1e-10
PRICE_GRID_POINTS = 101


@dataclass(frozen=True)
class MechanismOutcome:
    """Expected gains-from-trade plus mechanism-specific artifacts in `detail`."""
    name: str
    gft: float
    detail: Dict[str, Any] = field(default_factory=dict, compare=False)


def _as_points(values: ArrayLike, label: str) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(values, dtype=float))
    if np.any(arr < -1e-12) or np.any(arr > 1.0 + 1e-12):
        raise OutOfSupport(f"{label} outside [0, 1]: {values}")
    return np.clip(arr, 0.0, 1.0)


def _smallest_argmax(prices: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Column index of the best value per row, ties resolved to the lowest price."""
    best = values.max(axis=1)
    tied = values >= best[:, None] - TIE_TOL
    return np.argmin(np.where(tied, prices, np.inf), axis=1)


def seller_optimal_prices(F: Distribution, costs: ArrayLike,
                          largest: bool = False) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """argmax_p (p − c)(1 − F(p)) for each cost, smallest maximiser on ties unless `largest`.

    On each CDF segment the profit is a concave quadratic, so the per-segment
    optimum is its clipped stationary point. Returns (prices, profits,
    regime keys); the key identifies the winning segment and which bound,
    if any, is active.
    """
    c = _as_points(costs, "Cost")[:, None]
    xl, xr, s = F.xs[:-1], F.xs[1:], F.slopes
    a = 1.0 - F.qs[:-1] + s * xl  # 1 − F(p) = a − s·p on the segment

    lower = np.maximum(xl, c)
    valid = lower <= xr
    stationary = (a + s * c) / (2.0 * s)
    p = np.clip(stationary, lower, xr)
    state = np.where(stationary > xr, 3,
                     np.where(stationary >= lower, 2, np.where(c > xl, 1, 0)))
    profit = np.where(valid, (p - c) * (a - s * p), -np.inf)

    idx = _smallest_argmax(np.where(valid, -p if largest else p, np.inf), profit)
    rows = np.arange(len(idx))
    return p[rows, idx], profit[rows, idx], idx * 4 + state[rows, idx]


def buyer_optimal_prices(G: Distribution, values: ArrayLike) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """argmax_p (v − p)·G(p) for each value, smallest maximiser on ties."""
    v = _as_points(values, "Value")[:, None]
    xl, xr, s = G.xs[:-1], G.xs[1:], G.slopes
    b = G.qs[:-1] - s * xl  # G(p) = b + s·p on the segment

    upper = np.minimum(xr, v)
    valid = xl <= upper
    stationary = (s * v - b) / (2.0 * s)
    p = np.clip(stationary, xl, upper)
    state = np.where(stationary < xl, 0,
                     np.where(stationary <= upper, 1, np.where(v < xr, 3, 2)))
    utility = np.where(valid, (v - p) * (b + s * p), -np.inf)

    idx = _smallest_argmax(np.where(valid, p, np.inf), utility)
    rows = np.arange(len(idx))
    return p[rows, idx], utility[rows, idx], idx * 4 + state[rows, idx]


def seller_optimal_price(F: Distribution, c: float) -> float:
    prices, _, _ = seller_optimal_prices(F, c)
    return float(prices[0])


def buyer_optimal_price(G: Distribution, v: float) -> float:
    prices, _, _ = buyer_optimal_prices(G, v)
    return float(prices[0])


def seller_profit(F: Distribution, c: ArrayLike, p: ArrayLike):
    return _scalar_or_array((np.asarray(p) - np.asarray(c)) * (1.0 - np.asarray(F.cdf(p))), p)


def buyer_utility(G: Distribution, v: ArrayLike, p: ArrayLike):
    return _scalar_or_array((np.asarray(v) - np.asarray(p)) * np.asarray(G.cdf(p)), p)


def first_best(inst: Instance) -> float:
    """∫∫_{v ≥ c} (v − c) dF dG, written as ∫ G(t)(1 − F(t)) dt.

    The integrand is quadratic between merged knots, so Simpson's rule on
    each merged interval is exact.
    """
    F, G = inst.buyer, inst.seller
    t = np.union1d(F.xs, G.xs)
    a, b = t[:-1], t[1:]
    m = 0.5 * (a + b)

    def h(x):
        return G.cdf(x) * (1.0 - F.cdf(x))

    return float(np.sum((b - a) / 6.0 * (h(a) + 4.0 * h(m) + h(b))))


def fixed_price_gft(inst: Instance, p: ArrayLike):
    """G(p)·∫_p¹ v dF − (1 − F(p))·∫_0^p c dG."""
    F, G = inst.buyer, inst.seller
    p_arr = np.asarray(p, dtype=float)
    below = G.mean - G.tail_expectation(p_arr)
    value = G.cdf(p_arr) * F.tail_expectation(p_arr) - (1.0 - F.cdf(p_arr)) * below
    return _scalar_or_array(value, p)


def fixed_price(inst: Instance) -> MechanismOutcome:
    """Best single posted price; bounded Brent search on each piece of the merged knot grid."""
    F, G = inst.buyer, inst.seller
    knots = np.union1d(F.xs, G.xs)
    pieces = np.unique(np.concatenate([
        np.linspace(lo, hi, FIXED_PRICE_PIECES + 1) for lo, hi in zip(knots[:-1], knots[1:])
    ]))

    candidates = [pieces]
    for lo, hi in zip(pieces[:-1], pieces[1:]):
        res = minimize_scalar(
            lambda x: -fixed_price_gft(inst, x),
            bounds=(lo, hi),
            method='bounded',
            options={'xatol': FIXED_PRICE_XATOL}
        )
        candidates.append(np.array([res.x]))
    prices = np.concatenate(candidates)
    values = np.asarray(fixed_price_gft(inst, prices))

    idx = int(_smallest_argmax(prices[None, :], values[None, :])[0])
    p_star = float(prices[idx])
    trade_probability = float(G.cdf(p_star) * (1.0 - F.cdf(p_star)))
    logger.debug(f"Fixed price optimum p*={p_star:.10f} gft={values[idx]:.12f}")
    return MechanismOutcome(
        name='fixed',
        gft=float(values[idx]),
        detail={'price': p_star, 'trade_probability': trade_probability}
    )


def _integration_edges(F: Distribution, lo: float, hi: float, subdivisions: int,
                       largest: bool = False) -> np.ndarray:
    """Uniform grid on [lo, hi] refined with every pricing-regime switch."""
    edges = np.linspace(lo, hi, subdivisions + 1)
    keys = seller_optimal_prices(F, edges, largest)[2]
    change = np.flatnonzero(keys[:-1] != keys[1:])
    if change.size == 0:
        return edges

    left, right = edges[change].copy(), edges[change + 1].copy()
    left_keys = keys[change]
    for _ in range(BISECT_STEPS):
        mid = 0.5 * (left + right)
        same = seller_optimal_prices(F, mid, largest)[2] == left_keys
        left = np.where(same, mid, left)
        right = np.where(same, right, mid)
    return np.unique(np.concatenate([edges, right]))


@lru_cache(maxsize=256)
def _posted_pricing_integral(F: Distribution, G: Distribution, subdivisions: int,
                             largest: bool = False) -> Tuple[float, float]:
    """(GFT, seller profit) of seller pricing with buyer F and seller G.

    Between regime switches the optimal price is affine in c and stays in
    one segment of F, so both integrands are polynomials of degree ≤ 2 and
    three-point Gauss–Legendre is exact on every sub-interval.
    """
    gft = 0.0
    profit = 0.0
    for j in range(G.n_segments):
        edges = _integration_edges(F, G.xs[j], G.xs[j + 1], subdivisions, largest)
        mid = 0.5 * (edges[:-1] + edges[1:])
        half = 0.5 * (edges[1:] - edges[:-1])
        c = (mid[:, None] + half[:, None] * GAUSS_NODES).ravel()
        w = (half[:, None] * GAUSS_WEIGHTS).ravel() * G.slopes[j]

        r, seller_gain, _ = seller_optimal_prices(F, c, largest)
        surplus = F.tail_expectation(r) - c * (1.0 - F.cdf(r))
        gft += float(np.dot(w, surplus))
        profit += float(np.dot(w, seller_gain))
    return gft, profit


def _richardson_check(F: Distribution, G: Distribution, subdivisions: int, gft: float, label: str,
                      largest: bool = False) -> None:
    fine, _ = _posted_pricing_integral(F, G, 2 * subdivisions, largest)
    if abs(fine - gft) > OPT_TOL:
        logger.warning(
            f"{label} integration disagrees with doubled grid: {gft:.12f} vs {fine:.12f}"
        )


def seller_pricing(inst: Instance, subdivisions: int = SUBDIVISIONS, check: bool = True) -> MechanismOutcome:
    F, G = inst.buyer, inst.seller
    gft, profit = _posted_pricing_integral(F, G, subdivisions)
    if check:
        _richardson_check(F, G, subdivisions, gft, "Seller pricing")

    grid = np.linspace(0.0, 1.0, PRICE_GRID_POINTS)
    prices = seller_optimal_prices(F, grid)[0]
    return MechanismOutcome(
        name='seller',
        gft=gft,
        detail={'profit': profit, 'price_grid': tuple(zip(grid.tolist(), prices.tolist()))}
    )


def buyer_pricing(inst: Instance, subdivisions: int = SUBDIVISIONS, check: bool = True) -> MechanismOutcome:
    """Buyer pricing, evaluated as seller pricing on the reflected, role-swapped instance.

    Reflection reverses prices, so the mirror takes the largest maximiser to
    match the smallest bid of `buyer_optimal_prices`.
    """
    mirror = inst.swapped()
    gft, utility = _posted_pricing_integral(mirror.buyer, mirror.seller, subdivisions, True)
    if check:
        _richardson_check(mirror.buyer, mirror.seller, subdivisions, gft, "Buyer pricing", True)

    grid = np.linspace(0.0, 1.0, PRICE_GRID_POINTS)
    prices = buyer_optimal_prices(inst.seller, grid)[0]
    return MechanismOutcome(
        name='buyer',
        gft=gft,
        detail={'utility': utility, 'price_grid': tuple(zip(grid.tolist(), prices.tolist()))}
    )


def mixture(inst: Instance, alpha: float, subdivisions: int = SUBDIVISIONS) -> MechanismOutcome:
    """Seller pricing with probability alpha, buyer pricing otherwise."""
    if not 0.0 <= alpha <= 1.0:
        raise BadAlpha(f"alpha must lie in [0, 1], got {alpha}")
    sp = seller_pricing(inst, subdivisions, check=False)
    bp = buyer_pricing(inst, subdivisions, check=False)
    return MechanismOutcome(
        name='mixture',
        gft=alpha * sp.gft + (1.0 - alpha) * bp.gft,
        detail={'alpha': alpha, 'seller_gft': sp.gft, 'buyer_gft': bp.gft}
    )


def evaluate(inst: Instance) -> Dict[str, Any]:
    """Benchmark report in the instance's original units."""
    scale = inst.frame.scale
    fb = first_best(inst)
    fixed = fixed_price(inst)
    sp = seller_pricing(inst)
    bp = buyer_pricing(inst)
    best = max(sp.gft, bp.gft)
    logger.info(f"Evaluated instance: FB={fb:.9f} FixedP={fixed.gft:.9f} SP={sp.gft:.9f} BP={bp.gft:.9f}")
    return {
        'fb': fb * scale,
        'fixedp': {'p': inst.frame.from_unit(fixed.detail['price']), 'gft': fixed.gft * scale},
        'sellerp': {'gft': sp.gft * scale, 'profit': sp.detail['profit'] * scale},
        'buyerp': {'gft': bp.gft * scale, 'utility': bp.detail['utility'] * scale},
        'ratios': {
            'fb_over_best': fb / best if best > 0 else float('inf'),
            'fb_over_fixedp': fb / fixed.gft if fixed.gft > 0 else float('inf'),
        },
    }
