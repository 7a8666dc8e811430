"""Per-cost decomposition FB(c), SP(c), BP(c) and the approximation constants.

For cost c and quantile parameter λ (μ = μ_λ):
    FB(c) = 1/(1−λ) ∫_{μ(c)}¹ (v − c) dF(v)
    SP(c) = (μ(c) − c)·(1 − F(μ(c)))
    BP(c) = ∫_{μ²(c)}¹ (v − μ^(−2)(v)) dF(v)
and pointwise FB(c) ≤ 1/(1−λ)·SP(c) + 1/(λ(1−λ)²)·BP(c).
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.optimize import minimize_scalar

from src.config import C_GRID, DEFAULT_LAMBDA, EXACT_TOL, LADDER_EPS, OPT_TOL, SUBDIVISIONS
from src.distributions import (
    ArrayLike,
    Distribution,
    Instance,
    _scalar_or_array,
    random_piecewise_linear,
)
from src.errors import BadCount, DegenerateCost, PropertyViolation
from src.ladder import build_ladder, check_lambda, mu, mu_k
from src.mechanisms import GAUSS_NODES, GAUSS_WEIGHTS, buyer_pricing, first_best, seller_pricing

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class BoundRow:
    c: float
    fb_c: float
    sp_c: float
    bp_c: float
    bound_rhs: float
    slack: float


@dataclass(frozen=True)
class BoundReport:
    lam: float
    rows: Tuple[BoundRow, ...]
    aggregate: Tuple[float, float, float]
    min_slack: float
    mechanisms: Dict[str, float] = field(default_factory=dict)
    checks: Dict[str, bool] = field(default_factory=dict)

    @property
    def holds(self) -> bool:
        return self.min_slack >= -OPT_TOL and all(self.checks.values())

    def summary(self) -> dict:
        fb_int, sp_int, bp_int = self.aggregate
        return {
            'lambda': self.lam,
            'rows': len(self.rows),
            'min_slack': self.min_slack,
            'aggregate': {'fb_c': fb_int, 'sp_c': sp_int, 'bp_c': bp_int},
            'mechanisms': dict(self.mechanisms),
            'checks': dict(self.checks),
            'holds': self.holds,
        }


def bound_coefficients(lam: float) -> Tuple[float, float]:
    """(1/(1−λ), 1/(λ(1−λ)²)); (2, 8) at λ = 1/2."""
    lam = check_lambda(lam)
    return 1.0 / (1.0 - lam), 1.0 / (lam * (1.0 - lam) ** 2)


def ratio_bound(lam: float) -> float:
    a, b = bound_coefficients(lam)
    return a + b


def optimal_lambda() -> Tuple[float, float]:
    res = minimize_scalar(
        ratio_bound,
        bounds=(1e-6, 1.0 - 1e-6),
        method='bounded',
        options={'xatol': 1e-9}
    )
    lam_star = float(res.x)
    bound = ratio_bound(lam_star)
    logger.info(f"Optimal lambda {lam_star:.6f} gives approximation factor {bound:.6f}")
    return lam_star, bound


def _cost_array(c: ArrayLike) -> np.ndarray:
    arr = np.asarray(c, dtype=float)
    if np.any(np.isnan(arr)) or np.any(arr < -EXACT_TOL) or np.any(arr > 1.0 + EXACT_TOL):
        raise DegenerateCost(f"Cost outside [0, 1]: {c}")
    return np.clip(arr, 0.0, 1.0)


def tail_surplus(F: Distribution, c: ArrayLike):
    """∫_c¹ (v − c) dF(v)."""
    arr = _cost_array(c)
    return _scalar_or_array(F.tail_expectation(arr) - arr * (1.0 - np.asarray(F.cdf(arr))), c)


def fb_c(F: Distribution, c: ArrayLike, lam: float = DEFAULT_LAMBDA):
    lam = check_lambda(lam)
    arr = _cost_array(c)
    m = np.asarray(mu(F, lam, arr))
    above = (1.0 - lam) * (1.0 - np.asarray(F.cdf(arr)))
    value = (F.tail_expectation(m) - arr * above) / (1.0 - lam)
    return _scalar_or_array(np.where(arr >= 1.0, 0.0, value), c)


def sp_c(F: Distribution, c: ArrayLike, lam: float = DEFAULT_LAMBDA):
    lam = check_lambda(lam)
    arr = _cost_array(c)
    m = np.asarray(mu(F, lam, arr))
    value = (m - arr) * (1.0 - lam) * (1.0 - np.asarray(F.cdf(arr)))
    return _scalar_or_array(np.maximum(value, 0.0), c)


def bp_c(F: Distribution, c: ArrayLike, lam: float = DEFAULT_LAMBDA):
    """∫_{μ²(c)}¹ v dF − (1−λ)²·∫_c¹ v dF.

    Substituting u = 1 − (1 − F(v))/(1−λ)² turns the μ^(−2)(v) term into
    (1−λ)² times the tail expectation above c.
    """
    lam = check_lambda(lam)
    arr = _cost_array(c)
    m2 = np.asarray(mu_k(F, lam, arr, 2))
    value = F.tail_expectation(m2) - (1.0 - lam) ** 2 * F.tail_expectation(arr)
    return _scalar_or_array(np.where(arr >= 1.0, 0.0, np.maximum(value, 0.0)), c)


def _aggregate_breakpoints(F: Distribution, G: Distribution, lam: float) -> np.ndarray:
    """Costs where any of fb_c, sp_c, bp_c or dG changes polynomial piece."""
    pre1 = np.asarray(mu_k(F, lam, F.xs, -1))
    pre2 = np.asarray(mu_k(F, lam, F.xs, -2))
    points = np.concatenate([G.xs, F.xs, pre1, pre2])
    return np.unique(np.clip(points, 0.0, 1.0))


def aggregate_bounds(inst: Instance, lam: float = DEFAULT_LAMBDA) -> Tuple[float, float, float]:
    """(∫FB(c)dG, ∫SP(c)dG, ∫BP(c)dG), exact up to rounding."""
    lam = check_lambda(lam)
    F, G = inst.buyer, inst.seller
    edges = _aggregate_breakpoints(F, G, lam)
    mid = 0.5 * (edges[:-1] + edges[1:])
    half = 0.5 * (edges[1:] - edges[:-1])
    c = (mid[:, None] + half[:, None] * GAUSS_NODES).ravel()
    w = (half[:, None] * GAUSS_WEIGHTS).ravel() * np.repeat(G.density(mid), len(GAUSS_NODES))
    return (
        float(np.dot(w, fb_c(F, c, lam))),
        float(np.dot(w, sp_c(F, c, lam))),
        float(np.dot(w, bp_c(F, c, lam))),
    )


def verify_pointwise(inst: Instance, lam: float = DEFAULT_LAMBDA, c_grid: int = C_GRID,
                     subdivisions: int = SUBDIVISIONS) -> BoundReport:
    """Check the per-cost inequality on a grid uniform in G-quantiles.

    Rows sit at the G-quantile midpoints (k + ½)/c_grid.
    """
    lam = check_lambda(lam)
    if c_grid < 2:
        raise BadCount(f"c_grid must be at least 2, got {c_grid}")
    F, G = inst.buyer, inst.seller
    coef_sp, coef_bp = bound_coefficients(lam)

    costs = np.asarray(G.quantile((np.arange(c_grid) + 0.5) / c_grid))
    fb = np.asarray(fb_c(F, costs, lam))
    sp = np.asarray(sp_c(F, costs, lam))
    bp = np.asarray(bp_c(F, costs, lam))
    rhs = coef_sp * sp + coef_bp * bp
    slack = rhs - fb
    rows = tuple(
        BoundRow(float(c), float(a), float(b), float(d), float(r), float(s))
        for c, a, b, d, r, s in zip(costs, fb, sp, bp, rhs, slack)
    )

    aggregate = aggregate_bounds(inst, lam)
    fb_total = first_best(inst)
    sp_gft = seller_pricing(inst, subdivisions, check=False).gft
    bp_gft = buyer_pricing(inst, subdivisions, check=False).gft
    checks = {
        'fb_below_aggregate': fb_total <= aggregate[0] + OPT_TOL,
        'sp_above_aggregate': aggregate[1] <= sp_gft + OPT_TOL,
        'bp_above_aggregate': aggregate[2] <= bp_gft + OPT_TOL,
    }
    min_slack = float(slack.min())
    if min_slack < -OPT_TOL:
        logger.error(f"Pointwise bound violated at lambda={lam}: min slack {min_slack:.3e}")
    failed = [name for name, ok in checks.items() if not ok]
    if failed:
        logger.error(f"Aggregate relations failed at lambda={lam}: {failed}")

    return BoundReport(
        lam=lam,
        rows=rows,
        aggregate=aggregate,
        min_slack=min_slack,
        mechanisms={'fb': fb_total, 'sp_gft': sp_gft, 'bp_gft': bp_gft},
        checks=checks,
    )


def swap_roles(inst: Instance) -> Instance:
    return inst.swapped()


@dataclass(frozen=True)
class TelescopingCertificate:
    """Both halves of the ladder argument evaluated on a truncated ladder.

    series is Σ_{t≥1} (F(μ^(t+1)) − F(μ^(t)))·(μ^(t+1) − μ^(t)); the omitted
    tail of the series is at most `truncation`.
    """
    lam: float
    c: float
    series: float
    truncation: float
    fb_excess: float
    bp: float

    @property
    def upper(self) -> float:
        return (self.series + self.truncation) / (self.lam * (1.0 - self.lam))

    @property
    def lower(self) -> float:
        return (1.0 - self.lam) * self.series

    @property
    def holds(self) -> bool:
        return self.fb_excess <= self.upper + OPT_TOL and self.lower <= self.bp + OPT_TOL


def telescoping_certificate(F: Distribution, lam: float, c: float,
                            eps: float = LADDER_EPS) -> TelescopingCertificate:
    lam = check_lambda(lam)
    coef_sp, _ = bound_coefficients(lam)
    fb_excess = fb_c(F, c, lam) - coef_sp * sp_c(F, c, lam)
    tail0 = 1.0 - F.cdf(c)
    if tail0 <= eps:
        return TelescopingCertificate(lam, c, 0.0, tail0, fb_excess, bp_c(F, c, lam))

    ladder = build_ladder(F, lam, c, eps)
    pts = np.asarray(ladder.points)
    masses = np.array([ladder.interval_mass(t) for t in range(1, ladder.depth)])
    series = float(np.dot(masses, np.diff(pts[1:])))
    return TelescopingCertificate(lam, c, series, ladder.residual_tail, fb_excess, bp_c(F, c, lam))


@dataclass(frozen=True)
class WorstCase:
    instance: Instance
    ratio: float
    trial: int


def observed_ratio(inst: Instance, subdivisions: int = SUBDIVISIONS) -> float:
    """FB / max(SP_gft, BP_gft) using the mechanisms' own GFT."""
    best = max(seller_pricing(inst, subdivisions, check=False).gft,
               buyer_pricing(inst, subdivisions, check=False).gft)
    return first_best(inst) / best if best > 0 else 0.0


def _knot_params(d: Distribution) -> np.ndarray:
    return np.array(d.knots[1:-1], dtype=float).reshape(-1, 2)


def _from_params(params: np.ndarray, min_gap: float) -> Optional[Distribution]:
    xs = np.concatenate([[0.0], params[:, 0], [1.0]])
    qs = np.concatenate([[0.0], params[:, 1], [1.0]])
    if np.any(np.diff(xs) < min_gap) or np.any(np.diff(qs) < min_gap):
        return None
    return Distribution(tuple(zip(xs.tolist(), qs.tolist())))


def _coordinate_ascent(start: Instance, max_evals: int, subdivisions: int,
                       step: float, min_step: float, min_gap: float) -> Tuple[Instance, float]:
    params = [_knot_params(start.buyer), _knot_params(start.seller)]
    best = observed_ratio(start, subdivisions)
    best_inst = start
    evals = 1

    coords = [(side, k, axis) for side in range(2) for k in range(len(params[0])) for axis in range(2)]
    while step >= min_step and evals < max_evals and coords:
        improved = False
        for side, k, axis in coords:
            for direction in (1.0, -1.0):
                if evals >= max_evals:
                    break
                trial = [p.copy() for p in params]
                trial[side][k, axis] += direction * step
                dist = _from_params(trial[side], min_gap)
                if dist is None:
                    continue
                candidate = Instance(
                    buyer=dist if side == 0 else best_inst.buyer,
                    seller=dist if side == 1 else best_inst.seller,
                )
                ratio = observed_ratio(candidate, subdivisions)
                evals += 1
                if ratio > best + EXACT_TOL:
                    best, best_inst, params = ratio, candidate, trial
                    improved = True
                    break
        if not improved:
            step /= 2.0
    return best_inst, best


def search_worst_case(trials: int, seed: int, knot_budget: int, max_evals: int = 40,
                      subdivisions: int = 32, step: float = 0.1, min_step: float = 1e-3,
                      min_gap: float = 1e-3) -> WorstCase:
    """Random-restart coordinate ascent on knot positions maximising FB / max(SP, BP).

    Trial 0 starts from the uniform pair; later trials start from random
    knots drawn from the trial's own child of SeedSequence(seed), so the
    result does not depend on the order trials are run in.
    """
    if trials < 1:
        raise BadCount(f"trials must be at least 1, got {trials}")
    if knot_budget < 2:
        raise BadCount(f"knot_budget must be at least 2, got {knot_budget}")

    children = np.random.SeedSequence(seed).spawn(trials)
    uniform_knots = np.linspace(0.0, 1.0, knot_budget)
    uniform = Distribution(tuple(zip(uniform_knots.tolist(), uniform_knots.tolist())))

    best: Optional[WorstCase] = None
    for t, child in enumerate(children):
        if t == 0:
            start = Instance(uniform, uniform)
        else:
            rng = np.random.default_rng(child)
            start = Instance(
                random_piecewise_linear(rng, knot_budget, min_gap),
                random_piecewise_linear(rng, knot_budget, min_gap),
            )
        inst, ratio = _coordinate_ascent(start, max_evals, subdivisions, step, min_step, min_gap)
        logger.debug(f"Search trial {t}: ratio {ratio:.6f}")
        if best is None or ratio > best.ratio + EXACT_TOL:
            best = WorstCase(inst, ratio, t)

    final_ratio = observed_ratio(best.instance)
    cap = ratio_bound(optimal_lambda()[0])
    logger.info(f"Worst case over {trials} trials: ratio {final_ratio:.6f} (trial {best.trial}), cap {cap:.6f}")
    if final_ratio > cap + 1e-6:
        raise PropertyViolation(f"Observed ratio {final_ratio} exceeds proven bound {cap}")
    return WorstCase(best.instance, final_ratio, best.trial)


def certify_theorem(inst: Instance, lam: float = DEFAULT_LAMBDA,
                    subdivisions: int = SUBDIVISIONS) -> Dict[str, bool]:
    """Aggregate inequalities for the instance and, through swap_roles, its mirror."""
    coef_sp, coef_bp = bound_coefficients(lam)
    fb = first_best(inst)
    sp = seller_pricing(inst, subdivisions, check=False).gft
    bp = buyer_pricing(inst, subdivisions, check=False).gft
    return {
        'seller_heavy': fb <= coef_sp * sp + coef_bp * bp + OPT_TOL,
        'buyer_heavy': fb <= coef_bp * sp + coef_sp * bp + OPT_TOL,
        'max_form': fb <= ratio_bound(lam) * max(sp, bp) + OPT_TOL,
    }


def verify_both_orientations(inst: Instance, lam: float = DEFAULT_LAMBDA,
                             c_grid: int = C_GRID) -> List[BoundReport]:
    """verify_pointwise on the instance and on its role-swapped mirror."""
    return [verify_pointwise(inst, lam, c_grid), verify_pointwise(swap_roles(inst), lam, c_grid)]
