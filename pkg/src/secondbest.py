"""Discrete second-best: the GFT-maximising BIC, IR, ex-post WBB mechanism on a grid.

Variables are ordered type-pair by type-pair, i-major: for each (i, j) the
trade probability x_i_j, the buyer payment pb_i_j and the seller receipt
ps_i_j.

`solve_lp` optimises an equivalent program on interim payments with adjacent
incentive rows only, then rebuilds ex-post payments and checks them against
every row of the full model.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.optimize import linprog

from src import simplex
from src.config import LP_TOL, PAYMENT_BOX, TIE_TOL
from src.distributions import Instance, UNIFORM
from src.errors import (
    BadCount,
    NonMonotone,
    NumericalInstability,
    OutOfRange,
    OutOfSupport,
    PropertyViolation,
)

logger = logging.getLogger(__name__)

UNIFORM_SB_REFERENCE = 9.0 / 64.0
REFERENCE_BAND = 0.015
FAMILIES = ('buyer_bic', 'seller_bic', 'buyer_ir', 'seller_ir', 'wbb')


@dataclass(frozen=True, eq=False)
class DiscreteInstance:
    values: np.ndarray
    value_probs: np.ndarray
    costs: np.ndarray
    cost_probs: np.ndarray

    def __post_init__(self):
        for points_name, probs_name in (('values', 'value_probs'), ('costs', 'cost_probs')):
            points = np.array(getattr(self, points_name), dtype=float)
            probs = np.array(getattr(self, probs_name), dtype=float)
            if points.ndim != 1 or points.shape != probs.shape or points.size == 0:
                raise BadCount(f"{points_name} and their probabilities must be equal-length non-empty lists")
            if np.any(np.diff(points) <= 0):
                raise NonMonotone(f"{points_name} must be strictly increasing")
            if points[0] < 0.0 or points[-1] > 1.0:
                raise OutOfSupport(f"{points_name} must lie in [0, 1]")
            if np.any(probs <= 0) or abs(probs.sum() - 1.0) > 1e-12:
                raise OutOfRange(f"{points_name} probabilities must be positive and sum to 1")
            points.setflags(write=False)
            probs.setflags(write=False)
            object.__setattr__(self, points_name, points)
            object.__setattr__(self, probs_name, probs)

    @property
    def n(self) -> int:
        return len(self.values)

    @property
    def m(self) -> int:
        return len(self.costs)


@dataclass
class LPModel:
    """max c·x subject to A_ub x ≤ b_ub and the variable bounds."""
    instance: DiscreteInstance
    c: np.ndarray
    A_ub: np.ndarray
    b_ub: np.ndarray
    bounds: List[Tuple[float, float]]
    names: List[str]
    row_names: List[str]
    row_families: List[str]

    @property
    def n_variables(self) -> int:
        return len(self.names)

    def constraint_counts(self) -> Dict[str, int]:
        return {family: self.row_families.count(family) for family in FAMILIES}


@dataclass
class SBSolution:
    sb: float
    trade_rule: Optional[np.ndarray]
    buyer_payments: Optional[np.ndarray]
    seller_receipts: Optional[np.ndarray]
    status: str
    iterations: int = 0
    benchmarks: Dict[str, float] = field(default_factory=dict)

    def interim_trade(self, d: DiscreteInstance) -> np.ndarray:
        """Buyer interim trade probability Σ_j g_j x_ij per value."""
        return self.trade_rule @ d.cost_probs

    def to_json(self, scale: float = 1.0) -> dict:
        report = {'sb': self.sb * scale, 'status': self.status}
        report.update({k: v * scale for k, v in self.benchmarks.items()})
        return report


def discretize(inst: Instance, n: int, m: int) -> DiscreteInstance:
    """Equal-mass grids at the quantile midpoints (2i − 1)/(2n)."""
    if n < 1 or m < 1:
        raise BadCount(f"Grid sizes must be at least 1, got n={n}, m={m}")
    values = np.asarray(inst.buyer.quantile((2.0 * np.arange(1, n + 1) - 1.0) / (2.0 * n)))
    costs = np.asarray(inst.seller.quantile((2.0 * np.arange(1, m + 1) - 1.0) / (2.0 * m)))
    return DiscreteInstance(values, np.full(n, 1.0 / n), costs, np.full(m, 1.0 / m))


def _index(m: int, i: int, j: int, kind: int) -> int:
    return 3 * (i * m + j) + kind


def build_lp(d: DiscreteInstance) -> LPModel:
    n, m = d.n, d.m
    v, f, c, g = d.values, d.value_probs, d.costs, d.cost_probs
    X, PB, PS = 0, 1, 2

    names = []
    for i in range(n):
        for j in range(m):
            names.extend([f"x_{i}_{j}", f"pb_{i}_{j}", f"ps_{i}_{j}"])
    n_vars = len(names)

    objective = np.zeros(n_vars)
    for i in range(n):
        for j in range(m):
            objective[_index(m, i, j, X)] = f[i] * g[j] * (v[i] - c[j])

    # rows are collected in "≥ 0" form and negated at the end
    rows, row_names, families = [], [], []

    def add(row: np.ndarray, name: str, family: str) -> None:
        rows.append(row)
        row_names.append(name)
        families.append(family)

    for i in range(n):
        for k in range(n):
            if i == k:
                continue
            row = np.zeros(n_vars)
            for j in range(m):
                row[_index(m, i, j, X)] += v[i] * g[j]
                row[_index(m, i, j, PB)] -= g[j]
                row[_index(m, k, j, X)] -= v[i] * g[j]
                row[_index(m, k, j, PB)] += g[j]
            add(row, f"bbic_{i}_{k}", 'buyer_bic')

    for j in range(m):
        for k in range(m):
            if j == k:
                continue
            row = np.zeros(n_vars)
            for i in range(n):
                row[_index(m, i, j, PS)] += f[i]
                row[_index(m, i, j, X)] -= c[j] * f[i]
                row[_index(m, i, k, PS)] -= f[i]
                row[_index(m, i, k, X)] += c[j] * f[i]
            add(row, f"sbic_{j}_{k}", 'seller_bic')

    for i in range(n):
        row = np.zeros(n_vars)
        for j in range(m):
            row[_index(m, i, j, X)] = v[i] * g[j]
            row[_index(m, i, j, PB)] = -g[j]
        add(row, f"bir_{i}", 'buyer_ir')

    for j in range(m):
        row = np.zeros(n_vars)
        for i in range(n):
            row[_index(m, i, j, PS)] = f[i]
            row[_index(m, i, j, X)] = -c[j] * f[i]
        add(row, f"sir_{j}", 'seller_ir')

    for i in range(n):
        for j in range(m):
            row = np.zeros(n_vars)
            row[_index(m, i, j, PB)] = 1.0
            row[_index(m, i, j, PS)] = -1.0
            add(row, f"wbb_{i}_{j}", 'wbb')

    bounds = [(0.0, 1.0) if name.startswith('x_') else (-PAYMENT_BOX, PAYMENT_BOX) for name in names]
    A_ub = -np.array(rows) if rows else np.zeros((0, n_vars))
    lp = LPModel(
        instance=d,
        c=objective,
        A_ub=A_ub,
        b_ub=np.zeros(len(rows)),
        bounds=bounds,
        names=names,
        row_names=row_names,
        row_families=families,
    )
    logger.debug(f"Built LP for {n}x{m} grid: {n_vars} variables, counts {lp.constraint_counts()}")
    return lp


def _interim_program(d: DiscreteInstance):
    """Equivalent smaller program on x_ij and interim payments P_i, Q_j.

    With strictly increasing types, adjacent incentive constraints in both
    directions imply all pairwise ones, and ex-ante budget balance can be
    spread into ex-post WBB payments (see `_expost_payments`). Returns
    (c, A_ub, b_ub, lower, upper) in the form `simplex.solve` takes.
    """
    n, m = d.n, d.m
    v, f, c, g = d.values, d.value_probs, d.costs, d.cost_probs
    nm = n * m
    size = nm + n + m
    P = nm + np.arange(n)
    Q = nm + n + np.arange(m)
    rows = []

    def buyer_row(i: int, k: int) -> np.ndarray:
        # type i reports k
        row = np.zeros(size)
        row[i * m:(i + 1) * m] += v[i] * g
        row[P[i]] -= 1.0
        row[k * m:(k + 1) * m] -= v[i] * g
        row[P[k]] += 1.0
        return row

    def seller_row(j: int, k: int) -> np.ndarray:
        row = np.zeros(size)
        row[Q[j]] += 1.0
        row[np.arange(n) * m + j] -= c[j] * f
        row[Q[k]] -= 1.0
        row[np.arange(n) * m + k] += c[j] * f
        return row

    for i in range(n - 1):
        rows.extend([buyer_row(i + 1, i), buyer_row(i, i + 1)])
    for j in range(m - 1):
        rows.extend([seller_row(j + 1, j), seller_row(j, j + 1)])
    for i in range(n):
        row = np.zeros(size)
        row[i * m:(i + 1) * m] = v[i] * g
        row[P[i]] = -1.0
        rows.append(row)
    for j in range(m):
        row = np.zeros(size)
        row[Q[j]] = 1.0
        row[np.arange(n) * m + j] = -c[j] * f
        rows.append(row)
    budget = np.zeros(size)
    budget[P] = f
    budget[Q] = -g
    rows.append(budget)

    objective = np.zeros(size)
    objective[:nm] = (f[:, None] * g[None, :] * (v[:, None] - c[None, :])).ravel()
    lower = np.concatenate([np.zeros(nm), np.full(n + m, -PAYMENT_BOX)])
    upper = np.concatenate([np.ones(nm), np.full(n + m, PAYMENT_BOX)])
    return objective, -np.array(rows), np.zeros(len(rows)), lower, upper


def _least_rents(gaps: np.ndarray, alloc: np.ndarray) -> np.ndarray:
    """Smallest r ≥ 0 with r_i ≥ r_k + gaps[i, k]·alloc[k] for every pair."""
    gain = gaps * alloc[None, :]
    rents = np.zeros(len(alloc))
    for _ in range(len(alloc)):
        updated = np.maximum(0.0, (rents[None, :] + gain).max(axis=1))
        if np.array_equal(updated, rents):
            break
        rents = updated
    return rents


def _expost_payments(d: DiscreteInstance, trade: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Ex-post payments implementing `trade` with the least information rents.

    Buyer payments are P_i + Q_j − E[Q] and seller receipts are those minus the
    budget surplus E[P] − E[Q], so the interim payments are exactly P and Q
    and every pair pays at least what it receives.
    """
    v, f, c, g = d.values, d.value_probs, d.costs, d.cost_probs
    X = trade @ g
    Y = f @ trade
    P = v * X - _least_rents(v[:, None] - v[None, :], X)
    Q = c * Y + _least_rents(c[None, :] - c[:, None], Y)
    surplus = max(float(f @ P - g @ Q), 0.0)
    pb = P[:, None] + Q[None, :] - float(g @ Q)
    return pb, pb - surplus


def _check_feasible(lp: LPModel, x: np.ndarray) -> None:
    lower = np.array([b[0] for b in lp.bounds])
    upper = np.array([b[1] for b in lp.bounds])
    residual = lp.A_ub @ x - lp.b_ub if len(lp.b_ub) else np.zeros(0)
    worst_row = float(residual.max()) if residual.size else 0.0
    worst_bound = float(max((lower - x).max(), (x - upper).max()))
    if worst_row > LP_TOL or worst_bound > LP_TOL:
        raise NumericalInstability(
            f"LP solution violates constraints by {max(worst_row, worst_bound):.3e}; rescale the instance"
        )


def solve_lp(lp: LPModel, pivot_rule: str = 'auto') -> SBSolution:
    """Optimum of `lp`, found on its interim form and checked against every row of `lp`."""
    d = lp.instance
    n, m = d.n, d.m
    c, A_ub, b_ub, lower, upper = _interim_program(d)
    logger.debug(f"Interim program for {n}x{m} grid: {len(c)} variables, {len(b_ub)} rows")
    result = simplex.solve(c, A_ub, b_ub, lower, upper, pivot_rule=pivot_rule)
    if result.status != 'optimal':
        logger.error(f"Second-best LP ended with status {result.status}")
        return SBSolution(float('nan'), None, None, None, result.status, result.iterations)

    trade = result.x[:n * m].reshape(n, m)
    pb, ps = _expost_payments(d, trade)
    x = np.stack([trade, pb, ps], axis=-1).ravel()
    _check_feasible(lp, x)
    sb = float(lp.c @ x)
    logger.info(f"Solved second-best LP ({n}x{m}) in {result.iterations} pivots: sb={sb:.9f}")
    return SBSolution(
        sb=sb,
        trade_rule=trade.copy(),
        buyer_payments=pb,
        seller_receipts=ps,
        status='optimal',
        iterations=result.iterations,
    )


def cross_check(lp: LPModel) -> float:
    """Optimum of the same model from scipy's HiGHS backend."""
    res = linprog(
        -lp.c,
        A_ub=lp.A_ub if len(lp.b_ub) else None,
        b_ub=lp.b_ub if len(lp.b_ub) else None,
        bounds=lp.bounds,
        method='highs'
    )
    if not res.success:
        raise NumericalInstability(f"Reference solver failed: {res.message}")
    return float(-res.fun)


def _term(coef: float, name: str, first: bool) -> str:
    sign = '-' if coef < 0 else '+'
    magnitude = abs(coef)
    body = name if magnitude == 1.0 else f"{magnitude!r} {name}"
    if first:
        return f"- {body}" if sign == '-' else body
    return f" {sign} {body}"


def _expression(coefs: np.ndarray, names: List[str]) -> str:
    nonzero = np.flatnonzero(coefs)
    if nonzero.size == 0:
        return f"0 {names[0]}"
    return ''.join(_term(float(coefs[k]), names[k], n == 0) for n, k in enumerate(nonzero))


def export_lp(lp: LPModel) -> str:
    """CPLEX LP text; every constraint is written as `expression >= 0`."""
    lines = ["\\ Discrete second-best trade LP", "Maximize", f" obj: {_expression(lp.c, lp.names)}", "Subject To"]
    for name, row in zip(lp.row_names, -lp.A_ub):
        lines.append(f" {name}: {_expression(row, lp.names)} >= 0")
    lines.append("Bounds")
    for name, (lo, hi) in zip(lp.names, lp.bounds):
        lines.append(f" {lo:g} <= {name} <= {hi:g}")
    lines.append("End")
    return '\n'.join(lines) + '\n'


def _smallest_best(payoff: np.ndarray) -> int:
    best = payoff.max()
    return int(np.flatnonzero(payoff >= best - TIE_TOL)[0])


def discrete_first_best(d: DiscreteInstance) -> float:
    surplus = np.maximum(d.values[:, None] - d.costs[None, :], 0.0)
    return float(d.value_probs @ surplus @ d.cost_probs)


def discrete_seller_pricing(d: DiscreteInstance) -> float:
    """Each cost type posts the profit-maximising value grid point at or above it."""
    survival = np.cumsum(d.value_probs[::-1])[::-1]  # P(v ≥ v_i)
    gft = 0.0
    for c, g in zip(d.costs, d.cost_probs):
        idx = np.flatnonzero(d.values >= c)
        if idx.size == 0:
            continue
        profit = (d.values[idx] - c) * survival[idx]
        price = d.values[idx[_smallest_best(profit)]]
        buys = d.values >= price
        gft += g * float(d.value_probs[buys] @ (d.values[buys] - c))
    return gft


def discrete_buyer_pricing(d: DiscreteInstance) -> float:
    """Each value type posts the utility-maximising cost grid point at or below it."""
    cdf = np.cumsum(d.cost_probs)  # P(c ≤ c_j)
    gft = 0.0
    for v, f in zip(d.values, d.value_probs):
        idx = np.flatnonzero(d.costs <= v)
        if idx.size == 0:
            continue
        utility = (v - d.costs[idx]) * cdf[idx]
        price = d.costs[idx[_smallest_best(utility)]]
        sells = d.costs <= price
        gft += f * float(d.cost_probs[sells] @ (v - d.costs[sells]))
    return gft


def second_best(inst: Instance, n: int, m: int, pivot_rule: str = 'auto') -> SBSolution:
    d = discretize(inst, n, m)
    sol = solve_lp(build_lp(d), pivot_rule)
    if sol.status != 'optimal':
        raise NumericalInstability(f"Second-best LP did not reach an optimum: {sol.status}")

    fb_d = discrete_first_best(d)
    sp_d = discrete_seller_pricing(d)
    bp_d = discrete_buyer_pricing(d)
    sol.benchmarks = {'fb_d': fb_d, 'sp_d': sp_d, 'bp_d': bp_d}

    if not max(sp_d, bp_d) - LP_TOL <= sol.sb <= fb_d + LP_TOL:
        raise PropertyViolation(
            f"Second best {sol.sb} outside [max(SP_d, BP_d), FB_d] = [{max(sp_d, bp_d)}, {fb_d}]"
        )
    if fb_d > 10.0 * sol.sb + 1e-6:
        raise PropertyViolation(f"FB_d={fb_d} exceeds ten times the second best {sol.sb}")
    interim = sol.interim_trade(d)
    if np.any(np.diff(interim) < -LP_TOL):
        raise PropertyViolation(f"Interim trade probability is not monotone in value: {interim.tolist()}")

    if inst.isclose(Instance(UNIFORM, UNIFORM)) and abs(sol.sb - UNIFORM_SB_REFERENCE) > REFERENCE_BAND:
        logger.warning(
            f"Uniform second best {sol.sb:.6f} is more than {REFERENCE_BAND} from {UNIFORM_SB_REFERENCE:.6f}"
        )
    return sol


def refinement_profile(inst: Instance, sizes=(5, 10, 20)) -> List[Tuple[int, float]]:
    """sb on successively finer square grids; logs whether successive gaps shrink."""
    profile = [(k, second_best(inst, k, k).sb) for k in sizes]
    gaps = [abs(b[1] - a[1]) for a, b in zip(profile, profile[1:])]
    if any(later > earlier for earlier, later in zip(gaps, gaps[1:])):
        logger.warning(f"Second-best refinement gaps do not shrink: {gaps}")
    else:
        logger.info(f"Second-best refinement gaps: {gaps}")
    return profile
