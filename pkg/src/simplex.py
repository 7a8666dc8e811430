"""Dense-tableau primal simplex for boxed linear programs.

Solves
    maximise  c·x   subject to  A x ≤ b,  lower ≤ x ≤ upper
with finite lower bounds. Variables are shifted to start at zero; finite
upper bounds are handled by bound flips instead of extra rows. Rows with a
negative shifted right-hand side get an artificial variable for phase one.

The ratio test is Harris's two-pass rule with a pivot threshold relative to
the entering column, and the tableau is rebuilt from the original columns
every REINVERT_EVERY pivots so rounding does not accumulate.
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from src.config import DEGENERATE_STALL, EXACT_TOL, OPT_TOL
from src.errors import NumericalInstability, ValidationError

logger = logging.getLogger(__name__)

PIVOT_MIN = 1e-12
PIVOT_ABS = 1e-9
PIVOT_REL = 1e-7
FEAS_TOL = 1e-11
ENTRY_MAX = 1e10
REINVERT_EVERY = 100
PIVOT_RULES = ('auto', 'bland', 'dantzig')


@dataclass
class SimplexResult:
    status: str  # optimal | infeasible | unbounded-guard
    x: Optional[np.ndarray]
    objective: float
    iterations: int


class Tableau:
    """Tableau B⁻¹[A | I | art] plus reduced costs and basic values."""

    def __init__(self, T: np.ndarray, beta: np.ndarray, basis: np.ndarray, upper: np.ndarray,
                 pivot_rule: str, max_iter: int):
        self.A0 = T.copy()
        self.b0 = beta.copy()
        self.T = T
        self.beta = beta
        self.basis = basis
        self.upper = upper
        self.at_upper = np.zeros(T.shape[1], dtype=bool)
        self.c = np.zeros(T.shape[1])
        self.d = np.zeros(T.shape[1])
        self.pivot_rule = pivot_rule
        self.max_iter = max_iter
        self.iterations = 0
        self.stalled = 0
        self.since_reinvert = 0

    def set_objective(self, c: np.ndarray) -> None:
        self.c = c
        self.d = c - c[self.basis] @ self.T
        self.d[self.basis] = 0.0

    def values(self) -> np.ndarray:
        y = np.where(self.at_upper, self.upper, 0.0)
        y[self.basis] = self.beta
        return y

    def reinvert(self) -> None:
        """Rebuild T, beta and the reduced costs from the original columns."""
        B = self.A0[:, self.basis]
        flipped = np.flatnonzero(self.at_upper)
        rhs = self.b0 - self.A0[:, flipped] @ self.upper[flipped]
        try:
            self.T = np.linalg.solve(B, self.A0)
            self.beta = np.linalg.solve(B, rhs)
        except np.linalg.LinAlgError as e:
            logger.error(f"Basis matrix is singular after {self.iterations} pivots: {str(e)}")
            raise NumericalInstability(f"Basis matrix became singular: {str(e)}")
        self.T[:, self.basis] = np.eye(len(self.basis))
        self.set_objective(self.c)
        self.since_reinvert = 0

    def _use_bland(self) -> bool:
        return self.pivot_rule == 'bland' or (
            self.pivot_rule == 'auto' and self.stalled >= DEGENERATE_STALL
        )

    def _entering(self, bland: bool) -> Optional[int]:
        score = np.where(self.at_upper, -self.d, self.d)
        score[self.basis] = 0.0
        eligible = np.flatnonzero(score > OPT_TOL)
        if eligible.size == 0:
            return None
        if bland:
            return int(eligible[0])
        return int(eligible[np.argmax(score[eligible])])

    def _ratio_test(self, j: int, sigma: float, bland: bool):
        """Step θ and the blocking row (−1 when the entering bound flips)."""
        delta = -sigma * self.T[:, j]
        magnitude = np.abs(delta)
        threshold = max(PIVOT_ABS, PIVOT_REL * magnitude.max()) if magnitude.size else PIVOT_ABS
        upper_b = self.upper[self.basis]

        down = delta < -threshold
        up = (delta > threshold) & np.isfinite(upper_b)
        room = np.full(len(delta), np.inf)
        room[down] = np.maximum(self.beta[down], 0.0)
        room[up] = np.maximum(upper_b[up] - self.beta[up], 0.0)
        blocking = down | up
        ratios = np.full(len(delta), np.inf)
        ratios[blocking] = room[blocking] / magnitude[blocking]

        if bland:
            theta = ratios.min() if len(ratios) else np.inf
        else:
            # first pass: widest step that keeps every row within FEAS_TOL
            relaxed = np.full(len(delta), np.inf)
            relaxed[blocking] = (room[blocking] + FEAS_TOL) / magnitude[blocking]
            theta = relaxed.min() if len(relaxed) else np.inf

        if self.upper[j] <= theta:
            return self.upper[j], -1, delta
        if not np.isfinite(theta):
            return np.inf, -1, delta

        if bland:
            tied = np.flatnonzero(ratios <= theta + EXACT_TOL)
            row = int(tied[np.argmin(self.basis[tied])])
            return theta, row, delta

        # second pass: largest pivot among the rows that block within that step
        candidates = np.flatnonzero(ratios <= theta)
        row = int(candidates[np.argmax(magnitude[candidates])])
        return float(ratios[row]), row, delta

    def _pivot(self, row: int, j: int) -> None:
        pivot = self.T[row, j]
        if abs(pivot) < PIVOT_MIN:
            raise NumericalInstability(f"Pivot magnitude {abs(pivot):.3e} below {PIVOT_MIN}")
        prow = self.T[row] / pivot
        self.T[row] = prow

        col = self.T[:, j].copy()
        col[row] = 0.0
        rows = np.flatnonzero(col)
        if rows.size:
            self.T[rows] -= np.outer(col[rows], prow)
            if np.abs(self.T[rows]).max() > ENTRY_MAX:
                raise NumericalInstability(f"Tableau entries exceed {ENTRY_MAX:.0e}; rescale the instance")
        self.d -= self.d[j] * prow
        self.d[j] = 0.0
        self.since_reinvert += 1

    def step(self) -> str:
        """One iteration; returns 'continue', 'optimal' or 'unbounded-guard'."""
        if self.iterations >= self.max_iter:
            raise NumericalInstability(f"Simplex iteration limit {self.max_iter} reached")
        bland = self._use_bland()
        j = self._entering(bland)
        if j is None:
            return 'optimal'

        sigma = -1.0 if self.at_upper[j] else 1.0
        theta, row, delta = self._ratio_test(j, sigma, bland)
        if not np.isfinite(theta):
            return 'unbounded-guard'

        self.iterations += 1
        self.stalled = self.stalled + 1 if theta <= EXACT_TOL else 0
        self.beta = self.beta + theta * delta

        if row < 0:
            self.at_upper[j] = not self.at_upper[j]
            return 'continue'

        leaving = self.basis[row]
        entering_value = (self.upper[j] if self.at_upper[j] else 0.0) + sigma * theta
        self.at_upper[leaving] = bool(delta[row] > 0)
        self.at_upper[j] = False
        self._pivot(row, j)
        self.basis[row] = j
        self.beta[row] = entering_value
        if self.since_reinvert >= REINVERT_EVERY:
            self.reinvert()
        return 'continue'

    def _iterate(self) -> str:
        status = 'continue'
        while status == 'continue':
            status = self.step()
        return status

    def run(self) -> str:
        status = self._iterate()
        if status == 'optimal' and self.since_reinvert:
            # confirm optimality on a freshly rebuilt tableau
            self.reinvert()
            status = self._iterate()
        return status

    def drive_out(self, artificial_from: int) -> None:
        """Pivot basic artificials onto real columns; drop rows where none exists."""
        keep = np.ones(len(self.basis), dtype=bool)
        for row in np.flatnonzero(self.basis >= artificial_from):
            candidates = np.flatnonzero(np.abs(self.T[row, :artificial_from]) > PIVOT_ABS)
            candidates = candidates[~np.isin(candidates, self.basis)]
            if candidates.size == 0:
                keep[row] = False
                continue
            j = int(candidates[np.argmax(np.abs(self.T[row, candidates]))])
            value = self.upper[j] if self.at_upper[j] else 0.0
            self.at_upper[j] = False
            self._pivot(row, j)
            self.basis[row] = j
            self.beta[row] = value

        if not keep.all():
            logger.debug(f"Dropping {int((~keep).sum())} redundant rows after phase one")
        self.T = self.T[keep, :artificial_from]
        self.A0 = self.A0[keep, :artificial_from]
        self.b0 = self.b0[keep]
        self.beta = self.beta[keep]
        self.basis = self.basis[keep]
        self.upper = self.upper[:artificial_from]
        self.at_upper = self.at_upper[:artificial_from]
        self.c = self.c[:artificial_from]
        self.d = self.d[:artificial_from]


def solve(c, A_ub, b_ub, lower, upper, pivot_rule: str = 'auto',
          max_iter: Optional[int] = None) -> SimplexResult:
    """Maximise c·x over {A_ub x ≤ b_ub, lower ≤ x ≤ upper}.

    pivot_rule 'auto' uses the largest reduced cost and falls back to
    Bland's rule after a run of degenerate pivots; 'bland' uses Bland's
    rule throughout.
    """
    if pivot_rule not in PIVOT_RULES:
        raise ValidationError(f"Unknown pivot rule {pivot_rule!r}; expected one of {PIVOT_RULES}")
    c = np.asarray(c, dtype=float)
    A = np.atleast_2d(np.asarray(A_ub, dtype=float))
    b = np.asarray(b_ub, dtype=float)
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    if not np.all(np.isfinite(lower)):
        raise ValidationError("Every variable needs a finite lower bound")
    if np.any(upper < lower):
        raise ValidationError("Variable bounds are reversed")

    rows, n = A.shape
    rhs = b - A @ lower
    negative = rhs < 0
    sign = np.where(negative, -1.0, 1.0)
    n_art = int(negative.sum())

    T = np.zeros((rows, n + rows + n_art))
    T[:, :n] = sign[:, None] * A
    T[np.arange(rows), n + np.arange(rows)] = sign
    art_rows = np.flatnonzero(negative)
    T[art_rows, n + rows + np.arange(n_art)] = 1.0

    basis = np.where(negative, 0, n + np.arange(rows))
    basis[art_rows] = n + rows + np.arange(n_art)
    var_upper = np.concatenate([upper - lower, np.full(rows + n_art, np.inf)])
    if max_iter is None:
        max_iter = 50 * (rows + n + n_art)

    tab = Tableau(T, np.abs(rhs), basis, var_upper, pivot_rule, max_iter)
    artificial_from = n + rows

    if n_art:
        phase_one = np.zeros(T.shape[1])
        phase_one[artificial_from:] = -1.0
        tab.set_objective(phase_one)
        tab.run()
        infeasibility = float(tab.values()[artificial_from:].sum())
        logger.debug(f"Phase one finished after {tab.iterations} pivots, infeasibility {infeasibility:.3e}")
        if infeasibility > OPT_TOL:
            return SimplexResult('infeasible', None, float('nan'), tab.iterations)
        tab.drive_out(artificial_from)

    tab.set_objective(np.concatenate([c, np.zeros(rows)]))
    status = tab.run()
    if status != 'optimal':
        logger.warning(f"Simplex stopped with status {status} after {tab.iterations} pivots")
        return SimplexResult(status, None, float('nan'), tab.iterations)

    x = np.clip(tab.values()[:n], 0.0, upper - lower) + lower
    objective = float(c @ x)
    logger.debug(f"Simplex optimal after {tab.iterations} pivots: objective {objective:.12f}")
    return SimplexResult('optimal', x, objective, tab.iterations)
