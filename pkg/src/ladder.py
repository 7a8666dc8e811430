"""Quantile map μ, its compositions, and the ladder c, μ(c), μ²(c), ...

All compositions are done in tail-probability space: μ multiplies the
remaining mass 1 − F(x) by (1 − λ), so μ^(k) is one quantile lookup.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from src.config import EXACT_TOL, LADDER_EPS
from src.distributions import ArrayLike, Distribution, _scalar_or_array
from src.errors import BadLambda, DegenerateStart, OutOfRange

logger = logging.getLogger(__name__)


def check_lambda(lam: float) -> float:
    lam = float(lam)
    if not 0.0 < lam < 1.0:
        raise BadLambda(f"lambda must lie in (0, 1), got {lam}")
    return lam


def mu(F: Distribution, lam: float, x: ArrayLike):
    """F^(−1)(λ + (1 − λ) F(x)): the λ-quantile of F conditioned on ≥ x."""
    lam = check_lambda(lam)
    q = np.asarray(F.cdf(x), dtype=float)
    return _scalar_or_array(F.quantile(lam + (1.0 - lam) * q), x)


def mu_k(F: Distribution, lam: float, x: ArrayLike, k: int):
    """k-fold composition of μ; negative k inverts, returning 0 with no preimage."""
    lam = check_lambda(lam)
    tail = 1.0 - np.asarray(F.cdf(x), dtype=float)
    if k >= 0:
        target = tail * (1.0 - lam) ** k
        return _scalar_or_array(F.quantile(1.0 - target), x)

    target = tail / (1.0 - lam) ** (-k)
    missing = target > 1.0 + EXACT_TOL
    pre = np.asarray(F.quantile(1.0 - np.minimum(target, 1.0)), dtype=float)
    return _scalar_or_array(np.where(missing, 0.0, pre), x)


@dataclass(frozen=True)
class QuantileLadder:
    distribution: Distribution
    lam: float
    start: float
    points: Tuple[float, ...]
    tails: Tuple[float, ...]
    truncation_eps: float

    @property
    def depth(self) -> int:
        """Index K of the last generated point."""
        return len(self.points) - 1

    @property
    def residual_tail(self) -> float:
        return self.tails[-1]

    def interval_mass(self, t: int) -> float:
        """F(μ^(t+1)(c)) − F(μ^(t)(c)) = λ(1 − λ)^t (1 − F(c))."""
        return self.lam * self.tails[t]


def build_ladder(F: Distribution, lam: float, c: float,
                 eps: float = LADDER_EPS) -> QuantileLadder:
    lam = check_lambda(lam)
    if c >= 1.0:
        raise DegenerateStart("Ladder cannot start at the top of the support")
    tail0 = 1.0 - F.cdf(c)
    if not 0.0 < eps < tail0:
        raise OutOfRange(f"eps must lie in (0, {tail0}), got {eps}")

    points = [float(c)]
    tails = [tail0]
    k = 0
    while tails[-1] >= eps:
        k += 1
        tail = tail0 * (1.0 - lam) ** k
        points.append(F.quantile(1.0 - tail))
        tails.append(tail)

    logger.debug(f"Built ladder from c={c} with lambda={lam}: K={k}, residual={tails[-1]:.3e}")
    return QuantileLadder(
        distribution=F,
        lam=lam,
        start=float(c),
        points=tuple(points),
        tails=tuple(tails),
        truncation_eps=eps,
    )


def interval_masses(ladder: QuantileLadder) -> List[Tuple[int, float, float, float]]:
    """Rows (k, point, mass, residual_tail).

    mass is the probability of [μ^(k), μ^(k+1)); on the last row it is the
    truncated remainder above the final point, so the column sums to 1 − F(c).
    """
    rows = []
    for k, (point, tail) in enumerate(zip(ladder.points, ladder.tails)):
        mass = ladder.interval_mass(k) if k < ladder.depth else tail
        rows.append((k, point, mass, tail))
    return rows


def expected_depth(F: Distribution, lam: float, c: float, eps: float) -> Optional[int]:
    """⌈log(eps / (1 − F(c))) / log(1 − λ)⌉, the closed-form ladder length."""
    lam = check_lambda(lam)
    tail0 = 1.0 - F.cdf(c)
    if tail0 <= eps:
        return None
    return int(np.ceil(np.log(eps / tail0) / np.log(1.0 - lam)))
