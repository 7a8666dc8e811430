"""Piecewise-linear CDFs on [0, 1] with strictly positive density.

Every integral the bounds and mechanisms need reduces to a per-segment
polynomial on this representation, so nothing here uses quadrature.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence, Tuple, Union

import numpy as np

from src.config import EXACT_TOL, FIT_KNOTS
from src.errors import (
    BadCount,
    BadEndpoints,
    BadRange,
    DegenerateSupport,
    DegenerateTruncation,
    InstanceFormatError,
    NonMonotone,
    OutOfRange,
    OutOfSupport,
    TooFewKnots,
)

logger = logging.getLogger(__name__)

ArrayLike = Union[float, Sequence[float], np.ndarray]
Knot = Tuple[float, float]


def _scalar_or_array(values: np.ndarray, like: ArrayLike):
    """Return a float when the caller passed a scalar."""
    if np.ndim(like) == 0:
        return float(values)
    return values


@dataclass(frozen=True)
class AffineMap:
    """Placement of the unit interval inside the original value axis."""
    lo: float = 0.0
    hi: float = 1.0

    def __post_init__(self):
        if not self.hi > self.lo:
            raise DegenerateSupport(f"Support [{self.lo}, {self.hi}] is empty")

    @property
    def scale(self) -> float:
        return self.hi - self.lo

    def to_unit(self, t: ArrayLike):
        return _scalar_or_array((np.asarray(t, dtype=float) - self.lo) / self.scale, t)

    def from_unit(self, u: ArrayLike):
        return _scalar_or_array(self.lo + np.asarray(u, dtype=float) * self.scale, u)

    def restrict(self, a: float, b: float) -> 'AffineMap':
        """Frame of the unit sub-interval [a, b] expressed in original units."""
        return AffineMap(self.from_unit(a), self.from_unit(b))


@dataclass(frozen=True)
class Distribution:
    """CDF interpolating linearly between knots (x, q).

    Knots live in unit coordinates; `frame` records where that unit
    interval sits on the original axis (identity unless the distribution
    came from rescaling or truncation).
    """
    knots: Tuple[Knot, ...]
    frame: AffineMap = AffineMap()
    xs: np.ndarray = field(init=False, repr=False, compare=False)
    qs: np.ndarray = field(init=False, repr=False, compare=False)
    slopes: np.ndarray = field(init=False, repr=False, compare=False)
    _tail_moments: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        knots = tuple((float(x), float(q)) for x, q in self.knots)
        if len(knots) < 2:
            raise TooFewKnots(f"Need at least 2 knots, got {len(knots)}")

        xs = np.array([k[0] for k in knots])
        qs = np.array([k[1] for k in knots])
        if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(qs))):
            raise NonMonotone("Knot coordinates must be finite")
        if abs(xs[0]) > EXACT_TOL or abs(qs[0]) > EXACT_TOL:
            raise BadEndpoints(f"First knot must be (0, 0), got {knots[0]}")
        if abs(xs[-1] - 1.0) > EXACT_TOL or abs(qs[-1] - 1.0) > EXACT_TOL:
            raise BadEndpoints(f"Last knot must be (1, 1), got {knots[-1]}")
        # Snap endpoints so cdf(0) and cdf(1) are exact
        xs[0], qs[0], xs[-1], qs[-1] = 0.0, 0.0, 1.0, 1.0

        dx = np.diff(xs)
        dq = np.diff(qs)
        if np.any(dx <= 0):
            raise NonMonotone(f"Knot values must be strictly increasing: {xs.tolist()}")
        if np.any(dq <= 0):
            raise NonMonotone(f"Knot probabilities must be strictly increasing: {qs.tolist()}")

        slopes = dq / dx
        # Suffix sums of ∫ v dF over whole segments, used by tail_expectation
        seg_moments = slopes * (xs[1:] ** 2 - xs[:-1] ** 2) / 2.0
        tail_moments = np.concatenate([np.cumsum(seg_moments[::-1])[::-1], [0.0]])

        for arr in (xs, qs, slopes, tail_moments):
            arr.setflags(write=False)
        object.__setattr__(self, 'knots', tuple(zip(xs.tolist(), qs.tolist())))
        object.__setattr__(self, 'xs', xs)
        object.__setattr__(self, 'qs', qs)
        object.__setattr__(self, 'slopes', slopes)
        object.__setattr__(self, '_tail_moments', tail_moments)

    @property
    def n_segments(self) -> int:
        return len(self.xs) - 1

    def _check_support(self, x: ArrayLike) -> np.ndarray:
        arr = np.asarray(x, dtype=float)
        if np.any(arr < -EXACT_TOL) or np.any(arr > 1.0 + EXACT_TOL) or np.any(np.isnan(arr)):
            raise OutOfSupport(f"Value outside [0, 1]: {x}")
        return np.clip(arr, 0.0, 1.0)

    def _segment_index(self, x: np.ndarray) -> np.ndarray:
        return np.clip(np.searchsorted(self.xs, x, side='right') - 1, 0, self.n_segments - 1)

    def cdf(self, x: ArrayLike):
        arr = self._check_support(x)
        return _scalar_or_array(np.interp(arr, self.xs, self.qs), x)

    def quantile(self, q: ArrayLike):
        arr = np.asarray(q, dtype=float)
        if np.any(arr < -EXACT_TOL) or np.any(arr > 1.0 + EXACT_TOL) or np.any(np.isnan(arr)):
            raise OutOfRange(f"Probability outside [0, 1]: {q}")
        arr = np.clip(arr, 0.0, 1.0)
        return _scalar_or_array(np.interp(arr, self.qs, self.xs), q)

    def density(self, x: ArrayLike):
        arr = self._check_support(x)
        return _scalar_or_array(self.slopes[self._segment_index(arr)], x)

    def tail_expectation(self, a: ArrayLike):
        """∫_a^1 v dF(v), vectorised over a."""
        arr = self._check_support(a)
        idx = self._segment_index(arr)
        partial = self.slopes[idx] * (self.xs[idx + 1] ** 2 - arr ** 2) / 2.0
        return _scalar_or_array(partial + self._tail_moments[idx + 1], a)

    def partial_expectation(self, a: float, b: float) -> float:
        """∫_a^b v dF(v), summed segment by segment in closed form."""
        if a > b:
            raise BadRange(f"Integration range reversed: a={a} > b={b}")
        a, b = self._check_support([a, b])
        lo = np.clip(a, self.xs[:-1], self.xs[1:])
        hi = np.clip(b, self.xs[:-1], self.xs[1:])
        return float(np.sum(self.slopes * (hi ** 2 - lo ** 2) / 2.0))

    @property
    def mean(self) -> float:
        return float(self._tail_moments[0])

    def conditional_above(self, x: float) -> 'Distribution':
        """Law of X given X ≥ x, renormalised onto the unit interval.

        The returned frame places the new unit interval at [x, 1] of this
        distribution's frame.
        """
        x = float(self._check_support(x))
        if x >= 1.0:
            raise DegenerateTruncation("Cannot truncate at the top of the support")
        if x == 0.0:
            return self

        fx = self.cdf(x)
        if fx >= 1.0:
            raise DegenerateTruncation(f"No mass above {x}")
        keep = self.xs > x + EXACT_TOL
        keep[-1] = True
        new_xs = (self.xs[keep] - x) / (1.0 - x)
        new_qs = (self.qs[keep] - fx) / (1.0 - fx)
        knots = [(0.0, 0.0)] + list(zip(new_xs.tolist(), new_qs.tolist()))
        return Distribution(tuple(knots), frame=self.frame.restrict(x, 1.0))

    def reflect(self) -> 'Distribution':
        """Law of 1 − X on the same frame."""
        knots = tuple((1.0 - x, 1.0 - q) for x, q in reversed(self.knots))
        return Distribution(knots, frame=self.frame)

    def sample(self, seed: int, n: int) -> np.ndarray:
        """Inverse-transform draws from numpy's PCG64 generator seeded with `seed`."""
        if n < 1:
            raise BadCount(f"Sample size must be at least 1, got {n}")
        rng = np.random.default_rng(seed)
        return self.quantile(rng.random(n))

    def isclose(self, other: 'Distribution', tol: float = EXACT_TOL) -> bool:
        if len(self.knots) != len(other.knots) or self.frame != other.frame:
            return False
        return bool(np.allclose(self.xs, other.xs, rtol=0, atol=tol)
                    and np.allclose(self.qs, other.qs, rtol=0, atol=tol))

    def to_json(self) -> dict:
        if self.frame == AffineMap():
            return {'type': 'piecewise_linear_cdf', 'knots': [list(k) for k in self.knots]}
        return {
            'type': 'piecewise_linear_cdf',
            'knots': [[self.frame.from_unit(x), q] for x, q in self.knots],
            'support': [self.frame.lo, self.frame.hi],
        }


@dataclass(frozen=True)
class Instance:
    """Independent buyer value distribution F and seller cost distribution G."""
    buyer: Distribution
    seller: Distribution

    def __post_init__(self):
        if self.buyer.frame != self.seller.frame:
            raise InstanceFormatError(
                f"Buyer support {self.buyer.frame} and seller support "
                f"{self.seller.frame} differ; both sides need one common scale"
            )

    @property
    def frame(self) -> AffineMap:
        return self.buyer.frame

    def swapped(self) -> 'Instance':
        """Mirror instance: buyer ↦ reflected seller, seller ↦ reflected buyer."""
        return Instance(buyer=self.seller.reflect(), seller=self.buyer.reflect())

    def isclose(self, other: 'Instance', tol: float = EXACT_TOL) -> bool:
        return self.buyer.isclose(other.buyer, tol) and self.seller.isclose(other.seller, tol)

    def to_json(self) -> dict:
        return {'buyer': self.buyer.to_json(), 'seller': self.seller.to_json()}


UNIFORM = Distribution(((0.0, 0.0), (1.0, 1.0)))


def make_piecewise_linear(knots: Iterable[Sequence[float]]) -> Distribution:
    """Validate knots and build a Distribution."""
    try:
        return Distribution(tuple((k[0], k[1]) for k in knots))
    except (TypeError, IndexError) as e:
        raise InstanceFormatError(f"Knots must be (value, probability) pairs: {str(e)}")


def rescale_to_unit(knots: Iterable[Sequence[float]]) -> Tuple[Distribution, AffineMap]:
    """Map knots given on [lo, hi] onto [0, 1]; GFT scales back by hi − lo."""
    pairs = [(float(k[0]), float(k[1])) for k in knots]
    if len(pairs) < 2:
        raise TooFewKnots(f"Need at least 2 knots, got {len(pairs)}")
    lo, hi = pairs[0][0], pairs[-1][0]
    if hi == lo:
        raise DegenerateSupport(f"Support endpoints coincide at {lo}")
    if hi < lo:
        raise NonMonotone(f"Support reversed: [{lo}, {hi}]")
    frame = AffineMap(lo, hi)
    unit = tuple((frame.to_unit(x), q) for x, q in pairs)
    return Distribution(unit, frame=frame), frame


def fit_cdf(cdf_fn: Callable[[np.ndarray], np.ndarray], lo: float, hi: float,
            k: int = FIT_KNOTS) -> Tuple[Distribution, AffineMap]:
    """Interpolate a continuous CDF on k equally spaced points of [lo, hi].

    The fitted CDF is renormalised to put all mass on [lo, hi], which is
    how unbounded families get truncated.
    """
    if k < 2:
        raise BadCount(f"Knot count must be at least 2, got {k}")
    grid = np.linspace(lo, hi, k)
    probs = np.asarray(cdf_fn(grid), dtype=float)
    total = probs[-1] - probs[0]
    if not total > 0:
        raise DegenerateSupport(f"No probability mass on [{lo}, {hi}]")
    probs = (probs - probs[0]) / total
    probs[-1] = 1.0
    logger.debug(f"Fitted CDF on [{lo}, {hi}] with {k} knots")
    return rescale_to_unit(zip(grid.tolist(), probs.tolist()))


def from_scipy(frozen, k: int = FIT_KNOTS, lo: Optional[float] = None,
               hi: Optional[float] = None) -> Tuple[Distribution, AffineMap]:
    """Knot-fit a frozen scipy.stats distribution, truncating to [lo, hi]."""
    support_lo, support_hi = frozen.support()
    lo = support_lo if lo is None else lo
    hi = support_hi if hi is None else hi
    if not (np.isfinite(lo) and np.isfinite(hi)):
        raise DegenerateSupport("Unbounded support needs explicit lo and hi")
    return fit_cdf(frozen.cdf, lo, hi, k)


def random_piecewise_linear(rng: np.random.Generator, n_knots: int,
                            min_gap: float = 1e-3, max_tries: int = 100) -> Distribution:
    """Random valid CDF with n_knots knots; falls back to uniform spacing."""
    if n_knots < 2:
        raise BadCount(f"Knot count must be at least 2, got {n_knots}")
    inner = n_knots - 2
    for _ in range(max_tries):
        xs = np.concatenate([[0.0], np.sort(rng.random(inner)), [1.0]])
        qs = np.concatenate([[0.0], np.sort(rng.random(inner)), [1.0]])
        if np.all(np.diff(xs) >= min_gap) and np.all(np.diff(qs) >= min_gap):
            return Distribution(tuple(zip(xs.tolist(), qs.tolist())))
    grid = np.linspace(0.0, 1.0, n_knots)
    return Distribution(tuple(zip(grid.tolist(), grid.tolist())))
