"""Trade-off functions and conversions between privacy parameterizations.

A trade-off function ``f`` maps a type I error ``alpha`` to the smallest
achievable type II error when testing two neighbouring datasets against each
other. Here it is represented by its values on a uniform ``alpha`` grid and
read between grid points by linear interpolation.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy import special

from dpfmix.errors import AccuracyError, DomainError, IngestionError

DEFAULT_GRID_SIZE = 100_001
_TOL = 1e-12
_SYMMETRIZE_PASSES = 20
_FIXED_POINT_TOL = 1e-14


class EpsDelta(NamedTuple):
    """An (epsilon, delta) differential privacy guarantee."""

    eps: float
    delta: float


def _check_epsdelta(eps: float, delta: float) -> EpsDelta:
    if not eps >= 0:
        raise DomainError(f"eps must be non-negative, got {eps}")
    if not 0.0 <= delta <= 1.0:
        raise DomainError(f"delta must lie in [0, 1], got {delta}")
    return EpsDelta(float(eps), float(delta))


def uniform_grid(grid_size: int = DEFAULT_GRID_SIZE) -> np.ndarray:
    if grid_size < 3:
        raise DomainError(f"grid_size must be at least 3, got {grid_size}")
    return np.linspace(0.0, 1.0, int(grid_size))


@dataclass(frozen=True, eq=False)
class TradeoffCurve:
    """A trade-off function sampled on a grid of type I errors.

    Attributes:
      alphas: Strictly increasing grid starting at 0 and ending at 1.
      betas: Type II errors ``f(alpha)`` at the grid points.

    Construction validates the trade-off invariants (grid shape, monotone,
    convex, ``0 <= f(alpha) <= 1 - alpha``) and freezes both arrays.
    """

    alphas: np.ndarray
    betas: np.ndarray

    def __post_init__(self):
        alphas = np.array(self.alphas, dtype=np.float64)
        betas = np.array(self.betas, dtype=np.float64)
        alphas.setflags(write=False)
        betas.setflags(write=False)
        object.__setattr__(self, "alphas", alphas)
        object.__setattr__(self, "betas", betas)
        self.validate()

    @classmethod
    def from_values(cls, alphas, betas) -> TradeoffCurve:
        """Builds a curve after clamping ``betas`` into ``[0, 1 - alpha]``."""
        alphas = np.asarray(alphas, dtype=np.float64)
        betas = np.clip(np.asarray(betas, dtype=np.float64), 0.0, None)
        return cls(alphas, np.minimum(betas, 1.0 - alphas))

    def validate(self, tol: float = _TOL) -> None:
        a, b = self.alphas, self.betas
        if a.ndim != 1 or a.shape != b.shape or a.size < 3:
            raise DomainError("alphas and betas must be 1-d arrays of equal length >= 3")
        if a[0] != 0.0 or a[-1] != 1.0 or np.any(np.diff(a) <= 0):
            raise DomainError("alpha grid must be strictly increasing from 0 to 1")
        if not np.all(np.isfinite(b)):
            raise DomainError("betas must be finite")
        if np.any(b < -tol) or np.any(b > 1.0 - a + tol):
            raise DomainError("betas must satisfy 0 <= f(alpha) <= 1 - alpha")
        if np.any(np.diff(b) > tol):
            raise DomainError("betas must be non-increasing")
        if np.any(_second_differences(a, b) < -tol):
            raise DomainError("trade-off curve must be convex")

    @property
    def grid_size(self) -> int:
        return self.alphas.size

    def __call__(self, alpha):
        return np.interp(alpha, self.alphas, self.betas)

    def __len__(self) -> int:
        return self.alphas.size

    def sup_distance(self, other: TradeoffCurve) -> float:
        _check_same_grid(self, other)
        return float(np.max(np.abs(self.betas - other.betas)))

    def l2_distance(self, other: TradeoffCurve) -> float:
        """Root-mean-square gap, i.e. the L2 norm on [0, 1] for a uniform grid."""
        _check_same_grid(self, other)
        return float(np.sqrt(np.mean((self.betas - other.betas) ** 2)))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write("alpha,beta\n")
            for a, b in zip(self.alphas, self.betas):
                fh.write(f"{float(a)!r},{float(b)!r}\n")

    @classmethod
    def from_csv(cls, path) -> TradeoffCurve:
        path = Path(path)
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != ["alpha", "beta"]:
                raise IngestionError(f"{path}: expected header 'alpha,beta', got {header}")
            rows = []
            for lineno, row in enumerate(reader, start=2):
                if len(row) != 2:
                    raise IngestionError(f"{path}: row {lineno} has {len(row)} fields")
                try:
                    rows.append((float(row[0]), float(row[1])))
                except ValueError as exc:
                    raise IngestionError(f"{path}: row {lineno}: {exc}") from None
        arr = np.array(rows)
        return cls(arr[:, 0], arr[:, 1])


def _second_differences(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    slopes = np.diff(b) / np.diff(a)
    return np.diff(slopes) * np.diff(a)[1:]


def _check_same_grid(f: TradeoffCurve, g: TradeoffCurve) -> None:
    if f.alphas.shape != g.alphas.shape or not np.array_equal(f.alphas, g.alphas):
        raise DomainError("curves live on different alpha grids")


def identity_tradeoff(grid_size: int = DEFAULT_GRID_SIZE) -> TradeoffCurve:
    """``Id(alpha) = 1 - alpha``: perfect privacy."""
    alphas = uniform_grid(grid_size)
    return TradeoffCurve(alphas, 1.0 - alphas)


def gaussian_tradeoff(mu: float, grid_size: int = DEFAULT_GRID_SIZE) -> TradeoffCurve:
    """Samples ``G_mu(alpha) = Phi(Phi^{-1}(1 - alpha) - mu)``.

    ``Phi^{-1}(1 - alpha)`` is evaluated as ``-Phi^{-1}(alpha)`` so that small
    type I errors keep full relative precision.
    """
    if not mu >= 0:
        raise DomainError(f"mu must be non-negative, got {mu}")
    alphas = uniform_grid(grid_size)
    if mu == 0:
        return TradeoffCurve(alphas, 1.0 - alphas)
    if math.isinf(mu):
        return TradeoffCurve(alphas, np.zeros_like(alphas))
    with np.errstate(over="ignore"):
        betas = special.ndtr(-special.ndtri(alphas) - mu)
    return TradeoffCurve.from_values(alphas, betas)


def gaussian_tradeoff_at(mu: float, alpha):
    """Closed-form ``G_mu`` at arbitrary type I errors (no grid)."""
    alpha = np.asarray(alpha, dtype=np.float64)
    return special.ndtr(-special.ndtri(alpha) - mu)


def subsample_mixture(f: TradeoffCurve, p: float) -> TradeoffCurve:
    """``f_p = p f + (1 - p) Id``, the Poisson-subsampled trade-off bound."""
    if not 0.0 <= p <= 1.0:
        raise DomainError(f"sampling probability must lie in [0, 1], got {p}")
    return TradeoffCurve.from_values(f.alphas, p * f.betas + (1.0 - p) * (1.0 - f.alphas))


def invert(f: TradeoffCurve) -> TradeoffCurve:
    """Generalized inverse ``f^{-1}(beta) = inf{alpha : f(alpha) <= beta}``.

    The graph is reflected across the diagonal and re-sampled on the same grid.
    Flat stretches of ``f`` map to their left end point.
    """
    xs = f.betas[::-1]
    ys = f.alphas[::-1]
    # xs is non-decreasing; collapse ties to the smallest alpha
    keep = np.concatenate([[True], np.diff(xs) > 0])
    starts = np.flatnonzero(keep)
    ux = xs[starts]
    uy = np.minimum.reduceat(ys, starts)
    betas = np.interp(f.alphas, ux, uy, left=uy[0], right=0.0)
    return TradeoffCurve.from_values(f.alphas, betas)


def lower_convex_hull(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Indices of the lower convex hull of points sorted by ``x`` (monotone chain)."""
    hull: list[int] = []
    xs = x.tolist()
    ys = y.tolist()
    for i in range(len(xs)):
        xi, yi = xs[i], ys[i]
        while len(hull) >= 2:
            o, a = hull[-2], hull[-1]
            cross = (xs[a] - xs[o]) * (yi - ys[o]) - (ys[a] - ys[o]) * (xi - xs[o])
            if cross > 0:
                break
            hull.pop()
        hull.append(i)
    return np.asarray(hull, dtype=np.intp)


def convex_minorant(x: np.ndarray, y: np.ndarray, at: np.ndarray) -> np.ndarray:
    """Greatest convex minorant of the points ``(x, y)`` evaluated at ``at``."""
    idx = lower_convex_hull(x, y)
    return np.interp(at, x[idx], y[idx])


def symmetrize_once(f: TradeoffCurve) -> TradeoffCurve:
    """One pass of ``min{f, f^{-1}}**`` on the grid.

    The double conjugate of a function sampled on a grid is its greatest
    convex minorant, computed here as the lower convex hull of the samples.
    """
    h = np.minimum(f.betas, invert(f).betas)
    return TradeoffCurve.from_values(f.alphas, convex_minorant(f.alphas, h, f.alphas))


def symmetrize(f: TradeoffCurve) -> TradeoffCurve:
    """``min{f, f^{-1}}**``: the double conjugate of the pointwise minimum.

    Re-sampling the hull on the grid leaves it slightly asymmetric (chords
    lie above the curve), so :func:`symmetrize_once` is repeated until it
    stops changing. That takes two or three passes and makes the result a
    fixed point, hence idempotent.
    """
    cur = symmetrize_once(f)
    for _ in range(_SYMMETRIZE_PASSES):
        nxt = symmetrize_once(cur)
        done = nxt.sup_distance(cur) <= _FIXED_POINT_TOL
        cur = nxt
        if done:
            break
    return cur


def curve_to_epsdelta(f: TradeoffCurve, eps: float) -> EpsDelta:
    """Smallest ``delta`` such that ``f`` implies (eps, delta)-DP.

    ``delta(eps) = max_alpha (1 - e^eps alpha - f(alpha))``, maximized over the
    grid. Exact for the piecewise-linear curve since the objective is linear
    between grid points. For the underlying smooth curve the answer is only
    as good as the grid: a maximizer below the first grid step goes unseen.
    """
    if not eps >= 0:
        raise DomainError(f"eps must be non-negative, got {eps}")
    delta = np.max(1.0 - math.exp(eps) * f.alphas - f.betas)
    return EpsDelta(float(eps), float(min(max(delta, 0.0), 1.0)))


def log_delta_gdp(mu: float, eps: float) -> float:
    """``log delta(eps)`` for mu-GDP, evaluated without cancellation."""
    if mu == 0:
        return -math.inf
    if math.isinf(mu):
        return 0.0
    a = special.log_ndtr(-eps / mu + mu / 2)
    b = eps + special.log_ndtr(-eps / mu - mu / 2)
    if b >= a:
        return -math.inf
    return float(a + math.log(-math.expm1(b - a)))


def mu_to_epsdelta(mu: float, eps: float) -> EpsDelta:
    """The (eps, delta(eps)) guarantee implied by mu-GDP.

    ``delta(eps) = Phi(-eps/mu + mu/2) - e^eps Phi(-eps/mu - mu/2)``.
    """
    if not mu >= 0:
        raise DomainError(f"mu must be non-negative, got {mu}")
    if not eps >= 0:
        raise DomainError(f"eps must be non-negative, got {eps}")
    return EpsDelta(float(eps), math.exp(log_delta_gdp(mu, eps)))


def epsdelta_to_mu(eps: float, delta: float, *, lo: float = 1e-8, hi: float = 100.0) -> float:
    """The unique mu such that mu-GDP gives exactly ``delta`` at ``eps``.

    Bisection on ``log delta(mu)``, which is increasing in mu, run until the
    bracket collapses to adjacent floats.
    """
    _check_epsdelta(eps, delta)
    if not 0.0 < delta < 1.0:
        raise DomainError(f"delta must lie strictly inside (0, 1), got {delta}")
    target = math.log(delta)

    def gap(mu):
        return log_delta_gdp(mu, eps) - target

    if gap(lo) > 0 or gap(hi) < 0:
        raise AccuracyError(
            f"mu for eps={eps}, delta={delta} is not bracketed by [{lo}, {hi}]")
    for _ in range(400):
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if gap(mid) < 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def mu_to_eps(mu: float, delta: float) -> float:
    """Smallest eps with ``delta(eps) <= delta`` under mu-GDP."""
    if not mu >= 0:
        raise DomainError(f"mu must be non-negative, got {mu}")
    if not 0.0 < delta < 1.0:
        raise DomainError(f"delta must lie strictly inside (0, 1), got {delta}")
    target = math.log(delta)
    if log_delta_gdp(mu, 0.0) <= target:
        return 0.0
    lo, hi = 0.0, 1.0
    while log_delta_gdp(mu, hi) > target:
        lo, hi = hi, 2.0 * hi
        if hi > 1e6:
            raise AccuracyError(f"eps for mu={mu}, delta={delta} exceeds 1e6")
    for _ in range(400):
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if log_delta_gdp(mu, mid) > target:
            lo = mid
        else:
            hi = mid
    return hi
