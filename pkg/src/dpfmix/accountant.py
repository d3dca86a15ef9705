"""Privacy accounting for T rounds of Poisson-subsampled Gaussian mixup.

Three accountants live here:

* the exact trade-off function of the T-fold composition, evaluated
  numerically through the privacy loss distribution (PLD) of one round;
* the central-limit mu-GDP approximation and its closed-form inverse, which
  is what the release path uses to set noise;
* the Poisson-subsampled Renyi DP bound, kept for comparison.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np
from scipy import signal, special

from dpfmix.errors import AccuracyError, DomainError
from dpfmix.tradeoff import (
    DEFAULT_GRID_SIZE,
    EpsDelta,
    TradeoffCurve,
    convex_minorant,
    epsdelta_to_mu,
    gaussian_tradeoff,
    identity_tradeoff,
    subsample_mixture,
    symmetrize,
    uniform_grid,
)

DEFAULT_ORDERS = tuple(range(2, 257))
PLD_SPACING = 1e-3
_MASS_TOL = 1e-9
_TAIL_TOL = 1e-6


def effective_sigma(sigma_x: float, sigma_y: float = math.inf) -> float:
    """Single noise multiplier with ``1/s^2 = 1/sigma_x^2 + 1/sigma_y^2``."""
    if not (sigma_x > 0 and sigma_y > 0):
        raise DomainError("noise multipliers must be positive")
    return 1.0 / math.sqrt(sigma_x ** -2 + sigma_y ** -2)


@dataclass(frozen=True)
class MechanismStep:
    """One round of the release: subsample at ``sample_rate``, add Gaussian noise.

    ``sigma`` is the effective noise multiplier of the feature and label
    releases taken together, so one round is ``(1/sigma)``-GDP before
    subsampling.
    """

    sample_rate: float
    sigma: float

    def __post_init__(self):
        if not 0.0 <= self.sample_rate <= 1.0:
            raise DomainError(f"sample_rate must lie in [0, 1], got {self.sample_rate}")
        if not self.sigma > 0:
            raise DomainError(f"sigma must be positive, got {self.sigma}")

    @classmethod
    def from_release(cls, n: int, m: int, sigma_x: float, sigma_y: float) -> MechanismStep:
        return cls(m / n, effective_sigma(sigma_x, sigma_y))

    def clt_mu(self, T: int) -> float:
        nu = self.sample_rate * math.sqrt(T)
        return nu * math.sqrt(math.expm1(self.sigma ** -2))


def step_tradeoff(step: MechanismStep, grid_size: int = DEFAULT_GRID_SIZE) -> TradeoffCurve:
    """``p G_{1/sigma} + (1 - p) Id`` for a single round."""
    return subsample_mixture(gaussian_tradeoff(1.0 / step.sigma, grid_size), step.sample_rate)


def clt_mu(n: int, m: int, T: int, sigma_x: float, sigma_y: float = math.inf) -> float:
    """Asymptotic GDP parameter ``nu sqrt(exp(1/sigma_x^2 + 1/sigma_y^2) - 1)``.

    ``nu = m sqrt(T) / n``.
    """
    if not (0 <= m <= n and T >= 1):
        raise DomainError(f"need 0 <= m <= n and T >= 1, got m={m}, n={n}, T={T}")
    return MechanismStep.from_release(n, m, sigma_x, sigma_y).clt_mu(T)


# ---------------------------------------------------------------------------
# Privacy loss distributions


def _default_loss_bound(sigma: float) -> float:
    return 30.0 / sigma + 30.0


@dataclass(frozen=True, eq=False)
class PrivacyLossDistribution:
    """Discretized log-likelihood ratio ``log(dQ/dP)`` of a dominating pair.

    The statistic takes values ``(offset + k) * spacing`` for
    ``k = 0 .. len(p_masses) - 1`` plus an extra ``+inf`` atom. Masses are kept
    both under the null ``P`` and under the alternative ``Q``; thresholding the
    statistic gives a family of tests whose error pairs trace the trade-off
    curve.

    Because both masses belong to one and the same deterministic statistic,
    every (type I, type II) pair read off this object is attained by an actual
    test. Rounding therefore only ever makes the curve more conservative.
    """

    spacing: float
    offset: int
    p_masses: np.ndarray
    q_masses: np.ndarray
    p_infinity: float = 0.0
    q_infinity: float = 0.0

    @property
    def losses(self) -> np.ndarray:
        return (self.offset + np.arange(self.p_masses.size)) * self.spacing

    @property
    def total_mass(self) -> tuple[float, float]:
        return (float(self.p_masses.sum() + self.p_infinity),
                float(self.q_masses.sum() + self.q_infinity))

    @classmethod
    def from_step(cls, step: MechanismStep, spacing: float = PLD_SPACING,
                  bound: float | None = None) -> PrivacyLossDistribution:
        """PLD of one round, remove-adjacency dominating pair.

        ``P = N(0, s^2)`` and ``Q = (1 - p) N(0, s^2) + p N(1, s^2)``. The loss
        is increasing in the sample ``x``, so each loss bin pulls back to an
        interval of ``x`` whose Gaussian masses are computed exactly.
        """
        p, s = step.sample_rate, step.sigma
        if bound is None:
            bound = _default_loss_bound(s)
        K = int(math.ceil(bound / spacing))
        ks = np.arange(-K, K + 1)
        upper = (ks + 0.5) * spacing
        x_upper = _loss_to_sample(upper, p, s)
        cdf_p = _normal_cdf_pair(x_upper / s)
        cdf_1 = _normal_cdf_pair((x_upper - 1.0) / s)
        p_masses = _masses(cdf_p)
        q_masses = (1.0 - p) * p_masses + p * _masses(cdf_1)
        p_inf = float(cdf_p[1][-1])
        q_inf = float((1.0 - p) * cdf_p[1][-1] + p * cdf_1[1][-1])
        pld = cls(spacing, -K, np.clip(p_masses, 0, None), np.clip(q_masses, 0, None),
                  p_inf, q_inf)
        pld.check()
        return pld

    def check(self) -> None:
        for name, total, inf in (("P", self.total_mass[0], self.p_infinity),
                                 ("Q", self.total_mass[1], self.q_infinity)):
            if abs(total - 1.0) > _MASS_TOL:
                raise AccuracyError(
                    f"PLD mass under {name} is {total!r}; refine the loss grid spacing")
            if inf > _TAIL_TOL:
                raise AccuracyError(
                    f"PLD mass beyond the loss grid under {name} is {inf:.3g}; widen the grid")

    def compose(self, other: PrivacyLossDistribution,
                window: tuple[int, int] | None = None) -> PrivacyLossDistribution:
        """PLD of the two mechanisms run independently (loss adds up).

        Losses beyond the index ``window`` are folded: above it into the
        ``+inf`` atom, below it onto the lowest grid point.
        """
        if self.spacing != other.spacing:
            raise DomainError("cannot compose PLDs with different spacings")
        offset = self.offset + other.offset
        pm = np.clip(signal.fftconvolve(self.p_masses, other.p_masses), 0, None)
        qm = np.clip(signal.fftconvolve(self.q_masses, other.q_masses), 0, None)
        p_inf = 1.0 - (1.0 - self.p_infinity) * (1.0 - other.p_infinity)
        q_inf = 1.0 - (1.0 - self.q_infinity) * (1.0 - other.q_infinity)
        if window is not None:
            lo, hi = window
            start = max(lo - offset, 0)
            stop = min(hi - offset + 1, pm.size)
            if stop < pm.size:
                p_inf += pm[stop:].sum()
                q_inf += qm[stop:].sum()
            if start > 0:
                pm[start] += pm[:start].sum()
                qm[start] += qm[:start].sum()
            pm, qm = pm[start:stop], qm[start:stop]
            offset += start
        return PrivacyLossDistribution(self.spacing, offset, pm, qm, float(p_inf), float(q_inf))

    def self_compose(self, T: int) -> PrivacyLossDistribution:
        """T-fold composition by repeated squaring, kept on the starting window."""
        if T < 1:
            raise DomainError(f"T must be positive, got {T}")
        window = (self.offset, self.offset + self.p_masses.size - 1)
        result = None
        base = self
        while True:
            if T & 1:
                result = base if result is None else result.compose(base, window)
            T >>= 1
            if not T:
                break
            base = base.compose(base, window)
        result.check()
        return result

    def tradeoff_points(self) -> tuple[np.ndarray, np.ndarray]:
        """Error pairs of the threshold tests, from rejecting nothing to everything."""
        p_desc = np.concatenate([[self.p_infinity], self.p_masses[::-1]])
        q_desc = np.concatenate([[self.q_infinity], self.q_masses[::-1]])
        alphas = np.concatenate([[0.0], np.cumsum(p_desc), [1.0]])
        betas = 1.0 - np.concatenate([[0.0], np.cumsum(q_desc), [1.0]])
        order = np.argsort(alphas, kind="stable")
        return np.clip(alphas[order], 0.0, 1.0), np.clip(betas[order], 0.0, 1.0)

    def to_tradeoff(self, grid_size: int = DEFAULT_GRID_SIZE) -> TradeoffCurve:
        """Trade-off curve of randomized threshold tests on the loss statistic."""
        a, b = self.tradeoff_points()
        grid = uniform_grid(grid_size)
        return TradeoffCurve.from_values(grid, convex_minorant(a, b, grid))


def _loss_to_sample(loss: np.ndarray, p: float, s: float) -> np.ndarray:
    """Inverse of ``x -> log(1 - p + p exp((2x - 1) / (2 s^2)))``."""
    with np.errstate(divide="ignore", invalid="ignore"):
        # log(e^l - (1 - p)) - log p, with -inf where e^l <= 1 - p
        inner = loss + np.log1p(-(1.0 - p) * np.exp(-loss))
        inner = np.where(np.exp(loss) > 1.0 - p, inner, -np.inf)
        x = s * s * (inner - math.log(p)) + 0.5
    return x


def _normal_cdf_pair(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return special.ndtr(z), special.ndtr(-z)


def _masses(cdf_pair) -> np.ndarray:
    """Bin masses from CDF values at upper bin edges, using the tail that is accurate."""
    cdf, sf = cdf_pair
    lower_cdf = np.concatenate([[0.0], cdf[:-1]])
    lower_sf = np.concatenate([[1.0], sf[:-1]])
    return np.where(cdf <= 0.5, cdf - lower_cdf, lower_sf - sf)


def compose_exact(step: MechanismStep, T: int, grid_size: int = DEFAULT_GRID_SIZE,
                  spacing: float = PLD_SPACING, symmetric: bool = True) -> TradeoffCurve:
    """Numerical trade-off function of T rounds of ``step``.

    The composed PLD is converted to a curve and, with ``symmetric=True``,
    closed under both adjacency directions via ``min{f, f^{-1}}**``.
    """
    if T < 1:
        raise DomainError(f"T must be positive, got {T}")
    if step.sample_rate == 0:
        return identity_tradeoff(grid_size)
    pld = PrivacyLossDistribution.from_step(step, spacing).self_compose(T)
    curve = pld.to_tradeoff(grid_size)
    return symmetrize(curve) if symmetric else curve


class CltError(NamedTuple):
    T: int
    linf_err: float
    l2_err: float


def clt_convergence_table(T_values: Iterable[int], mu: float = 0.5016, sigma: float = 0.8441,
                          grid_size: int = DEFAULT_GRID_SIZE) -> list[CltError]:
    """Gap between the exact composition and its GDP limit for several T.

    For each T the sampling rate is set so that the CLT parameter equals
    ``mu``, i.e. ``p sqrt(T) = mu / sqrt(exp(1/sigma^2) - 1)``.
    """
    nu = mu / math.sqrt(math.expm1(sigma ** -2))
    limit = gaussian_tradeoff(mu, grid_size)
    rows = []
    for T in T_values:
        step = MechanismStep(nu / math.sqrt(T), sigma)
        exact = compose_exact(step, T, grid_size)
        rows.append(CltError(int(T), exact.sup_distance(limit), exact.l2_distance(limit)))
    return rows


# ---------------------------------------------------------------------------
# Closed-form noise


@dataclass(frozen=True)
class NoiseScales:
    """Noise injected by the release for a target mu.

    Attributes:
      sigma_x, sigma_y: Noise multipliers relative to the sensitivities.
      sigma_x_eff, sigma_y_eff: Per-coordinate standard deviations actually
        added to mixed features and labels, ``C * sigma / m``.
      lam: ``sigma_y / sigma_x``.
    """

    sigma_x: float
    sigma_y: float
    sigma_x_eff: float
    sigma_y_eff: float
    lam: float

    @property
    def sigma(self) -> float:
        return effective_sigma(self.sigma_x, self.sigma_y)


def calibrate_noise(n: int, m: int, T: int, mu: float, C_x: float = 1.0, C_y: float = 1.0,
                    lam: float = 1.0) -> NoiseScales:
    """Noise that makes the release asymptotically mu-GDP.

    Solves ``1/sigma_x^2 + 1/sigma_y^2 = ln(1 + mu^2 n^2 / (m^2 T))`` with
    ``sigma_y = lam * sigma_x``.
    """
    for name, val in (("n", n), ("m", m), ("T", T), ("mu", mu), ("C_x", C_x),
                      ("C_y", C_y), ("lam", lam)):
        if not val > 0:
            raise DomainError(f"{name} must be positive, got {val}")
    if m > n:
        raise DomainError(f"m={m} exceeds n={n}")
    log_term = math.log1p(mu * mu * n * n / (m * m * T))
    root = math.sqrt(lam * lam + 1.0)
    sigma_x = root / (lam * math.sqrt(log_term))
    sigma_y = lam * sigma_x
    return NoiseScales(sigma_x, sigma_y, C_x * sigma_x / m, C_y * sigma_y / m, float(lam))


# ---------------------------------------------------------------------------
# Renyi DP


@dataclass(frozen=True, eq=False)
class RdpCurve:
    orders: np.ndarray
    epsilons: np.ndarray

    def __post_init__(self):
        orders = np.asarray(self.orders, dtype=np.int64)
        eps = np.asarray(self.epsilons, dtype=np.float64)
        if orders.ndim != 1 or orders.shape != eps.shape:
            raise DomainError("orders and epsilons must be 1-d arrays of equal length")
        if orders.size and (orders[0] < 2 or np.any(np.diff(orders) <= 0)):
            raise DomainError("orders must be strictly increasing integers >= 2")
        object.__setattr__(self, "orders", orders)
        object.__setattr__(self, "epsilons", eps)


def rdp_epsilon(n: int, m: int, T: int, sigma_x: float, sigma_y: float = math.inf,
                orders: Sequence[int] = DEFAULT_ORDERS) -> RdpCurve:
    """RDP of T rounds of Poisson-subsampled Gaussian mixup at integer orders.

    Per order ``a`` and rate ``p = m/n`` the round contributes::

        1/(a-1) log{ (1-p)^(a-1) (a p - p + 1)
                     + sum_{l=2}^{a} C(a,l) (1-p)^(a-l) p^l exp((l-1) eps_M(l)) }

    with ``eps_M(l) = l/(2 sigma_x^2) + l/(2 sigma_y^2)``; the sum is taken in
    log space.
    """
    if not 0 <= m <= n:
        raise DomainError(f"need 0 <= m <= n, got m={m}, n={n}")
    orders = np.asarray(list(orders), dtype=np.int64)
    if orders.size and orders.min() < 2:
        raise DomainError("RDP orders must be >= 2")
    p = m / n
    c = 0.5 / sigma_x ** 2 + 0.5 / sigma_y ** 2
    if orders.size == 0:
        return RdpCurve(orders, np.empty(0))
    a = orders[:, None].astype(np.float64)
    ell = np.arange(2, orders.max() + 1, dtype=np.float64)[None, :]
    valid = ell <= a
    with np.errstate(invalid="ignore", divide="ignore"):
        log_terms = (special.gammaln(a + 1) - special.gammaln(ell + 1)
                     - special.gammaln(np.where(valid, a - ell, 0.0) + 1)
                     + special.xlogy(np.where(valid, a - ell, 0.0), 1.0 - p)
                     + special.xlogy(ell, p) + (ell - 1) * ell * c)
        log_terms = np.where(valid, log_terms, -np.inf)
        head = special.xlogy(a - 1, 1.0 - p) + np.log1p(p * (a - 1))
        total = special.logsumexp(np.concatenate([head, log_terms], axis=1), axis=1)
    eps = T * total / (orders - 1)
    bad = ~np.isfinite(eps)
    if bad.any():
        raise AccuracyError(f"RDP epsilon overflowed at order {int(orders[bad][0])}")
    eps = np.maximum(eps, 0.0)
    return RdpCurve(orders, eps)


class RdpGuarantee(NamedTuple):
    eps: float
    delta: float
    order: int


def rdp_to_epsdelta(curve: RdpCurve, delta: float) -> RdpGuarantee:
    """``min_a eps(a) + log(1/delta)/(a - 1)`` over the orders of ``curve``."""
    if curve.orders.size == 0:
        raise DomainError("RDP curve has no orders")
    if not 0.0 < delta < 1.0:
        raise DomainError(f"delta must lie strictly inside (0, 1), got {delta}")
    values = curve.epsilons + math.log(1.0 / delta) / (curve.orders - 1)
    i = int(np.argmin(values))
    return RdpGuarantee(float(values[i]), float(delta), int(curve.orders[i]))


# ---------------------------------------------------------------------------
# Accountant comparison


class NoiseRow(NamedTuple):
    m: int
    gdp_noise: float
    rdp_noise: float


def rdp_calibrate_sigma(n: int, m: int, T: int, eps: float, delta: float, lam: float = 1.0,
                        orders: Sequence[int] = DEFAULT_ORDERS, rtol: float = 1e-9,
                        max_iter: int = 200) -> float:
    """Smallest ``sigma_x`` (with ``sigma_y = lam sigma_x``) meeting (eps, delta) under RDP."""
    def eps_of(sx):
        return rdp_to_epsdelta(rdp_epsilon(n, m, T, sx, lam * sx, orders), delta).eps

    lo, hi = 1e-2, 1.0
    while eps_of(lo) <= eps:
        lo /= 2.0
        if lo < 1e-8:
            raise AccuracyError("RDP noise bisection failed to bracket from below")
    while eps_of(hi) > eps:
        lo, hi = hi, 2.0 * hi
        if hi > 1e12:
            raise AccuracyError("RDP noise bisection failed to bracket from above")
    for _ in range(max_iter):
        if hi - lo <= rtol * hi:
            return hi
        mid = math.sqrt(lo * hi)
        if eps_of(mid) > eps:
            lo = mid
        else:
            hi = mid
    raise AccuracyError(f"RDP noise bisection did not converge for m={m}")


def noise_vs_m_table(n: int, T: int, eps: float, delta: float, m_values: Iterable[int],
                     orders: Sequence[int] = DEFAULT_ORDERS, C: float = 1.0,
                     lam: float = 1.0) -> list[NoiseRow]:
    """Per-coordinate feature noise ``C sigma_x / m`` needed for (eps, delta), two accountants."""
    m_values = list(m_values)
    if not m_values:
        raise DomainError("m_values is empty")
    mu = epsdelta_to_mu(eps, delta)
    rows = []
    for m in m_values:
        if not 1 <= m <= n:
            raise DomainError(f"m={m} outside [1, {n}]")
        gdp = calibrate_noise(n, m, T, mu, C, C, lam).sigma_x_eff
        rdp = C * rdp_calibrate_sigma(n, m, T, eps, delta, lam, orders) / m
        rows.append(NoiseRow(int(m), gdp, rdp))
    return rows


def write_rows_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(float(v)) if isinstance(v, float) else v for v in row])
