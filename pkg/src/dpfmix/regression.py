"""Least squares on mixed-and-noised regression data.

The laboratory draws a Gaussian design ``X`` with AR(1) covariance, forms
``X~ = M X + E_X`` and ``y~ = M y + E_Y`` with a Poisson mixup matrix ``M``
(entries ``Bernoulli(m/n) / m``) and calibrated Gaussian noise, and tracks
how the least-squares error depends on the mixup degree ``m``.

Sweeps never materialize ``X~``. The estimator only needs the Gram matrix of
``[X~, y~]``, which is accumulated chunk by chunk for every mixup degree of
the grid at once from shared random numbers.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy import sparse, stats

from dpfmix import _kernels
from dpfmix.accountant import calibrate_noise
from dpfmix.errors import AccuracyError, DomainError, SingularSystemError

log = logging.getLogger(__name__)

MAX_CONDITION = 1e12
_CHUNK_ROWS = 16_384


def ar1_covariance(p: int, decay: float) -> np.ndarray:
    idx = np.arange(p)
    return decay ** np.abs(idx[:, None] - idx[None, :]).astype(np.float64)


@dataclass(frozen=True, eq=False)
class RegressionInstance:
    """A realized linear model ``y = X beta* + noise``.

    ``lambda_min`` and ``lambda_max`` are the extreme eigenvalues of the
    realized ``X^T X / n``.
    """

    X: np.ndarray
    beta_star: np.ndarray
    y: np.ndarray
    sigma_noise: float
    cov_decay: float
    lambda_min: float
    lambda_max: float

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def covariance(self) -> np.ndarray:
        return ar1_covariance(self.p, self.cov_decay)


def generate_instance(n: int, p: int = 100, cov_decay: float = 0.3, sigma_noise: float = 1.0,
                      seed=None) -> RegressionInstance:
    """Rows of X ~ N(0, Sigma) with ``Sigma_ij = cov_decay^|i-j|``; beta* ~ N(0, I)."""
    if n < 1 or p < 1:
        raise DomainError(f"n and p must be positive, got n={n}, p={p}")
    if not 0.0 <= cov_decay < 1.0:
        raise DomainError(f"cov_decay must lie in [0, 1), got {cov_decay}")
    if not sigma_noise >= 0:
        raise DomainError(f"sigma_noise must be non-negative, got {sigma_noise}")
    rng = np.random.default_rng(seed)
    try:
        factor = np.linalg.cholesky(ar1_covariance(p, cov_decay))
    except np.linalg.LinAlgError as exc:
        raise AccuracyError("AR(1) covariance is not positive definite") from exc
    X = rng.standard_normal((n, p)) @ factor.T
    beta = rng.standard_normal(p)
    y = X @ beta + sigma_noise * rng.standard_normal(n)
    evals = np.linalg.eigvalsh(X.T @ X / n)
    return RegressionInstance(X, beta, y, float(sigma_noise), float(cov_decay),
                              float(evals[0]), float(evals[-1]))


@dataclass(frozen=True)
class MixupMatrixSpec:
    T: int
    n: int
    m: int

    def __post_init__(self):
        if min(self.T, self.n, self.m) < 1:
            raise DomainError(f"T, n and m must be positive, got {self}")
        if self.m > self.n:
            raise DomainError(f"m={self.m} exceeds n={self.n}")

    @property
    def rate(self) -> float:
        return self.m / self.n


def _dense_rows(n: int, rate: float, rows: int, rng: np.random.Generator):
    mask = rng.random((rows, n)) < rate
    indptr = np.concatenate([[0], np.cumsum(mask.sum(axis=1))])
    return indptr.astype(np.int64), np.nonzero(mask)[1].astype(np.int32)


def _rejection_rows(n: int, rate: float, rows: int, rng: np.random.Generator):
    """Binomial row sizes, then a uniform subset per row by redrawing collided rows."""
    counts = rng.binomial(n, rate, size=rows)
    indptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    cols = rng.integers(0, n, size=int(indptr[-1]), dtype=np.int32)
    stamp = np.full(n, -1, dtype=np.int64)
    base = 0
    todo = np.arange(rows, dtype=np.int64)
    while todo.size:
        bad = _kernels.rows_with_duplicates(cols, indptr, todo, stamp, base)
        base += todo.size
        todo = todo[bad]
        for r in todo:
            cols[indptr[r]:indptr[r + 1]] = rng.integers(0, n, size=counts[r], dtype=np.int32)
    return indptr, cols


def sample_mixup_rows(n: int, rate: float, rows: int, rng: np.random.Generator):
    """CSR pattern (indptr, cols) of ``rows`` independent Bernoulli(rate) rows of length n."""
    if rate <= 0.0:
        return np.zeros(rows + 1, dtype=np.int64), np.empty(0, dtype=np.int32)
    if rate >= 1.0:
        indptr = np.arange(rows + 1, dtype=np.int64) * n
        return indptr, np.tile(np.arange(n, dtype=np.int32), rows)
    if (n * rate) ** 2 < 2.0 * n:
        return _rejection_rows(n, rate, rows, rng)
    return _dense_rows(n, rate, rows, rng)


def mixup_matrix(spec: MixupMatrixSpec, rng: np.random.Generator) -> sparse.csr_matrix:
    """The T x n mixup matrix with i.i.d. entries ``Bernoulli(m/n) / m``."""
    indptr, cols = sample_mixup_rows(spec.n, spec.rate, spec.T, rng)
    data = np.full(cols.size, 1.0 / spec.m)
    return sparse.csr_matrix((data, cols, indptr), shape=(spec.T, spec.n))


def noise_stds(spec: MixupMatrixSpec, mu: float, C_x: float, C_y: float,
               lam: float = 1.0) -> tuple[float, float]:
    """Per-entry std of E_X and E_Y for the given budget (zero for ``mu = inf``)."""
    if math.isinf(mu):
        return 0.0, 0.0
    scales = calibrate_noise(spec.n, spec.m, spec.T, mu, C_x, C_y, lam)
    return scales.sigma_x_eff, scales.sigma_y_eff


# Above this rate a chunk of the mixup matrix is drawn as a dense block of
# uniforms rather than by sampling row supports.
_DENSE_RATE = 1.0 / 16


class _Chunk(NamedTuple):
    """Shared randomness for a block of mixup rows.

    Entry (t, i) of the mixup matrix at degree m is on iff ``U[t, i] < m/n``.
    Only entries with ``U < rate_max`` are listed (CSR ``indptr``/``cols``),
    with their uniforms ``u``. ``G`` is the standard normal base of the
    noise rows.
    """

    indptr: np.ndarray
    cols: np.ndarray
    u: np.ndarray
    G: np.ndarray


def _draw_chunks(n: int, rate_max: float, T: int, q: int, rng: np.random.Generator,
                 chunk: int = _CHUNK_ROWS):
    dense = rate_max > _DENSE_RATE
    if dense:
        chunk = max(1, min(chunk, (1 << 22) // n))
    for start in range(0, T, chunk):
        rows = min(chunk, T - start)
        if dense:
            U = rng.random((rows, n))
            mask = U < rate_max
            indptr = np.concatenate([[0], np.cumsum(mask.sum(axis=1))]).astype(np.int64)
            cols = np.nonzero(mask)[1].astype(np.int32)
            u = U[mask]
        else:
            indptr, cols = sample_mixup_rows(n, rate_max, rows, rng)
            u = rng.random(cols.size) * rate_max
        yield _Chunk(indptr, cols, u, rng.standard_normal((rows, q)))


def _mix_chunk(Z: np.ndarray, ch: _Chunk, m: int, n: int) -> np.ndarray:
    """Rows of ``M Z`` for this chunk at mixup degree m."""
    out = np.empty((ch.G.shape[0], Z.shape[1]))
    _kernels.gather_means_below(Z, ch.cols, ch.u, ch.indptr, m / n, 1.0 / m, out)
    return out


def _stack(inst: RegressionInstance) -> np.ndarray:
    return np.ascontiguousarray(np.column_stack([inst.X, inst.y]), dtype=np.float64)


def _check_consistent(inst: RegressionInstance, n: int) -> None:
    if n != inst.n:
        raise DomainError(f"spec has n={n} but the instance has {inst.n} rows")


def mix_and_perturb(inst: RegressionInstance, spec: MixupMatrixSpec, mu: float,
                    C_x: float = 14.0, C_y: float = 36.0, lam: float = 1.0, seed=None):
    """Returns ``(M X + E_X, M y + E_Y)`` as dense arrays.

    ``mu = inf`` switches the noise off. Draws the same random numbers as
    :func:`perturbed_gram`, so with equal seeds the two agree exactly.
    """
    _check_consistent(inst, spec.n)
    rng = np.random.default_rng(seed)
    Z = _stack(inst)
    sx, sy = noise_stds(spec, mu, C_x, C_y, lam)
    D = np.r_[np.full(inst.p, sx), sy]
    rows = [_mix_chunk(Z, ch, spec.m, spec.n) + ch.G * D
            for ch in _draw_chunks(spec.n, spec.rate, spec.T, Z.shape[1], rng)]
    out = np.concatenate(rows)
    return out[:, :-1], out[:, -1]


class GramParts(NamedTuple):
    """Noise-free pieces of the Gram matrix of ``[X~, y~]`` per mixup degree.

    With ``A = M [X, y]`` and noise ``G D``::

        [X~, y~]^T [X~, y~] = A^T A + A^T G D + D G^T A + D G^T G D
    """

    m_values: tuple
    AtA: np.ndarray
    AtG: np.ndarray
    GtG: np.ndarray

    def gram(self, j: int, stds: np.ndarray) -> np.ndarray:
        D = np.asarray(stds, dtype=np.float64)
        cross = self.AtG[j] * D[None, :]
        return self.AtA[j] + cross + cross.T + self.GtG * (D[:, None] * D[None, :])


def coupled_gram_parts(Z: np.ndarray, n: int, T: int, m_values, rng: np.random.Generator,
                       chunk: int = _CHUNK_ROWS) -> GramParts:
    """Gram pieces for several mixup degrees from one set of random numbers.

    The mixup matrices are nested (a larger m switches on a superset of
    entries) and all degrees share the noise base G. Each degree on its own
    has exactly the distribution of an independent draw.

    Write ``S_k`` for the unnormalized ``M Z`` at the k-th degree and
    ``Delta_k = S_k - S_{k-1}``. Then ``S_k^T S_k - S_{k-1}^T S_{k-1} =
    R_k + R_k^T`` with ``R_k = Delta_k^T (S_{k-1} + S_k) / 2``, and ``R_k``
    is ``Z^T Y_k`` for a scatter-add ``Y_k`` over the entries switched on
    at step k. The cost is one pass over the nonzeros plus one n x q x q
    product per degree, instead of one T x q x q product per degree.
    """
    m_values = tuple(sorted(int(m) for m in m_values))
    if not m_values or m_values[0] < 1 or m_values[-1] > n:
        raise DomainError(f"mixup degrees must lie in [1, {n}]")
    q = Z.shape[1]
    K = len(m_values)
    thresholds = np.array(m_values, dtype=np.float64) / n
    GtG = np.zeros((q, q))
    Y = np.zeros((K, n, q))
    YG = np.zeros((K, n, q))
    for ch in _draw_chunks(n, thresholds[-1], T, q, rng, chunk):
        GtG += ch.G.T @ ch.G
        bucket = np.searchsorted(thresholds, ch.u, side="right").astype(np.int32)
        _kernels.scatter_rows(Z, ch.G, ch.indptr, ch.cols, bucket, Y, YG)
    R = Z.T @ Y
    RG = Z.T @ YG
    scale = np.array(m_values, dtype=np.float64)[:, None, None]
    AtA = np.cumsum(R + R.transpose(0, 2, 1), axis=0) / scale ** 2
    AtG = np.cumsum(RG, axis=0) / scale
    return GramParts(m_values, AtA, AtG, GtG)


def perturbed_gram(inst: RegressionInstance, spec: MixupMatrixSpec, mu: float,
                   C_x: float = 14.0, C_y: float = 36.0, lam: float = 1.0,
                   seed=None) -> np.ndarray:
    """Gram matrix of ``[X~, y~]`` without forming the T x (p+1) matrix."""
    _check_consistent(inst, spec.n)
    rng = np.random.default_rng(seed)
    parts = coupled_gram_parts(_stack(inst), spec.n, spec.T, [spec.m], rng)
    sx, sy = noise_stds(spec, mu, C_x, C_y, lam)
    return parts.gram(0, np.r_[np.full(inst.p, sx), sy])


def _check_condition(evals: np.ndarray) -> None:
    if evals[0] <= 0 or evals[-1] / evals[0] > MAX_CONDITION:
        cond = math.inf if evals[0] <= 0 else evals[-1] / evals[0]
        raise SingularSystemError(f"normal equations are singular (condition number {cond:.3g})")


def _check_residual(diff: np.ndarray, rhs: np.ndarray) -> None:
    resid = np.linalg.norm(diff)
    if resid > 1e-8 * max(np.linalg.norm(rhs), np.finfo(float).tiny):
        raise AccuracyError(f"normal-equation residual {resid:.3g} exceeds tolerance")


def least_squares(Xt: np.ndarray, yt: np.ndarray) -> np.ndarray:
    """``[Xt^T Xt]^{-1} Xt^T yt`` via an SVD of ``Xt``.

    Raises SingularSystemError when ``cond(Xt^T Xt)`` exceeds 1e12.
    """
    Xt = np.asarray(Xt, dtype=np.float64)
    yt = np.asarray(yt, dtype=np.float64)
    U, s, Vt = np.linalg.svd(Xt, full_matrices=False)
    _check_condition(np.sort(s) ** 2)
    beta = Vt.T @ ((U.T @ yt) / s)
    rhs = Xt.T @ yt
    _check_residual(Xt.T @ (Xt @ beta) - rhs, rhs)
    return beta


def solve_gram(gram: np.ndarray) -> np.ndarray:
    """Least-squares solution from the Gram matrix of ``[Xt, yt]``."""
    p = gram.shape[0] - 1
    A, b = gram[:p, :p], gram[:p, p]
    evals, vecs = np.linalg.eigh(A)
    _check_condition(evals)
    beta = vecs @ ((vecs.T @ b) / evals)
    _check_residual(A @ beta - b, b)
    return beta


def bound_terms(inst: RegressionInstance, n: int, m: int, T: int, mu: float,
                C_x: float = 14.0, C_y: float = 36.0, lam: float = 1.0) -> tuple[float, float]:
    """The two summands of the high-probability bound on ``||beta~ - beta*||``.

    The first collects mixup and privacy noise and depends on m; the second
    is the regression-noise floor.
    """
    a = n / T
    if not 0 < m < n:
        raise DomainError(f"the bound needs 0 < m < n, got m={m}, n={n}")
    if not a < 1:
        raise DomainError(f"the bound needs n/T < 1, got n/T={a}")
    root = math.sqrt(lam * lam + 1.0)
    cx, cy = C_x * root / lam, C_y * root
    ra = math.sqrt(a)
    lead = (2 * cx * np.linalg.norm(inst.beta_star) + 2 * cy) / (
        math.sqrt(inst.lambda_min) * (1 - ra))
    first = lead / math.sqrt(m * (n - m) / n * math.log1p(mu * mu * n * n / (m * m * T)))
    second = (2 * inst.sigma_noise * math.sqrt(inst.p) * math.log(n) / math.sqrt(n)
              * (1 + ra) * math.sqrt(inst.lambda_max) / ((1 - ra) * math.sqrt(inst.lambda_min)))
    return float(first), float(second)


def bound_rhs(inst: RegressionInstance, n: int, m: int, T: int, mu: float,
              C_x: float = 14.0, C_y: float = 36.0, lam: float = 1.0) -> float:
    return sum(bound_terms(inst, n, m, T, mu, C_x, C_y, lam))


def bound_argmin(inst: RegressionInstance, n: int, T: int, mu: float, m_grid: Sequence[int],
                 C_x: float = 14.0, C_y: float = 36.0, lam: float = 1.0) -> int:
    """Grid point minimizing :func:`bound_rhs` (smallest m on ties)."""
    values = [bound_rhs(inst, n, m, T, mu, C_x, C_y, lam) for m in m_grid]
    return int(m_grid[int(np.argmin(values))])


def power_of_two_grid(n: int) -> list[int]:
    """1, 2, 4, ... up to n/2."""
    return [2 ** k for k in range(int(math.log2(max(n // 2, 1))) + 1)]


def geometric_grid(upper: float, per_octave: int = 4, lower: int = 1) -> list[int]:
    """Distinct integers ``round(2^(k / per_octave))`` in ``[lower, upper]``."""
    top = int(math.floor(per_octave * math.log2(max(upper, 1)))) + 1
    values = {int(round(2 ** (k / per_octave))) for k in range(top)}
    return sorted(v for v in values if lower <= v <= upper)


def sweep_T(n: int, gamma: float) -> int:
    return int(round(2 * n ** gamma))


def fine_grid(n: int, gamma: float, per_octave: int = 4, reach: float = 4.0) -> list[int]:
    """Geometric grid up to ``reach * n / sqrt(T)`` (capped at n/2).

    The error minimum sits near ``n / sqrt(T)``, so this grid brackets it
    with a quarter-octave resolution instead of the coarse powers of two.
    """
    return geometric_grid(min(n // 2, reach * n / math.sqrt(sweep_T(n, gamma))), per_octave)


@dataclass(frozen=True, eq=False)
class SweepResult:
    """Mean and spread of ``||beta~ - beta*||`` per mixup degree."""

    m_values: np.ndarray
    mean_err: np.ndarray
    std_err: np.ndarray
    m_star: int
    gamma: float
    n: int
    T: int
    errors: np.ndarray = field(repr=False)
    excluded: tuple = ()

    def rows(self):
        return list(zip(self.m_values.tolist(), self.mean_err.tolist(), self.std_err.tolist()))


def sweep_m(n: int, gamma: float, mu: float = 2.0, repeats: int = 20,
            m_grid: Sequence[int] | None = None, seed: int = 0, p: int = 100,
            C_x: float = 14.0, C_y: float = 36.0, lam: float = 1.0, cov_decay: float = 0.3,
            sigma_noise: float = 1.0) -> SweepResult:
    """Estimator error over a grid of mixup degrees with ``T = round(2 n^gamma)``.

    Every repeat draws a fresh instance, mixup randomness and noise. Within
    a repeat all grid points share them (nested mixup matrices, common noise
    base), which leaves each point's distribution unchanged but makes the
    error curve smooth in m, so its argmin is far less noisy.
    """
    if not 1.0 <= gamma < 2.0:
        raise DomainError(f"gamma must lie in [1, 2), got {gamma}")
    if repeats < 1:
        raise DomainError("repeats must be positive")
    T = sweep_T(n, gamma)
    grid = sorted(set(power_of_two_grid(n) if m_grid is None else m_grid))
    if not grid or grid[0] < 1 or grid[-1] > n - 1:
        raise DomainError(f"m_grid must be a non-empty subset of [1, {n - 1}]")
    errors = np.full((repeats, len(grid)), np.nan)
    for r in range(repeats):
        inst = generate_instance(n, p, cov_decay, sigma_noise, seed=[seed, n, r])
        rng = np.random.default_rng([seed, n, r, 1])
        parts = coupled_gram_parts(_stack(inst), n, T, grid, rng)
        for j, m in enumerate(grid):
            sx, sy = noise_stds(MixupMatrixSpec(T, n, m), mu, C_x, C_y, lam)
            try:
                beta = solve_gram(parts.gram(j, np.r_[np.full(p, sx), sy]))
            except SingularSystemError as exc:
                log.warning("n=%d m=%d repeat %d skipped: %s", n, m, r, exc)
                continue
            errors[r, j] = np.linalg.norm(beta - inst.beta_star)
    ok = ~np.all(np.isnan(errors), axis=0)
    excluded = tuple(int(m) for m, good in zip(grid, ok) if not good)
    for m in excluded:
        log.warning("n=%d: every repeat singular at m=%d, excluded", n, m)
    if not ok.any():
        raise SingularSystemError(f"n={n}: no grid point produced a solvable system")
    errors = errors[:, ok]
    m_values = np.asarray(grid)[ok]
    mean = np.nanmean(errors, axis=0)
    counts = np.sum(~np.isnan(errors), axis=0)
    std = np.where(counts > 1, np.nanstd(errors, axis=0, ddof=min(1, repeats - 1)), 0.0)
    m_star = int(m_values[int(np.argmin(mean))])
    return SweepResult(m_values, mean, std, m_star, float(gamma), int(n), T, errors, excluded)


class SlopeFit(NamedTuple):
    slope: float
    intercept: float
    r2: float


def fit_slope(points: Sequence[tuple[float, float]]) -> SlopeFit:
    """Ordinary least-squares line through ``(log2 n, log2 m*)`` points."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] < 3 or pts.shape[1] != 2:
        raise DomainError("need at least 3 (x, y) points for a slope fit")
    if np.ptp(pts[:, 0]) == 0:
        raise DomainError("x values are all equal")
    res = stats.linregress(pts[:, 0], pts[:, 1])
    r2 = 1.0 if np.ptp(pts[:, 1]) == 0 else float(res.rvalue ** 2)
    return SlopeFit(float(res.slope), float(res.intercept), r2)
