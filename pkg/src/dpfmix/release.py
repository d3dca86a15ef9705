"""Private dataset release by Poisson-subsampled feature mixup.

Each released record averages a Poisson subsample of clipped rows (always
dividing by ``m``, never by the realized subset size) and adds Gaussian
noise calibrated by :func:`dpfmix.accountant.calibrate_noise`.

Randomness is drawn from counter-based Philox streams keyed by the master
seed, one stream per (record, purpose). Records can therefore be produced in
any order, or in parallel, with bit-identical output.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

import dpfmix
from dpfmix.accountant import calibrate_noise, clt_mu
from dpfmix.errors import ConfigError, DPFMixError, IngestionError
from dpfmix.io import FeatureDataset, load_dataset, load_matrix, save_dataset
from dpfmix.tradeoff import epsdelta_to_mu, mu_to_eps

SUBSAMPLE_STREAM = 0
NOISE_STREAM = 1

MANIFEST_KEYS = ("n", "m", "T", "C_x", "C_y", "lambda", "mu", "eps", "delta",
                 "sigma_x_eff", "sigma_y_eff", "seed", "extractor", "version")


def _philox_key(seed: int) -> np.ndarray:
    return np.random.SeedSequence(seed).generate_state(2, dtype=np.uint64)


def record_stream(seed: int, t: int, purpose: int, *, key: np.ndarray | None = None):
    """Random generator dedicated to record ``t`` and one purpose."""
    if key is None:
        key = _philox_key(seed)
    counter = np.array([0, 0, purpose, t], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


def poisson_sample(n: int, rate: float, rng: np.random.Generator) -> np.ndarray:
    """Indices of ``range(n)``, each kept independently with probability ``rate``.

    Gaps between kept indices are geometric, so the cost is proportional to
    the sample size rather than to ``n``.
    """
    if not 0.0 <= rate <= 1.0:
        raise ValueError(f"rate must lie in [0, 1], got {rate}")
    if rate == 0.0 or n == 0:
        return np.empty(0, dtype=np.int64)
    if rate == 1.0:
        return np.arange(n, dtype=np.int64)
    chunks = []
    last = -1
    batch = int(n * rate + 5 * math.sqrt(n * rate) + 16)
    while last < n:
        pos = last + np.cumsum(rng.geometric(rate, size=batch))
        chunks.append(pos)
        last = int(pos[-1])
    idx = np.concatenate(chunks)
    return idx[idx < n]


def clip_rows(v: np.ndarray, bound: float) -> np.ndarray:
    """Scales each row (or a single vector) into the L2 ball of radius ``bound``."""
    v = np.asarray(v, dtype=np.float64)
    norms = np.linalg.norm(v, axis=-1, keepdims=True)
    return v / np.maximum(1.0, norms / bound)


clip_row = clip_rows


@dataclass(frozen=True)
class ReleaseConfig:
    """Knobs of one release.

    The budget is either ``mu`` or ``eps`` (with ``delta``), never both.
    ``features_from`` names a precomputed feature matrix that replaces the
    dataset's own features row for row.
    """

    m: int
    T: int
    C_x: float = 1.0
    C_y: float = 1.0
    lam: float = 1.0
    mu: float | None = None
    eps: float | None = None
    delta: float = 1e-5
    seed: int = 0
    features_from: str | None = None

    def __post_init__(self):
        if not (isinstance(self.m, (int, np.integer)) and self.m >= 1):
            raise ConfigError(f"m must be a positive integer, got {self.m}")
        if not (isinstance(self.T, (int, np.integer)) and self.T >= 1):
            raise ConfigError(f"T must be a positive integer, got {self.T}")
        for name in ("C_x", "C_y", "lam"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        if self.mu is not None and self.eps is not None:
            raise ConfigError("give either mu or (eps, delta), not both")

    @property
    def extractor(self) -> str:
        return "identity" if self.features_from is None else f"precomputed:{self.features_from}"

    def resolve_mu(self) -> float:
        if self.mu is not None:
            if not (self.mu > 0 and math.isfinite(self.mu)):
                raise ConfigError(f"budget must be positive, got mu={self.mu}")
            return float(self.mu)
        if self.eps is None:
            raise ConfigError("no privacy budget: set mu or eps")
        if not self.eps > 0 or not 0 < self.delta < 1:
            raise ConfigError(f"budget must be positive, got eps={self.eps}, delta={self.delta}")
        try:
            return epsdelta_to_mu(self.eps, self.delta)
        except DPFMixError as exc:
            raise ConfigError(f"cannot resolve (eps, delta) budget: {exc}") from exc


@dataclass(frozen=True, eq=False)
class ReleasedDataset:
    features: np.ndarray
    labels: np.ndarray
    manifest: dict = field(default_factory=dict)

    def as_dataset(self) -> FeatureDataset:
        return FeatureDataset(self.features, self.labels)


def resolve_features(data: FeatureDataset, cfg: ReleaseConfig) -> np.ndarray:
    if cfg.features_from is None:
        return data.features
    feats = load_matrix(cfg.features_from)
    if feats.shape[0] != data.n:
        raise IngestionError(
            f"{cfg.features_from}: {feats.shape[0]} feature rows for a dataset of {data.n}")
    return feats


def build_manifest(n: int, cfg: ReleaseConfig) -> dict:
    mu = cfg.resolve_mu()
    if cfg.m > n:
        raise ConfigError(f"m={cfg.m} exceeds the dataset size n={n}")
    scales = calibrate_noise(n, cfg.m, cfg.T, mu, cfg.C_x, cfg.C_y, cfg.lam)
    eps = cfg.eps if cfg.eps is not None else mu_to_eps(mu, cfg.delta)
    return {
        "n": int(n), "m": int(cfg.m), "T": int(cfg.T), "C_x": float(cfg.C_x),
        "C_y": float(cfg.C_y), "lambda": float(cfg.lam), "mu": mu, "eps": float(eps),
        "delta": float(cfg.delta), "sigma_x_eff": scales.sigma_x_eff,
        "sigma_y_eff": scales.sigma_y_eff, "seed": int(cfg.seed),
        "extractor": cfg.extractor, "version": dpfmix.__version__,
    }


def release(data: FeatureDataset, cfg: ReleaseConfig, *, add_noise: bool = True,
            workers: int = 1) -> ReleasedDataset:
    """Generates T private records from ``data``.

    Args:
      data: Source dataset (features replaced when ``cfg.features_from`` is set).
      cfg: Release configuration.
      add_noise: Only for testing. ``False`` skips the Gaussian noise but
        draws the same subsamples, exposing the pre-noise mixup.
      workers: Threads used to fill records; output does not depend on it.
    """
    features = resolve_features(data, cfg)
    manifest = build_manifest(data.n, cfg)
    if not add_noise:
        manifest["noise_disabled"] = True
    x = clip_rows(features, cfg.C_x)
    y = clip_rows(data.labels, cfg.C_y)
    n, m, T = data.n, cfg.m, cfg.T
    out_x = np.empty((T, x.shape[1]))
    out_y = np.empty((T, y.shape[1]))
    key = _philox_key(cfg.seed)
    sx, sy = manifest["sigma_x_eff"], manifest["sigma_y_eff"]

    def fill(ts):
        for t in ts:
            idx = poisson_sample(n, m / n, record_stream(cfg.seed, t, SUBSAMPLE_STREAM, key=key))
            out_x[t] = x[idx].sum(axis=0) / m
            out_y[t] = y[idx].sum(axis=0) / m
            if add_noise:
                rng = record_stream(cfg.seed, t, NOISE_STREAM, key=key)
                out_x[t] += sx * rng.standard_normal(x.shape[1])
                out_y[t] += sy * rng.standard_normal(y.shape[1])

    if workers <= 1:
        fill(range(T))
    else:
        with ThreadPoolExecutor(workers) as pool:
            list(pool.map(fill, np.array_split(np.arange(T), workers)))
    return ReleasedDataset(out_x, out_y, manifest)


def verify_manifest(manifest: dict, rtol: float = 1e-10) -> bool:
    """Checks that the recorded noise reproduces the recorded mu."""
    n, m, T = manifest["n"], manifest["m"], manifest["T"]
    scales = calibrate_noise(n, m, T, manifest["mu"], manifest["C_x"], manifest["C_y"],
                             manifest["lambda"])
    sigma_x = manifest["sigma_x_eff"] * m / manifest["C_x"]
    sigma_y = manifest["sigma_y_eff"] * m / manifest["C_y"]
    ok_noise = (math.isclose(scales.sigma_x_eff, manifest["sigma_x_eff"], rel_tol=rtol)
                and math.isclose(scales.sigma_y_eff, manifest["sigma_y_eff"], rel_tol=rtol))
    mu_back = clt_mu(n, m, T, sigma_x, sigma_y)
    return ok_noise and math.isclose(mu_back, manifest["mu"], rel_tol=rtol)


def manifest_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".manifest.json")


def store_released(rel: ReleasedDataset, path, format: str | None = None) -> None:
    """Writes the records to ``path`` and the manifest next to it."""
    save_dataset(rel.as_dataset(), path, format)
    with open(manifest_path(path), "w") as fh:
        json.dump(rel.manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_released(path, format: str | None = None) -> ReleasedDataset:
    data = load_dataset(path, format)
    mpath = manifest_path(path)
    manifest = {}
    if mpath.exists():
        try:
            manifest = json.loads(mpath.read_text())
        except json.JSONDecodeError as exc:
            raise IngestionError(f"{mpath}: {exc}") from None
    return ReleasedDataset(data.features, data.labels, manifest)
