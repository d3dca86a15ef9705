"""Linear softmax classifier trained on a release, plus leakage metrics.

Released labels are noisy and may be negative; they are clipped at zero and
used as (unnormalized) targets of the generalized KL divergence

    D(p || q) = sum_i p_i log(p_i / q_i) - p_i + q_i

with ``q`` the softmax of the logits.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy import special, stats

from dpfmix.errors import DomainError, IngestionError, TrainingError
from dpfmix.io import load_matrix, save_matrix

Q_FLOOR = 1e-12


def _check_nonnegative(p: np.ndarray) -> None:
    if np.any(p < 0):
        raise DomainError("targets must be nonnegative; clip labels first")


def generalized_kl(p, q, axis: int = -1) -> np.ndarray | float:
    """Generalized KL divergence along ``axis`` (``0 log 0 = 0``)."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    _check_nonnegative(p)
    qf = np.maximum(q, Q_FLOOR)
    terms = special.xlogy(p, p) - special.xlogy(p, qf) - p + q
    out = terms.sum(axis=axis)
    return float(out) if np.ndim(out) == 0 else out


def clip_labels(ybar: np.ndarray) -> np.ndarray:
    return np.maximum(np.asarray(ybar, dtype=np.float64), 0.0)


@dataclass(frozen=True, eq=False)
class LinearModel:
    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64, ndmin=2)
        b = np.array(self.bias, dtype=np.float64).reshape(-1)
        if b.size != w.shape[0]:
            raise DomainError(f"bias has {b.size} entries for {w.shape[0]} classes")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise DomainError("model parameters must be finite")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)

    @classmethod
    def zeros(cls, k: int, p: int) -> LinearModel:
        return cls(np.zeros((k, p)), np.zeros(k))

    @property
    def k(self) -> int:
        return self.weights.shape[0]

    @property
    def p(self) -> int:
        return self.weights.shape[1]

    def logits(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=np.float64) @ self.weights.T + self.bias

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        return special.softmax(self.logits(x), axis=1)

    def predict(self, x: np.ndarray) -> np.ndarray:
        # np.argmax returns the first maximum, i.e. the lowest class index
        return np.argmax(self.logits(x), axis=1)


def loss_and_grad(W: np.ndarray, b: np.ndarray, x: np.ndarray, p: np.ndarray):
    """Mean generalized KL over a batch and its gradient in ``(W, b)``.

    With ``q = softmax(z)`` the gradient in the logits is ``q * sum(p) - p``.
    """
    z = x @ W.T + b
    q = special.softmax(z, axis=1)
    loss = float(np.mean(generalized_kl(p, q, axis=1)))
    gz = (q * p.sum(axis=1, keepdims=True) - p) / x.shape[0]
    return loss, gz.T @ x, gz.sum(axis=0)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 256
    lr: float = 1e-3
    decay_epochs: tuple = (80, 120, 160)
    decay_factor: float = 0.1
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        object.__setattr__(self, "decay_epochs", tuple(int(e) for e in self.decay_epochs))
        if self.epochs < 0 or self.batch_size < 1:
            raise DomainError("epochs must be >= 0 and batch_size >= 1")
        if self.lr < 0 or not 0 < self.decay_factor <= 1:
            raise DomainError("lr must be >= 0 and decay_factor in (0, 1]")

    def lr_at(self, epoch: int) -> float:
        drops = sum(1 for e in self.decay_epochs if epoch >= e)
        return self.lr * self.decay_factor ** drops


def train(features: np.ndarray, targets: np.ndarray, cfg: TrainConfig = TrainConfig(),
          init: LinearModel | None = None) -> LinearModel:
    """Adam on the mean generalized KL; returns the final-epoch model.

    ``targets`` must already be nonnegative (see :func:`clip_labels`).
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if y.ndim == 1:
        raise DomainError("targets must be an n x k matrix")
    _check_nonnegative(y)
    n = x.shape[0]
    if y.shape[0] != n or n == 0:
        raise DomainError(f"{n} feature rows but {y.shape[0]} target rows")
    if cfg.batch_size > n:
        raise DomainError(f"batch_size {cfg.batch_size} exceeds the dataset size {n}")
    model = init or LinearModel.zeros(y.shape[1], x.shape[1])
    W, b = model.weights.copy(), model.bias.copy()
    mW, vW = np.zeros_like(W), np.zeros_like(W)
    mb, vb = np.zeros_like(b), np.zeros_like(b)
    rng = np.random.default_rng(cfg.seed)
    step = 0
    for epoch in range(cfg.epochs):
        lr = cfg.lr_at(epoch)
        order = rng.permutation(n)
        for bi, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            loss, gW, gb = loss_and_grad(W, b, x[idx], y[idx])
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {bi}")
            step += 1
            c1 = 1 - cfg.beta1 ** step
            c2 = 1 - cfg.beta2 ** step
            for param, g, m_, v_ in ((W, gW, mW, vW), (b, gb, mb, vb)):
                m_ *= cfg.beta1
                m_ += (1 - cfg.beta1) * g
                v_ *= cfg.beta2
                v_ += (1 - cfg.beta2) * g * g
                param -= lr * (m_ / c1) / (np.sqrt(v_ / c2) + cfg.adam_eps)
        if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
            raise TrainingError(f"parameters became non-finite in epoch {epoch}")
    return LinearModel(W, b)


def evaluate(model: LinearModel, features: np.ndarray, hard_labels: np.ndarray) -> float:
    """Accuracy in percent."""
    labels = np.asarray(hard_labels).reshape(-1)
    if labels.size == 0:
        raise DomainError("no evaluation examples")
    return 100.0 * float(np.mean(model.predict(features) == labels))


def one_hot(labels: np.ndarray, k: int) -> np.ndarray:
    return np.eye(k)[np.asarray(labels, dtype=np.int64)]


def instance_losses(model: LinearModel, features: np.ndarray, hard_labels: np.ndarray) -> np.ndarray:
    """Generalized KL of each example against its clean one-hot label."""
    return generalized_kl(one_hot(hard_labels, model.k), model.predict_proba(features), axis=1)


def loss_auc(member_losses: np.ndarray, nonmember_losses: np.ndarray) -> float:
    """``P(nonmember loss > member loss)`` over all cross pairs, ties count 1/2."""
    a = np.asarray(member_losses, dtype=np.float64).reshape(-1)
    b = np.asarray(nonmember_losses, dtype=np.float64).reshape(-1)
    if a.size == 0 or b.size == 0:
        raise DomainError("member and nonmember sets must be nonempty")
    ranks = stats.rankdata(np.concatenate([a, b]))
    u = ranks[a.size:].sum() - b.size * (b.size + 1) / 2
    return float(u / (a.size * b.size))


class MembershipReport(NamedTuple):
    gap: float
    auc: float
    member_accuracy: float
    nonmember_accuracy: float


def membership_report(model: LinearModel, member_features, member_labels,
                      nonmember_features, nonmember_labels) -> MembershipReport:
    """Accuracy gap (percentage points) and loss-based AUC; labels are class indices."""
    member_labels = np.asarray(member_labels).reshape(-1)
    nonmember_labels = np.asarray(nonmember_labels).reshape(-1)
    if member_labels.size == 0 or nonmember_labels.size == 0:
        raise DomainError("member and nonmember sets must be nonempty")
    acc_in = evaluate(model, member_features, member_labels)
    acc_out = evaluate(model, nonmember_features, nonmember_labels)
    auc = loss_auc(instance_losses(model, member_features, member_labels),
                   instance_losses(model, nonmember_features, nonmember_labels))
    return MembershipReport(acc_in - acc_out, auc, acc_in, acc_out)


def gaussian_classes(n: int, p: int = 200, k: int = 10, separation: float = 0.6, seed=0):
    """Member and nonmember sets from one class-mean mixture on the unit sphere.

    Class means are ``N(0, separation^2 / p)`` per coordinate, examples add
    ``N(0, 1/p)`` noise and are scaled to unit norm. Returns
    ``((x_in, labels_in), (x_out, labels_out))`` with ``n`` rows each.
    """
    if n < 1 or p < 1 or k < 2 or separation < 0:
        raise DomainError("need n, p >= 1, k >= 2 and separation >= 0")
    rng = np.random.default_rng(seed)
    means = rng.standard_normal((k, p)) * separation / math.sqrt(p)

    def draw():
        labels = rng.integers(0, k, n)
        x = means[labels] + rng.standard_normal((n, p)) / math.sqrt(p)
        return x / np.linalg.norm(x, axis=1, keepdims=True), labels

    return draw(), draw()


def _sidecar(path: Path) -> Path:
    return path.with_name(path.name + ".json")


def save_model(model: LinearModel, path, cfg: TrainConfig | None = None) -> None:
    """Weights in the binary matrix format plus a JSON sidecar ``<path>.json``."""
    path = Path(path)
    save_matrix(path, model.weights)
    meta = {"k": model.k, "p": model.p, "bias": model.bias.tolist(),
            "config": asdict(cfg) if cfg is not None else None}
    _sidecar(path).write_text(json.dumps(meta, indent=2) + "\n")


def load_model(path) -> LinearModel:
    path = Path(path)
    W = load_matrix(path)
    try:
        meta = json.loads(_sidecar(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise IngestionError(f"{_sidecar(path)}: {exc}") from None
    if (meta.get("k"), meta.get("p")) != W.shape:
        raise IngestionError(f"{path}: sidecar shape {meta.get('k')}x{meta.get('p')} "
                             f"does not match weights {W.shape[0]}x{W.shape[1]}")
    return LinearModel(W, meta["bias"])
