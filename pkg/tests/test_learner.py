import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import special

from dpfmix import learner as L
from dpfmix.errors import DomainError, IngestionError, TrainingError


def test_gkl_examples():
    assert L.generalized_kl([0.3, 0.7], [0.3, 0.7]) == 0.0
    assert abs(L.generalized_kl([1.0, 0.0], [0.5, 0.5]) - math.log(2)) <= 1e-12
    assert L.generalized_kl([0.0, 0.0], [0.5, 0.5]) == pytest.approx(1.0, abs=1e-15)


def test_gkl_rejects_negative_targets():
    with pytest.raises(DomainError):
        L.generalized_kl([-0.1, 1.1], [0.5, 0.5])


def test_gkl_rowwise():
    p = np.array([[1.0, 0.0], [0.3, 0.7]])
    q = np.array([[0.5, 0.5], [0.3, 0.7]])
    assert np.allclose(L.generalized_kl(p, q, axis=1), [math.log(2), 0.0], atol=1e-15)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0.0, 10.0), min_size=2, max_size=8),
       st.lists(st.floats(1e-3, 10.0), min_size=2, max_size=8))
def test_gkl_nonnegative_on_equal_mass(p, q):
    k = min(len(p), len(q))
    p = np.array(p[:k])
    q = np.array(q[:k])
    if p.sum() == 0:
        return
    q = q / q.sum() * p.sum()
    assert L.generalized_kl(p, q) >= -1e-12
    assert L.generalized_kl(p, p) == pytest.approx(0.0, abs=1e-12)


def test_clip_labels():
    assert L.clip_labels([0.9, -0.1, 0.2]).tolist() == [0.9, 0.0, 0.2]
    row = np.array([[0.1, 0.5, 0.4]])
    assert np.array_equal(L.clip_labels(row), row)
    y = np.random.default_rng(0).standard_normal((30, 5))
    assert np.array_equal(L.clip_labels(y), y * (y > 0))


def _fd_grad(W, b, x, p, h=1e-5):
    gW = np.zeros_like(W)
    gb = np.zeros_like(b)
    for arr, out in ((W, gW), (b, gb)):
        for idx in np.ndindex(arr.shape):
            keep = arr[idx]
            arr[idx] = keep + h
            up = L.loss_and_grad(W, b, x, p)[0]
            arr[idx] = keep - h
            down = L.loss_and_grad(W, b, x, p)[0]
            arr[idx] = keep
            out[idx] = (up - down) / (2 * h)
    return gW, gb


def _max_rel(a, b):
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(a)), 1e-12))


def test_gradient_finite_differences_toy_batch():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((5, 4))
    p = L.clip_labels(rng.standard_normal((5, 3)) + 0.3)
    W = rng.standard_normal((3, 4))
    b = rng.standard_normal(3)
    _, gW, gb = L.loss_and_grad(W, b, x, p)
    fW, fb = _fd_grad(W, b, x, p)
    assert _max_rel(gW, fW) <= 1e-5
    assert _max_rel(gb, fb) <= 1e-5


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), n=st.integers(1, 8), p=st.integers(1, 6),
       k=st.integers(2, 5))
def test_gradient_finite_differences_random(seed, n, p, k):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, p))
    y = L.clip_labels(rng.standard_normal((n, k)))
    W = rng.standard_normal((k, p))
    b = rng.standard_normal(k)
    _, gW, gb = L.loss_and_grad(W, b, x, y)
    fW, fb = _fd_grad(W, b, x, y)
    scale = max(np.max(np.abs(gW)), np.max(np.abs(gb)), 1e-3)
    assert np.max(np.abs(gW - fW)) <= 1e-5 * scale
    assert np.max(np.abs(gb - fb)) <= 1e-5 * scale


def test_loss_matches_definition():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((6, 3))
    y = L.clip_labels(rng.standard_normal((6, 4)))
    W = rng.standard_normal((4, 3))
    b = rng.standard_normal(4)
    q = special.softmax(x @ W.T + b, axis=1)
    ref = np.mean([sum(pi * math.log(pi / qi) - pi + qi if pi > 0 else qi for pi, qi in zip(pr, qr))
                   for pr, qr in zip(y, q)])
    assert L.loss_and_grad(W, b, x, y)[0] == pytest.approx(ref, rel=1e-13)


def _separable(n=200, seed=3):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, 2))
    labels = (x[:, 0] + 0.5 * x[:, 1] > 0).astype(int)
    x[labels == 1, 0] += 0.5
    x[labels == 0, 0] -= 0.5
    return x, labels


def test_train_separable_reaches_full_accuracy():
    x, labels = _separable()
    cfg = L.TrainConfig(epochs=50, batch_size=20, lr=0.1, decay_epochs=())
    model = L.train(x, L.one_hot(labels, 2), cfg)
    assert L.evaluate(model, x, labels) == 100.0


def test_zero_learning_rate_keeps_init():
    x, labels = _separable()
    init = L.LinearModel(np.ones((2, 2)), np.array([0.5, -0.5]))
    model = L.train(x, L.one_hot(labels, 2), L.TrainConfig(epochs=3, batch_size=50, lr=0.0), init)
    assert np.array_equal(model.weights, init.weights) and np.array_equal(model.bias, init.bias)


def test_train_deterministic():
    x, labels = _separable()
    cfg = L.TrainConfig(epochs=5, batch_size=32, lr=0.01, seed=4)
    a = L.train(x, L.one_hot(labels, 2), cfg)
    b = L.train(x, L.one_hot(labels, 2), cfg)
    assert np.array_equal(a.weights, b.weights) and np.array_equal(a.bias, b.bias)


def test_train_errors():
    x, labels = _separable(n=10)
    y = L.one_hot(labels, 2)
    with pytest.raises(DomainError):
        L.train(x, y, L.TrainConfig(batch_size=11))
    with pytest.raises(DomainError):
        L.train(x, -y, L.TrainConfig(batch_size=5))
    bad = x.copy()
    bad[3, 0] = np.inf
    with pytest.raises(TrainingError, match="epoch 0, batch"), np.errstate(invalid="ignore"):
        L.train(bad, y, L.TrainConfig(epochs=2, batch_size=10))


def test_lr_schedule():
    cfg = L.TrainConfig()
    assert cfg.lr_at(0) == 1e-3
    assert cfg.lr_at(80) == pytest.approx(1e-4)
    assert cfg.lr_at(199) == pytest.approx(1e-6)


def test_evaluate_constant_and_perfect():
    labels = np.repeat(np.arange(10), 10)
    x = np.eye(10)[labels]
    const = L.LinearModel(np.zeros((10, 10)), np.eye(10)[3])
    assert L.evaluate(const, x, labels) == pytest.approx(10.0)
    perfect = L.LinearModel(np.eye(10), np.zeros(10))
    assert L.evaluate(perfect, x, labels) == 100.0


def test_evaluate_hand_confusion():
    W = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, -1.0]])
    model = L.LinearModel(W, np.zeros(3))
    x = np.array([[2.0, 1.0], [0.0, 3.0], [-1.0, -2.0], [1.0, 1.0], [-3.0, 0.5]])
    # logits: (2,1,-3) (0,3,-3) (-1,-2,3) (1,1,-2) (-3,0.5,2.5)
    assert model.predict(x).tolist() == [0, 1, 2, 0, 2]
    assert L.evaluate(model, x, [0, 1, 2, 1, 1]) == pytest.approx(60.0)


def test_predict_ties_lowest_index():
    model = L.LinearModel.zeros(4, 3)
    assert model.predict(np.ones((2, 3))).tolist() == [0, 0]


def test_model_validation():
    with pytest.raises(DomainError):
        L.LinearModel(np.zeros((2, 3)), np.zeros(3))
    with pytest.raises(DomainError):
        L.LinearModel(np.full((2, 3), np.nan), np.zeros(2))


def test_auc_pair_enumeration():
    assert L.loss_auc([0.1, 0.2], [0.3, 0.15]) == 0.75


def test_auc_mirrored_is_half():
    a = np.random.default_rng(5).exponential(size=50)
    assert L.loss_auc(a, a.copy()) == 0.5


def test_auc_ties_count_half():
    assert L.loss_auc([1.0, 2.0], [1.0, 3.0]) == pytest.approx((0.5 + 1 + 0 + 1) / 4)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 400), min_size=1, max_size=20),
       st.lists(st.integers(0, 400), min_size=1, max_size=20))
def test_auc_monotone_invariance(a, b):
    # a coarse grid keeps exp and the affine map strictly monotone in floating point
    a = np.array(a) / 8
    b = np.array(b) / 8
    brute = np.mean([(y > x) + 0.5 * (y == x) for x in a for y in b])
    auc = L.loss_auc(a, b)
    assert auc == pytest.approx(brute, abs=1e-12)
    assert L.loss_auc(np.exp(a / 10), np.exp(b / 10)) == pytest.approx(auc, abs=1e-12)
    assert L.loss_auc(3 * a + 7, 3 * b + 7) == pytest.approx(auc, abs=1e-12)


def test_auc_empty():
    with pytest.raises(DomainError):
        L.loss_auc([], [1.0])


def test_membership_memorizing_model():
    # members sit exactly on strong class directions, nonmembers are ambiguous
    model = L.LinearModel(40 * np.eye(3), np.zeros(3))
    members = np.eye(3)
    nonmembers = np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]])
    rep = L.membership_report(model, members, [0, 1, 2], nonmembers, [1, 2, 2])
    assert rep.auc == 1.0
    assert rep.gap > 0
    assert rep.member_accuracy == 100.0
    with pytest.raises(DomainError):
        L.membership_report(model, members, [0, 1, 2], np.zeros((0, 3)), [])


def test_instance_losses_use_clean_labels():
    model = L.LinearModel(np.zeros((2, 2)), np.zeros(2))
    losses = L.instance_losses(model, np.ones((3, 2)), [0, 1, 0])
    assert np.allclose(losses, math.log(2), atol=1e-15)


def test_model_round_trip(tmp_path):
    model = L.LinearModel(np.random.default_rng(6).standard_normal((3, 5)), [0.1, -0.2, 0.3])
    L.save_model(model, tmp_path / "w.bin", L.TrainConfig(epochs=7))
    meta = json.loads((tmp_path / "w.bin.json").read_text())
    assert meta["k"] == 3 and meta["p"] == 5 and meta["config"]["epochs"] == 7
    back = L.load_model(tmp_path / "w.bin")
    assert np.array_equal(back.weights, model.weights) and np.array_equal(back.bias, model.bias)
    meta["k"] = 4
    (tmp_path / "w.bin.json").write_text(json.dumps(meta))
    with pytest.raises(IngestionError):
        L.load_model(tmp_path / "w.bin")
    with pytest.raises(IngestionError):
        L.load_model(tmp_path / "missing.bin")
