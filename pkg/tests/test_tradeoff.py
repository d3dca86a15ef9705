import math

import mpmath
import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from dpfmix.errors import AccuracyError, DomainError, IngestionError
from dpfmix.tradeoff import (
    TradeoffCurve,
    curve_to_epsdelta,
    epsdelta_to_mu,
    gaussian_tradeoff,
    identity_tradeoff,
    invert,
    lower_convex_hull,
    mu_to_eps,
    mu_to_epsdelta,
    subsample_mixture,
    symmetrize,
    symmetrize_once,
)

mpmath.mp.dps = 50
SMALL = 2001


def mp_phi(x):
    return mpmath.erfc(-mpmath.mpf(x) / mpmath.sqrt(2)) / 2


def mp_delta(mu, eps):
    mu, eps = mpmath.mpf(mu), mpmath.mpf(eps)
    return mp_phi(-eps / mu + mu / 2) - mpmath.exp(eps) * mp_phi(-eps / mu - mu / 2)


def brute_force_minorant(x, y):
    """Quadratic-time greatest convex minorant: min over chords spanning each point."""
    n = len(x)
    out = y.copy()
    for k in range(n):
        best = y[k]
        for i in range(k + 1):
            for j in range(k, n):
                if x[j] == x[i]:
                    continue
                t = (x[k] - x[i]) / (x[j] - x[i])
                best = min(best, (1 - t) * y[i] + t * y[j])
        out[k] = best
    return out


# --- curve construction -------------------------------------------------------

def test_curve_rejects_non_convex():
    a = np.linspace(0, 1, 5)
    with pytest.raises(DomainError):
        TradeoffCurve(a, np.array([1.0, 0.5, 0.45, 0.1, 0.0]))


def test_curve_rejects_above_identity():
    a = np.linspace(0, 1, 3)
    with pytest.raises(DomainError):
        TradeoffCurve(a, np.array([1.0, 0.6, 0.0]))


def test_curve_rejects_bad_grid():
    with pytest.raises(DomainError):
        TradeoffCurve(np.array([0.0, 0.7, 0.5, 1.0]), np.zeros(4))


def test_curve_arrays_are_frozen():
    f = identity_tradeoff(11)
    with pytest.raises(ValueError):
        f.betas[0] = 0.5


def test_csv_round_trip(tmp_path):
    f = gaussian_tradeoff(0.7, 101)
    path = tmp_path / "curve.csv"
    f.to_csv(path)
    assert path.read_text().splitlines()[0] == "alpha,beta"
    g = TradeoffCurve.from_csv(path)
    np.testing.assert_array_equal(f.betas, g.betas)


def test_csv_bad_header(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("a,b\n0,1\n")
    with pytest.raises(IngestionError):
        TradeoffCurve.from_csv(path)


# --- gaussian_tradeoff ------------------------------------------------------------

def test_gaussian_mu_zero_is_identity():
    assert gaussian_tradeoff(0.0, 11)(0.3) == pytest.approx(0.7, abs=1e-15)


def test_gaussian_mu_one_at_half():
    assert gaussian_tradeoff(1.0, 11)(0.5) == pytest.approx(0.158655253931457, abs=1e-12)


def test_gaussian_against_high_precision():
    f = gaussian_tradeoff(0.5016)
    alpha = 0.05
    i = int(round(alpha * (f.grid_size - 1)))
    assert f.alphas[i] == pytest.approx(alpha, abs=1e-15)
    z = -mpmath.sqrt(2) * mpmath.erfinv(2 * mpmath.mpf(alpha) - 1)
    expected = mp_phi(-(-z) - mpmath.mpf("0.5016"))
    assert abs(f.betas[i] - float(expected)) < 1e-9


def test_gaussian_negative_mu():
    with pytest.raises(DomainError):
        gaussian_tradeoff(-0.1)


def test_gaussian_grid_too_small():
    with pytest.raises(DomainError):
        gaussian_tradeoff(1.0, 2)


@given(st.floats(0, 5), st.floats(0, 5))
@settings(max_examples=30, deadline=None)
def test_gaussian_ordering(mu1, mu2):
    lo, hi = sorted((mu1, mu2))
    assert np.all(gaussian_tradeoff(lo, SMALL).betas >= gaussian_tradeoff(hi, SMALL).betas - 1e-15)


# --- subsample_mixture -----------------------------------------------------------

def test_mixture_p_zero_is_identity():
    f = subsample_mixture(gaussian_tradeoff(2.0, SMALL), 0.0)
    np.testing.assert_allclose(f.betas, 1 - f.alphas, atol=1e-15)


def test_mixture_p_one_unchanged():
    g = gaussian_tradeoff(2.0, SMALL)
    np.testing.assert_allclose(subsample_mixture(g, 1.0).betas, g.betas, atol=1e-15)


def test_mixture_value():
    f = subsample_mixture(gaussian_tradeoff(1.0, 11), 0.5)
    assert f(0.5) == pytest.approx(0.5 * 0.158655253931457 + 0.25, abs=1e-12)


@pytest.mark.parametrize("p", [-0.1, 1.5])
def test_mixture_bad_p(p):
    with pytest.raises(DomainError):
        subsample_mixture(identity_tradeoff(11), p)


# --- invert ----------------------------------------------------------------------

def test_invert_identity():
    f = identity_tradeoff(SMALL)
    np.testing.assert_allclose(invert(f).betas, f.betas, atol=1e-12)


@pytest.mark.parametrize("mu", [0.3, 1.0, 3.0])
def test_invert_gaussian_is_self_inverse(mu):
    g = gaussian_tradeoff(mu)
    assert invert(g).sup_distance(g) < 2e-4


def test_invert_round_trip_on_mixture():
    f = subsample_mixture(gaussian_tradeoff(2.0), 0.5)
    inv = invert(f)
    idx = np.linspace(1000, 99000, 100).astype(int)
    back = inv(f.betas[idx])
    assert np.max(np.abs(back - f.alphas[idx])) < 2e-3


@given(st.floats(0.1, 4.0), st.floats(0.0, 1.0))
@settings(max_examples=20, deadline=None)
def test_invert_involution(mu, p):
    f = subsample_mixture(gaussian_tradeoff(mu, SMALL), p)
    assert invert(invert(f)).sup_distance(f) <= 2 / SMALL + 1e-12


# --- symmetrize ------------------------------------------------------------------

def test_symmetrize_fixed_points():
    g = gaussian_tradeoff(1.0)
    assert symmetrize(g).sup_distance(g) < 2e-4
    f = identity_tradeoff(SMALL)
    assert symmetrize(f).sup_distance(f) < 1e-12


def test_symmetrize_matches_brute_force_hull():
    f = subsample_mixture(gaussian_tradeoff(2.0, 201), 0.3)
    h = np.minimum(f.betas, invert(f).betas)
    expected = brute_force_minorant(f.alphas, h)
    np.testing.assert_allclose(symmetrize_once(f).betas, expected, atol=1e-9)
    # further passes only remove the grid re-sampling asymmetry
    full = symmetrize(f)
    assert np.all(full.betas <= expected + 1e-12)
    assert np.max(expected - full.betas) < 1e-5


def test_symmetrize_below_min():
    f = subsample_mixture(gaussian_tradeoff(2.0, SMALL), 0.3)
    s = symmetrize(f)
    assert np.all(s.betas <= np.minimum(f.betas, invert(f).betas) + 1e-12)


@given(st.floats(0.1, 5.0), st.floats(0.0, 1.0))
@settings(max_examples=20, deadline=None)
def test_symmetrize_idempotent(mu, p):
    s = symmetrize(subsample_mixture(gaussian_tradeoff(mu, SMALL), p))
    assert symmetrize(s).sup_distance(s) <= 1e-12


def test_lower_hull_simple():
    x = np.array([0.0, 1.0, 2.0, 3.0])
    y = np.array([0.0, -1.0, 5.0, 0.0])
    assert lower_convex_hull(x, y).tolist() == [0, 1, 3]


# --- (eps, delta) ------------------------------------------------------------------

def test_curve_to_epsdelta_identity():
    assert curve_to_epsdelta(identity_tradeoff(11), 0.0).delta == 0.0


def test_curve_to_epsdelta_typical_setting():
    d = curve_to_epsdelta(gaussian_tradeoff(0.5016), 2.0).delta
    assert d == pytest.approx(1e-5, rel=0.05)
    assert d == pytest.approx(mu_to_epsdelta(0.5016, 2.0).delta, rel=0.05)


def test_curve_to_epsdelta_matches_closed_form():
    d = curve_to_epsdelta(gaussian_tradeoff(1.0), 1.0).delta
    assert d == pytest.approx(float(mp_delta(1, 1)), abs=1e-4)


@given(st.floats(0.05, 5.0), st.floats(0.0, 5.0))
@settings(max_examples=20, deadline=None)
def test_grid_and_closed_form_duality_agree(mu, eps):
    grid = 10_001
    # the maximizing type I error must be visible at this grid spacing
    assume(float(mp_phi(-eps / mu - mu / 2)) >= 1 / (grid - 1))
    d_grid = curve_to_epsdelta(gaussian_tradeoff(mu, grid), eps).delta
    assert abs(d_grid - mu_to_epsdelta(mu, eps).delta) <= 2 / grid


def test_duality_blind_below_grid_spacing():
    # maximizer at alpha ~ 2e-5 sits between the first two grid points
    assert curve_to_epsdelta(gaussian_tradeoff(1.125, 10_001), 4.0).delta == 0.0
    assert mu_to_epsdelta(1.125, 4.0).delta > 3e-4


def test_mu_to_epsdelta_typical():
    assert mu_to_epsdelta(0.5016, 2.0).delta == pytest.approx(1.0e-5, rel=0.02)


def test_mu_to_epsdelta_eps_zero():
    assert mu_to_epsdelta(1.0, 0.0).delta == pytest.approx(0.382924922548026, abs=1e-13)


def test_mu_to_epsdelta_limits():
    assert mu_to_epsdelta(0.0, 1.0).delta == 0.0
    assert mu_to_epsdelta(1e-3, 1.0).delta < 1e-100


@pytest.mark.parametrize("mu,eps", [(0.5016, 2.0), (1.0, 1.0), (0.1, 3.0), (3.0, 0.5), (0.05, 0.9)])
def test_mu_to_epsdelta_high_precision(mu, eps):
    expected = float(mp_delta(mu, eps))
    assert mu_to_epsdelta(mu, eps).delta == pytest.approx(expected, rel=1e-11)


@given(st.floats(0.05, 5.0), st.floats(0, 4), st.floats(0.01, 2))
@settings(max_examples=30, deadline=None)
def test_mu_to_epsdelta_nonincreasing_in_eps(mu, eps, step):
    assert mu_to_epsdelta(mu, eps + step).delta <= mu_to_epsdelta(mu, eps).delta


def test_epsdelta_to_mu_typical():
    assert epsdelta_to_mu(2.0, 1e-5) == pytest.approx(0.5016, abs=5e-5)


def test_epsdelta_to_mu_round_trip_from_mu():
    d = mu_to_epsdelta(3.0, 1.0).delta
    assert epsdelta_to_mu(1.0, d) == pytest.approx(3.0, abs=1e-9)


def test_epsdelta_to_mu_residual():
    mu = epsdelta_to_mu(1.0, 1e-5)
    assert float(abs(mp_delta(mu, 1.0) - mpmath.mpf("1e-5")) / mpmath.mpf("1e-5")) < 1e-10


@pytest.mark.parametrize("delta", [0.0, 1.0, -1e-3])
def test_epsdelta_to_mu_bad_delta(delta):
    with pytest.raises(DomainError):
        epsdelta_to_mu(1.0, delta)


def test_epsdelta_to_mu_unbracketed():
    with pytest.raises(AccuracyError):
        epsdelta_to_mu(1.0, 1e-5, hi=0.01)


def test_mu_to_eps_inverts_delta():
    eps = mu_to_eps(0.5016, 1e-5)
    assert eps == pytest.approx(2.0, abs=1e-3)
    assert mu_to_epsdelta(0.5016, eps).delta <= 1e-5 * (1 + 1e-12)


def test_mu_to_eps_zero_when_private_enough():
    assert mu_to_eps(1e-8, 0.5) == 0.0
    assert math.isfinite(mu_to_eps(5.0, 1e-10))
