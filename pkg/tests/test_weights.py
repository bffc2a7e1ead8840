import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate
from scipy.stats import norm

from bigge.weights import (
    SoftplusNormalParams,
    WeightStandardizer,
    inverse_softplus,
    log_density,
    log_density_p,
    sample,
    softplus,
)


def test_density_at_ln2():
    assert log_density_p(math.log(2), SoftplusNormalParams(0.0, 0.0)) == pytest.approx(-0.225791, abs=1e-6)


def test_density_at_softplus_one():
    w = math.log1p(math.e)
    assert w == pytest.approx(1.313262, abs=1e-6)
    assert float(log_density(w, 0.0, 0.0)) == pytest.approx(-1.105677, abs=1e-6)


@pytest.mark.parametrize("mu", [-2.0, 0.0, 3.0])
@pytest.mark.parametrize("sigma", [0.5, 1.0, 2.0])
def test_density_integrates_to_one(mu, sigma):
    lv = 2 * math.log(sigma)

    def f(w):
        return math.exp(float(log_density(w, mu, lv)))

    # split at the bulk so quad resolves the peak near softplus(mu) and the log tail near 0
    peak = float(softplus(mu))
    pieces = [(0.0, 1e-12), (1e-12, peak), (peak, peak + 20 * sigma + 20), (peak + 20 * sigma + 20, np.inf)]
    total = sum(integrate.quad(f, a, b, limit=500, epsabs=1e-12, epsrel=1e-12)[0] for a, b in pieces)
    assert abs(total - 1.0) < 1e-6


@settings(max_examples=200, deadline=None)
@given(st.floats(1e-8, 50.0), st.floats(-5, 5), st.floats(-4, 4))
def test_jacobian_identity(w, mu, lv):
    eps = inverse_softplus(w)
    diff = float(log_density(w, mu, lv)) - norm.logpdf(eps, mu, math.exp(0.5 * lv))
    assert diff == pytest.approx(w - eps, rel=1e-9, abs=1e-9)


def test_extreme_weights_finite():
    for w in (1e-300, 1e-12, 1e-7, 30.0, 100.0, 700.0):
        assert math.isfinite(float(log_density(w, 0.0, 0.0)))


def test_nonpositive_weight_rejected():
    for bad in (0.0, -1.0):
        with pytest.raises(ValueError):
            log_density(bad, 0.0, 0.0)
        with pytest.raises(ValueError):
            inverse_softplus(bad)


def test_torch_density_matches_numpy_and_has_gradients():
    w = np.array([0.1, 1.0, 4.0])
    mu = torch.tensor([0.2, -0.3, 1.0], dtype=torch.float64, requires_grad=True)
    lv = torch.tensor([0.0, 0.5, -1.0], dtype=torch.float64, requires_grad=True)
    t = log_density(w, mu, lv)
    n = log_density(w, mu.detach().numpy(), lv.detach().numpy())
    assert np.allclose(t.detach().numpy(), n, atol=1e-14)
    t.sum().backward()
    eps = inverse_softplus(w)
    assert np.allclose(mu.grad.numpy(), (eps - mu.detach().numpy()) * np.exp(-lv.detach().numpy()))


def test_score_has_zero_mean():
    rng = np.random.default_rng(7)
    mu0, lv0 = 0.4, math.log(0.8)
    w = sample(mu0, lv0, rng, size=100_000)
    mu = torch.tensor(mu0, dtype=torch.float64, requires_grad=True)
    lv = torch.tensor(lv0, dtype=torch.float64, requires_grad=True)
    # per-draw scores in closed form for the standard-error bound
    eps = inverse_softplus(w)
    s_mu = (eps - mu0) / math.exp(lv0)
    s_lv = -0.5 + 0.5 * (eps - mu0) ** 2 / math.exp(lv0)
    for s in (s_mu, s_lv):
        se = s.std(ddof=1) / math.sqrt(s.size)
        assert abs(s.mean()) < 3 * se
    lp = log_density(w, mu, lv)
    g_mu, g_lv = torch.autograd.grad(lp.sum(), (mu, lv))
    assert float(g_mu) / w.size == pytest.approx(s_mu.mean(), abs=1e-12)
    assert float(g_lv) / w.size == pytest.approx(s_lv.mean(), abs=1e-12)


def test_degenerate_sample():
    rng = np.random.default_rng(0)
    w = sample(1.3, -60.0, rng, size=100)
    assert np.allclose(w, float(softplus(1.3)), atol=1e-9)


def test_sample_back_transform_moments():
    rng = np.random.default_rng(1)
    z = inverse_softplus(sample(0.0, 0.0, rng, size=100_000))
    assert abs(z.mean()) < 0.02 and abs(z.std() - 1.0) < 0.02


def test_samples_positive():
    rng = np.random.default_rng(2)
    assert np.all(sample(-5.0, 2.0, rng, size=1_000_000) > 0)


def test_inverse_softplus_examples():
    assert inverse_softplus(math.log(2)) == pytest.approx(0.0, abs=1e-15)
    assert inverse_softplus(float(softplus(5.0))) == pytest.approx(5.0, abs=1e-12)
    assert inverse_softplus(1e-8) == pytest.approx(-18.4207, abs=1e-4)


@settings(max_examples=300, deadline=None)
@given(st.floats(1e-8, 50.0))
def test_softplus_inverse_roundtrip(w):
    assert float(softplus(inverse_softplus(w))) == pytest.approx(w, rel=1e-12)


def test_standardizer_examples():
    s = WeightStandardizer(10.0, 2.0)
    assert s.standardize(12.0) == 1.0
    assert s.standardize(10.0) == 0.0
    with pytest.raises(ValueError):
        WeightStandardizer(0.0, 0.0)


@settings(max_examples=200, deadline=None)
@given(st.floats(-1e3, 1e3), st.floats(-10, 10), st.floats(1e-3, 10))
def test_standardizer_roundtrip(w, mean, sd):
    s = WeightStandardizer(mean, sd)
    assert s.destandardize(s.standardize(w)) == pytest.approx(w, rel=1e-12, abs=1e-12)


def test_standardizer_fit():
    s = WeightStandardizer.fit(np.array([1.0, 3.0]))
    assert (s.mean, s.sd) == (2.0, 1.0)
    assert WeightStandardizer.fit(np.array([5.0])).sd == 1.0
