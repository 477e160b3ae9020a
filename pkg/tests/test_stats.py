import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rabibath.stats import binning_analysis, block_size_for, jackknife


def ar1(rng, phi, n):
    x = np.empty(n)
    x[0] = rng.normal() / np.sqrt(1 - phi**2)
    noise = rng.normal(size=n)
    for i in range(1, n):
        x[i] = phi * x[i - 1] + noise[i]
    return x


def test_white_noise_error_and_tau():
    x = np.random.default_rng(0).normal(size=2**16)
    res = binning_analysis(x)
    assert res.error == pytest.approx(1 / np.sqrt(x.size), rel=0.15)
    assert res.tau_int == pytest.approx(0.5, abs=0.15)
    assert not res.low_confidence


def test_ar1_integrated_time():
    # tau_int = (1/2)(1 + phi)/(1 - phi) = 4.5 for phi = 0.8
    x = ar1(np.random.default_rng(1), 0.8, 2**17)
    res = binning_analysis(x)
    assert res.tau_int == pytest.approx(4.5, rel=0.25)
    assert res.error > 2.5 * res.naive_error


def test_short_correlated_series_is_flagged():
    x = ar1(np.random.default_rng(2), 0.995, 512)
    assert binning_analysis(x).low_confidence


def test_binning_needs_two_samples():
    with pytest.raises(ValueError):
        binning_analysis([1.0])


def test_block_size_bounds():
    assert block_size_for(0.5, 1000) == 2
    assert block_size_for(1e6, 1000) == 1000 // 32
    assert block_size_for(0.0, 10) == 1


def test_jackknife_mean_is_plain_mean():
    x = np.random.default_rng(3).normal(size=400)
    est, err = jackknife(lambda m: m, x)
    assert est == pytest.approx(x.mean(), abs=1e-12)
    assert err == pytest.approx(x.std(ddof=1) / np.sqrt(x.size), rel=1e-10)


def test_jackknife_removes_ratio_bias():
    # E[x^2] / E[x]^2 on exponential samples; the plug-in estimate has O(1/n) bias
    rng = np.random.default_rng(4)
    ests = []
    for _ in range(400):
        x = rng.exponential(size=20)
        data = np.stack([x, x**2], axis=1)
        ests.append(jackknife(lambda m: m[1] / m[0] ** 2, data)[0])
    assert np.mean(ests) == pytest.approx(2.0, abs=0.05)


def test_jackknife_needs_two_blocks():
    with pytest.raises(ValueError):
        jackknife(lambda m: m, np.ones(3), block_size=2)


@given(seed=st.integers(0, 10_000), shift=st.floats(-100, 100), scale=st.floats(0.1, 10))
@settings(max_examples=30, deadline=None)
def test_binning_affine_equivariance(seed, shift, scale):
    x = np.random.default_rng(seed).normal(size=1024)
    a, b = binning_analysis(x), binning_analysis(scale * x + shift)
    assert b.mean == pytest.approx(scale * a.mean + shift, abs=1e-9)
    assert b.error == pytest.approx(scale * a.error, rel=1e-9)
    assert b.tau_int == pytest.approx(a.tau_int, rel=1e-9)
