import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import dblquad

from rabibath.ed import exact_thermal_two_spin, local_operator, qubits_oscillator_hamiltonian, thermal_expectations
from rabibath.model import ModelParams
from rabibath.wlmc import (
    EffectiveKernel,
    Segment,
    SegmentDomainError,
    WlmcConfig,
    Worldline,
    WorldlineConfig,
    WorldlineError,
    attach_couplings,
    bond_probabilities,
    dress,
    effective_kernel,
    histogram_modes,
    insert_potential_flips,
    kernel_direct,
    measure,
    merge_estimates,
    metropolis_segment_flip,
    pair_integrals,
    run,
    segment_interaction,
)

PARAMS = ModelParams(g=0.4)


@pytest.fixture(scope="module")
def kernel20():
    return effective_kernel(20.0, PARAMS)


# -- kernel ----------------------------------------------------------------------------

def test_zero_coupling_gives_zero_kernel():
    k = effective_kernel(10.0, ModelParams(g=0.0))
    assert np.all(k(np.linspace(0, 10, 7)) == 0)


def test_kernel_symmetric_and_positive(kernel20):
    tau = np.random.default_rng(0).uniform(0, 20, 200)
    assert np.max(np.abs(kernel20(tau) - kernel20(20 - tau)) / kernel20(tau)) < 1e-8
    assert np.all(kernel20(np.linspace(0, 20, 401)) > 0)


def test_table_matches_direct_integral(kernel20):
    tau = np.array([1e-3, 0.05, 0.7, 3.0, 10.0])
    assert np.allclose(kernel20(tau), kernel_direct(tau, 20.0, PARAMS), rtol=1e-8)


def test_inverse_square_tail():
    k = effective_kernel(2000.0, PARAMS)
    for tau in (20.0, 40.0, 80.0):
        assert k(2 * tau) / k(tau) == pytest.approx(0.25, rel=0.05)


def test_single_oscillator_limit_closed_form():
    beta, g = 7.0, 0.3
    k = effective_kernel(beta, ModelParams(g=g, alpha=0.0))
    tau = np.linspace(0, beta, 9)
    ref = g * g * np.cosh(beta / 2 - tau) / np.sinh(beta / 2)
    assert np.allclose(k(tau), ref, rtol=1e-12)


# -- segment integrals -------------------------------------------------------------------

def test_zero_length_segment():
    k = EffectiveKernel.constant(5.0, 2.0)
    assert segment_interaction(Segment(1.0, 1.0, 1), Segment(0.0, 2.0, 1, 1), k) == 0.0


@given(a=st.floats(0, 5), la=st.floats(0, 5), b=st.floats(0, 5), lb=st.floats(0, 5),
       sa=st.sampled_from([-1, 1]), sb=st.sampled_from([-1, 1]))
@settings(max_examples=50)
def test_constant_kernel_factorizes(a, la, b, lb, sa, sb):
    k = EffectiveKernel.constant(5.0, 0.7)
    val = segment_interaction(Segment(a, a + la, sa, 0), Segment(b, b + lb, sb, 1), k)
    assert val == pytest.approx(0.7 * la * lb * sa * sb, rel=1e-12, abs=1e-12)


def test_random_segments_vs_2d_quadrature(kernel20):
    rng = np.random.default_rng(1)
    for _ in range(4):
        a1, b1 = rng.uniform(0, 20, 2)
        a2, b2 = a1 + rng.uniform(0.1, 8), b1 + rng.uniform(0.1, 8)
        got = segment_interaction(Segment(a1, a2, 1, 0), Segment(b1, b2, -1, 1), kernel20)
        ref, _ = dblquad(lambda y, x: kernel20(x - y), a1, a2, b1, b2, epsabs=1e-12, epsrel=1e-10)
        assert got == pytest.approx(-ref, rel=1e-6)


def test_self_pair_and_bad_segments_rejected(kernel20):
    s = Segment(1.0, 2.0, 1, 0)
    with pytest.raises(SegmentDomainError):
        segment_interaction(s, s, kernel20)
    with pytest.raises(SegmentDomainError):
        segment_interaction(Segment(0.0, 25.0, 1, 0), Segment(1.0, 2.0, 1, 1), kernel20)


def test_pair_matrix_full_period_rows_sum_to_static_weight():
    k = EffectiveKernel.discrete(6.0, [1.0, 2.5], [0.2, 0.1])
    cuts = np.array([0.0, 1.0, 2.5, 4.0])
    start, end = cuts, np.concatenate([cuts[1:], [6.0]])
    m = pair_integrals(k, start, end)
    # sum over all pairs covers the full square: beta * beta * mean
    assert m.sum() == pytest.approx(6.0 * 6.0 * k.mean, rel=1e-12)


# -- worldlines and Poisson dressing -------------------------------------------------------

def test_measure_examples():
    up = measure(WorldlineConfig.aligned(10.0, (1, 1)))
    assert (up.m, up.overlap, up.kinks) == (1.0, 1.0, (0, 0))
    anti = measure(WorldlineConfig.aligned(10.0, (1, -1)))
    assert anti.m == 0.0 and anti.overlap == -1.0
    line = Worldline(8.0, 1, [2.0, 6.0])
    assert line.integral() == 0.0


def test_worldline_validation():
    with pytest.raises(WorldlineError):
        Worldline(5.0, 1, [1.0])
    with pytest.raises(WorldlineError):
        Worldline(5.0, 1, [2.0, 1.0])
    with pytest.raises(WorldlineError):
        Worldline(5.0, 0)


def test_no_marks_without_transverse_field():
    rng = np.random.default_rng(2)
    d = insert_potential_flips(Worldline(50.0, 1, [3.0, 9.0]), rng, delta=0.0)
    assert np.array_equal(d.cuts, [3.0, 9.0])


def test_poisson_mark_count():
    rng = np.random.default_rng(3)
    line = Worldline(100.0, 1)
    counts = np.array([insert_potential_flips(line, rng).cuts.size for _ in range(100_000)])
    sigma = math.sqrt(50.0 / counts.size)
    assert abs(counts.mean() - 50.0) < 3 * sigma
    assert counts.var() == pytest.approx(50.0, rel=0.03)


@given(seed=st.integers(0, 10_000))
@settings(max_examples=30, deadline=None)
def test_dress_then_strip_is_identity(seed):
    rng = np.random.default_rng(seed)
    cfg = WorldlineConfig((Worldline(10.0, 1, np.sort(rng.uniform(0, 10, 4))), Worldline(10.0, -1)))
    back = dress(cfg, rng).strip()
    for a, b in zip(cfg.lines, back.lines):
        assert np.allclose(a.flips, b.flips) and a.integral() == pytest.approx(b.integral())


# -- moves ----------------------------------------------------------------------------------

def test_strong_ferromagnetic_coupling_locks_overlapping_segments():
    rng = np.random.default_rng(4)
    d = dress(WorldlineConfig.aligned(4.0), rng)
    attach_couplings(d, EffectiveKernel.zero(4.0), -1e4)
    p = bond_probabilities(d, -1e4)
    cross = (d.line[:, None] != d.line[None, :]) & (d.overlap > 1e-3)
    assert np.all(p[cross] > 1 - 1e-6)
    same = d.line[:, None] == d.line[None, :]
    assert np.all(p[same] == 0)


def test_metropolis_accepts_zero_action_change():
    rng = np.random.default_rng(5)
    d = dress(WorldlineConfig.aligned(4.0), rng)
    attach_couplings(d, EffectiveKernel.zero(4.0), 0.0)
    _, acc = metropolis_segment_flip(d, EffectiveKernel.zero(4.0), 0.0, rng)
    assert acc == d.n_segments


# -- estimators against exact oracles --------------------------------------------------------

def z(est, name, exact):
    return abs(est.value(name) - exact) / est.error(name)


@pytest.mark.parametrize("beta", [1.0, 2.0, 4.0])
def test_free_spin_transverse_magnetization(beta):
    est = run(WlmcConfig(beta=beta, g=0.0, j_coupling=0.0, n_therm=100, n_sweeps=4000, n_tau=8,
                         n_corr_blocks=16, seed=11))
    assert z(est, "sx_mean", math.tanh(beta / 2)) < 4


def test_two_spin_thermal_oracle():
    beta = 2.0
    est = run(WlmcConfig(beta=beta, g=0.0, j_coupling=-10.0, n_therm=100, n_sweeps=4000, n_tau=8,
                         n_corr_blocks=16, seed=12))
    exact = exact_thermal_two_spin(1.0, -10.0, beta)
    assert z(est, "sz1sz2", exact["sz1sz2"]) < 4
    assert z(est, "sx_sum", exact["sx_sum"]) < 4


def test_single_oscillator_vs_exact_diagonalization():
    beta, g, n_osc = 2.0, 0.5, 30
    est = run(WlmcConfig(beta=beta, g=g, alpha=0.0, n_therm=200, n_sweeps=4000, n_tau=8, n_corr_blocks=16, seed=3))
    sz, sx, i2, io = local_operator("sz", 2).real, local_operator("sx", 2).real, np.eye(2), np.eye(n_osc)
    ops = {"sz1sz2": np.kron(np.kron(sz, sz), io), "sx_sum": np.kron(np.kron(sx, i2) + np.kron(i2, sx), io)}
    exact = thermal_expectations(qubits_oscillator_hamiltonian(1.0, -10.0, 1.0, g, n_osc), ops, beta)
    assert z(est, "sz1sz2", exact["sz1sz2"]) < 4
    assert z(est, "sx_sum", exact["sx_sum"]) < 4


def test_m2_estimators_agree_and_run_is_deterministic():
    cfg = WlmcConfig(beta=3.0, g=0.5, alpha=0.0, n_therm=50, n_sweeps=1000, n_tau=16, n_corr_blocks=16, seed=21)
    a, b = run(cfg), run(cfg)
    np.testing.assert_equal(a.scalars, b.scalars)
    assert abs(a.value("M2") - a.value("M2_corr")) < 4 * math.hypot(a.error("M2"), a.error("M2_corr")) + 1e-3
    assert a.histogram["probability"].sum() == pytest.approx(1.0)
    assert a.correlator["C_norm"][0] == pytest.approx(1.0)


def test_merge_is_associative():
    cfg = WlmcConfig(beta=1.0, g=0.0, j_coupling=0.0, n_therm=10, n_sweeps=200, n_tau=4, n_corr_blocks=8)
    e = [run(WlmcConfig(**{**cfg.__dict__, "seed": s, "n_sweeps": n})) for s, n in ((1, 200), (2, 400), (3, 600))]
    left = merge_estimates([merge_estimates(e[:2]), e[2]])
    right = merge_estimates([e[0], merge_estimates(e[1:])])
    flat = merge_estimates(e)
    for k in flat.scalars:
        assert left.scalars[k][0] == pytest.approx(flat.scalars[k][0], rel=1e-12, abs=1e-14)
        assert right.scalars[k][0] == pytest.approx(flat.scalars[k][0], rel=1e-12, abs=1e-14)
    assert np.allclose(left.histogram["probability"], right.histogram["probability"])
    with pytest.raises(ValueError):
        merge_estimates([])


def test_histogram_modes():
    c = np.linspace(-1, 1, 81)
    one = np.exp(-c**2 / 0.02)
    two = np.exp(-(c - 0.95) ** 2 / 0.005) + np.exp(-(c + 0.95) ** 2 / 0.005)
    assert np.allclose(histogram_modes(one, c), [0.0], atol=0.03)
    assert np.allclose(np.sort(histogram_modes(two, c)), [-0.95, 0.95], atol=0.03)


@pytest.mark.parametrize("kw", [{"beta": 0.0}, {"delta": -1.0}, {"n_sweeps": 10, "n_corr_blocks": 8},
                                {"n_chains": 0}])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        WlmcConfig(**kw)
