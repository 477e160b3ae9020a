import numpy as np
import pytest
import scipy.linalg

from rabibath.dmrg import ground_state
from rabibath.ed import exact_evolve, hamiltonian_from_terms
from rabibath.experiments import qubit_ground_vector
from rabibath.model import ModelParams, build_hamiltonian_terms, prepare_model
from rabibath.tdvp import KrylovError, TdvpConfig, TdvpEngine, evolve, krylov_expm, tdvp2_step
from rabibath.tensornet import build_mpo, mps_from_dense, overlap, product_state


def chain(params):
    terms = build_hamiltonian_terms(prepare_model(params))
    return terms, build_mpo(terms)


def seed_state(dims):
    return product_state([np.ones(2), np.ones(2)] + [np.eye(d)[0] for d in dims[2:]]).normalize()


# -- Krylov exponential -------------------------------------------------------------------

def test_krylov_zero_hamiltonian():
    v = np.random.default_rng(0).normal(size=5) + 0j
    assert np.allclose(krylov_expm(lambda x: 0 * x, v, 0.3), v, atol=1e-14)


def test_krylov_diagonal_phases():
    d = np.array([0.3, -1.2, 2.5, 0.0])
    v = np.ones(4, dtype=complex) / 2
    assert np.allclose(krylov_expm(lambda x: d * x, v, 0.7), np.exp(-1j * d * 0.7) * v, atol=1e-12)


@pytest.mark.parametrize("dt", [0.01, -0.01, 0.5])
def test_krylov_vs_dense_expm(dt):
    rng = np.random.default_rng(1)
    a = rng.normal(size=(8, 8)) + 1j * rng.normal(size=(8, 8))
    h = (a + a.conj().T) / 2
    v = rng.normal(size=8) + 1j * rng.normal(size=8)
    assert np.linalg.norm(krylov_expm(lambda x: h @ x, v, dt) - scipy.linalg.expm(-1j * h * dt) @ v) < 1e-10


def test_krylov_keeps_tensor_shape():
    rng = np.random.default_rng(2)
    h = np.diag(rng.normal(size=12))
    v = rng.normal(size=(2, 3, 2)) + 0j
    out = krylov_expm(lambda x: (h @ x.reshape(-1)).reshape(x.shape), v, 0.1)
    assert out.shape == (2, 3, 2)


def test_krylov_reports_non_convergence():
    rng = np.random.default_rng(3)
    a = rng.normal(size=(60, 60))
    h = 50 * (a + a.T)
    with pytest.raises(KrylovError):
        krylov_expm(lambda x: h @ x, rng.normal(size=60) + 0j, 1.0, max_dim=4)


# -- 2TDVP ----------------------------------------------------------------------------------

def test_eigenstate_is_stationary():
    terms, mpo = chain(ModelParams(g=0.3, n_modes=2, n_osc=5, n_bos=3))
    gs = ground_state(mpo, seed_state(terms.dims)).state
    final, record, _ = evolve(gs, mpo, TdvpConfig(dt=0.05, t_final=2.0, max_bond=40))
    assert abs(overlap(gs, final)) == pytest.approx(1.0, abs=1e-8)
    assert max(abs(e - record.total_energies[0]) for e in record.total_energies) < 1e-8


def test_tiny_chain_matches_exact_propagation():
    terms, mpo = chain(ModelParams(g=0.5, alpha=0.0, n_modes=0, n_osc=8))
    psi0 = seed_state(terms.dims)
    final, record, _ = evolve(psi0, mpo, TdvpConfig(dt=0.01, t_final=1.0, max_bond=64, cutoff=0.0))
    exact = exact_evolve(hamiltonian_from_terms(terms), psi0.to_dense(), 1.0)
    assert abs(np.vdot(exact, final.to_dense())) >= 1 - 1e-6
    assert max(abs(n - 1) for n in record.norms) < 1e-8


def test_bath_chain_matches_exact_propagation():
    terms, mpo = chain(ModelParams(g=0.5, n_modes=2, n_osc=4, n_bos=3))
    psi0 = seed_state(terms.dims)
    final, _, _ = evolve(psi0, mpo, TdvpConfig(dt=0.02, t_final=1.0, max_bond=64, cutoff=0.0))
    exact = exact_evolve(hamiltonian_from_terms(terms), psi0.to_dense(), 1.0)
    assert abs(np.vdot(exact, final.to_dense())) >= 1 - 1e-6


def test_decoupled_quench_echo_is_one():
    terms, mpo = chain(ModelParams(g=0.0, alpha=0.0, n_modes=0, n_osc=4))
    v = qubit_ground_vector(1.0, -10.0)
    psi0 = mps_from_dense(np.kron(v, np.eye(4)[0]), terms.dims)
    _, _, (echo,) = evolve(psi0, mpo, TdvpConfig(dt=0.05, t_final=3.0, observe_every=5),
                           [lambda t, psi: abs(overlap(psi0, psi)) ** 2])
    assert np.allclose(echo, 1.0, atol=1e-10)


def test_zero_steps_is_identity():
    terms, mpo = chain(ModelParams(g=0.5, n_modes=1, n_osc=3, n_bos=2))
    psi0 = seed_state(terms.dims)
    final, record, _ = evolve(psi0, mpo, TdvpConfig(t_final=0.0))
    assert record.truncation == [] and record.times == [0.0]
    assert np.allclose(final.to_dense(), psi0.to_dense(), atol=1e-12)


def test_single_step_helper_and_engine_agree():
    terms, mpo = chain(ModelParams(g=0.5, n_modes=1, n_osc=3, n_bos=2))
    psi0 = seed_state(terms.dims)
    engine = TdvpEngine(psi0, mpo, TdvpConfig(dt=0.1, max_bond=16))
    rep = engine.step()
    one = tdvp2_step(psi0, mpo, 0.1, TdvpConfig(dt=0.1, max_bond=16))
    assert abs(overlap(engine.psi, one)) == pytest.approx(1.0, abs=1e-12)
    assert rep.bond_dim_used <= 16 and engine.time == pytest.approx(0.1)


def test_truncation_is_recorded_under_a_tight_bond_cap():
    terms, mpo = chain(ModelParams(g=0.8, n_modes=3, n_osc=5, n_bos=3))
    _, record, _ = evolve(seed_state(terms.dims), mpo, TdvpConfig(dt=0.05, t_final=1.0, max_bond=2))
    assert record.max_discarded() > 0
    assert all(r.bond_dim_used <= 2 for r in record.truncation)
    assert max(abs(n - 1) for n in record.norms) < 1e-8


@pytest.mark.parametrize("kw", [{"dt": 0.0}, {"krylov_tol": 0.0}, {"t_final": -1.0}, {"observe_every": 0},
                                {"max_bond": 0}])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        TdvpConfig(**kw)
