import math

import numpy as np
import pytest
import scipy.linalg
import scipy.sparse as sp

from rabibath.ed import (
    DimensionGuardError,
    Propagator,
    build_dense_hamiltonian,
    exact_evolve,
    exact_ground_state,
    exact_thermal_two_spin,
    hamiltonian_from_terms,
    kubo_average,
    qubit_ground_energy,
    qubit_hamiltonian,
    qubits_oscillator_hamiltonian,
    terms_to_sparse,
)
from rabibath.model import ModelParams, build_hamiltonian_terms, local_operator, prepare_model

ZZ_GROUND = 2.5 / math.sqrt(100 / 16 + 1)


def test_qubit_ground_energy_example():
    e, v = exact_ground_state(qubit_hamiltonian(1.0, -10.0))
    assert e == pytest.approx(-2.69258, abs=1e-5)
    assert e == pytest.approx(qubit_ground_energy(1.0, -10.0), abs=1e-12)
    assert np.linalg.norm(qubit_hamiltonian(1.0, -10.0) @ v - e * v) < 1e-12


def test_diagonal_hamiltonian_ground():
    e, v = exact_ground_state(np.diag([3.0, -1.5, 2.0, 0.0]))
    assert e == -1.5 and abs(v[1]) == pytest.approx(1.0)


def test_degenerate_ground_space_residual():
    h = np.diag([-1.0, -1.0, 0.5])
    e, v = exact_ground_state(h)
    assert e == -1.0 and np.linalg.norm(h @ v - e * v) < 1e-12 and abs(v[2]) < 1e-12


def test_evolve_sigma_x_half_pi():
    out = exact_evolve(local_operator("sx", 2).real, np.array([1.0, 0.0]), math.pi / 2)
    assert np.allclose(out, [0.0, -1j], atol=1e-12)


def test_evolve_identity_and_eigenstate():
    h = qubit_hamiltonian(1.0, -10.0)
    rng = np.random.default_rng(0)
    psi = rng.normal(size=4) + 1j * rng.normal(size=4)
    assert np.allclose(exact_evolve(h, psi, 0.0), psi, atol=1e-12)
    e, v = exact_ground_state(h)
    out = exact_evolve(h, v, 3.7)
    assert np.allclose(out, np.exp(-1j * e * 3.7) * v, atol=1e-12)


def test_propagator_matches_dense_expm():
    rng = np.random.default_rng(1)
    a = rng.normal(size=(6, 6)) + 1j * rng.normal(size=(6, 6))
    h = a + a.conj().T
    psi = rng.normal(size=6) + 0j
    prop = Propagator(h)
    for t in (0.1, 1.3):
        assert np.allclose(prop(psi, t), scipy.linalg.expm(-1j * h * t) @ psi, atol=1e-12)


def test_thermal_low_temperature_limit():
    avg = exact_thermal_two_spin(1.0, -10.0, 200.0)
    assert avg["sz1sz2"] == pytest.approx(ZZ_GROUND, abs=1e-10)
    assert avg["sz1sz2"] == pytest.approx(0.92848, abs=1e-5)


@pytest.mark.parametrize("beta", [0.5, 1.0, 2.0, 4.0])
def test_thermal_free_spins(beta):
    assert exact_thermal_two_spin(1.0, 0.0, beta)["sx_sum"] == pytest.approx(2 * math.tanh(beta / 2), abs=1e-12)


def test_thermal_infinite_temperature():
    avg = exact_thermal_two_spin(1.0, -10.0, 0.0)
    assert all(abs(v) < 1e-12 for v in avg.values())
    small = exact_thermal_two_spin(1.0, -10.0, 1e-8)
    assert all(abs(v) < 1e-7 for v in small.values())


def test_kubo_commuting_operator_equals_thermal_average():
    # sz1 sz2 commutes with the J=0, delta=0 Hamiltonian: Kubo average is the plain average
    h = qubit_hamiltonian(0.0, -4.0)
    zz = np.kron(local_operator("sz", 2), local_operator("sz", 2)).real
    avg = np.trace(scipy.linalg.expm(-1.0 * h) @ zz @ zz).real / np.trace(scipy.linalg.expm(-1.0 * h)).real
    assert kubo_average(h, zz, 1.0) == pytest.approx(avg, abs=1e-12)


def test_kubo_vs_imaginary_time_quadrature():
    h = qubit_hamiltonian(1.0, -3.0)
    a = np.kron(local_operator("sz", 2), np.eye(2)).real + np.kron(np.eye(2), local_operator("sz", 2)).real
    beta = 1.7
    z = np.trace(scipy.linalg.expm(-beta * h)).real
    taus = np.linspace(0.0, beta, 801)
    vals = [np.trace(scipy.linalg.expm(-(beta - t) * h) @ a @ scipy.linalg.expm(-t * h) @ a).real / z for t in taus]
    ref = scipy.integrate.simpson(vals, x=taus) / beta
    assert kubo_average(h, a, beta) == pytest.approx(ref, abs=1e-9)


def test_terms_match_hand_built_hamiltonian():
    params = ModelParams(g=0.3, alpha=0.0, n_modes=0, n_osc=5)
    h = build_dense_hamiltonian(prepare_model(params)).dense()
    ref = qubits_oscillator_hamiltonian(1.0, -10.0, 1.0, 0.3, 5)
    assert np.allclose(h, ref, atol=1e-12)


def test_bath_order_is_a_relabeling():
    params = ModelParams(g=0.4, alpha=0.1, n_modes=3, n_osc=3, n_bos=2)
    r = prepare_model(params)
    e1, _ = exact_ground_state(build_dense_hamiltonian(r))
    e2, _ = exact_ground_state(build_dense_hamiltonian(r, bath_order=[2, 0, 1]))
    assert e1 == pytest.approx(e2, rel=1e-12)


def test_sparse_hamiltonian_is_symmetric():
    terms = build_hamiltonian_terms(prepare_model(ModelParams(g=0.4, n_modes=2, n_osc=4, n_bos=3)))
    h = terms_to_sparse(terms)
    assert sp.issparse(h) and abs(h - h.T).max() < 1e-14


def test_dimension_guards():
    terms = build_hamiltonian_terms(prepare_model(ModelParams(g=0.4, n_modes=6, n_osc=8, n_bos=4)))
    with pytest.raises(DimensionGuardError):
        hamiltonian_from_terms(terms)
    terms = build_hamiltonian_terms(prepare_model(ModelParams(g=0.4, n_modes=5, n_osc=8, n_bos=3)))
    with pytest.raises(DimensionGuardError):
        hamiltonian_from_terms(terms).dense()
