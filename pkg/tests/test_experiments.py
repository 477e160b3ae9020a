import csv
import math

import numpy as np
import pytest

from rabibath.dmrg import DmrgConfig
from rabibath.experiments import (
    PROFILES,
    DegeneratePerturbationError,
    QuenchConfig,
    TimeSeries,
    equilibrium_scan,
    extrema,
    first_peak,
    prepare_initial_state,
    profile,
    qubit_ground_vector,
    quench_run,
    rate_function,
    relaxation_run,
    write_scan,
)
from rabibath.model import ModelParams, build_hamiltonian_terms, prepare_model
from rabibath.qinfo import von_neumann_entropy
from rabibath.tdvp import TdvpConfig
from rabibath.tensornet import build_mpo, expectation, reduced_density_matrix

SMALL = dict(n_modes=4, n_osc=6, n_bos=3)
QUBIT_E = -math.sqrt(100 / 16 + 1)


def test_rate_function_examples():
    assert rate_function(1.0, 10) == 0.0
    assert rate_function(math.exp(-1), 1) == pytest.approx(1.0)
    assert rate_function(0.5, 50) == pytest.approx(0.013863, abs=1e-6)
    assert rate_function(1.0 + 1e-12, 3) == 0.0


def test_rate_function_orthogonality_sentinel(caplog):
    lam = rate_function(np.array([1.0, 0.0]), 5)
    assert lam[0] == 0 and np.isinf(lam[1])
    assert any("orthogonality" in r.message for r in caplog.records)


@pytest.mark.parametrize("echo, n", [(1.5, 2), (-0.1, 2), (0.5, 0.5), (np.nan, 2)])
def test_rate_function_rejects(echo, n):
    with pytest.raises(ValueError):
        rate_function(echo, n)


def test_qubit_ground_vector_energy():
    from rabibath.ed import qubit_hamiltonian

    v = qubit_ground_vector(1.0, -10.0)
    assert np.vdot(v, qubit_hamiltonian(1.0, -10.0) @ v).real == pytest.approx(QUBIT_E, abs=1e-12)
    assert QUBIT_E == pytest.approx(-2.69258, abs=1e-5)


def test_decoupled_bath_initial_state_is_exact_product():
    model = ModelParams(g=0.5, alpha=0.0, n_modes=0, n_osc=5)
    psi = prepare_initial_state(model)
    v = qubit_ground_vector(1.0, -10.0)
    ref = np.kron(v, np.eye(5)[0])
    assert abs(np.vdot(ref, psi.to_dense())) == pytest.approx(1.0, abs=1e-10)


def test_initial_state_qubit_sector():
    model = ModelParams(g=0.5, **SMALL)
    psi = prepare_initial_state(model)
    rho = reduced_density_matrix(psi)
    assert von_neumann_entropy(rho) == pytest.approx(0.0, abs=1e-9)
    terms = build_hamiltonian_terms(prepare_model(model))
    h_s = build_mpo(terms.select(["S"]))
    # the qubit part of S: subtract the oscillator energy, zero for a vacuum-like oscillator only when g = 0
    h_q = build_mpo(type(terms)([t for t in terms.select(["S"]) if 2 not in t.sites], terms.dims))
    assert expectation(psi, h_q) == pytest.approx(QUBIT_E, abs=1e-9)
    assert expectation(psi, h_s) >= QUBIT_E - 1e-9


def test_bare_vacuum_only_at_zero_coupling():
    with pytest.raises(ValueError):
        prepare_initial_state(ModelParams(g=0.5, **SMALL), bare_vacuum=True, g=0.3)


def test_no_quench_echo_is_one():
    model = ModelParams(g=0.4, **SMALL)
    cfg = QuenchConfig(model=model, tdvp=TdvpConfig(dt=0.05, t_final=3.0, max_bond=30, observe_every=10),
                       g_initial=0.4)
    ts = quench_run(cfg)
    assert np.all(np.abs(ts["L"] - 1) < 1e-6)
    assert np.all(ts["lambda"] < 1e-6)


def test_quench_columns_and_invariants(tmp_path):
    model = ModelParams(g=0.5, **SMALL)
    ts = quench_run(QuenchConfig(model=model, tdvp=TdvpConfig(dt=0.05, t_final=2.0, max_bond=30, observe_every=4)))
    assert ts["L"][0] == 1.0 or abs(ts["L"][0] - 1) < 1e-12
    assert np.all(ts["lambda"] >= 0)
    assert np.all((ts["S_q"] >= 0) & (ts["S_q"] <= math.log(4) + 1e-12))
    for k in ("C_q", "F_qub"):
        assert np.all((ts[k] >= 0) & (ts[k] <= 1))
    assert np.all(np.abs(ts["norm"] - 1) < 1e-8)
    e = ts["energy"]
    assert np.all(np.abs(e - e[0]) / abs(e[0]) < 1e-4)
    parts = ts["H_S"] + ts["H_B"] + ts["H_SB"]
    assert np.allclose(parts, e, atol=1e-10)
    assert ts.meta["rate_n"] == 4
    path = ts.to_csv(tmp_path / "q.csv")
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0])[:3] == ["g", "t", "L"]
    assert np.allclose([float(r["lambda"]) for r in rows], ts["lambda"], rtol=0, atol=0)


def test_rate_n_override():
    cfg = QuenchConfig(model=ModelParams(**SMALL), rate_n=7)
    assert cfg.effective_rate_n == 7
    with pytest.raises(ValueError):
        QuenchConfig(model=ModelParams(**SMALL), rate_n=0.5)


def test_first_peak_and_extrema():
    t = np.linspace(0, 10, 101)
    ts = TimeSeries(t, {"lambda": np.sin(t) ** 2})
    tp, yp = first_peak(ts)
    assert tp == pytest.approx(math.pi / 2, abs=0.05) and yp == pytest.approx(1.0, abs=1e-2)
    rising = TimeSeries(t, {"lambda": t})
    assert first_peak(rising) == (10.0, 10.0)
    assert list(extrema([0, 1, 0, -1, 0])) == [1, 3]


def test_relaxation_zero_epsilon_is_degenerate():
    with pytest.raises(DegeneratePerturbationError):
        relaxation_run(ModelParams(g=0.0, **SMALL), 0.0, TdvpConfig(t_final=0.1))


def test_relaxation_number_perturbation_is_degenerate():
    # b^dag b is even under parity, so <x(0)> stays zero at g = 0
    with pytest.raises(DegeneratePerturbationError):
        relaxation_run(ModelParams(g=0.0, **SMALL), 1e-3, TdvpConfig(t_final=0.1), perturbation="number")


def test_relaxation_damped_oscillations():
    ts = relaxation_run(ModelParams(g=0.0, n_modes=6, n_osc=6, n_bos=3), 1e-3,
                        TdvpConfig(dt=0.05, t_final=10.0, max_bond=30, observe_every=2))
    assert ts["Sigma_x"][0] == pytest.approx(1.0)
    idx = extrema(ts["Sigma_x"])
    amp = np.abs(ts["Sigma_x"][idx])
    assert len(idx) >= 3 and np.all(np.diff(amp) < 0)
    with pytest.raises(ValueError):
        relaxation_run(ModelParams(**SMALL), 1e-3, perturbation="bogus")


def test_small_scan_trends(tmp_path):
    pts = equilibrium_scan([0.0, 0.3, 0.6, 0.9], ModelParams(**SMALL), DmrgConfig(max_bond=30))
    s = [p.S_q for p in pts]
    c = [p.C_q for p in pts]
    hj = [p.H_J for p in pts]
    assert all(p.converged for p in pts)
    assert s[0] == pytest.approx(0.0, abs=1e-8) and all(b > a for a, b in zip(s, s[1:]))
    assert all(b < a for a, b in zip(c, c[1:]))
    assert all(b < a for a, b in zip(hj, hj[1:]))
    assert pts[0].sz1sz2 == pytest.approx(2.5 / -QUBIT_E, abs=1e-8)
    path = write_scan(pts, tmp_path / "scan.csv")
    assert np.genfromtxt(path, delimiter=",", names=True)["g"].tolist() == [0.0, 0.3, 0.6, 0.9]
    with pytest.raises(ValueError):
        equilibrium_scan([0.3, 0.1], ModelParams(**SMALL))


def test_profiles():
    model, dmrg, tdvp = profile("desk", g=0.3)
    assert model.n_modes == PROFILES["desk"]["model"]["n_modes"] and model.g == 0.3
    assert tdvp.max_bond == dmrg.max_bond == 40
    model, _, tdvp = profile("paper")
    assert (model.n_modes, model.n_osc, tdvp.max_bond, tdvp.dt) == (300, 16, 50, 0.01)
    with pytest.raises(KeyError):
        profile("huge")
