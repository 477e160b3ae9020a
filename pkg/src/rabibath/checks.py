"""Fast oracle cross-checks run by ``rabibath check``.

Each suite compares an implementation against an independent route (exact
diagonalization, closed forms) on systems small enough to finish in seconds.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .dmrg import DmrgConfig, ground_state
from .ed import exact_evolve, exact_ground_state, exact_thermal_two_spin, hamiltonian_from_terms
from .model import ModelParams, build_hamiltonian_terms, prepare_model
from .qinfo import concurrence, uhlmann_fidelity, von_neumann_entropy
from .tdvp import TdvpConfig, evolve
from .tensornet import build_mpo, overlap, product_state, reduced_density_matrix

log = logging.getLogger(__name__)

__all__ = ["CheckResult", "SUITES", "run_checks", "random_density_matrix"]


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: dict = field(default_factory=dict)
    wall_time: float = 0.0


def random_density_matrix(rng: np.random.Generator, rank: int | None = None) -> np.ndarray:
    """Random two-qubit state ``A A^dag / Tr`` with ``A`` a complex Gaussian ``4 x rank`` matrix."""
    rank = rank or int(rng.integers(1, 5))
    a = rng.normal(size=(4, rank)) + 1j * rng.normal(size=(4, rank))
    rho = a @ a.conj().T
    return rho / np.trace(rho).real


def _small_model(rng: np.random.Generator) -> ModelParams:
    return ModelParams(g=float(rng.uniform(0.1, 0.9)), j_coupling=float(rng.uniform(-10.0, 0.0)),
                       alpha=float(rng.uniform(0.05, 0.2)), n_modes=int(rng.integers(1, 4)),
                       n_osc=int(rng.integers(3, 7)), n_bos=int(rng.integers(2, 4)))


def _seed_state(dims):
    return product_state([np.ones(2), np.ones(2)] + [np.eye(d)[0] for d in dims[2:]])


def check_ground(rng, n_points: int = 3) -> dict:
    worst_e, worst_rho = 0.0, 0.0
    for _ in range(n_points):
        terms = build_hamiltonian_terms(prepare_model(_small_model(rng)))
        e_ex, v = exact_ground_state(hamiltonian_from_terms(terms))
        res = ground_state(build_mpo(terms), _seed_state(terms.dims), DmrgConfig())
        m = v.reshape(4, -1)
        worst_e = max(worst_e, abs(res.energy - e_ex) / abs(e_ex))
        worst_rho = max(worst_rho, float(np.abs(reduced_density_matrix(res.state) - m @ m.conj().T).max()))
    return {"passed": worst_e < 1e-8 and worst_rho < 1e-6, "energy_rel": worst_e, "rho_abs": worst_rho}


def check_dynamics(rng, t_final: float = 1.0) -> dict:
    terms = build_hamiltonian_terms(prepare_model(_small_model(rng)))
    psi0 = _seed_state(terms.dims).normalize()
    final, _, _ = evolve(psi0, build_mpo(terms), TdvpConfig(dt=0.01, t_final=t_final, max_bond=200, cutoff=0.0))
    exact = exact_evolve(hamiltonian_from_terms(terms), psi0.to_dense(), t_final)
    fid = abs(np.vdot(exact, final.to_dense()))
    return {"passed": fid >= 1 - 1e-5, "overlap": fid, "norm": final.norm(), "self_overlap": abs(overlap(final, final))}


def check_qinfo(rng, n: int = 200) -> dict:
    bad = 0
    for _ in range(n):
        rho, sigma = random_density_matrix(rng), random_density_matrix(rng)
        s, c, f = von_neumann_entropy(rho), concurrence(rho), uhlmann_fidelity(rho, sigma)
        ok = -1e-10 <= s <= np.log(4) + 1e-10 and -1e-10 <= c <= 1 + 1e-10 and -1e-10 <= f <= 1 + 1e-10
        bad += not ok
    return {"passed": bad == 0, "violations": bad, "samples": n}


def check_kernel(rng) -> dict:
    from .wlmc import effective_kernel

    beta = 20.0
    kern = effective_kernel(beta, ModelParams(g=0.4))
    tau = rng.uniform(0.0, beta, size=64)
    asym = float(np.max(np.abs(kern(tau) - kern(beta - tau)) / np.abs(kern(tau))))
    return {"passed": asym < 1e-8, "symmetry_rel": asym}


def check_wlmc_free(rng) -> dict:
    from .wlmc import WlmcConfig, run

    out = {"passed": True}
    for beta, j in ((1.0, 0.0), (2.0, -10.0)):
        est = run(WlmcConfig(beta=beta, g=0.0, j_coupling=j, n_therm=100, n_sweeps=4000, n_tau=8, n_corr_blocks=16,
                             seed=int(rng.integers(2**31))))
        exact = exact_thermal_two_spin(1.0, j, beta)
        for name in ("sx_sum", "sz1sz2"):
            val, err = est.value(name), est.error(name)
            z = abs(val - exact[name]) / max(err, 1e-12)
            out[f"{name}_beta{beta:g}_J{j:g}_z"] = z
            out["passed"] &= bool(z < 4.0)
    return out


SUITES: dict[str, Callable] = {
    "ground": check_ground,
    "dynamics": check_dynamics,
    "qinfo": check_qinfo,
    "kernel": check_kernel,
    "wlmc_free": check_wlmc_free,
}


def run_checks(names=None, seed: int = 0) -> list[CheckResult]:
    """Run the named suites (all by default), each with its own random stream."""
    names = list(SUITES) if names is None else list(names)
    unknown = [n for n in names if n not in SUITES]
    if unknown:
        raise KeyError(f"unknown check suite(s) {unknown}; choose from {sorted(SUITES)}")
    streams = np.random.SeedSequence(seed).spawn(len(names))
    results = []
    for name, ss in zip(names, streams):
        start = time.perf_counter()
        detail = SUITES[name](np.random.default_rng(ss))
        passed = bool(detail.pop("passed"))
        results.append(CheckResult(name, passed, detail, time.perf_counter() - start))
        log.info("check %s: %s", name, "PASS" if passed else "FAIL")
    return results
