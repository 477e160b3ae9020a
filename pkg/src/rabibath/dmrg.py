"""Two-site DMRG ground-state search."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.sparse.linalg import ArpackNoConvergence, LinearOperator, eigsh

from .tensornet import (
    MPO,
    MPS,
    EffectiveOperator,
    TruncationReport,
    boundary_envs,
    left_env_update,
    right_env_update,
    svd_truncate,
    SV_FLOOR,
)

log = logging.getLogger(__name__)

__all__ = ["DmrgConfig", "DmrgResult", "ground_state"]

DENSE_LOCAL_DIM = 256


@dataclass
class DmrgConfig:
    """Sweep parameters.

    ``noise_schedule[s]`` is the density-matrix perturbation used in sweep
    ``s``; sweeps past the end of the schedule use its last entry, which must
    be zero.
    """

    max_sweeps: int = 30
    max_bond: int = 50
    cutoff: float = 1e-13
    local_solver_iters: int = 300
    noise_schedule: tuple = (1e-6, 1e-7, 1e-8, 0.0)
    energy_tol: float = 1e-10
    min_sweeps: int = 2

    def __post_init__(self):
        sched = tuple(float(x) for x in self.noise_schedule)
        if not sched or sched[-1] != 0.0:
            raise ValueError("noise_schedule must terminate at 0")
        if any(b > a for a, b in zip(sched, sched[1:])) or any(x < 0 for x in sched):
            raise ValueError("noise_schedule must be non-negative and non-increasing")
        if not self.energy_tol > 0:
            raise ValueError("energy_tol must be positive")
        if self.max_sweeps < 1 or self.max_bond < 1:
            raise ValueError("max_sweeps and max_bond must be positive")
        self.noise_schedule = sched

    def noise(self, sweep: int) -> float:
        return self.noise_schedule[min(sweep, len(self.noise_schedule) - 1)]


@dataclass
class DmrgResult:
    energy: float
    state: MPS
    sweep_energies: list = field(default_factory=list)
    converged: bool = False
    truncation: TruncationReport | None = None


def _local_ground(lenv, w1, w2, renv, theta, tol, maxiter):
    shape = theta.shape
    n = theta.size
    heff = EffectiveOperator(lenv, (w1, w2), renv)
    if n <= DENSE_LOCAL_DIM:
        eye = np.eye(n, dtype=complex).reshape((n,) + shape)
        cols = [heff(e).reshape(-1) for e in eye]
        h = np.array(cols).T
        h = 0.5 * (h + h.conj().T)
        evals, evecs = scipy.linalg.eigh(h, subset_by_index=[0, 0])
        return float(evals[0]), evecs[:, 0].reshape(shape)

    def matvec(x):
        return heff(x.reshape(shape)).reshape(-1)

    op = LinearOperator((n, n), matvec=matvec, dtype=complex)
    v0 = theta.reshape(-1)
    try:
        evals, evecs = eigsh(op, k=1, which="SA", v0=v0, tol=tol, maxiter=maxiter)
    except ArpackNoConvergence as exc:
        if len(exc.eigenvalues) == 0:
            raise
        log.warning("local eigensolver not fully converged; using best Ritz vector")
        evals, evecs = exc.eigenvalues, exc.eigenvectors
    return float(evals[0]), evecs[:, 0].reshape(shape)


def _keep_count(evals, max_bond, cutoff):
    total = evals.sum()
    keep = int(np.count_nonzero(evals > (SV_FLOOR**2) * evals[0]))
    tail = np.concatenate([np.cumsum(evals[::-1])[::-1], [0.0]])
    if cutoff > 0:
        keep = min(keep, int(np.nonzero(tail <= cutoff * total)[0][0]))
    keep = max(1, min(keep, max_bond))
    return keep, float(tail[keep] / total)


def _split(theta, lenv, w1, w2, renv, cfg, noise, move_right):
    """Factor the optimized two-site tensor, with optional density-matrix noise."""
    dl, d1, d2, dr = theta.shape
    if noise == 0.0:
        a, s, b, rep = svd_truncate(theta, cfg.max_bond, cfg.cutoff)
        s = s / np.linalg.norm(s)
        if move_right:
            return a, s[:, None, None] * b, rep
        return a * s[None, None, :], b, rep

    mat = theta.reshape(dl * d1, d2 * dr)
    if move_right:
        x = np.tensordot(lenv, theta, axes=(0, 0))  # (w, a', s1, s2, b)
        x = np.tensordot(x, w1, axes=([0, 2], [0, 2]))  # (a', s2, b, t1, v)
        x = x.transpose(0, 3, 1, 2, 4).reshape(dl * d1, -1)
        rho = mat @ mat.conj().T
        pert = x @ x.conj().T
    else:
        x = np.tensordot(theta, renv, axes=(3, 0))  # (a, s1, s2, u, b')
        x = np.tensordot(x, w2, axes=([2, 3], [2, 3]))  # (a, s1, b', v, t2)
        x = x.transpose(0, 1, 3, 4, 2).reshape(-1, d2 * dr)
        rho = mat.conj().T @ mat
        pert = x.conj().T @ x
    tr = np.trace(pert).real
    if tr > 0:
        rho = rho + noise * pert / tr
    evals, evecs = np.linalg.eigh(0.5 * (rho + rho.conj().T))
    order = np.argsort(evals)[::-1]
    evals, evecs = np.clip(evals[order], 0.0, None), evecs[:, order]
    keep, discarded = _keep_count(evals, cfg.max_bond, cfg.cutoff)
    u = evecs[:, :keep]
    if move_right:
        a = u.reshape(dl, d1, keep)
        c = (u.conj().T @ mat).reshape(keep, d2, dr)
        c /= np.linalg.norm(c)
        return a, c, TruncationReport(discarded, keep)
    b = u.conj().T.reshape(keep, d2, dr)
    c = (mat @ u).reshape(dl, d1, keep)
    c /= np.linalg.norm(c)
    return c, b, TruncationReport(discarded, keep)


def ground_state(mpo: MPO, init: MPS, config: DmrgConfig | None = None) -> DmrgResult:
    """Variational ground state of ``mpo`` starting from ``init``.

    Convergence requires a zero-noise sweep whose final energy differs from
    the previous sweep by less than ``energy_tol``.  If ``max_sweeps`` is hit
    first, the best state is returned with ``converged=False``.
    """
    cfg = config or DmrgConfig()
    if init.dims != mpo.dims:
        raise ValueError("initial state and Hamiltonian live on different chains")
    psi = init.copy().canonicalize(0)
    psi.normalize()
    t, w = psi.tensors, mpo.tensors
    n = len(t)
    if n < 2:
        raise ValueError("two-site DMRG needs at least two sites")
    lenvs: list = [None] * n
    renvs: list = [None] * n
    lenvs[0], renvs[n - 1] = boundary_envs()
    for k in range(n - 1, 0, -1):
        renvs[k - 1] = right_env_update(renvs[k], t[k], w[k])

    tol = max(cfg.energy_tol / 10.0, 1e-14)
    energies: list[float] = []
    converged = False
    worst = TruncationReport(0.0, 1)
    best_energy, best_state = np.inf, None
    for sweep in range(cfg.max_sweeps):
        noise = cfg.noise(sweep)
        worst = TruncationReport(0.0, 1)
        for i in range(n - 1):
            theta = np.tensordot(t[i], t[i + 1], axes=(2, 0))
            energy, theta = _local_ground(lenvs[i], w[i], w[i + 1], renvs[i + 1], theta, tol, cfg.local_solver_iters)
            a, c, rep = _split(theta, lenvs[i], w[i], w[i + 1], renvs[i + 1], cfg, noise, True)
            t[i], t[i + 1] = a, c
            lenvs[i + 1] = left_env_update(lenvs[i], a, w[i])
            worst = _worse(worst, rep)
        for i in range(n - 2, -1, -1):
            theta = np.tensordot(t[i], t[i + 1], axes=(2, 0))
            energy, theta = _local_ground(lenvs[i], w[i], w[i + 1], renvs[i + 1], theta, tol, cfg.local_solver_iters)
            c, b, rep = _split(theta, lenvs[i], w[i], w[i + 1], renvs[i + 1], cfg, noise, False)
            t[i], t[i + 1] = c, b
            renvs[i] = right_env_update(renvs[i + 1], b, w[i + 1])
            worst = _worse(worst, rep)
        psi.center = 0
        energies.append(energy)
        log.debug("sweep %d noise %.1e energy %.14f maxbond %d", sweep, noise, energy, psi.max_bond())
        if noise == 0.0 and energy < best_energy:
            best_energy, best_state = energy, psi.copy()
        if (
            noise == 0.0
            and sweep + 1 >= cfg.min_sweeps
            and len(energies) >= 2
            and cfg.noise(sweep - 1) == 0.0
            and abs(energies[-1] - energies[-2]) < cfg.energy_tol
        ):
            converged = True
            break
    if best_state is None:
        best_energy, best_state = energies[-1], psi.copy()
    if not converged:
        log.warning("DMRG not converged after %d sweeps (last dE=%.2e)", len(energies),
                    abs(energies[-1] - energies[-2]) if len(energies) > 1 else float("nan"))
    return DmrgResult(float(best_energy), best_state, energies, converged, worst)


def _worse(a: TruncationReport, b: TruncationReport) -> TruncationReport:
    return TruncationReport(max(a.discarded_weight, b.discarded_weight), max(a.bond_dim_used, b.bond_dim_used))
