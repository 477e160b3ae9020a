"""Second-order two-site TDVP with Lanczos (Krylov) local propagators."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .tensornet import (
    MPO,
    MPS,
    EffectiveOperator,
    TruncationReport,
    boundary_envs,
    expectation,
    left_env_update,
    right_env_update,
    svd_truncate,
)

__all__ = [
    "KrylovError",
    "TdvpConfig",
    "EvolutionRecord",
    "TdvpEngine",
    "krylov_expm",
    "tdvp2_step",
    "evolve",
]

KRYLOV_MAX_DIM = 30


class KrylovError(RuntimeError):
    """Krylov recurrence failed to reach the requested tolerance."""


@dataclass
class TdvpConfig:
    dt: float = 0.01
    t_final: float = 50.0
    max_bond: int = 50
    cutoff: float = 1e-13
    krylov_tol: float = 1e-12
    observe_every: int = 10

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if not self.krylov_tol > 0:
            raise ValueError(f"krylov_tol must be positive, got {self.krylov_tol}")
        if self.t_final < 0:
            raise ValueError("t_final must be non-negative")
        if self.observe_every < 1:
            raise ValueError("observe_every must be at least 1")
        if self.max_bond < 1:
            raise ValueError("max_bond must be at least 1")

    @property
    def n_steps(self) -> int:
        return int(math.ceil(self.t_final / self.dt - 1e-9))


@dataclass
class EvolutionRecord:
    times: list = field(default_factory=list)
    norms: list = field(default_factory=list)
    total_energies: list = field(default_factory=list)
    truncation: list = field(default_factory=list)
    wall_time: float = 0.0

    def max_discarded(self) -> float:
        return max((r.discarded_weight for r in self.truncation), default=0.0)


def krylov_expm(apply_h: Callable, v: np.ndarray, dt: float, tol: float = 1e-12,
                max_dim: int = KRYLOV_MAX_DIM) -> np.ndarray:
    """Approximate ``exp(-1j * H * dt) @ v`` for Hermitian ``H`` by Lanczos.

    ``dt`` may be negative (backward evolution).  The recurrence stops once
    the combined weight of the two newest Lanczos vectors in the propagated
    vector drops below ``tol``; an invariant subspace (happy breakdown) ends it
    exactly.  ``KrylovError`` is raised if ``max_dim`` vectors do not suffice.
    """
    shape = v.shape
    v = np.asarray(v, dtype=complex).reshape(-1)
    beta0 = np.linalg.norm(v)
    if beta0 == 0.0:
        return v.reshape(shape).copy()
    basis = np.empty((max_dim + 1, v.size), dtype=complex)
    basis[0] = v / beta0
    alphas = np.zeros(max_dim)
    betas = np.zeros(max_dim)
    scale = 0.0
    for k in range(max_dim):
        w = np.asarray(apply_h(basis[k].reshape(shape)), dtype=complex).reshape(-1)
        a = np.vdot(basis[k], w).real
        alphas[k] = a
        w -= a * basis[k]
        if k > 0:
            w -= betas[k - 1] * basis[k - 1]
        q = basis[: k + 1]
        w -= (q @ w.conj()).conj() @ q  # full reorthogonalization, the bases are tiny
        b = np.linalg.norm(w)
        scale = max(scale, abs(a), b)
        breakdown = b <= 1e-13 * max(scale, 1.0)
        if breakdown or k >= 1:
            coeffs = _tridiag_expm_e1(alphas[: k + 1], betas[:k], dt)
            if breakdown or beta0 * (abs(coeffs[-1]) + abs(coeffs[-2])) < tol:
                return (beta0 * (coeffs @ basis[: k + 1])).reshape(shape)
        betas[k] = b
        basis[k + 1] = w / b
    raise KrylovError(f"Krylov expansion not converged with {max_dim} vectors (tol={tol:g}, dt={dt:g})")


def _tridiag_expm_e1(alphas, betas, dt):
    m = len(alphas)
    if m == 1:
        return np.array([np.exp(-1j * alphas[0] * dt)])
    t = np.diag(alphas) + np.diag(betas, 1) + np.diag(betas, -1)
    evals, evecs = np.linalg.eigh(t)
    return evecs @ (np.exp(-1j * evals * dt) * evecs[0].conj())


class TdvpEngine:
    """Holds a state, its Hamiltonian MPO and the cached environments.

    The state is kept with its orthogonality center on site 0 between steps,
    so the right environments computed at the end of one step seed the next.
    """

    def __init__(self, mps: MPS, mpo: MPO, config: TdvpConfig):
        if mps.dims != mpo.dims:
            raise ValueError("state and Hamiltonian live on different chains")
        self.config = config
        self.mpo = mpo
        self.psi = mps.copy().canonicalize(0)
        self.psi.normalize()
        n = len(self.psi)
        self.lenvs: list = [None] * n
        self.renvs: list = [None] * n
        self.lenvs[0], self.renvs[n - 1] = boundary_envs()
        for k in range(n - 1, 0, -1):
            self.renvs[k - 1] = right_env_update(self.renvs[k], self.psi.tensors[k], mpo.tensors[k])
        self.time = 0.0

    def step(self, dt: float | None = None) -> TruncationReport:
        """One symmetric left-right-left sweep advancing the state by ``dt``."""
        dt = self.config.dt if dt is None else dt
        half = 0.5 * dt
        psi, w = self.psi.tensors, self.mpo.tensors
        n = len(psi)
        cfg = self.config
        worst, used = 0.0, 1
        if n == 1:
            psi[0] = krylov_expm(EffectiveOperator(self.lenvs[0], (w[0],), self.renvs[0]),
                                 psi[0], dt, cfg.krylov_tol)
            self.time += dt
            return TruncationReport(0.0, 1)

        for i in range(n - 1):
            theta = np.tensordot(psi[i], psi[i + 1], axes=(2, 0))
            le, re, w1, w2 = self.lenvs[i], self.renvs[i + 1], w[i], w[i + 1]
            theta = krylov_expm(EffectiveOperator(le, (w1, w2), re), theta, half, cfg.krylov_tol)
            a, s, b, rep = svd_truncate(theta, cfg.max_bond, cfg.cutoff)
            worst, used = max(worst, rep.discarded_weight), max(used, rep.bond_dim_used)
            s = s / np.linalg.norm(s)
            psi[i] = a
            self.lenvs[i + 1] = left_env_update(self.lenvs[i], a, w[i])
            c = s[:, None, None] * b
            if i < n - 2:
                le1, re1, wc = self.lenvs[i + 1], self.renvs[i + 1], w[i + 1]
                c = krylov_expm(EffectiveOperator(le1, (wc,), re1), c, -half, cfg.krylov_tol)
            psi[i + 1] = c

        for i in range(n - 2, -1, -1):
            theta = np.tensordot(psi[i], psi[i + 1], axes=(2, 0))
            le, re, w1, w2 = self.lenvs[i], self.renvs[i + 1], w[i], w[i + 1]
            theta = krylov_expm(EffectiveOperator(le, (w1, w2), re), theta, half, cfg.krylov_tol)
            a, s, b, rep = svd_truncate(theta, cfg.max_bond, cfg.cutoff)
            worst, used = max(worst, rep.discarded_weight), max(used, rep.bond_dim_used)
            s = s / np.linalg.norm(s)
            psi[i + 1] = b
            self.renvs[i] = right_env_update(self.renvs[i + 1], b, w[i + 1])
            c = a * s[None, None, :]
            if i > 0:
                le0, re0, wc = self.lenvs[i], self.renvs[i], w[i]
                c = krylov_expm(EffectiveOperator(le0, (wc,), re0), c, -half, cfg.krylov_tol)
            psi[i] = c

        self.psi.center = 0
        self.time += dt
        return TruncationReport(worst, used)


def tdvp2_step(mps: MPS, mpo: MPO, dt: float, config: TdvpConfig | None = None) -> MPS:
    """Advance ``mps`` by one 2TDVP step; returns a new state centered on site 0."""
    engine = TdvpEngine(mps, mpo, config or TdvpConfig(dt=dt))
    engine.step(dt)
    return engine.psi


def evolve(mps0: MPS, mpo: MPO, config: TdvpConfig, observers: Sequence[Callable] = ()):
    """Evolve for ``ceil(t_final / dt)`` steps, calling observers on a copy.

    Each observer is called as ``obs(t, state)`` at ``t = 0`` and every
    ``observe_every`` steps (and after the final step); the returned values are
    collected in one list per observer.

    Returns ``(final_state, EvolutionRecord, outputs)``.
    """
    start = time.perf_counter()
    engine = TdvpEngine(mps0, mpo, config)
    record = EvolutionRecord()
    outputs: list[list] = [[] for _ in observers]

    def observe(t):
        snapshot = engine.psi.copy()
        record.times.append(t)
        record.norms.append(snapshot.norm())
        record.total_energies.append(expectation(snapshot, mpo))
        for out, obs in zip(outputs, observers):
            out.append(obs(t, snapshot.copy()))

    observe(0.0)
    n_steps = config.n_steps
    for k in range(1, n_steps + 1):
        record.truncation.append(engine.step())
        if k % config.observe_every == 0 or k == n_steps:
            observe(k * config.dt)
    record.wall_time = time.perf_counter() - start
    return engine.psi, record, outputs
