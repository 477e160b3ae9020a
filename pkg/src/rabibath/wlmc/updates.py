"""Cluster and single-segment moves on a dressed configuration.

Given the cut set, segments are Ising spins with log-weight
``sum_{a<b} E_ab s_a s_b`` where

    E_ab = I_ab - (J / 4) O_ab,

``I_ab`` is the kernel double integral over the two segments (any pair,
same or different worldline) and ``O_ab`` the overlap length of segments on
different worldlines, from ``(J/4) sz1 sz2`` in the Hamiltonian.
"""

from __future__ import annotations

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import breadth_first_order

from .kernel import EffectiveKernel, pair_integrals
from .worldline import DressedConfig

__all__ = ["overlap_matrix", "attach_couplings", "bond_probabilities", "cluster_update",
           "metropolis_segment_flip", "local_fields"]


def overlap_matrix(start, end, beta: float) -> np.ndarray:
    """Overlap lengths on the circle of circumference ``beta``."""
    a1, a2 = start[:, None], end[:, None]
    out = np.zeros((start.size, start.size))
    for k in (-1.0, 0.0, 1.0):
        b1, b2 = start[None, :] + k * beta, end[None, :] + k * beta
        out += np.clip(np.minimum(a2, b2) - np.maximum(a1, b1), 0.0, None)
    return out


def attach_couplings(cfg: DressedConfig, kernel: EffectiveKernel, j_coupling: float) -> DressedConfig:
    """Fill ``kernel_part``, ``overlap`` and ``couplings`` for the current cut set."""
    ik = pair_integrals(kernel, cfg.start, cfg.end)
    np.fill_diagonal(ik, 0.0)
    cross = cfg.line[:, None] != cfg.line[None, :]
    ov = np.where(cross, overlap_matrix(cfg.start, cfg.end, cfg.beta), 0.0)
    cfg.kernel_part = ik
    cfg.overlap = ov
    cfg.couplings = ik - 0.25 * j_coupling * ov
    return cfg


def bond_probabilities(cfg: DressedConfig, j_coupling: float) -> np.ndarray:
    """Activation probability of every segment pair.

    Kernel and direct-coupling channels are independent:
    ``p = 1 - exp(min(0, -2 I s s) + min(0, -2 (-J/4) O s s))``.
    """
    ss = np.outer(cfg.signs, cfg.signs).astype(float)
    expo = np.minimum(0.0, -2.0 * cfg.kernel_part * ss) + np.minimum(0.0, 0.5 * j_coupling * cfg.overlap * ss)
    p = -np.expm1(expo)
    np.fill_diagonal(p, 0.0)
    return p


def cluster_update(cfg: DressedConfig, kernel: EffectiveKernel, j_coupling: float,
                   rng: np.random.Generator) -> tuple[DressedConfig, int]:
    """Grow one cluster from a random seed segment and flip it with probability 1/2.

    Each pair bond is activated once with its probability, so the cluster is
    the connected component of the seed.  Returns the configuration and the
    cluster size (negative when the cluster was left unflipped).
    """
    if cfg.couplings is None:
        attach_couplings(cfg, kernel, j_coupling)
    n = cfg.n_segments
    p = bond_probabilities(cfg, j_coupling)
    active = np.triu(rng.random((n, n)) < p, 1)
    seed = int(rng.integers(n))
    graph = csr_matrix(active)
    members = breadth_first_order(graph, seed, directed=False, return_predecessors=False)
    if rng.random() < 0.5:
        cfg.signs[members] *= -1
        return cfg, int(members.size)
    return cfg, -int(members.size)


def local_fields(cfg: DressedConfig) -> np.ndarray:
    return cfg.couplings @ cfg.signs.astype(float)


def metropolis_segment_flip(cfg: DressedConfig, kernel: EffectiveKernel, j_coupling: float,
                            rng: np.random.Generator, n_proposals: int | None = None) -> tuple[DressedConfig, int]:
    """Single-segment flips with acceptance ``min(1, exp(-2 s_a h_a))``.

    ``h_a = sum_b E_ab s_b`` is the exact local field, so the log-weight
    change of flipping ``a`` is ``-2 s_a h_a``.  The cut set is fixed, which
    makes the proposal symmetric.  ``n_proposals`` defaults to the number of
    segments.  Returns the configuration and the number of accepted flips.
    """
    if cfg.couplings is None:
        attach_couplings(cfg, kernel, j_coupling)
    n = cfg.n_segments
    m = n if n_proposals is None else int(n_proposals)
    picks = rng.integers(n, size=m)
    draws = rng.random(m)
    h = local_fields(cfg)
    s = cfg.signs
    e = cfg.couplings
    accepted = 0
    for a, u in zip(picks, draws):
        d = -2.0 * s[a] * h[a]
        if d >= 0 or u < np.exp(d):
            h -= 2.0 * s[a] * e[:, a]
            s[a] = -s[a]
            accepted += 1
    return cfg, accepted
