"""Entanglement and distance measures for two-qubit density matrices.

All logarithms are natural, so entropies are in nats and a maximally
mixed pair has ``S = ln 4``.
"""

from __future__ import annotations

import logging

import numpy as np

log = logging.getLogger(__name__)

__all__ = [
    "DensityMatrixError",
    "as_density_matrix",
    "von_neumann_entropy",
    "concurrence",
    "uhlmann_fidelity",
    "SPIN_FLIP",
]

TOL = 1e-10

# sigma_y (x) sigma_y in the basis up-up, up-down, down-up, down-down
SPIN_FLIP = np.array(
    [[0, 0, 0, -1],
     [0, 0, 1, 0],
     [0, 1, 0, 0],
     [-1, 0, 0, 0]],
    dtype=float,
)


class DensityMatrixError(ValueError):
    """Input is not a valid 4x4 density matrix."""


CLIP_WARN = 1e-14


def as_density_matrix(rho, tol: float = TOL) -> np.ndarray:
    """Validate ``rho`` and return a clean Hermitian, unit-trace, PSD copy.

    Eigenvalues in ``[-tol, 0)`` are set to zero and the matrix renormalized;
    this is logged. Anything further from a density matrix raises
    :class:`DensityMatrixError`.
    """
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (4, 4):
        raise DensityMatrixError(f"expected a 4x4 matrix, got shape {rho.shape}")
    if not np.all(np.isfinite(rho)):
        raise DensityMatrixError("density matrix has non-finite entries")
    herm_err = np.max(np.abs(rho - rho.conj().T))
    if herm_err > tol:
        raise DensityMatrixError(f"matrix is not Hermitian (max deviation {herm_err:.2e})")
    rho = 0.5 * (rho + rho.conj().T)
    tr = np.trace(rho).real
    if abs(tr - 1.0) > tol:
        raise DensityMatrixError(f"trace is {tr!r}, expected 1")
    evals, evecs = np.linalg.eigh(rho)
    if evals[0] < -tol:
        raise DensityMatrixError(f"matrix has negative eigenvalue {evals[0]:.3e}")
    if evals[0] < 0:
        # round-off below 1e-14 is routine for pure states; only larger clips are worth a warning
        level = logging.WARNING if evals[0] < -CLIP_WARN else logging.DEBUG
        log.log(level, "clipping %d negative eigenvalue(s) down to %.2e", int(np.sum(evals < 0)), evals[0])
        evals = np.clip(evals, 0.0, None)
        evals /= evals.sum()
        rho = (evecs * evals) @ evecs.conj().T
    return rho


def _probabilities(rho) -> np.ndarray:
    p = np.linalg.eigvalsh(rho)
    p = np.clip(p, 0.0, None)
    return p / p.sum()


def von_neumann_entropy(rho) -> float:
    """``-Tr rho ln rho`` with ``0 ln 0 = 0``."""
    p = _probabilities(as_density_matrix(rho))
    p = p[p > 0]
    s = float(-np.sum(p * np.log(p)))
    return min(max(s, 0.0), float(np.log(4.0)))


def _factor(rho) -> np.ndarray:
    """Return ``A`` with ``rho = A A^dag``, dropping eigenvalues at round-off level.

    Eigenvalues below ``n eps lambda_max`` are not resolved by the input and are
    set to zero, so their square roots cannot leak into the results.
    """
    evals, evecs = np.linalg.eigh(rho)
    floor = rho.shape[0] * np.finfo(float).eps * max(float(evals[-1]), 0.0)
    keep = evals > floor
    return evecs[:, keep] * np.sqrt(evals[keep])


def concurrence(rho) -> float:
    """Wootters concurrence ``max(0, l1 - l2 - l3 - l4)``.

    The ``l_i`` are the square roots of the eigenvalues of ``rho @ rho_tilde``
    in decreasing order, where ``rho_tilde = (sy x sy) rho* (sy x sy)``. With
    ``rho = A A^dag`` they equal the singular values of ``A^T (sy x sy) A``,
    which avoids taking square roots of eigenvalues near zero.
    """
    a = _factor(as_density_matrix(rho))
    lam = np.zeros(4)
    sv = np.linalg.svd(a.T @ SPIN_FLIP @ a, compute_uv=False)
    lam[: sv.size] = sv
    c = lam[0] - lam[1] - lam[2] - lam[3]
    return float(min(max(c, 0.0), 1.0))


def uhlmann_fidelity(rho0, rho1) -> float:
    """Root fidelity ``Tr sqrt(sqrt(rho0) rho1 sqrt(rho0))``.

    Evaluated as the sum of singular values of ``A0^dag A1`` where
    ``rho_k = A_k A_k^dag``. This is the same quantity and symmetric in the two
    arguments by construction.
    """
    a = _factor(as_density_matrix(rho0))
    b = _factor(as_density_matrix(rho1))
    f = np.linalg.svd(a.conj().T @ b, compute_uv=False).sum()
    return float(min(max(f, 0.0), 1.0))
