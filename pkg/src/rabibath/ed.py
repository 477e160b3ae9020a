"""Exact diagonalization in the truncated product basis.

This is the verification backbone: it builds the same term list as the MPO
builder into a sparse matrix by Kronecker products and uses eigendecompositions
only (no Krylov methods), so it stays independent of the tensor-network code.
Basis ordering follows the chain layout with site 0 as the most significant
index, identical to :meth:`rabibath.tensornet.MPS.to_dense`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .model import RenormalizedModel, TermList, build_hamiltonian_terms, local_operator

MAX_DIM = 2**14
MAX_DENSE_DIM = 4096


class DimensionGuardError(ValueError):
    """Hilbert space too large for the exact oracle."""


@dataclass
class DenseHamiltonian:
    matrix: sp.csr_matrix
    dims: list

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def dense(self) -> np.ndarray:
        if self.dim > MAX_DENSE_DIM:
            raise DimensionGuardError(f"dense form refused for dimension {self.dim} > {MAX_DENSE_DIM}")
        return self.matrix.toarray()


def embed(ops: dict, dims) -> sp.csr_matrix:
    """Kronecker product with ``ops[site]`` on given sites and identities elsewhere."""
    out = sp.identity(1, format="csr")
    for k, d in enumerate(dims):
        op = ops.get(k)
        out = sp.kron(out, sp.csr_matrix(op) if op is not None else sp.identity(d, format="csr"), format="csr")
    return out


def terms_to_sparse(terms: TermList) -> sp.csr_matrix:
    dims = list(terms.dims)
    dim = int(np.prod(dims))
    if dim > MAX_DIM:
        raise DimensionGuardError(f"Hilbert space dimension {dim} exceeds the guard {MAX_DIM}")
    h = sp.csr_matrix((dim, dim))
    for t in terms:
        ops = {s: local_operator(o, dims[s]).real for s, o in zip(t.sites, t.ops)}
        h = h + t.coeff * embed(ops, dims)
    return h.tocsr()


def build_dense_hamiltonian(renorm: RenormalizedModel, bath_order=None) -> DenseHamiltonian:
    terms = build_hamiltonian_terms(renorm, bath_order)
    return hamiltonian_from_terms(terms)


def hamiltonian_from_terms(terms: TermList) -> DenseHamiltonian:
    h = terms_to_sparse(terms)
    if abs(h - h.T).max() > 1e-12 if h.nnz else False:
        raise AssertionError("assembled Hamiltonian is not Hermitian")
    return DenseHamiltonian(h, list(terms.dims))


def _as_dense(h) -> np.ndarray:
    if isinstance(h, DenseHamiltonian):
        return h.dense()
    if sp.issparse(h):
        return h.toarray()
    return np.asarray(h)


def exact_ground_state(h) -> tuple[float, np.ndarray]:
    """Lowest eigenpair by dense Hermitian diagonalization."""
    mat = _as_dense(h)
    evals, evecs = scipy.linalg.eigh(mat, subset_by_index=[0, 0])
    return float(evals[0]), evecs[:, 0]


def exact_evolve(h, psi0: np.ndarray, t: float) -> np.ndarray:
    """``exp(-i H t) psi0`` via the eigendecomposition of ``H``."""
    mat = _as_dense(h)
    evals, evecs = scipy.linalg.eigh(mat)
    coeffs = evecs.conj().T @ np.asarray(psi0, dtype=complex)
    return evecs @ (np.exp(-1j * evals * t) * coeffs)


class Propagator:
    """Reusable eigendecomposition for evolving many states/times."""

    def __init__(self, h):
        mat = _as_dense(h)
        self.evals, self.evecs = scipy.linalg.eigh(mat)

    def __call__(self, psi0, t):
        coeffs = self.evecs.conj().T @ np.asarray(psi0, dtype=complex)
        return self.evecs @ (np.exp(-1j * self.evals * t) * coeffs)


def thermal_expectations(h, ops: dict, beta: float) -> dict:
    """Boltzmann averages ``Tr[e^{-beta H} O] / Z`` of dense/sparse operators."""
    mat = _as_dense(h)
    evals, evecs = scipy.linalg.eigh(mat)
    w = np.exp(-beta * (evals - evals[0]))
    w /= w.sum()
    out = {}
    for name, op in ops.items():
        op = _as_dense(op)
        diag = np.einsum("ik,ij,jk->k", evecs.conj(), op, evecs).real
        out[name] = float(np.dot(w, diag))
    return out


def qubit_hamiltonian(delta: float, j: float) -> np.ndarray:
    """``-delta/2 (sx1 + sx2) + j/4 sz1 sz2`` in the basis up-up, up-down, down-up, down-down."""
    sx, sz, i2 = local_operator("sx", 2), local_operator("sz", 2), np.eye(2)
    return -0.5 * delta * (np.kron(sx, i2) + np.kron(i2, sx)) + 0.25 * j * np.kron(sz, sz)


def exact_thermal_two_spin(delta: float, j: float, beta: float) -> dict:
    """Thermal averages of the two-qubit Hamiltonian without oscillator or bath."""
    sx, sz, i2 = local_operator("sx", 2), local_operator("sz", 2), np.eye(2)
    zz = np.kron(sz, sz)
    xsum = np.kron(sx, i2) + np.kron(i2, sx)
    h = qubit_hamiltonian(delta, j)
    if beta == 0:
        avg = {"zz": float(np.trace(zz)) / 4, "x_sum": float(np.trace(xsum)) / 4}
    else:
        avg = thermal_expectations(h, {"zz": zz, "x_sum": xsum}, beta)
    return {
        "sz1sz2": avg["zz"],
        "sx_sum": avg["x_sum"],
        "H_J": 0.25 * j * avg["zz"],
        "H_Delta": -0.5 * delta * avg["x_sum"],
    }


def qubit_ground_energy(delta: float, j: float) -> float:
    """Closed form ``-sqrt(J^2/16 + delta^2)`` of the two-qubit ground energy."""
    return -math.sqrt(j * j / 16.0 + delta * delta)


def kubo_average(h, op, beta: float) -> float:
    """``(1/beta) int_0^beta <A(tau) A(0)> dtau`` for a Hermitian ``A``.

    Evaluated in the eigenbasis:
    ``sum_mn |A_mn|^2 (e^{-beta E_n} - e^{-beta E_m}) / (beta Z (E_m - E_n))``,
    with the ``E_m = E_n`` terms reducing to ``e^{-beta E_m} / Z``.
    """
    mat = _as_dense(h)
    evals, evecs = scipy.linalg.eigh(mat)
    a = evecs.conj().T @ _as_dense(op) @ evecs
    a2 = np.abs(a) ** 2
    e = evals - evals[0]
    w = np.exp(-beta * e)
    z = w.sum()
    de = e[:, None] - e[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        frac = (w[None, :] - w[:, None]) / (beta * de)
    close = np.abs(de) * beta < 1e-10
    frac = np.where(close, w[:, None] * np.ones_like(de), frac)
    return float((a2 * frac).sum() / z)


def qubits_oscillator_hamiltonian(delta: float, j: float, omega: float, g: float, n_osc: int) -> np.ndarray:
    """Two qubits coupled through ``g (sz1 + sz2)(b + b^dag)`` to one oscillator, no bath."""
    sx, sz = local_operator("sx", 2), local_operator("sz", 2)
    n, x = local_operator("n", n_osc).real, local_operator("x", n_osc).real
    i2, io = np.eye(2), np.eye(n_osc)
    hq = np.kron(qubit_hamiltonian(delta, j), io)
    szsum = np.kron(np.kron(sz, i2) + np.kron(i2, sz), io)
    return hq + omega * np.kron(np.eye(4), n) + g * szsum @ np.kron(np.eye(4), x)
