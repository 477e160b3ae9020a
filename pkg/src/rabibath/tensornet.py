"""Matrix product states and operators on the mixed qubit/boson chain.

Index conventions
-----------------
* MPS site tensor: ``(left bond, physical, right bond)``.
* MPO site tensor: ``(left bond, out, in, right bond)`` so that
  ``<t|O|s> = W[:, t, s, :]``.
* Environments: ``(ket bond, mpo bond, bra bond)``.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .model import TermList, local_operator

log = logging.getLogger(__name__)

# relative singular-value floor: anything below is numerical noise
SV_FLOOR = 1e-14

__all__ = [
    "EffectiveOperator",
    "MPS",
    "MPO",
    "TruncationReport",
    "DegenerateInputError",
    "svd_truncate",
    "canonicalize",
    "overlap",
    "expectation",
    "reduced_density_matrix",
    "bond_entropy",
    "product_state",
    "random_mps",
    "mps_from_dense",
    "build_mpo",
    "save_snapshot",
    "load_snapshot",
]


class DegenerateInputError(ValueError):
    """The tensor handed to a decomposition is identically zero."""


@dataclass
class TruncationReport:
    discarded_weight: float
    bond_dim_used: int


def svd_truncate(theta: np.ndarray, max_bond: int | None = None, cutoff: float = 0.0):
    """Truncated SVD of a matrix or a two-site block ``(Dl, d1, d2, Dr)``.

    Keeps the fewest singular values whose discarded squared weight stays
    below ``cutoff * sum(s**2)``, never more than ``max_bond``, and always drops
    values below ``1e-14 * s_max``.  The kept weights are *not* renormalized.

    Returns ``(left, weights, right, report)``.  For a 4-index input ``left``
    has shape ``(Dl, d1, k)`` and ``right`` has shape ``(k, d2, Dr)``.
    """
    theta = np.asarray(theta)
    four = theta.ndim == 4
    if four:
        dl, d1, d2, dr = theta.shape
        mat = theta.reshape(dl * d1, d2 * dr)
    elif theta.ndim == 2:
        mat = theta
    else:
        raise ValueError(f"expected a matrix or a two-site tensor, got ndim={theta.ndim}")
    try:
        u, s, vh = np.linalg.svd(mat, full_matrices=False)
    except np.linalg.LinAlgError:
        u, s, vh = _svd_fallback(mat)
    total = float(np.sum(s * s))
    if total == 0.0 or not np.isfinite(total):
        raise DegenerateInputError("cannot truncate an all-zero (or non-finite) tensor")
    keep = int(np.count_nonzero(s > SV_FLOOR * s[0]))
    if cutoff > 0.0:
        # tail[k] = weight discarded when keeping k values
        tail = np.concatenate([np.cumsum((s * s)[::-1])[::-1], [0.0]])
        ok = np.nonzero(tail <= cutoff * total)[0]
        keep = min(keep, int(ok[0]))
    if max_bond is not None:
        keep = min(keep, int(max_bond))
    keep = max(keep, 1)
    discarded = float(np.sum(s[keep:] ** 2)) / total
    left, weights, right = u[:, :keep], s[:keep], vh[:keep, :]
    if four:
        left = left.reshape(dl, d1, keep)
        right = right.reshape(keep, d2, dr)
    return left, weights, right, TruncationReport(discarded, keep)


def _svd_fallback(mat):
    import scipy.linalg

    return scipy.linalg.svd(mat, full_matrices=False, lapack_driver="gesvd")


class MPS:
    """Finite matrix product state with optional orthogonality center."""

    def __init__(self, tensors: Sequence[np.ndarray], center: int | None = None):
        self.tensors = [np.asarray(t, dtype=complex) for t in tensors]
        self.center = center
        self._check()

    def _check(self):
        if not self.tensors:
            raise ValueError("an MPS needs at least one site")
        if self.tensors[0].shape[0] != 1 or self.tensors[-1].shape[2] != 1:
            raise ValueError("boundary bonds must have dimension 1")
        for a, b in zip(self.tensors[:-1], self.tensors[1:]):
            if a.shape[2] != b.shape[0]:
                raise ValueError(f"bond mismatch {a.shape} -> {b.shape}")

    def __len__(self):
        return len(self.tensors)

    @property
    def dims(self) -> list:
        return [t.shape[1] for t in self.tensors]

    @property
    def bond_dims(self) -> list:
        return [t.shape[2] for t in self.tensors[:-1]]

    def max_bond(self) -> int:
        return max([1] + self.bond_dims)

    def copy(self) -> "MPS":
        return MPS([t.copy() for t in self.tensors], self.center)

    def norm(self) -> float:
        return float(np.sqrt(abs(overlap(self, self))))

    def normalize(self) -> "MPS":
        if self.center is None:
            self.canonicalize(0)
        c = self.center
        self.tensors[c] /= np.linalg.norm(self.tensors[c])
        return self

    def canonicalize(self, center: int) -> "MPS":
        """Move the orthogonality center to ``center`` with QR sweeps (in place)."""
        n = len(self)
        if not 0 <= center < n:
            raise IndexError(f"center {center} outside chain of length {n}")
        lo, hi = (0, n - 1) if self.center is None else (self.center, self.center)
        for k in range(min(lo, center), center):
            self._shift_right(k)
        for k in range(max(hi, center), center, -1):
            self._shift_left(k)
        self.center = center
        return self

    def _shift_right(self, k: int):
        t = self.tensors[k]
        dl, d, dr = t.shape
        q, r = np.linalg.qr(t.reshape(dl * d, dr))
        self.tensors[k] = q.reshape(dl, d, q.shape[1])
        self.tensors[k + 1] = np.tensordot(r, self.tensors[k + 1], axes=(1, 0))

    def _shift_left(self, k: int):
        t = self.tensors[k]
        dl, d, dr = t.shape
        q, r = np.linalg.qr(t.reshape(dl, d * dr).T)
        self.tensors[k] = q.T.reshape(q.shape[1], d, dr)
        self.tensors[k - 1] = np.tensordot(self.tensors[k - 1], r.T, axes=(2, 0))

    def to_dense(self) -> np.ndarray:
        psi = self.tensors[0].reshape(self.tensors[0].shape[1], -1)
        for t in self.tensors[1:]:
            psi = np.tensordot(psi, t, axes=(psi.ndim - 1, 0))
            psi = psi.reshape(-1, t.shape[2])
        return psi.reshape(-1)

    def is_left_isometry(self, k: int, tol: float = 1e-12) -> bool:
        t = self.tensors[k]
        m = t.reshape(-1, t.shape[2])
        return np.allclose(m.conj().T @ m, np.eye(m.shape[1]), atol=tol)

    def is_right_isometry(self, k: int, tol: float = 1e-12) -> bool:
        t = self.tensors[k]
        m = t.reshape(t.shape[0], -1)
        return np.allclose(m @ m.conj().T, np.eye(m.shape[0]), atol=tol)


def canonicalize(mps: MPS, center: int) -> MPS:
    """Return a copy of ``mps`` with its orthogonality center at ``center``."""
    return mps.copy().canonicalize(center)


def product_state(vectors: Sequence[np.ndarray]) -> MPS:
    """MPS of a product of normalized single-site vectors."""
    tensors = []
    for v in vectors:
        v = np.asarray(v, dtype=complex)
        tensors.append((v / np.linalg.norm(v)).reshape(1, -1, 1))
    return MPS(tensors, center=0)


def random_mps(dims: Sequence[int], bond: int, rng: np.random.Generator) -> MPS:
    """Normalized random MPS with bond dimensions capped by ``bond``."""
    n = len(dims)
    bonds = [1]
    for k in range(1, n):
        left = int(np.prod(dims[:k]))
        right = int(np.prod(dims[k:]))
        bonds.append(min(bond, left, right))
    bonds.append(1)
    tensors = [
        rng.normal(size=(bonds[k], dims[k], bonds[k + 1]))
        + 1j * rng.normal(size=(bonds[k], dims[k], bonds[k + 1]))
        for k in range(n)
    ]
    return MPS(tensors).canonicalize(0).normalize()


def mps_from_dense(psi: np.ndarray, dims: Sequence[int], max_bond: int | None = None, cutoff: float = 0.0) -> MPS:
    """Exact (or truncated) MPS of a dense state vector by successive SVDs."""
    psi = np.asarray(psi, dtype=complex).reshape(-1)
    if psi.size != int(np.prod(dims)):
        raise ValueError("state vector size does not match physical dimensions")
    tensors = []
    rest = psi.reshape(1, -1)
    for d in dims[:-1]:
        dl = rest.shape[0]
        mat = rest.reshape(dl * d, -1)
        u, s, vh, _ = svd_truncate(mat, max_bond, cutoff)
        tensors.append(u.reshape(dl, d, -1))
        rest = s[:, None] * vh
    tensors.append(rest.reshape(rest.shape[0], dims[-1], 1))
    return MPS(tensors, center=len(dims) - 1)


def overlap(a: MPS, b: MPS) -> complex:
    """Return ``<a|b>``."""
    if a.dims != b.dims:
        raise ValueError(f"physical dimensions differ: {a.dims} vs {b.dims}")
    env = np.ones((1, 1), dtype=complex)
    for ta, tb in zip(a.tensors, b.tensors):
        # env (a_bra, b_ket)
        x = np.tensordot(env, tb, axes=(1, 0))
        env = np.tensordot(ta.conj(), x, axes=([0, 1], [0, 1]))
    return complex(env[0, 0])


# -- MPO ----------------------------------------------------------------------


class MPO:
    """Matrix product operator, one rank-4 tensor per site."""

    def __init__(self, tensors: Sequence[np.ndarray]):
        self.tensors = [np.asarray(w) for w in tensors]

    def __len__(self):
        return len(self.tensors)

    @property
    def dims(self) -> list:
        return [w.shape[1] for w in self.tensors]

    @property
    def bond_dims(self) -> list:
        return [w.shape[3] for w in self.tensors[:-1]]

    def to_dense(self) -> np.ndarray:
        """Dense matrix; only sensible for tiny chains."""
        op = self.tensors[0][0]  # (t, s, w)
        for w in self.tensors[1:]:
            op = np.tensordot(op, w, axes=(op.ndim - 1, 0))
        op = op[..., 0]
        n = len(self)
        perm = list(range(0, 2 * n, 2)) + list(range(1, 2 * n, 2))
        dim = int(np.prod(self.dims))
        return op.transpose(perm).reshape(dim, dim)

    def __add__(self, other: "MPO") -> "MPO":
        if self.dims != other.dims:
            raise ValueError("cannot add MPOs on different chains")
        n = len(self)
        out = []
        for k, (a, b) in enumerate(zip(self.tensors, other.tensors)):
            la, d, _, ra = a.shape
            lb, _, _, rb = b.shape
            dtype = np.result_type(a, b)
            if n == 1:
                out.append(a + b)
            elif k == 0:
                w = np.zeros((1, d, d, ra + rb), dtype=dtype)
                w[:, :, :, :ra] = a
                w[:, :, :, ra:] = b
                out.append(w)
            elif k == n - 1:
                w = np.zeros((la + lb, d, d, 1), dtype=dtype)
                w[:la] = a
                w[la:] = b
                out.append(w)
            else:
                w = np.zeros((la + lb, d, d, ra + rb), dtype=dtype)
                w[:la, :, :, :ra] = a
                w[la:, :, :, ra:] = b
                out.append(w)
        return MPO(out)


def build_mpo(terms: TermList) -> MPO:
    """Encode a list of one- and two-site terms as an MPO.

    Uses a finite-state construction: on each bond the states are
    ``start`` (nothing placed yet), ``done`` (a term has been completed) and one
    open channel per distinct ``(left site, left operator)`` pair whose terms
    still have to be closed further right.  Long-range terms sharing a left
    operator (the oscillator coupling to every bath mode) share one channel,
    which keeps the bond dimension at 3-4 for the star geometry.
    """
    dims = list(terms.dims)
    n = len(dims)
    onsite: dict[int, list] = {k: [] for k in range(n)}
    closing: dict[tuple, dict[int, list]] = {}
    reach: dict[tuple, int] = {}
    for t in terms:
        if len(t.sites) == 1:
            onsite[t.sites[0]].append((t.coeff, t.ops[0]))
        elif len(t.sites) == 2:
            (i, a), (j, b) = sorted(zip(t.sites, t.ops))
            if i == j:
                raise ValueError("two-site term acting twice on the same site")
            key = (i, a)
            closing.setdefault(key, {}).setdefault(j, []).append((t.coeff, b))
            reach[key] = max(reach.get(key, i), j)
        else:
            raise ValueError("only one- and two-site terms are supported")

    # bond k sits between site k and k + 1; bond -1 / n-1 are the boundaries
    def states(bond: int) -> list:
        if bond < 0:
            return ["start"]
        if bond >= n - 1:
            return ["done"]
        chans = sorted(key for key in reach if key[0] <= bond < reach[key])
        return ["start", "done"] + chans

    tensors = []
    for k in range(n):
        d = dims[k]
        left, right = states(k - 1), states(k)
        li = {s: i for i, s in enumerate(left)}
        ri = {s: i for i, s in enumerate(right)}
        w = np.zeros((len(left), d, d, len(right)))
        eye = np.eye(d)
        if "start" in li and "start" in ri:
            w[li["start"], :, :, ri["start"]] = eye
        if "done" in li and "done" in ri:
            w[li["done"], :, :, ri["done"]] = eye
        if "start" in li and "done" in ri:
            for c, op in onsite[k]:
                w[li["start"], :, :, ri["done"]] += c * local_operator(op, d).real
        for key in ri:
            if key in ("start", "done"):
                continue
            if key[0] == k and "start" in li:
                w[li["start"], :, :, ri[key]] = local_operator(key[1], d).real
            elif key in li:
                w[li[key], :, :, ri[key]] = eye
        for key in li:
            if key in ("start", "done"):
                continue
            for c, op in closing.get(key, {}).get(k, []):
                if "done" not in ri:
                    raise AssertionError("closing term without a done state")
                w[li[key], :, :, ri["done"]] += c * local_operator(op, d).real
        tensors.append(w)
    return MPO(tensors)


# -- environments and effective operators ---------------------------------


def left_env_update(env, a, w):
    """Absorb site tensor ``a`` and MPO tensor ``w`` into a left environment."""
    x = np.tensordot(env, a, axes=(0, 0))  # (w, y, s, x')
    x = np.tensordot(x, w, axes=([0, 2], [0, 2]))  # (y, x', t, w')
    return np.tensordot(x, a.conj(), axes=([0, 2], [0, 1]))  # (x', w', y')


def right_env_update(env, b, w):
    """Absorb site tensor ``b`` and MPO tensor ``w`` into a right environment."""
    x = np.tensordot(b, env, axes=(2, 0))  # (x0, s, w, y)
    x = np.tensordot(x, w, axes=([1, 2], [2, 3]))  # (x0, y, w0, t)
    return np.tensordot(x, b.conj(), axes=([1, 3], [2, 1]))  # (x0, w0, y0)


def apply_two_site(lenv, w1, w2, renv, theta):
    x = np.tensordot(lenv, theta, axes=(0, 0))  # (w, a', s1, s2, b)
    x = np.tensordot(x, w1, axes=([0, 2], [0, 2]))  # (a', s2, b, t1, v)
    x = np.tensordot(x, w2, axes=([1, 4], [2, 0]))  # (a', b, t1, t2, u)
    return np.tensordot(x, renv, axes=([1, 4], [0, 1]))  # (a', t1, t2, b')


def apply_one_site(lenv, w, renv, m):
    x = np.tensordot(lenv, m, axes=(0, 0))  # (w, a', s, b)
    x = np.tensordot(x, w, axes=([0, 2], [0, 2]))  # (a', b, t, v)
    return np.tensordot(x, renv, axes=([1, 3], [0, 1]))  # (a', t, b')


class EffectiveOperator:
    """Projected Hamiltonian on one or two sites, cached for repeated matvecs.

    The MPO tensors of the block are merged once into a matrix
    ``(w * in, out * u)``; each application is then three matrix products.
    Equivalent to :func:`apply_one_site` / :func:`apply_two_site`.
    """

    def __init__(self, lenv, ws: Sequence[np.ndarray], renv):
        w = ws[0]
        for nxt in ws[1:]:
            w = np.tensordot(w, nxt, axes=(w.ndim - 1, 0))  # (wl, t1, s1, t2, s2, ..., wr)
        k = len(ws)
        outs = [1 + 2 * i for i in range(k)]
        ins = [2 + 2 * i for i in range(k)]
        w = w.transpose([0] + ins + outs + [w.ndim - 1])
        self.phys_in = tuple(w.shape[1: 1 + k])
        self.phys_out = tuple(w.shape[1 + k: 1 + 2 * k])
        self.wl, self.wr = w.shape[0], w.shape[-1]
        self.s_in = int(np.prod(self.phys_in))
        self.s_out = int(np.prod(self.phys_out))
        self.wmat = np.ascontiguousarray(w.reshape(self.wl * self.s_in, self.s_out * self.wr))
        self.a, _, self.a_out = lenv.shape
        self.b, _, self.b_out = renv.shape
        self.lmat = np.ascontiguousarray(lenv.reshape(self.a, self.wl * self.a_out).T)
        self.rmat = np.ascontiguousarray(renv.reshape(self.b * self.wr, self.b_out))

    @property
    def shape(self) -> tuple:
        return (self.a,) + self.phys_in + (self.b,)

    def __call__(self, x):
        a, b, ao, bo = self.a, self.b, self.a_out, self.b_out
        y = self.lmat @ x.reshape(a, self.s_in * b)  # (w a', s b)
        y = y.reshape(self.wl, ao, self.s_in, b).transpose(1, 3, 0, 2).reshape(ao * b, self.wl * self.s_in)
        y = y @ self.wmat  # (a' b, t u)
        y = y.reshape(ao, b, self.s_out, self.wr).transpose(0, 2, 1, 3).reshape(ao * self.s_out, b * self.wr)
        y = y @ self.rmat  # (a' t, b')
        return y.reshape((ao,) + self.phys_out + (bo,))


def boundary_envs(dtype=complex):
    one = np.ones((1, 1, 1), dtype=dtype)
    return one, one.copy()


def expectation(mps: MPS, mpo: MPO) -> float:
    """Real expectation value ``<psi|O|psi>`` of a Hermitian MPO."""
    if mps.dims != mpo.dims:
        raise ValueError(f"physical dimensions differ: {mps.dims} vs {mpo.dims}")
    env, _ = boundary_envs()
    for a, w in zip(mps.tensors, mpo.tensors):
        env = left_env_update(env, a, w)
    val = complex(env[0, 0, 0])
    if abs(val.imag) > 1e-10 * max(1.0, abs(val.real)):
        raise ValueError(f"expectation value has an imaginary part {val.imag:.3e}; operator not Hermitian?")
    return val.real


def reduced_density_matrix(mps: MPS, sites: Sequence[int] = (0, 1)) -> np.ndarray:
    """Reduced density matrix of the leading sites ``0 .. k-1`` of the chain.

    The result is Hermitian and trace-normalized (the state need not be).
    """
    sites = list(sites)
    k = len(sites)
    if sites != list(range(k)) or k == 0 or k > len(mps):
        raise ValueError("reduced density matrices are supported for contiguous head sites only")
    if mps.center is None or mps.center > k - 1:
        mps = canonicalize(mps, k - 1)
    block = mps.tensors[0][0]  # (s0, b)
    for t in mps.tensors[1:k]:
        block = np.tensordot(block, t, axes=(block.ndim - 1, 0))
    dim = int(np.prod(block.shape[:-1]))
    block = block.reshape(dim, -1)
    rho = block @ block.conj().T
    rho = 0.5 * (rho + rho.conj().T)
    return rho / np.trace(rho).real


def bond_entropy(mps: MPS, bond: int) -> float:
    """Von Neumann entropy (nats) of the Schmidt spectrum across ``bond``.

    ``bond`` ``b`` cuts between sites ``b`` and ``b + 1``.
    """
    if not 0 <= bond < len(mps) - 1:
        raise IndexError(f"bond {bond} outside the chain")
    m = canonicalize(mps, bond).tensors[bond]
    s = np.linalg.svd(m.reshape(-1, m.shape[2]), compute_uv=False)
    p = s * s
    p = p[p > 0] / p.sum()
    return float(-np.sum(p * np.log(p)))


# -- snapshots -------------------------------------------------------------

_MAGIC = b"RBMPS"
_VERSION = 1


def save_snapshot(mps: MPS, path: str | Path) -> None:
    """Write ``mps`` in the versioned binary snapshot format.

    Layout (little endian): magic ``RBMPS``, uint32 version, uint32 n_sites,
    int32 center (-1 for none), n_sites uint32 physical dims, n_sites + 1 uint32
    bond dims, then each tensor as row-major complex128.
    """
    path = Path(path)
    n = len(mps)
    bonds = [1] + mps.bond_dims + [1]
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<IIi", _VERSION, n, -1 if mps.center is None else mps.center))
        fh.write(struct.pack(f"<{n}I", *mps.dims))
        fh.write(struct.pack(f"<{n + 1}I", *bonds))
        for t in mps.tensors:
            fh.write(np.ascontiguousarray(t, dtype="<c16").tobytes())
    tmp.replace(path)


def load_snapshot(path: str | Path) -> MPS:
    with open(path, "rb") as fh:
        if fh.read(len(_MAGIC)) != _MAGIC:
            raise ValueError(f"{path} is not an MPS snapshot")
        version, n, center = struct.unpack("<IIi", fh.read(12))
        if version != _VERSION:
            raise ValueError(f"unsupported snapshot version {version}")
        dims = struct.unpack(f"<{n}I", fh.read(4 * n))
        bonds = struct.unpack(f"<{n + 1}I", fh.read(4 * (n + 1)))
        tensors = []
        for k in range(n):
            shape = (bonds[k], dims[k], bonds[k + 1])
            count = int(np.prod(shape))
            data = np.frombuffer(fh.read(16 * count), dtype="<c16")
            if data.size != count:
                raise ValueError(f"{path}: truncated snapshot payload")
            tensors.append(data.reshape(shape).astype(complex))
    return MPS(tensors, None if center < 0 else center)
