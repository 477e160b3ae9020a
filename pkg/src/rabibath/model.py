"""Physical parameters, Ohmic bath discretization and the chain Hamiltonian.

All energies are measured in units of the qubit gap ``delta`` (which is 1.0
unless overridden).  The chain layout used everywhere in the package is::

    [qubit 1, qubit 2, oscillator, bath_1, ..., bath_N]

with the bath modes ordered by ascending frequency unless an explicit
``bath_order`` permutation is requested.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .io import write_csv

__all__ = [
    "ParameterError",
    "ModelParams",
    "BathDiscretization",
    "RenormalizedModel",
    "Term",
    "TermList",
    "discretize_bath",
    "renormalize",
    "effective_spectral_density",
    "build_hamiltonian_terms",
    "local_operator",
    "prepare_model",
]

RENORMALIZATIONS = ("self_consistent", "bare")


class ParameterError(ValueError):
    """Raised for physically invalid model or numerical parameters."""


@dataclass(frozen=True)
class ModelParams:
    """Couplings of the dissipative two-qubit Rabi model.

    ``renormalization`` selects how the discretized Ohmic couplings are read:

    * ``"self_consistent"``: the discretized couplings already are the
      renormalized oscillator-bath couplings, and the renormalized oscillator
      frequency solves ``w^2 - 4 S w - omega0^2 = 0``.
    * ``"bare"``: the discretized couplings are the bare ones; the frequency
      shift is ``w^2 = omega0^2 + 4 omega0 S`` and the couplings are rescaled
      by ``sqrt(omega0 / w)``.  This is the reading under which the closed-form
      effective spectral density of the qubits holds.
    """

    delta: float = 1.0
    j_coupling: float = -10.0
    omega0: float = 1.0
    g: float = 0.0
    alpha: float = 0.1
    omega_c: float = 30.0
    n_modes: int = 40
    n_osc: int = 10
    n_bos: int = 3
    renormalization: str = "bare"

    def __post_init__(self):
        if not self.delta > 0:
            raise ParameterError(f"delta must be positive, got {self.delta}")
        if not self.omega0 > 0:
            raise ParameterError(f"omega0 must be positive, got {self.omega0}")
        if not self.omega_c > 0:
            raise ParameterError(f"omega_c must be positive, got {self.omega_c}")
        if self.alpha < 0:
            raise ParameterError(f"alpha must be non-negative, got {self.alpha}")
        if self.n_modes < 0:
            raise ParameterError(f"n_modes must be non-negative, got {self.n_modes}")
        if self.n_osc < 2 or self.n_bos < 2:
            raise ParameterError("n_osc and n_bos must be at least 2")
        if self.renormalization not in RENORMALIZATIONS:
            raise ParameterError(
                f"renormalization must be one of {RENORMALIZATIONS}, got {self.renormalization!r}"
            )

    def with_(self, **changes) -> "ModelParams":
        return replace(self, **changes)


@dataclass(frozen=True)
class BathDiscretization:
    """Discrete star-geometry bath: mode frequencies and squared couplings."""

    frequencies: np.ndarray
    couplings_sq: np.ndarray

    def __post_init__(self):
        freqs = np.asarray(self.frequencies, dtype=float)
        gsq = np.asarray(self.couplings_sq, dtype=float)
        if freqs.shape != gsq.shape or freqs.ndim != 1:
            raise ParameterError("frequencies and couplings_sq must be 1D arrays of equal length")
        if np.any(gsq < 0):
            raise ParameterError("squared couplings must be non-negative")
        object.__setattr__(self, "frequencies", freqs)
        object.__setattr__(self, "couplings_sq", gsq)

    @property
    def n_modes(self) -> int:
        return len(self.frequencies)

    def reorganization_sum(self) -> float:
        """Return ``sum_i |g_i|^2 / omega_i``."""
        if self.n_modes == 0:
            return 0.0
        return float(np.sum(self.couplings_sq / self.frequencies))

    def scaled(self, factor: float) -> "BathDiscretization":
        return BathDiscretization(self.frequencies.copy(), self.couplings_sq * factor)

    def to_csv(self, path: str | Path) -> None:
        rows = ((i, float(w), float(gsq)) for i, (w, gsq) in
                enumerate(zip(self.frequencies, self.couplings_sq), start=1))
        write_csv(path, ["index", "omega", "g_sq"], rows)


@dataclass(frozen=True)
class RenormalizedModel:
    """Model after the bath-induced shift of the oscillator.

    ``bath`` holds the couplings that enter the chain Hamiltonian, i.e. the
    renormalized oscillator-bath couplings.
    """

    base: ModelParams
    omega0_bar: float
    g_bar: float
    bath: BathDiscretization

    def with_g(self, g: float) -> "RenormalizedModel":
        """Same bath and frequency shift, different qubit-oscillator coupling."""
        return replace(
            self,
            base=self.base.with_(g=g),
            g_bar=g * math.sqrt(self.base.omega0 / self.omega0_bar),
        )


def discretize_bath(alpha: float, omega_c: float, n_modes: int, scheme: str = "midpoint") -> BathDiscretization:
    """Discretize ``J(w) = (alpha/2) w`` on ``(0, omega_c)`` into ``n_modes`` modes.

    The midpoint rule is exact for the linear density, so the couplings obey
    ``sum |g_i|^2 = alpha * omega_c**2 / 4`` and ``sum |g_i|^2 / w_i = alpha * omega_c / 2``.
    """
    if not omega_c > 0:
        raise ParameterError(f"omega_c must be positive, got {omega_c}")
    if alpha < 0:
        raise ParameterError(f"alpha must be non-negative, got {alpha}")
    if n_modes < 0 or (n_modes == 0 and alpha > 0):
        raise ParameterError("a coupled bath needs at least one mode")
    if scheme != "midpoint":
        raise ParameterError(f"unknown discretization scheme {scheme!r}")
    if n_modes == 0:
        return BathDiscretization(np.zeros(0), np.zeros(0))
    width = omega_c / n_modes
    freqs = (np.arange(1, n_modes + 1) - 0.5) * width
    gsq = 0.5 * alpha * freqs * width
    return BathDiscretization(freqs, gsq)


def renormalize(params: ModelParams, bath: BathDiscretization | None = None) -> RenormalizedModel:
    """Shift the oscillator frequency and rescale the qubit-oscillator coupling.

    With ``S = sum_i |g_i|^2 / w_i`` over the discretized couplings:

    * self-consistent reading: ``w0_bar = 2 S + sqrt(4 S^2 + w0^2)``;
    * bare reading: ``w0_bar = sqrt(w0^2 + 4 w0 S)`` and the bath couplings are
      multiplied by ``w0 / w0_bar``.

    In both cases ``g_bar = g sqrt(w0 / w0_bar)`` and the static susceptibility
    of the dressed oscillator equals that of the bare one.
    """
    if bath is None:
        bath = discretize_bath(params.alpha, params.omega_c, params.n_modes)
    s = bath.reorganization_sum()
    w0 = params.omega0
    if params.renormalization == "self_consistent":
        w_bar = 2.0 * s + math.sqrt(4.0 * s * s + w0 * w0)
        chain_bath = bath
    else:
        w_bar = math.sqrt(w0 * w0 + 4.0 * w0 * s)
        chain_bath = bath.scaled(w0 / w_bar)
    g_bar = params.g * math.sqrt(w0 / w_bar)
    return RenormalizedModel(base=params, omega0_bar=w_bar, g_bar=g_bar, bath=chain_bath)


def prepare_model(params: ModelParams) -> RenormalizedModel:
    """Discretize the bath of ``params`` and renormalize in one go."""
    return renormalize(params, discretize_bath(params.alpha, params.omega_c, params.n_modes))


def effective_spectral_density(omega, params: ModelParams):
    """Spectral density seen by each qubit once oscillator and bath are traced out.

    ``J_eff(w) = 2 g^2 w0^2 alpha w / [(w^2 - w0^2 - h(w))^2 + (pi alpha w0 w)^2]``
    with ``h(w) = alpha w0 w log((wc + w) / (wc - w))``, defined on ``0 < w < wc``.
    Accepts scalars or arrays.
    """
    w = np.asarray(omega, dtype=float)
    wc = params.omega_c
    if np.any(w <= 0) or np.any(w >= wc):
        raise ParameterError("effective spectral density is defined only on 0 < omega < omega_c")
    w0, a, g = params.omega0, params.alpha, params.g
    h = a * w0 * w * np.log((wc + w) / (wc - w))
    out = 2.0 * g * g * w0 * w0 * a * w / ((w * w - w0 * w0 - h) ** 2 + (math.pi * a * w0 * w) ** 2)
    return float(out) if np.ndim(omega) == 0 else out


# -- chain Hamiltonian -------------------------------------------------------

QUBIT1, QUBIT2, OSC = 0, 1, 2


@dataclass(frozen=True)
class Term:
    """One Hamiltonian term: ``coeff * prod_k op_k(site_k)``.

    ``group`` tags the energy contribution: ``"S"`` (qubits + oscillator),
    ``"B"`` (free bath), ``"SB"`` (oscillator-bath coupling) or ``"extra"``.
    """

    sites: tuple
    ops: tuple
    coeff: float
    group: str = "S"


@dataclass
class TermList:
    terms: list
    dims: list
    bath_order: tuple = field(default=())

    def __len__(self):
        return len(self.terms)

    def __iter__(self):
        return iter(self.terms)

    def select(self, groups: Iterable[str]) -> "TermList":
        groups = set(groups)
        return TermList([t for t in self.terms if t.group in groups], list(self.dims), self.bath_order)

    def extended(self, extra: Sequence[Term]) -> "TermList":
        return TermList(list(self.terms) + list(extra), list(self.dims), self.bath_order)

    @property
    def n_sites(self) -> int:
        return len(self.dims)


def build_hamiltonian_terms(renorm: RenormalizedModel, bath_order: Sequence[int] | None = None) -> TermList:
    """Ordered term list of the chain Hamiltonian.

    Terms with a vanishing coefficient are dropped.  ``bath_order[k]`` is the
    index of the bath mode placed on chain site ``3 + k`` (ascending frequency
    when omitted).  Zero-point constants are not included.
    """
    p = renorm.base
    bath = renorm.bath
    n = bath.n_modes
    if bath_order is None:
        bath_order = tuple(int(i) for i in np.argsort(bath.frequencies, kind="stable"))
    else:
        bath_order = tuple(int(i) for i in bath_order)
        if sorted(bath_order) != list(range(n)):
            raise ParameterError("bath_order must be a permutation of the bath modes")

    terms: list[Term] = []

    def add(sites, ops, coeff, group):
        if coeff != 0.0:
            terms.append(Term(tuple(sites), tuple(ops), float(coeff), group))

    add((QUBIT1,), ("sx",), -0.5 * p.delta, "S")
    add((QUBIT2,), ("sx",), -0.5 * p.delta, "S")
    add((QUBIT1, QUBIT2), ("sz", "sz"), 0.25 * p.j_coupling, "S")
    add((OSC,), ("n",), renorm.omega0_bar, "S")
    add((QUBIT1, OSC), ("sz", "x"), renorm.g_bar, "S")
    add((QUBIT2, OSC), ("sz", "x"), renorm.g_bar, "S")
    for k, mode in enumerate(bath_order):
        add((OSC + 1 + k,), ("n",), bath.frequencies[mode], "B")
    for k, mode in enumerate(bath_order):
        add((OSC, OSC + 1 + k), ("x", "x"), -math.sqrt(bath.couplings_sq[mode]), "SB")

    dims = [2, 2, p.n_osc] + [p.n_bos] * n
    return TermList(terms, dims, bath_order)


def local_operator(label: str, dim: int) -> np.ndarray:
    """Dense matrix of a single-site operator.

    Qubit basis is ``(|up>, |down>)`` with ``sz = diag(1, -1)``; bosonic sites
    use the truncated Fock basis.
    """
    if label == "id":
        return np.eye(dim)
    if label in ("sx", "sy", "sz"):
        if dim != 2:
            raise ParameterError(f"Pauli operator {label} needs a 2-level site, got dim={dim}")
        return {
            "sx": np.array([[0.0, 1.0], [1.0, 0.0]]),
            "sy": np.array([[0.0, -1.0j], [1.0j, 0.0]]),
            "sz": np.array([[1.0, 0.0], [0.0, -1.0]]),
        }[label]
    a = np.diag(np.sqrt(np.arange(1, dim, dtype=float)), 1)
    if label == "a":
        return a
    if label == "adag":
        return a.T.copy()
    if label == "n":
        return np.diag(np.arange(dim, dtype=float))
    if label == "x":
        return a + a.T
    raise ParameterError(f"unknown local operator {label!r}")
