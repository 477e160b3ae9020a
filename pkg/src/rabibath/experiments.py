"""Protocols: initial state, quench dynamics, equilibrium scans, relaxation.

Everything here is built from the chain Hamiltonian of :mod:`rabibath.model`,
DMRG ground states and 2TDVP time evolution.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .dmrg import DmrgConfig, DmrgResult, ground_state
from .io import write_csv
from .model import ModelParams, Term, build_hamiltonian_terms, local_operator, prepare_model
from .qinfo import concurrence, uhlmann_fidelity, von_neumann_entropy
from .tdvp import TdvpConfig, evolve
from .tensornet import MPS, build_mpo, expectation, overlap, product_state, reduced_density_matrix

log = logging.getLogger(__name__)

__all__ = [
    "ConvergenceError",
    "DegeneratePerturbationError",
    "PROFILES",
    "profile",
    "qubit_ground_vector",
    "prepare_initial_state",
    "rate_function",
    "QuenchConfig",
    "TimeSeries",
    "quench_run",
    "ScanPoint",
    "equilibrium_scan",
    "write_scan",
    "relaxation_run",
    "first_peak",
]


class ConvergenceError(RuntimeError):
    """A DMRG ground state did not converge."""


class DegeneratePerturbationError(ValueError):
    """The perturbed ground state has no oscillator displacement to follow."""


PROFILES = {
    "desk": {"model": {"n_modes": 40, "n_osc": 10, "n_bos": 3}, "max_bond": 40, "t_final": 20.0,
             "dt": 0.05, "observe_every": 2},
    "paper": {"model": {"n_modes": 300, "n_osc": 16, "n_bos": 3}, "max_bond": 50, "t_final": 50.0,
              "dt": 0.01, "observe_every": 10},
}


def profile(name: str, **model_overrides):
    """``(ModelParams, DmrgConfig, TdvpConfig)`` for a named size profile."""
    if name not in PROFILES:
        raise KeyError(f"unknown profile {name!r}; choose from {sorted(PROFILES)}")
    p = PROFILES[name]
    model = ModelParams(**{**p["model"], **model_overrides})
    tdvp = TdvpConfig(max_bond=p["max_bond"], t_final=p["t_final"], dt=p["dt"], observe_every=p["observe_every"])
    return model, DmrgConfig(max_bond=p["max_bond"]), tdvp


# -- initial state -------------------------------------------------------------

def qubit_ground_vector(delta: float, j: float) -> np.ndarray:
    """Ground vector of the bare two-qubit Hamiltonian (basis up-up, up-down, down-up, down-down)."""
    from .ed import qubit_hamiltonian

    evals, evecs = np.linalg.eigh(qubit_hamiltonian(delta, j))
    v = evecs[:, 0]
    return v * np.exp(-1j * np.angle(v[np.argmax(np.abs(v))]))


def _qubit_product_mps(vec4: np.ndarray, dims: Sequence[int]) -> MPS:
    """Two-qubit vector on sites 0, 1 (exact, bond dimension <= 2) times vacua elsewhere."""
    mat = np.asarray(vec4, dtype=complex).reshape(2, 2)
    u, s, vh = np.linalg.svd(mat)
    keep = max(1, int(np.sum(s > 1e-14 * s[0])))
    a0 = u[:, :keep].reshape(1, 2, keep)
    a1 = (s[:keep, None] * vh[:keep]).reshape(keep, 2, 1)
    rest = product_state([np.eye(d)[0] for d in dims[2:]]).tensors
    mps = MPS([a0, a1] + list(rest))
    return mps.normalize()


def _check(result: DmrgResult, what: str, allow_unconverged: bool) -> DmrgResult:
    if not result.converged:
        msg = f"DMRG for {what} did not converge (sweep energies {result.sweep_energies[-3:]})"
        if not allow_unconverged:
            raise ConvergenceError(msg)
        log.warning(msg)
    return result


def prepare_initial_state(model: ModelParams, dmrg: DmrgConfig | None = None, bare_vacuum: bool = False,
                          g: float = 0.0, allow_unconverged: bool = False) -> MPS:
    """Ground state of the full chain with the qubit-oscillator coupling set to ``g``.

    The default ``g = 0`` decouples the qubits, leaving the two-qubit ground
    state times the dressed oscillator-bath ground state.  ``bare_vacuum``
    instead returns the two-qubit ground state times the Fock vacuum of every
    boson (only meaningful at ``g = 0``).
    """
    renorm = prepare_model(model).with_g(g)
    terms = build_hamiltonian_terms(renorm)
    guess = _qubit_product_mps(qubit_ground_vector(model.delta, model.j_coupling), terms.dims)
    if bare_vacuum:
        if g != 0.0:
            raise ValueError("the bare-vacuum state is defined for the decoupled (g = 0) Hamiltonian")
        return guess
    res = ground_state(build_mpo(terms), guess, dmrg or DmrgConfig())
    _check(res, f"the initial state (g={g})", allow_unconverged)
    return res.state


# -- Loschmidt echo -------------------------------------------------------------

def rate_function(echo, rate_n: float):
    """``-ln(L) / rate_n``; ``L = 0`` (orthogonality) maps to ``+inf``.

    Values of ``L`` a hair above one from roundoff give zero.
    """
    if not rate_n >= 1:
        raise ValueError(f"rate_n must be at least 1, got {rate_n}")
    arr = np.asarray(echo, dtype=float)
    if np.any(arr < 0) or np.any(arr > 1 + 1e-9) or np.any(~np.isfinite(arr)):
        raise ValueError("Loschmidt echo must lie in [0, 1]")
    with np.errstate(divide="ignore"):
        lam = np.where(arr > 0, -np.log(np.minimum(arr, 1.0)) / rate_n, np.inf)
    lam = np.maximum(lam, 0.0)
    if np.any(np.isinf(lam)):
        log.warning("Loschmidt echo vanished at %d time point(s): orthogonality event", int(np.isinf(lam).sum()))
    return float(lam) if lam.ndim == 0 else lam


@dataclass
class QuenchConfig:
    """Sudden switch of the qubit-oscillator coupling from ``g_initial`` to ``model.g``.

    ``rate_n`` divides ``-ln L``; it defaults to the number of bath modes.
    """

    model: ModelParams
    tdvp: TdvpConfig = field(default_factory=TdvpConfig)
    dmrg: DmrgConfig = field(default_factory=DmrgConfig)
    rate_n: float | None = None
    g_initial: float = 0.0
    bare_vacuum: bool = False
    allow_unconverged: bool = False

    def __post_init__(self):
        if self.rate_n is not None and not self.rate_n >= 1:
            raise ValueError("rate_n must be at least 1")

    @property
    def effective_rate_n(self) -> float:
        return float(self.rate_n if self.rate_n is not None else max(self.model.n_modes, 1))


@dataclass
class TimeSeries:
    """Observables on the observation grid; ``columns`` are arrays aligned with ``t``."""

    t: np.ndarray
    columns: dict
    meta: dict = field(default_factory=dict)

    def __getitem__(self, name):
        return self.t if name == "t" else self.columns[name]

    def to_csv(self, path) -> Path:
        """One row per time; the coupling ``g`` is repeated so rows stand alone."""
        names = list(self.columns)
        g = self.meta.get("g", float("nan"))
        rows = ((g, t, *vals) for t, *vals in zip(self.t, *(self.columns[k] for k in names)))
        return write_csv(path, ["g", "t"] + names, rows)


def _group_mpo(terms, groups):
    sub = terms.select(groups)
    return build_mpo(sub) if len(sub) else None


def _qubit_obs(rho) -> tuple[float, float]:
    return von_neumann_entropy(rho), concurrence(rho)


def quench_run(config: QuenchConfig, psi0: MPS | None = None) -> TimeSeries:
    """Evolve the initial state under the post-quench Hamiltonian.

    Records ``L = |<psi0|psi(t)>|^2``, the rate function, qubit entropy,
    concurrence and root fidelity with the initial qubit state, and the
    ``S``/``B``/``SB`` energy parts, plus norm, total energy and truncation.
    """
    model = config.model
    if psi0 is None:
        psi0 = prepare_initial_state(model, config.dmrg, config.bare_vacuum, config.g_initial,
                                     config.allow_unconverged)
    terms = build_hamiltonian_terms(prepare_model(model))
    mpo = build_mpo(terms)
    parts = {k: _group_mpo(terms, [k]) for k in ("S", "B", "SB")}
    rho0 = reduced_density_matrix(psi0)
    n_rate = config.effective_rate_n
    psi0c = psi0.copy().normalize()

    def observe(t, psi):
        amp = overlap(psi0c, psi)
        rho = reduced_density_matrix(psi)
        s_q, c_q = _qubit_obs(rho)
        out = {
            "L": min(abs(amp) ** 2, 1.0),
            "S_q": s_q,
            "C_q": c_q,
            "F_qub": uhlmann_fidelity(rho0, rho),
            "max_bond": psi.max_bond(),
        }
        for k, m in parts.items():
            out[f"H_{k}"] = expectation(psi, m) if m is not None else 0.0
        return out

    start = time.perf_counter()
    _, record, (obs,) = evolve(psi0c, mpo, config.tdvp, [observe])
    t = np.array(record.times)
    cols = {k: np.array([o[k] for o in obs]) for k in obs[0]}
    cols["lambda"] = rate_function(cols["L"], n_rate)
    cols["orthogonal"] = cols["L"] == 0.0
    cols["norm"] = np.array(record.norms)
    cols["energy"] = np.array(record.total_energies)
    disc = [0.0] + [r.discarded_weight for r in record.truncation]
    step_idx = np.rint(t / config.tdvp.dt).astype(int)
    cols["discarded"] = np.array([max(disc[: i + 1]) for i in step_idx])
    order = ["L", "lambda", "S_q", "C_q", "F_qub", "H_S", "H_B", "H_SB", "energy", "norm",
             "max_bond", "discarded", "orthogonal"]
    cols = {k: cols[k] for k in order}
    meta = {"g": model.g, "g_initial": config.g_initial, "rate_n": n_rate, "wall_time": time.perf_counter() - start}
    return TimeSeries(t, cols, meta)


def first_peak(ts: TimeSeries, column: str = "lambda", t_min: float = 0.5):
    """``(t, value)`` of the first local maximum of ``column`` after ``t_min``.

    Falls back to the global maximum when the series rises monotonically.
    """
    t, y = ts.t, np.asarray(ts[column], dtype=float)
    idx = np.nonzero(t >= t_min)[0]
    for i in idx:
        if 0 < i < len(y) - 1 and y[i] >= y[i - 1] and y[i] > y[i + 1]:
            return float(t[i]), float(y[i])
    k = idx[np.argmax(y[idx])]
    return float(t[k]), float(y[k])


# -- equilibrium -------------------------------------------------------------------

@dataclass
class ScanPoint:
    g: float
    energy: float
    S_q: float
    C_q: float
    sz1sz2: float
    sx_sum: float
    H_J: float
    H_Delta: float
    converged: bool
    max_bond: int
    discarded: float


def _qubit_moments(rho):
    sx, sz, i2 = local_operator("sx", 2), local_operator("sz", 2), np.eye(2)
    zz = float(np.trace(rho @ np.kron(sz, sz)).real)
    xs = float(np.trace(rho @ (np.kron(sx, i2) + np.kron(i2, sx))).real)
    return zz, xs


def equilibrium_scan(g_grid: Sequence[float], model: ModelParams, dmrg: DmrgConfig | None = None,
                     warm_start: bool = True, progress=None) -> list[ScanPoint]:
    """DMRG ground states along an ascending ``g`` grid.

    With ``warm_start`` each point starts from the previous ground state.
    Non-converged points are kept and flagged.
    """
    g_grid = [float(g) for g in g_grid]
    if any(b <= a for a, b in zip(g_grid, g_grid[1:])):
        raise ValueError("g grid must be strictly ascending")
    dmrg = dmrg or DmrgConfig()
    base = prepare_model(model)
    state = None
    out = []
    for g in g_grid:
        terms = build_hamiltonian_terms(base.with_g(g))
        init = state if (warm_start and state is not None) else _qubit_product_mps(
            qubit_ground_vector(model.delta, model.j_coupling), terms.dims)
        res = ground_state(build_mpo(terms), init, dmrg)
        if not res.converged:
            log.warning("scan point g=%g not converged", g)
        state = res.state
        rho = reduced_density_matrix(state)
        zz, xs = _qubit_moments(rho)
        s_q, c_q = _qubit_obs(rho)
        pt = ScanPoint(g, res.energy, s_q, c_q, zz, xs, 0.25 * model.j_coupling * zz, -0.5 * model.delta * xs,
                       res.converged, state.max_bond(), res.truncation.discarded_weight if res.truncation else 0.0)
        out.append(pt)
        if progress:
            progress(pt)
    return out


def write_scan(points: Sequence[ScanPoint], path) -> Path:
    names = list(ScanPoint.__dataclass_fields__)
    return write_csv(path, names, ([getattr(p, k) for k in names] for p in points))


# -- relaxation -------------------------------------------------------------------

PERTURBATIONS = ("linear", "number", "qubit_field")


def _perturbation_terms(kind: str, epsilon: float) -> list:
    if kind == "linear":
        return [Term((2,), ("x",), epsilon, "extra")]
    if kind == "number":
        return [Term((2,), ("n",), epsilon, "extra")]
    if kind == "qubit_field":
        return [Term((0,), ("sz",), epsilon, "extra"), Term((1,), ("sz",), epsilon, "extra")]
    raise ValueError(f"unknown perturbation {kind!r}; choose from {PERTURBATIONS}")


def relaxation_run(model: ModelParams, epsilon: float, tdvp: TdvpConfig | None = None,
                   dmrg: DmrgConfig | None = None, perturbation: str = "linear",
                   x_tol: float = 1e-8, allow_unconverged: bool = False) -> TimeSeries:
    """Release the ground state of ``H + epsilon * P`` and follow the oscillator.

    ``P`` is ``b + b^dag`` (``"linear"``), ``b^dag b`` (``"number"``) or
    ``sz1 + sz2`` (``"qubit_field"``).  Records ``Sigma_x = <x(t)> / <x(0)>``
    with ``x = b + b^dag``.  If ``|<x(0)>| <= x_tol`` the ratio is undefined
    and :class:`DegeneratePerturbationError` is raised.
    """
    if perturbation not in PERTURBATIONS:
        raise ValueError(f"unknown perturbation {perturbation!r}; choose from {PERTURBATIONS}")
    tdvp = tdvp or TdvpConfig()
    terms = build_hamiltonian_terms(prepare_model(model))
    perturbed = terms.extended(_perturbation_terms(perturbation, epsilon)) if epsilon != 0 else terms
    guess = _qubit_product_mps(qubit_ground_vector(model.delta, model.j_coupling), terms.dims)
    res = _check(ground_state(build_mpo(perturbed), guess, dmrg or DmrgConfig()), "the perturbed state",
                 allow_unconverged)
    x_mpo = build_mpo(type(terms)([Term((2,), ("x",), 1.0, "extra")], terms.dims, terms.bath_order))
    x0 = expectation(res.state, x_mpo)
    if abs(x0) <= x_tol:
        raise DegeneratePerturbationError(
            f"<x(0)> = {x0:.2e} for perturbation {perturbation!r} with epsilon={epsilon:g}; "
            "Sigma_x is undefined. Use a larger epsilon or the 'linear' perturbation."
        )
    parts = {k: _group_mpo(terms, [k]) for k in ("S", "B", "SB")}

    def observe(t, psi):
        out = {"x": expectation(psi, x_mpo)}
        for k, m in parts.items():
            out[f"H_{k}"] = expectation(psi, m) if m is not None else 0.0
        return out

    _, record, (obs,) = evolve(res.state, build_mpo(terms), tdvp, [observe])
    cols = {k: np.array([o[k] for o in obs]) for k in obs[0]}
    cols = {"Sigma_x": cols["x"] / x0, **cols, "norm": np.array(record.norms)}
    return TimeSeries(np.array(record.times), cols,
                      {"g": model.g, "epsilon": epsilon, "perturbation": perturbation, "x0": x0})


def extrema(values) -> np.ndarray:
    """Indices of interior local extrema of a sampled curve."""
    y = np.asarray(values, dtype=float)
    d = np.diff(y)
    return np.nonzero(d[:-1] * d[1:] < 0)[0] + 1
