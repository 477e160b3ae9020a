"""Imaginary-time spin paths and their Poisson-dressed segment form."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "WorldlineError",
    "Worldline",
    "WorldlineConfig",
    "DressedWorldline",
    "DressedConfig",
    "insert_potential_flips",
    "dress",
]


class WorldlineError(ValueError):
    """Worldline violates periodicity or ordering."""


@dataclass
class Worldline:
    """``sz(tau)`` on ``[0, beta)``: the sign just after ``tau = 0`` and the sorted flip times."""

    beta: float
    start_sign: int = 1
    flips: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        self.flips = np.asarray(self.flips, dtype=float).ravel()
        self.start_sign = int(self.start_sign)
        self.validate()

    def validate(self) -> None:
        f = self.flips
        if self.start_sign not in (-1, 1):
            raise WorldlineError(f"start sign must be +-1, got {self.start_sign}")
        if f.size % 2:
            raise WorldlineError(f"odd number of flips ({f.size}) breaks periodicity")
        if f.size and (f[0] < 0 or f[-1] >= self.beta):
            raise WorldlineError("flip times must lie in [0, beta)")
        if f.size > 1 and np.any(np.diff(f) <= 0):
            raise WorldlineError("flip times must be strictly increasing")

    @property
    def n_kinks(self) -> int:
        return int(self.flips.size)

    def sign_at(self, tau):
        """Sign on the open interval after ``tau`` (flips are right-continuous)."""
        tau = np.mod(np.asarray(tau, dtype=float), self.beta)
        n = np.searchsorted(self.flips, tau, side="right")
        return self.start_sign * (1 - 2 * (n % 2))

    def integral(self) -> float:
        """``int_0^beta sz(tau) dtau``."""
        pts = np.concatenate([[0.0], self.flips, [self.beta]])
        signs = self.start_sign * (1 - 2 * (np.arange(pts.size - 1) % 2))
        return float(np.dot(signs, np.diff(pts)))

    def copy(self) -> "Worldline":
        return Worldline(self.beta, self.start_sign, self.flips.copy())


@dataclass
class WorldlineConfig:
    """The two qubit worldlines sharing one period."""

    lines: tuple

    def __post_init__(self):
        self.lines = tuple(self.lines)
        if len(self.lines) != 2:
            raise WorldlineError("a configuration holds exactly two worldlines")
        if self.lines[0].beta != self.lines[1].beta:
            raise WorldlineError("worldlines must share the same beta")

    @property
    def beta(self) -> float:
        return self.lines[0].beta

    @classmethod
    def aligned(cls, beta: float, signs=(1, 1)) -> "WorldlineConfig":
        return cls(tuple(Worldline(beta, s) for s in signs))

    def validate(self) -> None:
        for ln in self.lines:
            ln.validate()

    def overlap_integral(self) -> float:
        """``int_0^beta sz1 sz2 dtau``."""
        a, b = self.lines
        pts = np.unique(np.concatenate([[0.0, self.beta], a.flips, b.flips]))
        mid = 0.5 * (pts[1:] + pts[:-1])
        return float(np.dot(a.sign_at(mid) * b.sign_at(mid), np.diff(pts)))

    def copy(self) -> "WorldlineConfig":
        return WorldlineConfig(tuple(ln.copy() for ln in self.lines))


@dataclass
class DressedWorldline:
    """Worldline cut at all marks (real kinks plus potential flips).

    Segment ``j`` is ``[cuts[j], cuts[j+1]]``; the last one wraps to
    ``cuts[0] + beta``.  Without cuts there is one segment ``[0, beta]``.
    """

    beta: float
    cuts: np.ndarray
    signs: np.ndarray

    @property
    def n_segments(self) -> int:
        return int(self.signs.size)

    def bounds(self):
        c = self.cuts
        if c.size == 0:
            return np.array([0.0]), np.array([self.beta])
        return c.copy(), np.concatenate([c[1:], [c[0] + self.beta]])

    def strip(self) -> Worldline:
        """Keep only cuts separating segments of opposite sign."""
        s = self.signs
        if s.size <= 1:
            return Worldline(self.beta, int(s[0]) if s.size else 1)
        kinks = s != np.roll(s, 1)
        return Worldline(self.beta, int(s[-1]), self.cuts[kinks])


def insert_potential_flips(worldline: Worldline, rng: np.random.Generator, delta: float = 1.0) -> DressedWorldline:
    """Add ``Poisson(beta * delta / 2)`` uniform marks to the real flips.

    The marks carry no sign change; together with the flips they cut the
    worldline into segments that the cluster and Metropolis moves flip.
    """
    beta = worldline.beta
    mu = 0.5 * beta * delta
    n = rng.poisson(mu) if mu > 0 else 0
    marks = rng.random(n) * beta
    cuts = np.sort(np.concatenate([worldline.flips, marks]))
    if cuts.size == 0:
        return DressedWorldline(beta, cuts, np.array([worldline.start_sign]))
    ends = np.concatenate([cuts[1:], [cuts[0] + beta]])
    signs = worldline.sign_at(0.5 * (cuts + ends))
    return DressedWorldline(beta, cuts, np.asarray(signs, dtype=int))


@dataclass
class DressedConfig:
    """Both dressed worldlines flattened into one list of segments.

    ``couplings[a, b]`` is the coefficient of ``s_a s_b`` in the log-weight
    (filled in by :func:`rabibath.wlmc.updates.attach_couplings`).
    """

    lines: tuple
    start: np.ndarray
    end: np.ndarray
    line: np.ndarray
    signs: np.ndarray
    couplings: np.ndarray | None = None
    kernel_part: np.ndarray | None = None
    overlap: np.ndarray | None = None

    @property
    def beta(self) -> float:
        return self.lines[0].beta

    @property
    def n_segments(self) -> int:
        return int(self.signs.size)

    def strip(self) -> WorldlineConfig:
        out = []
        for k, dl in enumerate(self.lines):
            dl.signs = self.signs[self.line == k].copy()
            out.append(dl.strip())
        return WorldlineConfig(tuple(out))

    def log_weight(self) -> float:
        """Interaction part of the log-weight, ``sum_{a<b} E_ab s_a s_b``."""
        s = self.signs.astype(float)
        return 0.5 * float(s @ self.couplings @ s)


def dress(config: WorldlineConfig, rng: np.random.Generator, delta: float = 1.0) -> DressedConfig:
    dressed = tuple(insert_potential_flips(ln, rng, delta) for ln in config.lines)
    starts, ends, lines, signs = [], [], [], []
    for k, dl in enumerate(dressed):
        a, b = dl.bounds()
        starts.append(a)
        ends.append(b)
        lines.append(np.full(a.size, k))
        signs.append(dl.signs)
    return DressedConfig(dressed, np.concatenate(starts), np.concatenate(ends),
                         np.concatenate(lines), np.concatenate(signs).astype(int))
