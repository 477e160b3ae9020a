"""Retarded imaginary-time kernel of the two-spin action.

With the oscillator and bath integrated out, the spin paths carry the weight
``exp(1/2 int int K(t - t') S(t) S(t') dt dt')`` with ``S = sz1 + sz2`` and

    K(t) = int_0^wc dw J_eff(w) cosh(w (beta/2 - t)) / sinh(w beta / 2),

which is beta-periodic and symmetric about ``beta/2``.  Segment-pair double
integrals reduce to four evaluations of the twice-integrated kernel ``G``
(``G'' = K``, ``G(0) = G'(0) = 0``).  Over one period ``G`` is tabulated as
the periodic part ``G - Kbar x^2 / 2`` with quintic Hermite interpolation
(value, first and second derivative at every node).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.integrate import quad_vec
from scipy.interpolate import BPoly, PPoly

from ..model import ModelParams, effective_spectral_density

__all__ = [
    "KernelQuadratureError",
    "SegmentDomainError",
    "Segment",
    "EffectiveKernel",
    "effective_kernel",
    "segment_interaction",
    "pair_integrals",
    "kernel_direct",
]


class KernelQuadratureError(RuntimeError):
    """Adaptive quadrature over the spectral density did not converge."""


class SegmentDomainError(ValueError):
    """Segment pair outside the domain of the pair integral."""


class Segment(NamedTuple):
    """Constant-sign stretch ``[start, end]`` of worldline ``line``; ``end`` may exceed beta."""

    start: float
    end: float
    sign: int
    line: int = 0


# -- single-frequency building blocks ---------------------------------------
# For one mode of frequency w the kernel is D(x) = (e^{-wx} + e^{-w(b-x)}) / (1 - e^{-wb})
# on [0, b]; these return D, its integral and double integral from 0, times w^0, w^1, w^2.

def _mode_kernel(w, x, beta):
    den = -np.expm1(-w * beta)
    return (np.exp(-w * x) + np.exp(-w * (beta - x))) / den


def _mode_first(w, x, beta):
    den = -np.expm1(-w * beta)
    return -np.expm1(-w * x) * (1.0 + np.exp(-w * (beta - x))) / den


def _mode_second(w, x, beta):
    den = -np.expm1(-w * beta)
    return w * x - (-np.expm1(-w * x)) * (-np.expm1(-w * (beta - x))) / den


@dataclass
class EffectiveKernel:
    """Periodic kernel with O(1) segment-pair integrals.

    Build with :func:`effective_kernel`, :meth:`constant`, :meth:`discrete`
    or :meth:`zero`.  ``mean`` is the period average of ``K``.
    """

    beta: float
    mean: float
    kind: str
    quad_tol: float = 0.0
    nodes: np.ndarray | None = None
    k_nodes: np.ndarray | None = None
    _poly: PPoly | None = field(default=None, repr=False)
    _poly_k: PPoly | None = field(default=None, repr=False)
    _modes: tuple | None = field(default=None, repr=False)

    # constructors ------------------------------------------------------
    @classmethod
    def zero(cls, beta: float) -> "EffectiveKernel":
        return cls(float(beta), 0.0, "zero")

    @classmethod
    def constant(cls, beta: float, c: float) -> "EffectiveKernel":
        return cls(float(beta), float(c), "constant")

    @classmethod
    def discrete(cls, beta: float, freqs, weights) -> "EffectiveKernel":
        """Kernel of ``J(w) = sum_i weights_i delta(w - freqs_i)``, in closed form."""
        freqs = np.asarray(freqs, dtype=float)
        weights = np.asarray(weights, dtype=float)
        if np.any(freqs <= 0):
            raise ValueError("mode frequencies must be positive")
        mean = float(2.0 * np.sum(weights / freqs) / beta)
        return cls(float(beta), mean, "discrete", _modes=(freqs, weights))

    # evaluation ----------------------------------------------------------
    def _fold(self, tau):
        y = np.mod(np.asarray(tau, dtype=float), self.beta)
        return np.minimum(y, self.beta - y)

    def __call__(self, tau):
        """``K(tau)`` for any real ``tau`` (periodic, even)."""
        y = self._fold(tau)
        if self.kind == "zero":
            return np.zeros_like(y)
        if self.kind == "constant":
            return np.full_like(y, self.mean)
        if self.kind == "discrete":
            w, a = self._modes
            return np.tensordot(a, _mode_kernel(w[:, None], y.ravel()[None, :], self.beta), 1).reshape(y.shape)
        return self._poly_k(y) + self.mean

    def periodic_part(self, x):
        """``G(x) - mean * x^2 / 2``, which is beta-periodic and even."""
        y = self._fold(x)
        if self.kind in ("zero", "constant"):
            return np.zeros_like(y)
        if self.kind == "discrete":
            w, a = self._modes
            flat = y.ravel()[None, :]
            g = np.tensordot(a / w**2, _mode_second(w[:, None], flat, self.beta), 1).reshape(y.shape)
            return g - 0.5 * self.mean * y * y
        return self._poly(y)

    def twice_integrated(self, x):
        """``G(x) = int_0^x int_0^u K(v) dv du`` for any real ``x``."""
        x = np.asarray(x, dtype=float)
        return 0.5 * self.mean * x * x + self.periodic_part(x)

    def pair_integral(self, a1, a2, b1, b2):
        """``int_{a1}^{a2} int_{b1}^{b2} K(t - t') dt' dt`` (broadcasting)."""
        g = self.twice_integrated
        return g(np.subtract(a2, b1)) - g(np.subtract(a2, b2)) - g(np.subtract(a1, b1)) + g(np.subtract(a1, b2))


def pair_integrals(kernel: EffectiveKernel, start, end) -> np.ndarray:
    """Matrix of kernel double integrals between all segments ``[start_i, end_i]``."""
    start = np.asarray(start, dtype=float)
    end = np.asarray(end, dtype=float)
    if kernel.kind == "zero":
        return np.zeros((start.size, start.size))
    if kernel.kind == "constant":
        ln = end - start
        return kernel.mean * np.outer(ln, ln)
    n = start.size
    iu, ju = np.triu_indices(n, 1)
    out = np.zeros((n, n))
    vals = kernel.pair_integral(start[iu], end[iu], start[ju], end[ju])
    out[iu, ju] = vals
    out[ju, iu] = vals
    diag = end - start
    out[np.arange(n), np.arange(n)] = 2.0 * (kernel.twice_integrated(diag) - kernel.twice_integrated(0.0))
    return out


def segment_interaction(seg_a: Segment, seg_b: Segment, kernel: EffectiveKernel) -> float:
    """Signed double integral ``s_a s_b int_a int_b K(t - t')`` of two segments.

    A segment paired with itself on the same worldline is a self-interaction
    and is rejected; it is a constant of the action and handled there.
    """
    if seg_a.line == seg_b.line and seg_a.start == seg_b.start and seg_a.end == seg_b.end:
        raise SegmentDomainError("self-interaction of a segment is not a pair integral")
    for s in (seg_a, seg_b):
        if s.end < s.start or s.end - s.start > kernel.beta * (1 + 1e-12):
            raise SegmentDomainError(f"segment [{s.start}, {s.end}] is not within one period")
    if seg_a.end == seg_a.start or seg_b.end == seg_b.start:
        return 0.0
    val = kernel.pair_integral(seg_a.start, seg_a.end, seg_b.start, seg_b.end)
    return float(seg_a.sign * seg_b.sign * val)


# -- construction from the model ---------------------------------------------

def _node_grid(beta: float, omega_c: float, density: int) -> np.ndarray:
    half = 0.5 * beta
    lo = min(1e-4 / omega_c, 1e-3 * half)
    decades = np.log10(half / lo)
    geo = np.geomspace(lo, half, max(int(np.ceil(decades * 30 * density)), 8))
    lin = np.linspace(0.0, half, 100 * density + 1)
    return np.unique(np.concatenate([[0.0], geo, lin]))


def _breakpoints(params: ModelParams) -> list:
    wc, w0 = params.omega_c, params.omega0
    pts = [wc * 10.0**-k for k in range(1, 9)]
    width = max(np.pi * params.alpha * w0, 1e-3)
    pts += [w0 - 2 * width, w0 - width, w0, w0 + width, w0 + 2 * width, 2 * w0, 0.9 * wc, 0.99 * wc]
    return sorted(p for p in set(pts) if 0 < p < wc)


def effective_kernel(beta: float, params: ModelParams, quad_tol: float = 1e-10,
                     grid_density: int = 1) -> EffectiveKernel:
    """Tabulate the kernel of ``params`` at inverse temperature ``beta``.

    ``g = 0`` gives the zero kernel and ``alpha = 0`` the single-oscillator
    kernel ``g^2 cosh(w0 (beta/2 - t)) / sinh(w0 beta/2)`` in closed form.
    Otherwise ``K``, ``G'`` and ``G`` are integrated over ``0 < w < wc`` by
    vector adaptive quadrature at every node, each to relative accuracy
    ``quad_tol``.  ``grid_density`` multiplies the number of nodes.
    """
    if not beta > 0:
        raise ValueError(f"beta must be positive, got {beta}")
    if params.g == 0.0:
        return EffectiveKernel.zero(beta)
    if params.alpha == 0.0:
        return EffectiveKernel.discrete(beta, [params.omega0], [params.g**2])

    wc = params.omega_c
    x = _node_grid(beta, wc, grid_density)
    nx = x.size
    pts = _breakpoints(params)

    def integrand(w, scale):
        jw = effective_spectral_density(w, params)
        out = np.concatenate([
            jw * _mode_kernel(w, x, beta),
            jw / w * _mode_first(w, x, beta),
            jw / (w * w) * _mode_second(w, x, beta),
        ])
        return out / scale

    # coarse pass for magnitudes, then a scaled pass for per-node relative accuracy
    rough, _ = quad_vec(lambda w: integrand(w, 1.0), 0.0, wc, epsrel=1e-4, norm="max", points=pts, limit=4000)
    scale = np.abs(rough)
    scale[scale == 0] = 1.0
    vals, err, info = quad_vec(lambda w: integrand(w, scale), 0.0, wc, epsabs=quad_tol, epsrel=0.0,
                               norm="max", points=pts, limit=20000, full_output=True)
    if not info.success or err > 10 * quad_tol:
        raise KernelQuadratureError(
            f"kernel quadrature failed at beta={beta}: status={info.status}, "
            f"max relative error estimate {err:.2e} > {quad_tol:.1e}, intervals={info.intervals.shape[0]}"
        )
    vals = vals * scale
    k_vals, f_vals, g_vals = vals[:nx], vals[nx: 2 * nx], vals[2 * nx:]
    f_vals[0] = g_vals[0] = 0.0
    lam, _ = _lambda(params)
    mean = 2.0 * lam / beta
    derivs = np.column_stack([g_vals - 0.5 * mean * x * x, f_vals - mean * x, k_vals - mean])
    poly = PPoly.from_bernstein_basis(BPoly.from_derivatives(x, derivs))
    return EffectiveKernel(float(beta), float(mean), "tabulated", quad_tol, x, k_vals, poly, poly.derivative(2))


def _lambda(params: ModelParams):
    """``int J_eff(w) / w dw``, the static weight of the kernel over one period."""
    val, err = quad_vec(lambda w: np.atleast_1d(effective_spectral_density(w, params) / w), 0.0,
                        params.omega_c, epsrel=1e-13, points=_breakpoints(params), limit=4000)
    return float(val[0]), float(err)


def kernel_direct(tau, beta: float, params: ModelParams, tol: float = 1e-12) -> np.ndarray:
    """``K(tau)`` straight from its frequency integral, without any table."""
    y = np.mod(np.atleast_1d(np.asarray(tau, dtype=float)), beta)
    val, _ = quad_vec(lambda w: effective_spectral_density(w, params) * _mode_kernel(w, y, beta),
                      0.0, params.omega_c, epsrel=tol, norm="max", points=_breakpoints(params), limit=20000)
    return val
