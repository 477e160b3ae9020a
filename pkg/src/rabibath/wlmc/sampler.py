"""Markov chain driver, per-configuration measurements and estimators."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..io import write_csv
from ..model import ModelParams
from ..stats import binning_analysis, block_size_for, jackknife
from .kernel import EffectiveKernel, effective_kernel
from .updates import attach_couplings, cluster_update, metropolis_segment_flip
from .worldline import WorldlineConfig, dress

log = logging.getLogger(__name__)

__all__ = ["WlmcConfig", "Sample", "Estimates", "measure", "sweep", "run", "merge_estimates",
           "make_rng", "histogram_modes"]

HIST_BINS = 81


@dataclass
class WlmcConfig:
    """One (g, beta) point.  Energies in units of ``delta``."""

    beta: float = 100.0
    g: float = 0.2
    j_coupling: float = -10.0
    delta: float = 1.0
    omega0: float = 1.0
    alpha: float = 0.1
    omega_c: float = 30.0
    n_therm: int = 500
    n_sweeps: int = 20000
    seed: int = 0
    n_chains: int = 1
    n_tau: int = 128
    quad_tol: float = 1e-10
    grid_density: int = 1
    n_corr_blocks: int = 64

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        if self.delta < 0:
            raise ValueError("delta must be non-negative")
        if self.n_sweeps < 2 * self.n_corr_blocks:
            raise ValueError("n_sweeps must allow at least two sweeps per correlator block")
        if self.n_chains < 1 or self.n_tau < 2 or self.n_therm < 0:
            raise ValueError("n_chains, n_tau and n_therm out of range")

    def model(self) -> ModelParams:
        return ModelParams(delta=self.delta, j_coupling=self.j_coupling, omega0=self.omega0,
                           g=self.g, alpha=self.alpha, omega_c=self.omega_c)


@dataclass
class Sample:
    m: float            # (1 / 2 beta) int (sz1 + sz2)
    overlap: float      # (1 / beta) int sz1 sz2
    kinks: tuple        # flips on each worldline
    corr: np.ndarray | None = None  # <S(tau) S(0)> on lags k beta / (2 n_tau), k = 0..n_tau


def make_rng(seed: int, n_streams: int = 1) -> list:
    """Independent counter-based streams derived from one seed."""
    return [np.random.Generator(np.random.Philox(s)) for s in np.random.SeedSequence(seed).spawn(n_streams)]


def measure(config: WorldlineConfig, n_tau: int | None = None, offset: float | None = None) -> Sample:
    """Exact integrals of the current paths plus an optional sampled correlator.

    The correlator uses ``2 n_tau`` points ``offset + j h`` around the circle
    and is averaged over time translations; with ``offset`` uniform in
    ``[0, h)`` it is an unbiased estimate of ``<S(k h) S(0)>``.
    """
    beta = config.beta
    a, b = config.lines
    m = (a.integral() + b.integral()) / (2.0 * beta)
    ov = config.overlap_integral() / beta
    corr = None
    if n_tau:
        npts = 2 * n_tau
        h = beta / npts
        off = 0.5 * h if offset is None else offset
        t = off + h * np.arange(npts)
        s = (a.sign_at(t) + b.sign_at(t)).astype(float)
        f = np.fft.rfft(s)
        corr = np.fft.irfft(f * f.conj(), n=npts)[: n_tau + 1] / npts
    return Sample(float(m), float(ov), (a.n_kinks, b.n_kinks), corr)


def sweep(config: WorldlineConfig, kernel: EffectiveKernel, j_coupling: float, delta: float,
          rng: np.random.Generator) -> tuple[WorldlineConfig, dict]:
    """Dress, one cluster move, one Metropolis pass, strip the marks."""
    d = dress(config, rng, delta)
    attach_couplings(d, kernel, j_coupling)
    d, csize = cluster_update(d, kernel, j_coupling, rng)
    d, acc = metropolis_segment_flip(d, kernel, j_coupling, rng)
    new = d.strip()
    return new, {"segments": d.n_segments, "cluster": abs(csize), "accepted": acc}


@dataclass
class Estimates:
    """Thermal averages at one (g, beta) with error bars.

    ``scalars[name] = (value, error, tau_int, low_confidence)``.
    ``correlator`` holds ``tau``, ``C``, ``C_err``, ``C_norm``, ``C_norm_err``
    on ``tau in [0, beta/2]``.  ``histogram`` holds bin centres and
    probabilities (summing to one) of ``M/2``.
    """

    g: float
    beta: float
    scalars: dict
    histogram: dict
    correlator: dict
    n_samples: int
    low_confidence: bool
    wall_time: float = 0.0
    diagnostics: dict = field(default_factory=dict)

    def value(self, name: str) -> float:
        return self.scalars[name][0]

    def error(self, name: str) -> float:
        return self.scalars[name][1]

    def write(self, out_dir, stem: str | None = None) -> dict:
        """CSV files for scalars, the ``M/2`` histogram and the correlator."""
        out_dir = Path(out_dir)
        stem = stem or f"wlmc_g{self.g:g}_beta{self.beta:g}"
        paths = {}
        rows = [(self.g, self.beta, k, v[0], v[1], v[2], v[3]) for k, v in sorted(self.scalars.items())]
        paths["estimates"] = write_csv(out_dir / f"{stem}_estimates.csv",
                                       ["g", "beta", "estimator", "value", "error", "tau_int", "low_confidence"], rows)
        h = self.histogram
        paths["histogram"] = write_csv(out_dir / f"{stem}_histogram.csv", ["g", "beta", "m_half", "probability"],
                                       ((self.g, self.beta, c, p) for c, p in zip(h["centers"], h["probability"])))
        c = self.correlator
        half = 0.5 * self.beta
        paths["correlator"] = write_csv(
            out_dir / f"{stem}_correlator.csv",
            ["g", "beta", "tau", "tau_over_half_beta", "C", "C_err", "C_norm", "C_norm_err"],
            ((self.g, self.beta, t, t / half, v, e, n, ne) for t, v, e, n, ne in
             zip(c["tau"], c["C"], c["C_err"], c["C_norm"], c["C_norm_err"])))
        return paths


def _chain(cfg: WlmcConfig, kernel: EffectiveKernel, rng: np.random.Generator):
    signs = tuple(int(x) for x in rng.choice([-1, 1], size=1)) * 2
    config = WorldlineConfig.aligned(cfg.beta, signs)
    for _ in range(cfg.n_therm):
        config, _ = sweep(config, kernel, cfg.j_coupling, cfg.delta, rng)
    n = cfg.n_sweeps
    m = np.empty(n)
    ov = np.empty(n)
    kinks = np.empty(n)
    nblk = cfg.n_corr_blocks
    per = n // nblk
    corr_blocks = np.zeros((nblk, cfg.n_tau + 1))
    h = cfg.beta / (2 * cfg.n_tau)
    stats = {"segments": 0.0, "cluster": 0.0, "accepted": 0.0}
    for i in range(n):
        config, info = sweep(config, kernel, cfg.j_coupling, cfg.delta, rng)
        for k in stats:
            stats[k] += info[k]
        s = measure(config, cfg.n_tau, offset=rng.random() * h)
        m[i], ov[i], kinks[i] = s.m, s.overlap, sum(s.kinks)
        b = i // per
        if b < nblk:
            corr_blocks[b] += s.corr / per
    stats = {k: v / n for k, v in stats.items()}
    return {"m": m, "overlap": ov, "kinks": kinks, "corr_blocks": corr_blocks, "stats": stats}


def _scalar(series_by_chain):
    """Pool chains: mean of chain means, errors added in quadrature."""
    res = [binning_analysis(x) for x in series_by_chain]
    k = len(res)
    val = float(np.mean([r.mean for r in res]))
    err = float(np.sqrt(sum(r.error**2 for r in res)) / k)
    tau = float(np.mean([r.tau_int for r in res]))
    low = any(r.low_confidence for r in res)
    return val, err, tau, low


def run(cfg: WlmcConfig, kernel: EffectiveKernel | None = None) -> Estimates:
    """Run ``cfg.n_chains`` independent chains and reduce them to estimates."""
    start = time.perf_counter()
    if kernel is None:
        kernel = effective_kernel(cfg.beta, cfg.model(), cfg.quad_tol, cfg.grid_density)
    chains = [_chain(cfg, kernel, rng) for rng in make_rng(cfg.seed, cfg.n_chains)]
    beta, delta, j = cfg.beta, cfg.delta, cfg.j_coupling

    derived = {
        "m_half": [c["m"] for c in chains],
        "abs_m_half": [np.abs(c["m"]) for c in chains],
        "M2": [c["m"] ** 2 for c in chains],
        "sz1sz2": [c["overlap"] for c in chains],
        "H_J": [0.25 * j * c["overlap"] for c in chains],
        "H_Delta": [-c["kinks"] / beta for c in chains],
        "kinks": [c["kinks"] for c in chains],
    }
    if delta > 0:
        derived["sx_sum"] = [2.0 * c["kinks"] / (beta * delta) for c in chains]
        derived["sx_mean"] = [c["kinks"] / (beta * delta) for c in chains]
    scalars = {k: _scalar(v) for k, v in derived.items()}

    # correlator and quantities derived from it, jackknifed over blocks
    blocks = np.concatenate([c["corr_blocks"] for c in chains])
    c_mean, c_err = jackknife(lambda x: x, blocks)
    c_norm, c_norm_err = jackknife(lambda x: x / x[0], blocks)

    def m2_from_corr(x):
        # (1 / 4 beta) int_0^beta C, trapezoid on the periodic grid (C is even)
        return (x[0] + 2.0 * x[1:-1].sum() + x[-1]) / (4.0 * 2 * (x.size - 1))

    m2c, m2c_err = jackknife(m2_from_corr, blocks)
    scalars["M2_corr"] = (float(m2c), float(m2c_err), float("nan"), False)
    tau = np.arange(cfg.n_tau + 1) * beta / (2 * cfg.n_tau)
    correlator = {"tau": tau, "C": c_mean, "C_err": c_err, "C_norm": c_norm, "C_norm_err": c_norm_err}

    all_m = np.concatenate([c["m"] for c in chains])
    edges = np.linspace(-1.0, 1.0, HIST_BINS + 1)
    counts, _ = np.histogram(all_m, bins=edges)
    hist = {"centers": 0.5 * (edges[1:] + edges[:-1]), "probability": counts / counts.sum()}

    low = any(v[3] for v in scalars.values())
    if low:
        log.warning("WLMC g=%g beta=%g: autocorrelation time too long for the run length", cfg.g, beta)
    diag = {"chains": [c["stats"] for c in chains], "kernel_mean": kernel.mean, "config": asdict(cfg)}
    return Estimates(cfg.g, beta, scalars, hist, correlator, cfg.n_sweeps * cfg.n_chains, low,
                     time.perf_counter() - start, diag)


def merge_estimates(items) -> Estimates:
    """Combine estimates of the same point weighted by sample count.

    Means are sample-weighted and errors combined in quadrature with the same
    weights, so merging is associative and independent of order.
    """
    items = list(items)
    if not items:
        raise ValueError("nothing to merge")
    g, beta = items[0].g, items[0].beta
    if any(e.g != g or e.beta != beta for e in items):
        raise ValueError("can only merge estimates of the same (g, beta) point")
    n = np.array([e.n_samples for e in items], dtype=float)
    w = n / n.sum()
    scalars = {}
    for k in items[0].scalars:
        vals = np.array([e.scalars[k][:3] for e in items], dtype=float)
        scalars[k] = (float(w @ vals[:, 0]), float(np.sqrt(w**2 @ vals[:, 1] ** 2)), float(w @ vals[:, 2]),
                      any(e.scalars[k][3] for e in items))
    hist = {"centers": items[0].histogram["centers"],
            "probability": sum(wi * e.histogram["probability"] for wi, e in zip(w, items))}
    corr = {"tau": items[0].correlator["tau"]}
    for k in ("C", "C_norm"):
        corr[k] = sum(wi * e.correlator[k] for wi, e in zip(w, items))
        corr[k + "_err"] = np.sqrt(sum(wi**2 * e.correlator[k + "_err"] ** 2 for wi, e in zip(w, items)))
    return Estimates(g, beta, scalars, hist, corr, int(n.sum()), any(e.low_confidence for e in items),
                     sum(e.wall_time for e in items))


def histogram_modes(probability, centers, rel_height: float = 0.2, smooth: int = 2) -> np.ndarray:
    """Locations of the peaks of a (lightly smoothed) histogram.

    A peak is a local maximum at least ``rel_height`` times the global one,
    separated from any higher peak by a dip below ``rel_height`` of itself.
    """
    from scipy.ndimage import uniform_filter1d
    from scipy.signal import find_peaks

    p = np.asarray(probability, dtype=float)
    if smooth > 0:
        p = uniform_filter1d(p, 2 * smooth + 1, mode="constant")
    padded = np.concatenate([[0.0], p, [0.0]])
    peaks, props = find_peaks(padded, height=rel_height * p.max(), prominence=rel_height * p.max())
    return np.asarray(centers)[peaks - 1]
