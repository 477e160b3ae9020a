"""Error analysis for correlated Monte Carlo time series."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

__all__ = ["BinningResult", "binning_analysis", "jackknife", "block_size_for"]

MIN_BINS = 32


@dataclass
class BinningResult:
    mean: float
    error: float
    naive_error: float
    tau_int: float
    n_samples: int
    levels: np.ndarray  # error estimate per binning level
    low_confidence: bool

    @property
    def n_effective(self) -> float:
        return self.n_samples / max(2.0 * self.tau_int, 1.0)


def binning_analysis(x, min_bins: int = MIN_BINS) -> BinningResult:
    """Binning (blocking) analysis of a scalar series.

    Bins are doubled until fewer than ``min_bins`` remain. The error is read
    at the coarsest level that still holds ``4 min_bins`` bins (or the coarsest
    level for short series), which keeps its own statistical noise near 6%,
    and ``tau_int = (err / naive_err)^2 / 2``. The result is flagged when the
    error has not plateaued against the previous level, when coarser levels
    exceed it by more than their noise allows, or when there are fewer than
    50 effective samples.
    """
    x = np.asarray(x, dtype=float).ravel()
    n = x.size
    if n < 2:
        raise ValueError("binning needs at least two samples")
    mean = float(x.mean())
    errs = []
    level = x
    while level.size >= min_bins:
        errs.append(float(level.std(ddof=1) / np.sqrt(level.size)))
        m = level.size // 2
        level = 0.5 * (level[: 2 * m : 2] + level[1 : 2 * m : 2])
    if not errs:
        errs.append(float(x.std(ddof=1) / np.sqrt(n)))
    errs = np.array(errs)
    bins = np.array([n >> k for k in range(errs.size)])
    k = int(np.nonzero(bins >= 4 * min_bins)[0][-1]) if bins[0] >= 4 * min_bins else errs.size - 1
    naive = errs[0]
    err = float(errs[k])
    tau = 0.5 * (err / naive) ** 2 if naive > 0 else 0.5
    plateau = k < 2 or errs[k] <= 1.15 * errs[k - 1] + 1e-300
    # coarser levels carry relative noise ~ 1/sqrt(2 bins); a large excess means unresolved correlations
    coarse = errs[k + 1:]
    if coarse.size:
        plateau &= bool(np.all(coarse <= err * (1 + 3 / np.sqrt(2 * bins[k + 1:]))))
    low = (not plateau) or n / max(2.0 * tau, 1.0) < 50
    return BinningResult(mean, err, float(naive), float(tau), n, errs, bool(low))


def block_size_for(tau_int: float, n: int, min_blocks: int = MIN_BINS) -> int:
    """Block length of roughly ``4 tau_int`` that still leaves ``min_blocks`` blocks."""
    b = max(1, int(np.ceil(4.0 * tau_int)))
    return max(1, min(b, n // min_blocks))


def jackknife(func: Callable, data, block_size: int = 1):
    """Delete-one-block jackknife of ``func(mean over samples)``.

    ``data`` has samples along axis 0 (extra axes are carried through); ``func``
    maps a sample mean of that shape to a scalar or array.  Returns
    ``(estimate, error)`` with the bias-corrected estimate.
    """
    data = np.asarray(data, dtype=float)
    nb = data.shape[0] // block_size
    if nb < 2:
        raise ValueError("jackknife needs at least two blocks")
    blocks = data[: nb * block_size].reshape((nb, block_size) + data.shape[1:]).mean(axis=1)
    total = blocks.sum(axis=0)
    full = np.asarray(func(total / nb), dtype=float)
    reps = np.array([func((total - b) / (nb - 1)) for b in blocks], dtype=float)
    rep_mean = reps.mean(axis=0)
    err = np.sqrt((nb - 1) / nb * ((reps - rep_mean) ** 2).sum(axis=0))
    est = nb * full - (nb - 1) * rep_mean
    return est, err
