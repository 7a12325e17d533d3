"""Estimators of photon-number statistics from event ensembles.

Sample estimators (unbiased variances throughout):

* Fano factor F = var(m) / <m>;
* photon-number correlation Gamma: Pearson coefficient of the two arms;
* noise reduction factor R = var(m1 - m2) / (<m1> + <m2>);
* Bhattacharyya fidelity F = sum sqrt(p_exp * p_th).

Block statistics split an ensemble into contiguous equal blocks, apply an
estimator per block, and report the block mean with its standard error;
classification against a reference (e.g. variance vs mean) is called only
beyond three block errors.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


@dataclass(frozen=True)
class EventEnsemble:
    """Detected counts of one run; m2 is None for single-arm sources."""

    m1: np.ndarray
    m2: np.ndarray | None = None
    label: str = ""

    def __post_init__(self):
        if self.m2 is not None and len(self.m2) != len(self.m1):
            raise ValueError("arms must have equal length")


@dataclass(frozen=True)
class BlockResult:
    """Block mean of an estimator and its standard error."""

    value: float
    error: float
    n_blocks: int
    block_size: int
    n_dropped: int = 0


@dataclass
class StatsReport:
    """Bundle of ensemble statistics, JSON-serializable via to_dict."""

    n_events: int
    n_blocks: int
    source: str = ""
    mode: str = "counts"
    mean1: BlockResult | None = None
    mean2: BlockResult | None = None
    fano1: BlockResult | None = None
    fano2: BlockResult | None = None
    gamma: BlockResult | None = None
    noise_reduction: BlockResult | None = None
    fidelity: BlockResult | None = None
    excluded_fraction: float = 0.0
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        def enc(v):
            if isinstance(v, BlockResult):
                return {"value": v.value, "error": v.error,
                        "n_blocks": v.n_blocks, "block_size": v.block_size,
                        "n_dropped": v.n_dropped}
            return v
        out = {}
        for key, val in self.__dict__.items():
            if val is None:
                continue
            out[key] = enc(val)
        return out


def _as_counts(samples) -> np.ndarray:
    arr = np.asarray(samples, dtype=np.float64).ravel()
    if arr.size < 2:
        raise ValueError("need at least two samples")
    if not np.all(np.isfinite(arr)):
        raise ValueError("samples must be finite")
    return arr


def fano(samples) -> float:
    """Fano factor var/mean with the unbiased variance; mean must be > 0."""
    arr = _as_counts(samples)
    mean = arr.mean()
    if mean <= 0:
        raise ValueError(f"Fano factor needs a positive mean, got {mean}")
    return float(arr.var(ddof=1) / mean)


def correlation(m1, m2) -> float:
    """Pearson correlation of the two arms; both need nonzero variance."""
    a, b = _as_counts(m1), _as_counts(m2)
    if a.size != b.size:
        raise ValueError("arms must have equal length")
    va, vb = a.var(ddof=1), b.var(ddof=1)
    if va <= 0 or vb <= 0:
        raise ValueError("correlation undefined for a zero-variance arm")
    cov = np.cov(a, b, ddof=1)[0, 1]
    return float(cov / np.sqrt(va * vb))


def noise_reduction(m1, m2) -> float:
    """R = var(m1 - m2) / (<m1> + <m2>); the mean sum must be > 0."""
    a, b = _as_counts(m1), _as_counts(m2)
    if a.size != b.size:
        raise ValueError("arms must have equal length")
    s = a.mean() + b.mean()
    if s <= 0:
        raise ValueError(f"noise reduction needs <m1> + <m2> > 0, got {s}")
    return float((a - b).var(ddof=1) / s)


def fidelity(p_exp, p_th, tol: float = 1e-6) -> float:
    """Bhattacharyya fidelity between two photon-number distributions.

    Both distributions must be non-negative, have a common support length,
    and each sum to 1 within ``tol``.
    """
    p = np.asarray(p_exp, dtype=np.float64)
    q = np.asarray(p_th, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError("distributions must share a common support")
    if np.any(p < 0) or np.any(q < 0):
        raise ValueError("probabilities must be >= 0")
    for name, arr in (("p_exp", p), ("p_th", q)):
        if abs(arr.sum() - 1.0) > tol:
            raise ValueError(f"{name} sums to {arr.sum():.8f}, not 1 within {tol}")
    return float(np.minimum(np.sqrt(p * q).sum(), 1.0))


def empirical_pmf(samples, n_max: int | None = None) -> np.ndarray:
    """Normalized histogram of integer counts over 0..n_max."""
    arr = np.asarray(samples)
    if arr.size == 0:
        raise ValueError("need at least one sample")
    arr = arr.astype(np.int64)
    if np.any(arr < 0):
        raise ValueError("counts must be >= 0")
    top = int(arr.max()) if n_max is None else int(n_max)
    if arr.max() > top:
        raise ValueError(f"samples exceed n_max={top}")
    return np.bincount(arr, minlength=top + 1) / arr.size


def support_cutoff(*pmfs, eps: float = 1e-12) -> int:
    """Largest n at which any of the distributions is still above eps."""
    top = 0
    for p in pmfs:
        p = np.asarray(p, dtype=np.float64)
        above = np.nonzero(p > eps)[0]
        if above.size:
            top = max(top, int(above[-1]))
    return top


def block_statistics(data, estimator: Callable, n_blocks: int = 4) -> BlockResult:
    """Apply an estimator to contiguous equal blocks and average.

    ``data`` is one array or a tuple of parallel arrays (for paired
    estimators); the trailing remainder that does not fill a block is
    dropped and reported.
    """
    if n_blocks < 2:
        raise ValueError("need at least two blocks for an error estimate")
    arrays = data if isinstance(data, tuple) else (data,)
    arrays = tuple(np.asarray(a) for a in arrays)
    n = arrays[0].shape[0]
    if any(a.shape[0] != n for a in arrays):
        raise ValueError("paired arrays must have equal length")
    block = n // n_blocks
    if block < 1:
        raise ValueError(f"{n} events cannot fill {n_blocks} blocks")
    values = []
    for b in range(n_blocks):
        sl = slice(b * block, (b + 1) * block)
        chunk = tuple(a[sl] for a in arrays)
        values.append(estimator(*chunk) if len(chunk) > 1 else estimator(chunk[0]))
    values = np.asarray(values, dtype=np.float64)
    return BlockResult(value=float(values.mean()),
                       error=float(values.std(ddof=1) / np.sqrt(n_blocks)),
                       n_blocks=n_blocks, block_size=block,
                       n_dropped=n - block * n_blocks)


@dataclass(frozen=True)
class VarianceVsMean:
    mean: float
    variance: float
    error: float      # block error of (variance - mean)
    classification: str  # "sub-poissonian" | "poissonian" | "super-poissonian"


def variance_vs_mean(ensembles: Sequence, n_blocks: int = 4,
                     n_sigma: float = 3.0) -> list[VarianceVsMean]:
    """Classify ensembles as sub/super/Poissonian beyond n_sigma block errors."""
    out = []
    for ens in ensembles:
        arr = ens.m1 if isinstance(ens, EventEnsemble) else np.asarray(ens)
        res = block_statistics(arr, lambda x: np.var(x, ddof=1) - np.mean(x),
                               n_blocks=n_blocks)
        if res.value < -n_sigma * res.error:
            cls = "sub-poissonian"
        elif res.value > n_sigma * res.error:
            cls = "super-poissonian"
        else:
            cls = "poissonian"
        out.append(VarianceVsMean(mean=float(np.mean(arr)),
                                  variance=float(np.var(arr, ddof=1)),
                                  error=res.error, classification=cls))
    return out


def assign_photoelectrons(charges, peak_positions) -> tuple[np.ndarray, np.ndarray]:
    """Map measured charges to photoelectron numbers by nearest fitted peak.

    Returns (counts, unclassified mask). Charges beyond the outermost peaks
    by more than half the edge spacing are unclassified and must be excluded
    from downstream statistics; callers report the excluded fraction.
    """
    q = np.asarray(charges, dtype=np.float64).ravel()
    pos = np.sort(np.asarray(peak_positions, dtype=np.float64).ravel())
    if pos.size < 2:
        raise ValueError("need at least two calibration peaks")
    mids = 0.5 * (pos[:-1] + pos[1:])
    n = np.searchsorted(mids, q)
    lo_edge = pos[0] - 0.5 * (pos[1] - pos[0])
    hi_edge = pos[-1] + 0.5 * (pos[-1] - pos[-2])
    unclassified = (q < lo_edge) | (q > hi_edge)
    return n.astype(np.int64), unclassified
