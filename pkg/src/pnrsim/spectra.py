"""Pulse-height spectroscopy: histograms, comb fits, resolution metrics.

A photon-number spectrum is a comb of quasi-Gaussian peaks at multiples of
the single-cell charge. The module builds histograms, locates the comb,
fits a global sum of Gaussians with Poisson weights, and derives the three
resolution figures:

* peak-to-valley visibility v = (max - min) / (max + min), where max is the
  average of the peak point and its first 6 neighbouring points and min the
  average of the points below half the peak value on both sides;
* figure of merit FoM_n = (mu_{n+1} - mu_n) / (2 sqrt(2 ln 2) (sigma_{n+1} +
  sigma_n)), with the implied Gaussian overlap 2 Phi(-2 sqrt(2 ln 2) FoM)
  split evenly between the two neighbouring peaks;
* peak-to-peak distance Delta_n = mu_{n+1} - mu_n.

Fit uncertainties propagate to every metric.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize, signal
from scipy.special import erfc

_FWHM = 2.0 * math.sqrt(2.0 * math.log(2.0))  # sigma -> FWHM factor
_MAX_COMB_PEAKS = 40  # keep the global fit bounded on noisy spectra


class FitError(Exception):
    """Multi-Gaussian fit failed; carries whatever peaks were recovered."""

    def __init__(self, message: str, partial: list["GaussianPeak"] | None = None):
        super().__init__(message)
        self.partial = partial or []


@dataclass(frozen=True)
class Histogram:
    """Binned spectrum with explicit out-of-range counts."""

    bin_edges: np.ndarray
    counts: np.ndarray
    n_underflow: int = 0
    n_overflow: int = 0

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.bin_edges[:-1] + self.bin_edges[1:])

    @property
    def bin_width(self) -> float:
        return float(self.bin_edges[1] - self.bin_edges[0])


@dataclass(frozen=True)
class GaussianPeak:
    """One fitted comb line."""

    index: int
    mu: float
    mu_err: float
    sigma: float
    sigma_err: float
    amplitude: float
    amplitude_err: float = 0.0


@dataclass(frozen=True)
class VisibilityPoint:
    index: int
    value: float
    error: float
    truncated: bool = False   # a side had no bins between peaks
    merged: bool = False      # a side never dropped below half the peak


@dataclass(frozen=True)
class MetricPoint:
    index: int
    value: float
    error: float


@dataclass(frozen=True)
class SpectrumMetrics:
    peaks: list[GaussianPeak]
    visibility: list[VisibilityPoint]
    fom: list[MetricPoint]
    delta_pp: list[MetricPoint]
    chi2: float = math.nan
    ndf: int = 0


def build_histogram(values, bin_width: float | None = None,
                    n_bins: int | None = None,
                    bounds: tuple[float, float] | None = None) -> Histogram:
    """Histogram of charges with under/overflow bookkeeping.

    Either ``bin_width`` (edges aligned to multiples of it) or ``n_bins``
    may be given; the default is unit-width bins, one per ADU-sample.
    """
    values = np.asarray(values, dtype=np.float64).ravel()
    if values.size == 0:
        raise ValueError("cannot histogram an empty sample")
    if not np.all(np.isfinite(values)):
        raise ValueError("charges must be finite")
    if bin_width is not None and n_bins is not None:
        raise ValueError("give bin_width or n_bins, not both")

    lo, hi = bounds if bounds is not None else (values.min(), values.max())
    if not hi > lo:
        hi = lo + 1.0
    if n_bins is not None:
        if n_bins < 1:
            raise ValueError("n_bins must be >= 1")
        edges = np.linspace(lo, hi, n_bins + 1)
    else:
        width = 1.0 if bin_width is None else float(bin_width)
        if width <= 0:
            raise ValueError("bin_width must be > 0")
        first = math.floor(lo / width)
        last = math.ceil(hi / width)
        if last <= first:
            last = first + 1
        edges = np.arange(first, last + 1, dtype=np.float64) * width

    counts, _ = np.histogram(values, bins=edges)
    n_under = int(np.count_nonzero(values < edges[0]))
    n_over = int(np.count_nonzero(values > edges[-1]))
    return Histogram(bin_edges=edges, counts=counts.astype(np.int64),
                     n_underflow=n_under, n_overflow=n_over)


def find_peaks(hist: Histogram, min_separation: float | None = None,
               min_prominence: float | None = None) -> np.ndarray:
    """Bin indices of comb peaks, ordered by position.

    min_separation is in charge units; when omitted, the comb period is
    estimated from the spacing of the most prominent candidates and used to
    suppress statistical bumps between lines. The default prominence floor
    scales with the histogram so that late, sparsely populated comb lines
    are still picked up without promoting single-count noise.
    """
    counts = hist.counts.astype(np.float64)
    if not np.any(counts > 0):
        raise ValueError("histogram has no entries")
    if min_prominence is None:
        min_prominence = max(4.0, 2e-4 * counts.max())
    if min_separation is not None:
        distance = max(1, int(round(min_separation / hist.bin_width)))
        idx, _ = signal.find_peaks(counts, distance=distance,
                                   prominence=min_prominence)
        return idx

    idx, props = signal.find_peaks(counts, prominence=min_prominence)
    if idx.size <= 2:
        return idx
    prom = props["prominences"]
    strong = np.sort(idx[prom >= 0.25 * prom.max()])
    if strong.size < 2:
        strong = np.sort(idx[np.argsort(prom)[::-1][:2]])
    spacing = float(np.median(np.diff(strong)))
    distance = max(1, int(round(0.6 * spacing)))
    if distance > 1:
        idx, _ = signal.find_peaks(counts, distance=distance,
                                   prominence=min_prominence)
    return idx


def _comb_model(x, *params):
    p = np.asarray(params).reshape(-1, 3)
    amp, mu, sig = p[:, 0], p[:, 1], p[:, 2]
    z = (x[:, None] - mu[None, :]) / sig[None, :]
    return (amp[None, :] * np.exp(-0.5 * z * z)).sum(axis=1)


def _comb_jacobian(x, *params):
    p = np.asarray(params).reshape(-1, 3)
    amp, mu, sig = p[:, 0], p[:, 1], p[:, 2]
    z = (x[:, None] - mu[None, :]) / sig[None, :]
    gauss = np.exp(-0.5 * z * z)
    jac = np.empty((x.size, p.size))
    jac[:, 0::3] = gauss
    jac[:, 1::3] = amp[None, :] * gauss * z / sig[None, :]
    jac[:, 2::3] = amp[None, :] * gauss * z * z / sig[None, :]
    return jac


def _local_sigma(counts: np.ndarray, b: int, bin_width: float) -> float:
    """Width estimate for the peak at bin b from its half-height points."""
    half = 0.5 * counts[b]
    left = b
    while left > 0 and counts[left - 1] > half:
        left -= 1
    right = b
    while right < counts.size - 1 and counts[right + 1] > half:
        right += 1
    fwhm = (right - left) * bin_width
    return max(fwhm / (2.0 * math.sqrt(2.0 * math.log(2.0))),
               0.5 * bin_width)


def _initial_guess(hist: Histogram, peak_bins: np.ndarray,
                   sigma0: float | None) -> np.ndarray:
    counts = hist.counts.astype(np.float64)
    p0 = np.empty((peak_bins.size, 3))
    p0[:, 0] = np.maximum(counts[peak_bins], 1.0)
    p0[:, 1] = hist.centers[peak_bins]
    if sigma0 is not None:
        p0[:, 2] = sigma0
    else:
        p0[:, 2] = [_local_sigma(counts, b, hist.bin_width)
                    for b in peak_bins]
    return p0.ravel()


def _two_pass_fit(x, counts, p0, bounds, maxfev):
    """Weighted least squares with a model-reweighted second pass.

    The first pass weights bins by sqrt(max(observed, 1)); those weights
    overvalue downward-fluctuating bins and bias widths slightly low, so a
    second pass reweights by the expected counts of the first solution.
    """
    weights = np.sqrt(np.maximum(counts, 1.0))
    popt, pcov = optimize.curve_fit(
        _comb_model, x, counts, p0=p0, sigma=weights, absolute_sigma=True,
        jac=_comb_jacobian, bounds=bounds, maxfev=maxfev)
    try:
        expected = np.sqrt(np.maximum(_comb_model(x, *popt), 1.0))
        popt, pcov = optimize.curve_fit(
            _comb_model, x, counts, p0=popt, sigma=expected,
            absolute_sigma=True, jac=_comb_jacobian, bounds=bounds,
            maxfev=maxfev)
    except (RuntimeError, ValueError):
        pass   # keep the first-pass solution
    return popt, np.sqrt(np.diag(pcov))


def _fit_window(hist, lo, hi, p0):
    """Single-Gaussian fit restricted to a bin range; used as the fallback."""
    centers = hist.centers[lo:hi]
    counts = hist.counts[lo:hi].astype(np.float64)
    return _two_pass_fit(
        centers, counts, p0, maxfev=2000,
        bounds=([0.0, centers[0], hist.bin_width * 0.25],
                [np.inf, centers[-1], centers[-1] - centers[0] + hist.bin_width]))


def fit_multi_gaussian(hist: Histogram, peak_bins,
                       sigma0: float | None = None) -> list[GaussianPeak]:
    """Global sum-of-Gaussians least squares with Poisson weights.

    ``peak_bins`` are the initial peak locations as bin indices (e.g. from
    find_peaks). Initial widths come from each peak's half-height points;
    every component keeps its mean within half a comb period of its line
    and its width below about two periods, which stops a weak component
    from drifting onto a neighbour or collapsing in an empty stretch.
    Bins are weighted by sqrt(max(count, 1)) and the solution is polished
    with expected-count weights; parameter uncertainties come from the
    final covariance. If the global fit does not converge, each peak is
    refit in a window halfway to its neighbours; a FitError carrying
    partial results is raised only when that also fails.
    """
    peak_bins = np.asarray(peak_bins, dtype=np.int64)
    if peak_bins.size == 0:
        raise ValueError("need at least one peak to fit")
    if np.any(peak_bins < 0) or np.any(peak_bins >= hist.counts.size):
        raise ValueError("peak bins outside histogram")
    peak_bins = np.sort(peak_bins)

    centers = hist.centers
    counts = hist.counts.astype(np.float64)
    p0 = _initial_guess(hist, peak_bins, sigma0)
    n_peaks = peak_bins.size

    span = centers[-1] - centers[0] + hist.bin_width
    mus = centers[peak_bins]
    if n_peaks > 1:
        gaps = np.diff(mus)
        gap_left = np.concatenate([gaps[:1], gaps])
        gap_right = np.concatenate([gaps, gaps[-1:]])
    else:
        gap_left = gap_right = np.array([span])
    lower = np.zeros(3 * n_peaks)
    upper = np.full(3 * n_peaks, np.inf)
    lower[1::3] = mus - 0.5 * gap_left
    upper[1::3] = mus + 0.5 * gap_right
    lower[2::3] = hist.bin_width * 0.25
    upper[2::3] = 2.0 * np.maximum(gap_left, gap_right)
    p0[2::3] = np.clip(p0[2::3], lower[2::3], 0.5 * upper[2::3])

    try:
        popt, perr = _two_pass_fit(centers, counts, p0, (lower, upper),
                                   maxfev=200 * (3 * n_peaks + 1))
    except (RuntimeError, ValueError, optimize.OptimizeWarning):
        popt, perr = _fallback_windowed(hist, peak_bins, p0)

    peaks = []
    order = np.argsort(popt[1::3])
    for rank, j in enumerate(order):
        amp, mu, sig = popt[3 * j], popt[3 * j + 1], popt[3 * j + 2]
        amp_e, mu_e, sig_e = perr[3 * j], perr[3 * j + 1], perr[3 * j + 2]
        peaks.append(GaussianPeak(index=rank, mu=float(mu), mu_err=float(mu_e),
                                  sigma=float(sig), sigma_err=float(sig_e),
                                  amplitude=float(amp),
                                  amplitude_err=float(amp_e)))
    return peaks


def _fallback_windowed(hist, peak_bins, p0):
    """Per-peak windowed refits when the global fit fails to converge."""
    p0 = p0.reshape(-1, 3)
    n_bins = hist.counts.size
    popt = np.empty(p0.size)
    perr = np.empty(p0.size)
    done: list[GaussianPeak] = []
    for i, b in enumerate(peak_bins):
        lo = (peak_bins[i - 1] + b) // 2 if i > 0 else max(0, 2 * b - peak_bins[i + 1]) \
            if peak_bins.size > 1 else 0
        hi = (b + peak_bins[i + 1]) // 2 if i < peak_bins.size - 1 else n_bins
        lo, hi = int(max(lo, 0)), int(min(max(hi, b + 2), n_bins))
        try:
            w_opt, w_err = _fit_window(hist, lo, hi, p0[i])
        except (RuntimeError, ValueError) as exc:
            raise FitError(f"fit failed for peak {i} in bins [{lo}, {hi})",
                           partial=done) from exc
        popt[3 * i:3 * i + 3] = w_opt
        perr[3 * i:3 * i + 3] = w_err
        done.append(GaussianPeak(index=i, mu=w_opt[1], mu_err=w_err[1],
                                 sigma=w_opt[2], sigma_err=w_err[2],
                                 amplitude=w_opt[0], amplitude_err=w_err[0]))
    return popt, perr


def comb_numbers(peaks: list[GaussianPeak]) -> np.ndarray:
    """Photoelectron number of each fitted peak, from the comb geometry.

    The comb is anchored at zero charge, so n = round(mu / spacing) with the
    spacing estimated from the median distance of adjacent peaks. This keeps
    the numbering correct when low peaks (e.g. the pedestal) fall below the
    detection threshold and the fitted comb starts at n > 0.
    """
    mus = np.array([p.mu for p in peaks])
    if mus.size < 2:
        raise ValueError("need at least two peaks to number a comb")
    spacing = float(np.median(np.diff(mus)))
    if spacing <= 0:
        raise ValueError("peaks are not an increasing comb")
    return np.round(mus / spacing).astype(np.int64)


def fit_chi2(hist: Histogram, peaks: list[GaussianPeak]) -> tuple[float, int]:
    """Poisson-weighted chi-square and degrees of freedom of a fitted comb."""
    counts = hist.counts.astype(np.float64)
    params = []
    for p in peaks:
        params.extend([p.amplitude, p.mu, p.sigma])
    model = _comb_model(hist.centers, *params)
    resid = (counts - model) / np.sqrt(np.maximum(counts, 1.0))
    return float(np.sum(resid * resid)), int(counts.size - 3 * len(peaks))


def _peak_bin_indices(hist: Histogram, peaks, snap: int = 2) -> np.ndarray:
    """Map peak descriptors to histogram bins, snapping to the local maximum."""
    counts = hist.counts
    if len(peaks) == 0:
        raise ValueError("need at least one peak")
    first = peaks[0]
    if isinstance(first, GaussianPeak):
        pos = np.array([p.mu for p in peaks])
    else:
        arr = np.asarray(peaks)
        if np.issubdtype(arr.dtype, np.integer):
            idx = arr.astype(np.int64)
            if np.any(idx < 0) or np.any(idx >= counts.size):
                raise ValueError("peak bins outside histogram")
            return np.sort(idx)
        pos = arr.astype(np.float64)
    idx = np.clip(np.searchsorted(hist.bin_edges, pos) - 1, 0, counts.size - 1)
    snapped = []
    for i in idx:
        lo, hi = max(0, i - snap), min(counts.size, i + snap + 1)
        snapped.append(lo + int(np.argmax(counts[lo:hi])))
    return np.sort(np.asarray(snapped, dtype=np.int64))


def visibility(hist: Histogram, peaks, neighbors: int = 3) -> list[VisibilityPoint]:
    """Peak-to-valley visibility per comb line, with Poisson errors.

    For each located peak: max = mean of the peak bin and its ``neighbors``
    nearest bins per side (7 bins in total by default); min = mean of the
    bins below the half height in the gaps to the adjacent peaks. Within a
    gap the half height refers to the lower of the two peaks bounding it,
    so the climb up a smaller neighbour never counts as valley; on the
    outer side of an edge peak it is half the peak itself. A side with no
    bins below half is flagged merged and falls back to the lowest bin of
    the gap; edge peaks with no gap at all are flagged truncated. Values
    are clamped to [0, 1] (a clamp can only trigger on degenerate,
    non-comb histograms).
    """
    if neighbors < 1:
        raise ValueError("neighbors must be >= 1")
    counts = hist.counts.astype(np.float64)
    bins = _peak_bin_indices(hist, peaks)
    out = []
    for k, b in enumerate(bins):
        lo = max(0, b - neighbors)
        hi = min(counts.size, b + neighbors + 1)
        window = counts[lo:hi]
        peak_max = window.mean()
        max_err = math.sqrt(window.sum()) / window.size

        half_self = 0.5 * counts[b]
        if k > 0:
            left_side = (counts[bins[k - 1] + 1:b],
                         0.5 * min(counts[b], counts[bins[k - 1]]))
        else:
            left_side = (counts[:b], half_self)
        if k < bins.size - 1:
            right_side = (counts[b + 1:bins[k + 1]],
                          0.5 * min(counts[b], counts[bins[k + 1]]))
        else:
            right_side = (counts[b + 1:], half_self)
        truncated = False
        merged = False
        valley_vals = []
        for gap, half in (left_side, right_side):
            if gap.size == 0:
                truncated = True
                continue
            below = gap[gap < half]
            if below.size == 0:
                merged = True
                below = np.array([gap.min()])
            valley_vals.append(below)
        if not valley_vals:
            out.append(VisibilityPoint(index=k, value=0.0, error=0.0,
                                       truncated=True, merged=merged))
            continue
        valley = np.concatenate(valley_vals)
        val_mean = valley.mean()
        val_err = math.sqrt(max(valley.sum(), 1.0)) / valley.size

        denom = peak_max + val_mean
        if denom <= 0:
            out.append(VisibilityPoint(index=k, value=0.0, error=0.0,
                                       truncated=truncated, merged=merged))
            continue
        v = (peak_max - val_mean) / denom
        err = 2.0 * math.sqrt(val_mean ** 2 * max_err ** 2
                              + peak_max ** 2 * val_err ** 2) / denom ** 2
        out.append(VisibilityPoint(index=k, value=float(min(max(v, 0.0), 1.0)),
                                   error=float(err), truncated=truncated,
                                   merged=merged))
    return out


def fom(peaks: list[GaussianPeak]) -> list[MetricPoint]:
    """Figure of merit between consecutive peaks, labelled by the lower index."""
    if len(peaks) < 2:
        raise ValueError("need at least two peaks")
    out = []
    for n in range(len(peaks) - 1):
        p, q = peaks[n], peaks[n + 1]
        dmu = q.mu - p.mu
        ssum = p.sigma + q.sigma
        if ssum <= 0 or dmu <= 0:
            raise ValueError(f"peaks {n}, {n + 1} are not an ordered comb")
        value = dmu / (_FWHM * ssum)
        rel = math.sqrt((p.mu_err ** 2 + q.mu_err ** 2) / dmu ** 2
                        + (p.sigma_err ** 2 + q.sigma_err ** 2) / ssum ** 2)
        out.append(MetricPoint(index=n, value=float(value),
                               error=float(abs(value) * rel)))
    return out


def delta_pp(peaks: list[GaussianPeak]) -> list[MetricPoint]:
    """Distance between consecutive peak positions."""
    if len(peaks) < 2:
        raise ValueError("need at least two peaks")
    out = []
    for n in range(len(peaks) - 1):
        p, q = peaks[n], peaks[n + 1]
        out.append(MetricPoint(index=n, value=float(q.mu - p.mu),
                               error=float(math.hypot(p.mu_err, q.mu_err))))
    return out


def normal_cdf(x):
    """Standard normal CDF via the complementary error function."""
    x = np.asarray(x, dtype=np.float64)
    out = 0.5 * erfc(-x / math.sqrt(2.0))
    return float(out) if out.ndim == 0 else out


def overlap_from_fom(fom_value: float) -> tuple[float, float]:
    """(total, per-peak) overlap fraction of two equal Gaussians at a FoM.

    Two unit-area Gaussians whose separation corresponds to the given FoM
    overlap by 2 Phi(-2 sqrt(2 ln 2) FoM); each peak loses half of that to
    its neighbour.
    """
    if fom_value < 0:
        raise ValueError("FoM must be >= 0")
    total = 2.0 * normal_cdf(-_FWHM * fom_value)
    return float(total), float(total / 2.0)


def analyze_spectrum(hist: Histogram, min_separation: float | None = None,
                     min_prominence: float | None = None,
                     neighbors: int = 3) -> SpectrumMetrics:
    """Locate, fit and grade a comb spectrum in one call."""
    bins = find_peaks(hist, min_separation=min_separation,
                      min_prominence=min_prominence)
    if bins.size < 2:
        raise FitError(f"found {bins.size} peaks, need at least 2 for a comb")
    if bins.size > _MAX_COMB_PEAKS:
        prom = signal.peak_prominences(hist.counts.astype(np.float64), bins)[0]
        keep = np.sort(np.argsort(prom)[::-1][:_MAX_COMB_PEAKS])
        bins = bins[keep]
    peaks = fit_multi_gaussian(hist, bins)
    chi2, ndf = fit_chi2(hist, peaks)
    return SpectrumMetrics(peaks=peaks,
                           visibility=visibility(hist, peaks, neighbors=neighbors),
                           fom=fom(peaks), delta_pp=delta_pp(peaks),
                           chi2=chi2, ndf=ndf)
