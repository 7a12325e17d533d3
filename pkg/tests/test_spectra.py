"""Spectrum analysis: histograms, comb fits, visibility / FoM / overlap."""
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats as sstats

from pnrsim.spectra import (FitError, GaussianPeak, Histogram,
                            analyze_spectrum, build_histogram, comb_numbers,
                            delta_pp, find_peaks, fit_chi2,
                            fit_multi_gaussian, fom, normal_cdf,
                            overlap_from_fom, visibility)

FWHM = 2.0 * math.sqrt(2.0 * math.log(2.0))

# Frozen with mpmath at 40 digits: total two-Gaussian overlap at five FoMs.
OVERLAP_TABLE = [
    (0.50, 0.23903189145),
    (0.75, 0.0773765517674),
    (1.00, 0.0185316777512),
    (1.50, 0.000412070679784),
    (2.00, 2.48154601733e-6),
]


def gaussian_comb(centers, amps, mus, sigmas):
    total = np.zeros_like(centers, dtype=np.float64)
    for a, m, s in zip(amps, mus, sigmas):
        total += a * np.exp(-0.5 * ((centers - m) / s) ** 2)
    return total


class TestHistogram:
    def test_width_aligned_edges(self):
        h = build_histogram(np.array([3.2, 7.9, -1.4]), bin_width=1.0)
        assert h.bin_edges[0] == -2.0
        assert h.bin_edges[-1] == 8.0
        np.testing.assert_allclose(np.diff(h.bin_edges), 1.0)

    def test_counts_partition(self):
        vals = np.array([-1.0, 0.5, 0.5, 3.7, 12.0])
        h = build_histogram(vals, bin_width=1.0, bounds=(0.0, 10.0))
        assert h.counts.sum() + h.n_underflow + h.n_overflow == vals.size
        assert h.n_underflow == 1
        assert h.n_overflow == 1

    def test_n_bins_mode(self):
        h = build_histogram(np.linspace(0, 1, 100), n_bins=10)
        assert h.counts.size == 10
        assert h.counts.sum() == 100

    @pytest.mark.parametrize("bad", [
        np.array([]), np.array([np.nan]), np.array([np.inf]),
    ])
    def test_rejects_bad_input(self, bad):
        with pytest.raises(ValueError):
            build_histogram(bad)

    def test_both_binning_modes_rejected(self):
        with pytest.raises(ValueError):
            build_histogram(np.ones(3), bin_width=1.0, n_bins=5)

    @given(st.lists(st.floats(min_value=-1e4, max_value=1e4),
                    min_size=1, max_size=300))
    @settings(max_examples=60, deadline=None)
    def test_total_count_invariant(self, values):
        h = build_histogram(np.array(values), bin_width=2.5)
        assert h.counts.sum() + h.n_underflow + h.n_overflow == len(values)
        assert np.all(np.diff(h.bin_edges) > 0)


class TestFindPeaks:
    def _comb_hist(self, n_events=200_000):
        rng = np.random.default_rng(10)
        q = np.concatenate([
            rng.normal(60.0 * k, 6.0, size=n_events // 4) for k in range(1, 5)])
        return build_histogram(q, bin_width=1.0)

    def test_locates_comb(self):
        h = self._comb_hist()
        idx = find_peaks(h)
        assert idx.size == 4
        found = h.centers[idx]
        np.testing.assert_allclose(found, [60, 120, 180, 240], atol=2.0)

    def test_separation_filter(self):
        h = self._comb_hist()
        idx = find_peaks(h, min_separation=100.0)
        assert idx.size <= 3

    def test_ignores_statistical_bumps(self):
        """Single-count noise between lines is not promoted to a peak."""
        rng = np.random.default_rng(11)
        q = np.concatenate([rng.normal(60.0 * k, 5.0, size=3000)
                            for k in range(1, 4)]
                           + [rng.uniform(0, 250, size=300)])
        idx = find_peaks(build_histogram(q, bin_width=1.0))
        assert 2 <= idx.size <= 4

    def test_empty_histogram(self):
        h = Histogram(bin_edges=np.arange(5.0), counts=np.zeros(4, dtype=np.int64))
        with pytest.raises(ValueError):
            find_peaks(h)


class TestCombFit:
    def test_recovers_noiseless_truth(self):
        edges = np.arange(0.0, 301.0)
        centers = 0.5 * (edges[:-1] + edges[1:])
        amps, mus, sigmas = [1000, 600, 300], [100.0, 160.0, 220.0], [6.0, 7.0, 8.0]
        counts = np.rint(gaussian_comb(centers, amps, mus, sigmas)).astype(np.int64)
        h = Histogram(bin_edges=edges, counts=counts)
        peaks = fit_multi_gaussian(h, find_peaks(h, min_separation=30.0))
        assert len(peaks) == 3
        for p, a, m, s in zip(peaks, amps, mus, sigmas):
            assert p.mu == pytest.approx(m, abs=0.05)
            assert p.sigma == pytest.approx(s, abs=0.1)
            assert p.amplitude == pytest.approx(a, rel=0.02)

    def test_overlapping_peaks_resolved_jointly(self):
        """At FoM 1 the global fit still separates neighbours cleanly."""
        edges = np.arange(0.0, 200.0)
        centers = 0.5 * (edges[:-1] + edges[1:])
        sep = FWHM * 2 * 6.0  # FoM = 1 with sigma 6
        counts = np.rint(gaussian_comb(centers, [800, 800],
                                       [70.0, 70.0 + sep], [6.0, 6.0]))
        h = Histogram(bin_edges=edges, counts=counts.astype(np.int64))
        peaks = fit_multi_gaussian(h, find_peaks(h, min_separation=10.0))
        assert peaks[0].mu == pytest.approx(70.0, abs=0.2)
        assert peaks[1].mu == pytest.approx(70.0 + sep, abs=0.2)

    def test_pull_distribution_is_calibrated(self):
        """Poisson-fluctuated comb fits give unit-width, centred pulls."""
        edges = np.arange(0.0, 400.0)
        centers = 0.5 * (edges[:-1] + edges[1:])
        mus = [60.0 * k for k in range(1, 6)]
        model = gaussian_comb(centers, [2000] * 5, mus, [7.0] * 5)
        pulls = []
        for seed in range(30):
            rng = np.random.default_rng(seed)
            h = Histogram(bin_edges=edges,
                          counts=rng.poisson(model).astype(np.int64))
            peaks = fit_multi_gaussian(h, find_peaks(h, min_separation=30.0))
            for p, m in zip(peaks, mus):
                pulls.append((p.mu - m) / p.mu_err)
        pulls = np.array(pulls)
        assert abs(pulls.mean()) < 0.5
        assert 0.6 < pulls.std() < 1.4

    def test_chi2_of_good_fit(self):
        edges = np.arange(0.0, 301.0)
        centers = 0.5 * (edges[:-1] + edges[1:])
        model = gaussian_comb(centers, [1500, 900], [100.0, 180.0], [7.0, 8.0])
        rng = np.random.default_rng(3)
        h = Histogram(bin_edges=edges, counts=rng.poisson(model).astype(np.int64))
        peaks = fit_multi_gaussian(h, find_peaks(h, min_separation=40.0))
        chi2, ndf = fit_chi2(h, peaks)
        assert ndf == 300 - 6
        assert chi2 / ndf < 1.5

    def test_rejects_bad_peak_bins(self):
        h = build_histogram(np.arange(10.0))
        with pytest.raises(ValueError):
            fit_multi_gaussian(h, [])
        with pytest.raises(ValueError):
            fit_multi_gaussian(h, [99])


class TestCombNumbers:
    def test_full_comb(self):
        peaks = [GaussianPeak(i, 60.0 * n, 0.1, 6, 0.1, 100)
                 for i, n in enumerate([1, 2, 3, 4])]
        np.testing.assert_array_equal(comb_numbers(peaks), [1, 2, 3, 4])

    def test_missing_tooth(self):
        peaks = [GaussianPeak(i, 60.0 * n, 0.1, 6, 0.1, 100)
                 for i, n in enumerate([1, 2, 4, 5, 6])]
        np.testing.assert_array_equal(comb_numbers(peaks), [1, 2, 4, 5, 6])

    def test_needs_two(self):
        with pytest.raises(ValueError):
            comb_numbers([GaussianPeak(0, 60.0, 0.1, 6, 0.1, 100)])


def naive_visibility(counts, bins, neighbors=3):
    """Straight-line reimplementation of the documented definition."""
    counts = counts.astype(float)
    vals = []
    for k, b in enumerate(bins):
        window = counts[max(0, b - neighbors):min(len(counts), b + neighbors + 1)]
        peak = window.mean()
        if k > 0:
            left = (counts[bins[k - 1] + 1:b],
                    0.5 * min(counts[b], counts[bins[k - 1]]))
        else:
            left = (counts[:b], 0.5 * counts[b])
        if k < len(bins) - 1:
            right = (counts[b + 1:bins[k + 1]],
                     0.5 * min(counts[b], counts[bins[k + 1]]))
        else:
            right = (counts[b + 1:], 0.5 * counts[b])
        sides = []
        for gap, half in (left, right):
            if gap.size == 0:
                continue
            below = gap[gap < half]
            sides.append(below if below.size else np.array([gap.min()]))
        if not sides:
            vals.append(0.0)
            continue
        valley = np.concatenate(sides).mean()
        vals.append((peak - valley) / (peak + valley))
    return np.array(vals)


class TestVisibility:
    def _hist(self, counts):
        edges = np.arange(len(counts) + 1, dtype=np.float64)
        return Histogram(bin_edges=edges, counts=np.asarray(counts, dtype=np.int64))

    def test_matches_naive_reference(self):
        rng = np.random.default_rng(12)
        centers = np.arange(300) + 0.5
        model = gaussian_comb(centers, [900, 700, 400], [60.0, 120.0, 180.0],
                              [7.0, 8.0, 9.0]) + 2.0
        counts = rng.poisson(model)
        h = self._hist(counts)
        bins = np.array([60, 120, 180])
        got = visibility(h, bins.tolist())
        expected = naive_visibility(counts, bins.tolist())
        np.testing.assert_allclose([v.value for v in got], expected, rtol=1e-12)

    def test_ideal_comb_visibility_is_one(self):
        counts = np.zeros(100, dtype=np.int64)
        counts[[20, 50, 80]] = 1000
        got = visibility(self._hist(counts), [20, 50, 80])
        for v in got:
            assert v.value == pytest.approx(1.0)

    def test_scale_invariance(self):
        rng = np.random.default_rng(13)
        centers = np.arange(200) + 0.5
        counts = rng.poisson(gaussian_comb(centers, [600, 500],
                                           [60.0, 120.0], [8.0, 8.0]) + 1.0)
        h1 = self._hist(counts)
        h2 = self._hist(counts * 10)
        v1 = visibility(h1, [60, 120])
        v2 = visibility(h2, [60, 120])
        for a, b in zip(v1, v2):
            assert a.value == pytest.approx(b.value, rel=1e-12)
            assert b.error < a.error

    def test_merged_flag_when_no_bin_below_half(self):
        counts = np.array([0, 0, 10, 9, 9, 9, 10, 0, 0], dtype=np.int64)
        got = visibility(self._hist(counts), [2, 6], neighbors=1)
        assert got[0].merged

    def test_hand_computed_plateau_comb(self):
        """Two flat-top lines over a known floor make every mean exact.

        Each 7-bin peak window averages 100. Each line's valley collects
        the three 20-count bins between the lines plus the seven empty
        bins on its outer side, so the valley mean is 60 / 10 = 6 and
        v = (100 - 6) / (100 + 6) for both lines.
        """
        counts = np.zeros(31, dtype=np.int64)
        counts[7:14] = 100
        counts[14:17] = 20
        counts[17:24] = 100
        got = visibility(self._hist(counts), [10, 20])
        max_err = math.sqrt(700.0) / 7.0
        val_err = math.sqrt(60.0) / 10.0
        want_err = 2.0 * math.sqrt(6.0 ** 2 * max_err ** 2
                                   + 100.0 ** 2 * val_err ** 2) / 106.0 ** 2
        assert len(got) == 2
        for point in got:
            assert point.value == pytest.approx(94.0 / 106.0, rel=1e-15)
            assert point.error == pytest.approx(want_err, rel=1e-12)
            assert not point.merged
            assert not point.truncated


class TestPeakMetrics:
    def _two_peaks(self):
        return [GaussianPeak(0, 0.0, 0.05, 1.0, 0.02, 500),
                GaussianPeak(1, 10.0, 0.05, 2.0, 0.02, 300)]

    def test_fom_value(self):
        # 10 / (2 sqrt(2 ln 2) * 3), frozen
        assert fom(self._two_peaks())[0].value == pytest.approx(
            1.4155363338133653, rel=1e-12)

    def test_delta_value(self):
        assert delta_pp(self._two_peaks())[0].value == 10.0

    def test_fom_needs_ordered_comb(self):
        peaks = [GaussianPeak(0, 10.0, 0.1, 1.0, 0.1, 10),
                 GaussianPeak(1, 10.0, 0.1, 1.0, 0.1, 10)]
        with pytest.raises(ValueError):
            fom(peaks)

    @pytest.mark.parametrize("fom_value,total", OVERLAP_TABLE)
    def test_overlap_table(self, fom_value, total):
        got_total, got_each = overlap_from_fom(fom_value)
        assert got_total == pytest.approx(total, rel=1e-9)
        assert got_each == pytest.approx(total / 2.0, rel=1e-9)

    def test_normal_cdf_against_scipy(self):
        """Dual route: erfc-based CDF vs scipy.stats.norm."""
        x = np.linspace(-8.0, 8.0, 161)
        np.testing.assert_allclose(normal_cdf(x), sstats.norm.cdf(x),
                                   rtol=0, atol=1e-14)


class TestAnalyzeSpectrum:
    def test_end_to_end_metrics(self):
        rng = np.random.default_rng(14)
        q = np.concatenate([rng.normal(60.0 * k, 6.0, size=50_000)
                            for k in range(1, 5)])
        m = analyze_spectrum(build_histogram(q, bin_width=1.0))
        assert len(m.peaks) == 4
        assert len(m.visibility) == 4
        assert len(m.fom) == 3
        assert len(m.delta_pp) == 3
        for point in m.delta_pp:
            assert point.value == pytest.approx(60.0, abs=1.0)
        assert m.chi2 / m.ndf < 2.0

    def test_single_peak_raises(self):
        """A lone line is not a comb; a prominence floor above the bin
        noise leaves exactly one candidate and the analysis refuses it."""
        rng = np.random.default_rng(15)
        q = rng.normal(100.0, 5.0, size=10_000)
        with pytest.raises(FitError):
            analyze_spectrum(build_histogram(q, bin_width=1.0),
                             min_prominence=50.0)
