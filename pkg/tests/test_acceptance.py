"""End-to-end acceptance gate.

Each test exercises one headline guarantee of the package at its stated
tolerance and prints a one-line PASS/FAIL verdict (run ``pytest -s`` to see
the lines as they appear). The runs are seeded, so every number below is
reproducible; the whole module takes a few minutes.
"""
import math
import time
from dataclasses import replace

import numpy as np
from scipy import signal as sp_signal

from pnrsim.pipeline import PipelineConfig, PoleZeroFilter
from pnrsim.config import RunConfig
from pnrsim.presets import (_by_line, _fit_spectrum, _spectrum_run_config,
                            run_fig3_vis_fom, run_fig6_fidelity, run_preset,
                            PRESETS)
from pnrsim.runner import charge_ensemble, counts_ensemble
from pnrsim.sipm import WaveformParams, get_preset
from pnrsim.sources import (LightStateSpec, fano_theory, gamma_theory,
                            sample_multithermal)
from pnrsim.spectra import (Histogram, find_peaks, fit_multi_gaussian,
                            overlap_from_fom)
from pnrsim.stats import block_statistics, correlation, fano, noise_reduction


def _verdict(num: int, label: str, ok: bool, detail: str = "") -> None:
    print(f"[acceptance {num:2d}] {label}: {'PASS' if ok else 'FAIL'}"
          f"{'  (' + detail + ')' if detail else ''}")
    assert ok, f"acceptance check {num} failed: {detail}"


# --------------------------------------------------------------------------
# 1. Gaussian-overlap lookup table reproduced to its printed precision.

def test_overlap_table():
    t0 = time.time()
    # (FoM, total overlap %, per-peak overlap %, decimals printed)
    table = [
        (0.50, 23.9, 12.0, 1),
        (0.75, 7.74, 3.87, 2),
        (1.00, 1.85, 0.93, 2),
        (1.50, 0.041, 0.021, 3),
        (2.00, 0.0002, 0.0001, 4),
    ]
    worst = 0.0
    ok = True
    for fom_value, total_pct, per_peak_pct, decimals in table:
        total, per_peak = overlap_from_fom(fom_value)
        tol = 0.5 * 10.0 ** (-decimals)
        err = max(abs(100.0 * total - total_pct),
                  abs(100.0 * per_peak - per_peak_pct))
        worst = max(worst, err / tol)
        ok = ok and err <= tol
    elapsed = time.time() - t0
    ok = ok and elapsed < 1.0
    _verdict(1, "overlap table at FoM 0.5..2.0 to printed precision", ok,
             f"worst err {worst:.2f} of tolerance, {elapsed * 1e3:.0f} ms")


# --------------------------------------------------------------------------
# 2. The pole-zero stage exactly inverts the exponential shaper.

def test_exact_deconvolution():
    t0 = time.time()
    rng = np.random.default_rng(2024)
    gain = 2.5
    worst = 0.0
    for a in (0.5, 0.9, math.exp(-1.0 / 20.0)):
        for _ in range(1000):
            x = rng.uniform(-100.0, 100.0, size=64)
            shaped = sp_signal.lfilter([1.0], [1.0, -a], x)
            filt = PoleZeroFilter(a=a, g=gain)
            y = np.array([filt.step(s) for s in shaped]) / gain
            worst = max(worst, np.max(np.abs(y - x)) / np.max(np.abs(x)))
    elapsed = time.time() - t0
    ok = worst <= 1e-9 and elapsed < 10.0
    _verdict(2, "pole-zero recovers G*input from shaped sequences", ok,
             f"max rel err {worst:.2e}, {elapsed:.1f} s")


# --------------------------------------------------------------------------
# 3. Balanced twin beam: R -> 1 - eta and Gamma matches theory.

def test_twin_beam_noise_reduction():
    ok = True
    details = []
    for idx, eta in enumerate((0.25, 0.3, 0.4)):
        t0 = time.time()
        det = get_preset("ideal", pde=eta)
        cfg = RunConfig(seed=31415 + idx, events=1_000_000,
                        source=LightStateSpec(kind="twin_beam",
                                              mean=5.0 / eta, modes=100),
                        detectors=(det, det), pipeline=PipelineConfig(),
                        waveform=WaveformParams(), gate_ns=20.0)
        m1, m2 = counts_ensemble(cfg, workers=2)
        m1 = m1.astype(float)
        m2 = m2.astype(float)
        r = noise_reduction(m1, m2)
        gamma = correlation(m1, m2)
        gamma_th = gamma_theory(m1.mean(), m2.mean(), 100, 100, eta, eta)
        elapsed = time.time() - t0
        ok = ok and (abs(r - (1.0 - eta)) <= 0.01
                     and abs(gamma - gamma_th) <= 0.01 and elapsed < 30.0)
        details.append(f"eta={eta}: R={r:.4f} vs {1 - eta:.2f}, "
                       f"dGamma={abs(gamma - gamma_th):.4f}, {elapsed:.0f} s")
    _verdict(3, "twin beam: R within 0.01 of 1-eta and Gamma within 0.01 "
                "of theory at eta 0.25/0.3/0.4", ok, "; ".join(details))


# --------------------------------------------------------------------------
# 4. Multithermal Fano factor matches 1 + mean/modes.

def test_multithermal_fano():
    ok = True
    details = []
    for modes in (1, 5, 100):
        rng = np.random.default_rng(100 + modes)
        x = sample_multithermal(rng, 10.0, modes, 1_000_000)
        res = block_statistics(x, fano, 4)
        th = fano_theory(10.0, modes)
        ok = ok and abs(res.value - th) <= 3.0 * res.error
        details.append(f"mu={modes}: {res.value:.4f}+-{res.error:.4f} "
                       f"vs {th:.4f}")
    _verdict(4, "multithermal mean 10: Fano within 3 block errors of "
                "1 + mean/modes at 1/5/100 modes", ok, "; ".join(details))


# --------------------------------------------------------------------------
# 5. Saturation pile-up drives the small device sub-Poissonian first.

def test_pileup_fano_ordering():
    detectors = {
        667: replace(get_preset("50CS"), pde=0.25, crosstalk_prob=0.0,
                     dark_rate=0.0),
        2668: replace(get_preset("25CS"), pde=0.25, crosstalk_prob=0.0,
                      dark_rate=0.0),
    }
    fanos = {}
    for run, (cells, det) in enumerate(detectors.items()):
        for target in (10.0, 140.0):
            cfg = RunConfig(seed=777 + run, events=150_000,
                            source=LightStateSpec(kind="multithermal",
                                                  mean=target / det.pde,
                                                  modes=1500),
                            detectors=(det,), pipeline=PipelineConfig(),
                            waveform=WaveformParams(), gate_ns=20.0)
            m, = counts_ensemble(cfg, workers=2)
            fanos[cells, target] = block_statistics(m, fano, 4)
    low = fanos[667, 10.0]
    small = fanos[667, 140.0]
    big = fanos[2668, 140.0]
    ok = (small.value + 3.0 * small.error < 1.0
          and big.value - 3.0 * big.error > 1.0
          and low.value - small.value
          > 3.0 * math.hypot(low.error, small.error))
    _verdict(5, "667-cell Fano crosses below 1 while 2668-cell stays above",
             ok, f"F667(140)={small.value:.3f}+-{small.error:.3f}, "
                 f"F2668(140)={big.value:.3f}+-{big.error:.3f}, "
                 f"F667(10)={low.value:.3f}")


# --------------------------------------------------------------------------
# 6. Trigger jitter broadens every well-measured line from n = 10 up.

def test_jitter_broadening(tmp_path):
    res = run_fig3_vis_fom(20250814, tmp_path, workers=2, scale=1.0,
                           figures=False)
    runs = res["runs"]

    def reliable(tag):
        sig, err = runs[tag]["sigma"], runs[tag]["sigma_err"]
        return {n for n in sig if n >= 10 and err[n] <= 0.25 * sig[n]}

    lines = sorted(reliable("sync") & reliable("async"))
    sig_ok = all(runs["async"]["sigma"][n] > runs["sync"]["sigma"][n]
                 for n in lines)
    fom_lines = [n for n in lines
                 if n in runs["sync"]["fom"] and n in runs["async"]["fom"]
                 and n + 1 in lines]
    fom_ok = all(runs["async"]["fom"][n] < runs["sync"]["fom"][n]
                 for n in fom_lines)
    ok = len(lines) >= 8 and len(fom_lines) >= 6 and sig_ok and fom_ok
    _verdict(6, "jittered run has larger sigma_n and smaller FoM_n at "
                "every well-measured n >= 10", ok,
             f"{len(lines)} sigma lines {lines[:1]}..{lines[-1:]}, "
             f"{len(fom_lines)} FoM lines")


# --------------------------------------------------------------------------
# 7. Reconstruction fidelity floor and low-mean twin-beam statistics.

def test_fidelity_floor(tmp_path):
    res = run_fig6_fidelity(424242, tmp_path, workers=2, scale=1.0,
                            figures=False)
    infidelity = {m: res["fidelity"][str(m)]["infidelity"]
                  for m in (0.07, 1.0, 10.0)}
    fid_ok = all(v < 1e-4 for v in infidelity.values())
    twb = res["twb"]["0.07"]
    twb_ok = all(abs(twb[e]["value"] - twb[e]["theory"])
                 <= 3.0 * twb[e]["error"] for e in ("fano", "gamma", "r"))
    ok = fid_ok and twb_ok
    _verdict(7, "infidelity < 1e-4 at means 0.07/1/10; twin beam at 0.07 "
                "matches theory within 3 block errors", ok,
             "worst infidelity "
             f"{max(infidelity.values()):.2e}; twb pulls "
             + ", ".join(f"{e}={abs(twb[e]['value'] - twb[e]['theory']) / twb[e]['error']:.2f}"
                         for e in ("fano", "gamma", "r")))


# --------------------------------------------------------------------------
# 8. The comb fitter is statistically calibrated on self-generated spectra.

def test_fit_pull_calibration():
    edges = np.arange(0.0, 1301.0)
    centers = 0.5 * (edges[:-1] + edges[1:])
    true_mu = 60.0 + 60.0 * np.arange(20)
    true_sigma = np.full(20, 8.0)
    amps = 2500.0 * np.exp(-0.5 * ((np.arange(20) - 8) / 6.0) ** 2) + 300.0
    model = np.zeros_like(centers)
    for a, m, s in zip(amps, true_mu, true_sigma):
        model += a * np.exp(-0.5 * ((centers - m) / s) ** 2)

    mu_pulls, sig_pulls = [], []
    for seed in range(100):
        counts = np.random.default_rng(9000 + seed).poisson(model)
        h = Histogram(bin_edges=edges, counts=counts)
        peaks = fit_multi_gaussian(h, find_peaks(h, min_separation=35.0))
        assert len(peaks) == 20
        for k, p in enumerate(peaks):
            mu_pulls.append((p.mu - true_mu[k]) / p.mu_err)
            sig_pulls.append((p.sigma - true_sigma[k]) / p.sigma_err)
    mu_pulls = np.asarray(mu_pulls)
    sig_pulls = np.asarray(sig_pulls)
    ok = (abs(mu_pulls.mean()) < 0.3 and 0.7 < mu_pulls.std() < 1.3
          and abs(sig_pulls.mean()) < 0.3 and 0.7 < sig_pulls.std() < 1.3)
    _verdict(8, "fit pulls over 100 seeds: |mean| < 0.3, width in [0.7, 1.3]",
             ok, f"mu {mu_pulls.mean():+.3f}/{mu_pulls.std():.3f}, "
                 f"sigma {sig_pulls.mean():+.3f}/{sig_pulls.std():.3f}")


# --------------------------------------------------------------------------
# 9. Synchronous spectrum at detected mean 8: high-visibility comb.

def test_visibility_regime():
    cfg = _spectrum_run_config(9001, 8.0, 2_000_000, jitter_ns=0.0,
                               gate_len_ns=10, trigger_index=88,
                               gate_offset=4)
    q, = charge_ensemble(cfg, workers=2)
    hist, metrics, numbers = _fit_spectrum(
        q, get_preset("25CS").cell_amplitude)
    vis = _by_line(numbers, [v.value for v in metrics.visibility])
    front_ok = all(n in vis and vis[n] > 0.9 for n in range(16))

    # Decreasing envelope beyond n = 15: windowed max over 3 lines may
    # never rise. The last fitted line has no bounding line on its right,
    # so its one-sided valley is excluded.
    tail = [vis[n] for n in sorted(vis) if 15 <= n < max(vis)]
    env = [max(tail[i:i + 3]) for i in range(len(tail) - 2)]
    env_ok = all(b <= a + 1e-9 for a, b in zip(env, env[1:]))
    ok = front_ok and len(tail) >= 4 and env_ok
    _verdict(9, "synchronous mean-8 spectrum: v > 0.9 for n = 0..15, "
                "decreasing envelope beyond", ok,
             f"min v(0..15) = {min(vis[n] for n in range(16)):.3f}, "
             f"envelope {[round(e, 3) for e in env]}")


# --------------------------------------------------------------------------
# 10. Every preset is byte-identical across worker counts.

def test_preset_determinism(tmp_path):
    mismatches = []
    for name in PRESETS:
        dirs = []
        for workers in (1, 2):
            out = tmp_path / f"{name}_w{workers}"
            run_preset(name, seed=11, out_dir=out, workers=workers,
                       scale=0.05, figures=True)
            dirs.append(out)
        files1 = sorted(p.name for p in dirs[0].iterdir())
        files2 = sorted(p.name for p in dirs[1].iterdir())
        if files1 != files2:
            mismatches.append(f"{name}: file sets differ")
            continue
        for fname in files1:
            if (dirs[0] / fname).read_bytes() != (dirs[1] / fname).read_bytes():
                mismatches.append(f"{name}/{fname}")
    _verdict(10, "presets byte-identical for 1 vs 2 workers", not mismatches,
             "all files match" if not mismatches else "; ".join(mismatches))
