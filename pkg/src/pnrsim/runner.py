"""Run engine: block-deterministic ensemble generation and the three
pipeline operations behind the CLI (simulate, process, analyze).

Ensembles are produced block by block (see rng.BLOCK_EVENTS); a worker pool
only ever receives whole blocks and results are assembled in block order,
so any worker count yields byte-identical outputs for a given seed.
"""
from __future__ import annotations

import json
import struct
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import plots
from .config import AnalysisOptions, ConfigError, RunConfig
from .pipeline import PipelineConfig, process_records
from .rng import BLOCK_EVENTS, SUB_DETECT, SUB_WAVEFORM, EventStreams, block_slice, n_blocks
from .sipm import detect_batch, synthesize_batch
from .sources import sample_photons
from .spectra import (SpectrumMetrics, analyze_spectrum, build_histogram,
                      comb_numbers)
from .stats import (StatsReport, assign_photoelectrons, block_statistics,
                    correlation, fano, noise_reduction)
from .wavefile import PnrwWriter, WaveFileError, iter_pnrw, read_header

CHARGE_MAGIC = b"PNRQ"
_CHARGE_HEADER = struct.Struct("<4sHH")


def fmt(x) -> str:
    """Stable decimal rendering used by every delimited output."""
    if isinstance(x, str):
        return x
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".10g")


def write_csv(path, header: list[str], columns: list[np.ndarray]) -> None:
    """Write columns as CSV with deterministic formatting."""
    rows = len(columns[0])
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for i in range(rows):
            fh.write(",".join(fmt(col[i]) for col in columns) + "\n")


def write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2)
        fh.write("\n")


# ------------------------------------------------------------- generation

def _detect_block(cfg: RunConfig, block: int) -> tuple[np.ndarray, ...]:
    """Detected avalanche counts of one block, one array per channel.

    Draw order within the block stream is fixed: source photons, then the
    full cascade of channel 1, then channel 2.
    """
    rng = EventStreams(cfg.seed).stream(block, SUB_DETECT)
    sl = block_slice(block, cfg.events)
    size = sl.stop - sl.start
    n1, n2 = sample_photons(rng, cfg.source, size)
    fired1 = detect_batch(rng, n1, cfg.detectors[0], cfg.gate_ns)["fired_total"]
    if n2 is None:
        return (fired1,)
    fired2 = detect_batch(rng, n2, cfg.detectors[1], cfg.gate_ns)["fired_total"]
    return (fired1, fired2)


def _waveform_block(cfg: RunConfig, block: int) -> list[np.ndarray]:
    """Digitized records of one block, one (events, record_len) per channel."""
    counts = _detect_block(cfg, block)
    streams = EventStreams(cfg.seed)
    out = []
    for ch, fired in enumerate(counts):
        rng = streams.stream(block, SUB_WAVEFORM + ch)
        out.append(synthesize_batch(rng, fired, cfg.detectors[ch], cfg.waveform))
    return out


def _charge_block(cfg: RunConfig, block: int) -> tuple[np.ndarray, ...]:
    """Measured charges of one block: synthesis plus DSP, nothing persisted."""
    waves = _waveform_block(cfg, block)
    return tuple(process_records(w, cfg.waveform.trigger_index, cfg.pipeline,
                                 cfg.waveform.sample_period_ns) for w in waves)


def _map_blocks(fn, cfg: RunConfig, workers: int):
    """Apply a block function over all blocks, in order, optionally pooled."""
    blocks = range(n_blocks(cfg.events))
    if workers <= 1:
        for b in blocks:
            yield fn(cfg, b)
        return
    with ProcessPoolExecutor(max_workers=workers) as pool:
        chunk = max(1, len(blocks) // (workers * 4))
        yield from pool.map(fn, [cfg] * len(blocks), blocks, chunksize=chunk)


def counts_ensemble(cfg: RunConfig, workers: int = 1) -> tuple[np.ndarray, ...]:
    """Detected counts for the whole run, per channel."""
    parts = list(_map_blocks(_detect_block, cfg, workers))
    return tuple(np.concatenate([p[ch] for p in parts])
                 for ch in range(cfg.channels))


def charge_ensemble(cfg: RunConfig, workers: int = 1) -> tuple[np.ndarray, ...]:
    """Measured charges for the whole run, per channel (in memory)."""
    parts = list(_map_blocks(_charge_block, cfg, workers))
    return tuple(np.concatenate([p[ch] for p in parts])
                 for ch in range(cfg.channels))


# ---------------------------------------------------------------- simulate

def run_simulate(cfg: RunConfig, out_dir, workers: int = 1) -> dict:
    """Generate an ensemble and write event files.

    Both modes write counts.csv (the detection record); full-waveform mode
    additionally writes one PNRW file per channel. Returns a manifest of
    written paths.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {"mode": cfg.mode, "events": cfg.events, "seed": cfg.seed,
                "channels": cfg.channels}

    counts_path = out_dir / "counts.csv"
    if cfg.mode == "counts-only":
        arrays = counts_ensemble(cfg, workers=workers)
    else:
        writers = [PnrwWriter(out_dir / f"ch{ch + 1}.pnrw",
                              record_len=cfg.waveform.record_len,
                              sample_period_ns=cfg.waveform.sample_period_ns,
                              trigger_index=cfg.waveform.trigger_index)
                   for ch in range(cfg.channels)]
        per_ch_counts = [[] for _ in range(cfg.channels)]
        try:
            for block in range(n_blocks(cfg.events)):
                fired = _detect_block(cfg, block)
                streams = EventStreams(cfg.seed)
                for ch in range(cfg.channels):
                    rng = streams.stream(block, SUB_WAVEFORM + ch)
                    records = synthesize_batch(rng, fired[ch],
                                               cfg.detectors[ch], cfg.waveform)
                    writers[ch].append(records)
                    per_ch_counts[ch].append(fired[ch])
        finally:
            for w in writers:
                w.close()
        arrays = tuple(np.concatenate(c) for c in per_ch_counts)
        manifest["waveforms"] = [w.path.name for w in writers]

    header = ["event"] + [f"m{ch + 1}" for ch in range(cfg.channels)]
    write_csv(counts_path, header,
              [np.arange(cfg.events)] + [a for a in arrays])
    manifest["counts"] = counts_path.name
    write_json(out_dir / "meta.json", manifest)
    return manifest


# ----------------------------------------------------------------- process

def write_charges_csv(path, charges: tuple[np.ndarray, ...]) -> None:
    header = ["event"] + [f"q{i + 1}" for i in range(len(charges))]
    write_csv(path, header,
              [np.arange(len(charges[0]))] + [np.asarray(q) for q in charges])


def write_charges_binary(path, charges: tuple[np.ndarray, ...]) -> None:
    """Compact records: event u32 followed by one f64 per channel."""
    n_ch = len(charges)
    n = len(charges[0])
    rec = np.dtype([("event", "<u4")] + [(f"q{i + 1}", "<f8") for i in range(n_ch)])
    data = np.empty(n, dtype=rec)
    data["event"] = np.arange(n, dtype=np.uint32)
    for i, q in enumerate(charges):
        data[f"q{i + 1}"] = q
    with open(path, "wb") as fh:
        fh.write(_CHARGE_HEADER.pack(CHARGE_MAGIC, 1, n_ch))
        fh.write(data.tobytes())


def read_charges_binary(path) -> tuple[np.ndarray, ...]:
    with open(path, "rb") as fh:
        head = fh.read(_CHARGE_HEADER.size)
        if len(head) < _CHARGE_HEADER.size:
            raise WaveFileError(f"{path}: truncated header")
        magic, version, n_ch = _CHARGE_HEADER.unpack(head)
        if magic != CHARGE_MAGIC:
            raise WaveFileError(f"{path}: bad magic {magic!r}")
        if version != 1:
            raise WaveFileError(f"{path}: unsupported version {version}")
        raw = fh.read()
    rec = np.dtype([("event", "<u4")] + [(f"q{i + 1}", "<f8") for i in range(n_ch)])
    if len(raw) % rec.itemsize:
        raise WaveFileError(f"{path}: truncated records")
    data = np.frombuffer(raw, dtype=rec)
    return tuple(data[f"q{i + 1}"].astype(np.float64) for i in range(n_ch))


def read_event_csv(path) -> tuple[list[str], tuple[np.ndarray, ...]]:
    """Read an event CSV (counts or charges); returns (column names, columns)."""
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
    names = header.split(",")
    if not names or names[0] != "event":
        raise WaveFileError(f"{path}: not an event CSV (header {header!r})")
    data = np.genfromtxt(path, delimiter=",", skip_header=1, dtype=np.float64,
                         ndmin=2)
    if data.shape[1] != len(names):
        raise WaveFileError(f"{path}: {data.shape[1]} columns, header names "
                            f"{len(names)}")
    return names[1:], tuple(data[:, i + 1] for i in range(len(names) - 1))


def run_process(wave_paths, pipe_cfg: PipelineConfig, out_path,
                fmt_name: str = "csv") -> int:
    """Run the DSP over waveform files and write the charge events.

    Multiple input files are processed as synchronous channels of the same
    events and must agree in record count and geometry.
    """
    headers = [read_header(p) for p in wave_paths]
    first = headers[0]
    for p, h in zip(wave_paths, headers):
        if (h.n_records, h.record_len) != (first.n_records, first.record_len):
            raise WaveFileError(f"{p}: geometry differs from {wave_paths[0]}")
        if h.trigger_index != first.trigger_index:
            raise WaveFileError(f"{p}: trigger index differs from {wave_paths[0]}")

    charges = []
    for path in wave_paths:
        qs = [process_records(chunk, h.trigger_index, pipe_cfg, h.sample_period_ns)
              for h, chunk in iter_pnrw(path)]
        charges.append(np.concatenate(qs) if qs else np.empty(0))
    charges = tuple(charges)

    if fmt_name == "csv":
        write_charges_csv(out_path, charges)
    elif fmt_name == "binary":
        write_charges_binary(out_path, charges)
    else:
        raise ConfigError(f"unknown charge format {fmt_name!r}")
    return first.n_records


# ----------------------------------------------------------------- analyze

def _block_report(columns: tuple[np.ndarray, ...], n_blocks_: int,
                  mode: str) -> StatsReport:
    rep = StatsReport(n_events=len(columns[0]), n_blocks=n_blocks_, mode=mode)
    rep.mean1 = block_statistics(columns[0], np.mean, n_blocks_)
    rep.fano1 = block_statistics(columns[0], fano, n_blocks_)
    if len(columns) > 1:
        rep.mean2 = block_statistics(columns[1], np.mean, n_blocks_)
        rep.fano2 = block_statistics(columns[1], fano, n_blocks_)
        pair = (columns[0], columns[1])
        rep.gamma = block_statistics(pair, correlation, n_blocks_)
        rep.noise_reduction = block_statistics(pair, noise_reduction, n_blocks_)
    return rep


def analyze_counts(columns: tuple[np.ndarray, ...], opts: AnalysisOptions,
                   out_dir: Path, figures: bool) -> StatsReport:
    report = _block_report(columns, opts.n_blocks, mode="counts")
    pmfs = []
    for ch, m in enumerate(columns):
        m = m.astype(np.int64)
        pmf = np.bincount(m) / m.size
        pmfs.append(pmf)
        write_csv(out_dir / f"pmf_ch{ch + 1}.csv", ["n", "p"],
                  [np.arange(pmf.size), pmf])
    if figures:
        plots.plot_pmfs(pmfs, out_dir / "fig_pmf.png")
    return report


def analyze_charges(columns: tuple[np.ndarray, ...], opts: AnalysisOptions,
                    out_dir: Path, figures: bool) -> StatsReport:
    """Spectrum analysis per channel plus calibrated photon statistics."""
    metrics: list[SpectrumMetrics] = []
    hists = []
    assigned = []
    excluded = 0
    for ch, q in enumerate(columns):
        hist = build_histogram(q, bin_width=opts.bin_width)
        m = analyze_spectrum(hist, min_separation=opts.min_separation,
                             min_prominence=opts.min_prominence)
        hists.append(hist)
        metrics.append(m)
        _write_spectrum_outputs(out_dir, f"ch{ch + 1}", hist, m)
        ranks, bad = assign_photoelectrons(q, [p.mu for p in m.peaks])
        numbers = comb_numbers(m.peaks)
        assigned.append(np.where(bad, -1, numbers[ranks]))
        excluded += int(bad.sum())
        if figures:
            plots.plot_spectrum(hist, m, out_dir / f"fig_spectrum_ch{ch + 1}.png")
            plots.plot_metrics(m, out_dir / f"fig_metrics_ch{ch + 1}.png")

    good = np.ones(len(columns[0]), dtype=bool)
    for a in assigned:
        good &= a >= 0
    kept = tuple(a[good].astype(np.float64) for a in assigned)
    report = _block_report(kept, opts.n_blocks, mode="charges-calibrated")
    report.excluded_fraction = 1.0 - good.mean()
    report.extra["chi2"] = [m.chi2 for m in metrics]
    report.extra["ndf"] = [m.ndf for m in metrics]
    return report


def _write_spectrum_outputs(out_dir: Path, tag: str, hist, m: SpectrumMetrics):
    numbers = comb_numbers(m.peaks)
    write_csv(out_dir / f"histogram_{tag}.csv",
              ["bin_low", "bin_high", "count"],
              [hist.bin_edges[:-1], hist.bin_edges[1:], hist.counts])
    write_csv(out_dir / f"peaks_{tag}.csv",
              ["n", "mu", "mu_err", "sigma", "sigma_err", "amplitude"],
              [numbers,
               np.array([p.mu for p in m.peaks]),
               np.array([p.mu_err for p in m.peaks]),
               np.array([p.sigma for p in m.peaks]),
               np.array([p.sigma_err for p in m.peaks]),
               np.array([p.amplitude for p in m.peaks])])
    write_csv(out_dir / f"visibility_{tag}.csv",
              ["n", "visibility", "error", "truncated", "merged"],
              [numbers,
               np.array([v.value for v in m.visibility]),
               np.array([v.error for v in m.visibility]),
               np.array([int(v.truncated) for v in m.visibility]),
               np.array([int(v.merged) for v in m.visibility])])
    write_csv(out_dir / f"fom_{tag}.csv", ["n", "fom", "error"],
              [numbers[:-1],
               np.array([p.value for p in m.fom]),
               np.array([p.error for p in m.fom])])
    write_csv(out_dir / f"delta_pp_{tag}.csv", ["n", "delta", "error"],
              [numbers[:-1],
               np.array([p.value for p in m.delta_pp]),
               np.array([p.error for p in m.delta_pp])])


def run_analyze(input_path, opts: AnalysisOptions, out_dir,
                figures: bool = True) -> StatsReport:
    """Analyze an event file (counts or charges, CSV or binary).

    Writes per-channel CSV tables, report.json, and figures (unless
    disabled) into out_dir.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    input_path = Path(input_path)

    if input_path.suffix == ".pnrq" or _sniff_magic(input_path) == CHARGE_MAGIC:
        names, columns = None, read_charges_binary(input_path)
        kind = "charges"
    else:
        names, columns = read_event_csv(input_path)
        kind = "charges" if names[0].startswith("q") else "counts"

    if kind == "counts":
        report = analyze_counts(columns, opts, out_dir, figures)
    else:
        report = analyze_charges(columns, opts, out_dir, figures)
    report.source = input_path.name
    write_json(out_dir / "report.json", report.to_dict())
    return report


def _sniff_magic(path) -> bytes:
    try:
        with open(path, "rb") as fh:
            return fh.read(4)
    except OSError:
        return b""
