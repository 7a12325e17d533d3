"""Run configuration: JSON schema, parsing, and validation.

A run is described by one JSON document:

    {
      "seed": 12345,
      "events": 100000,
      "blocks": 4,
      "mode": "counts-only",              // or "full-waveform"
      "gate_ns": 20.0,                    // exposure window for dark counts
      "source": {"kind": "coherent", "mean": 32.0, "modes": 1},
      "detector": {"preset": "25CS"},     // or inline SiPMConfig fields;
                                          // "detectors": [..] for two arms
      "pipeline": { ... PipelineConfig fields ... },
      "waveform": { ... WaveformParams fields ... },
      "analysis": {"bin_width": 1.0, "min_separation": null,
                   "n_blocks": 4}
    }

Field errors raise ConfigError with the offending key path; validation is
eager so the CLI can fail fast before any simulation starts.
"""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass

from .pipeline import PipelineConfig
from .sipm import SiPMConfig, WaveformParams, get_preset, SIPM_PRESETS
from .sources import LightStateSpec

MODES = ("counts-only", "full-waveform")


class ConfigError(Exception):
    """Invalid or inconsistent run configuration."""


@dataclass(frozen=True)
class AnalysisOptions:
    bin_width: float = 1.0
    min_separation: float | None = None
    min_prominence: float | None = None
    n_blocks: int = 4

    def __post_init__(self):
        if self.bin_width <= 0:
            raise ConfigError("analysis.bin_width must be > 0")
        if self.min_separation is not None and self.min_separation <= 0:
            raise ConfigError("analysis.min_separation must be > 0")
        if self.n_blocks < 2:
            raise ConfigError("analysis.n_blocks must be >= 2")


@dataclass(frozen=True)
class RunConfig:
    seed: int
    events: int
    source: LightStateSpec
    detectors: tuple[SiPMConfig, ...]
    pipeline: PipelineConfig
    waveform: WaveformParams
    mode: str = "counts-only"
    gate_ns: float = 20.0
    analysis: AnalysisOptions = AnalysisOptions()

    def __post_init__(self):
        if self.seed < 0:
            raise ConfigError("seed must be >= 0")
        if self.events < 1:
            raise ConfigError("events must be >= 1")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.gate_ns <= 0:
            raise ConfigError("gate_ns must be > 0")
        want = 2 if self.source.two_arm else 1
        if len(self.detectors) != want:
            raise ConfigError(f"source kind {self.source.kind!r} needs {want} "
                              f"detector(s), got {len(self.detectors)}")

    @property
    def channels(self) -> int:
        return len(self.detectors)


def _take(section: dict, key: str, default=None, required=False):
    if key in section:
        return section[key]
    if required:
        raise ConfigError(f"missing required field {key!r}")
    return default


def _build(cls, data: dict, path: str):
    """Instantiate a dataclass from a dict, mapping errors to ConfigError."""
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected an object, got {type(data).__name__}")
    allowed = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"{path}: unknown field(s) {sorted(unknown)}; "
                          f"allowed: {sorted(allowed)}")
    try:
        return cls(**data)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _parse_detector(data, path: str) -> SiPMConfig:
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected an object")
    if "preset" in data:
        name = data["preset"]
        overrides = {k: v for k, v in data.items() if k != "preset"}
        try:
            return get_preset(name, **overrides)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    return _build(SiPMConfig, data, path)


def parse_run_config(doc: dict) -> RunConfig:
    """Build and validate a RunConfig from a parsed JSON document."""
    if not isinstance(doc, dict):
        raise ConfigError("top level must be a JSON object")
    known = {"seed", "events", "blocks", "mode", "gate_ns", "source",
             "detector", "detectors", "pipeline", "waveform", "analysis"}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown top-level field(s) {sorted(unknown)}; "
                          f"allowed: {sorted(known)}")

    seed = _take(doc, "seed", required=True)
    events = _take(doc, "events", required=True)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ConfigError("seed must be an integer")
    if not isinstance(events, int) or isinstance(events, bool):
        raise ConfigError("events must be an integer")

    source = _build(LightStateSpec, _take(doc, "source", required=True), "source")

    if "detector" in doc and "detectors" in doc:
        raise ConfigError("give either 'detector' or 'detectors', not both")
    if "detectors" in doc:
        det_list = doc["detectors"]
        if not isinstance(det_list, list) or not det_list:
            raise ConfigError("detectors must be a non-empty list")
        detectors = tuple(_parse_detector(d, f"detectors[{i}]")
                          for i, d in enumerate(det_list))
    elif "detector" in doc:
        det = _parse_detector(doc["detector"], "detector")
        detectors = (det, det) if source.two_arm else (det,)
    else:
        raise ConfigError("missing required field 'detector'")

    pipeline = _build(PipelineConfig, _take(doc, "pipeline", {}), "pipeline")
    waveform = _build(WaveformParams, _take(doc, "waveform", {}), "waveform")
    analysis_raw = _take(doc, "analysis", {})
    analysis = _build(AnalysisOptions, analysis_raw, "analysis") \
        if analysis_raw else AnalysisOptions()

    blocks = _take(doc, "blocks", 4)
    if blocks is not None and analysis_raw.get("n_blocks") is None:
        if not isinstance(blocks, int) or blocks < 2:
            raise ConfigError("blocks must be an integer >= 2")
        analysis = dataclasses.replace(analysis, n_blocks=blocks)

    try:
        cfg = RunConfig(seed=seed, events=events, source=source,
                        detectors=detectors, pipeline=pipeline,
                        waveform=waveform,
                        mode=_take(doc, "mode", "counts-only"),
                        gate_ns=float(_take(doc, "gate_ns", 20.0)),
                        analysis=analysis)
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc
    check_consistency(cfg)
    return cfg


def check_consistency(cfg: RunConfig) -> None:
    """Cross-field checks that only matter for full-waveform runs."""
    if cfg.mode != "full-waveform":
        return
    wf, pipe = cfg.waveform, cfg.pipeline
    anchor = wf.trigger_index + pipe.trigger_delay
    if pipe.trigger_mode == "external":
        n0 = anchor + pipe.gate_offset
        n_gate = pipe.gate_samples(wf.sample_period_ns)
        if n0 < 0:
            raise ConfigError(f"gate starts at sample {n0} before the record; "
                              f"raise trigger_index or gate_offset")
        if n0 + n_gate > wf.record_len:
            raise ConfigError(f"gate [{n0}, {n0 + n_gate}) runs past the "
                              f"{wf.record_len}-sample record")
        pulse_at = wf.onset / wf.sample_period_ns + pipe.signal_delay
        jitter = 6.0 * wf.jitter_sigma_ns / wf.sample_period_ns
        if pulse_at - jitter < anchor:
            raise ConfigError("pulse onset (minus 6 sigma of jitter) precedes "
                              "the trigger anchor; the baseline freeze would "
                              "swallow part of the pulse")
        if n0 + n_gate < pulse_at + jitter:
            raise ConfigError("gate ends before the jittered pulse start; "
                              "widen the gate or move gate_offset")
    tau_samples = cfg.detectors[0].pulse_tau / wf.sample_period_ns
    a_expected = math.exp(-1.0 / tau_samples)
    if abs(pipe.a - a_expected) > 5e-3:
        raise ConfigError(f"pipeline a={pipe.a:.6f} does not invert the "
                          f"detector pulse (expected {a_expected:.6f} for "
                          f"tau={cfg.detectors[0].pulse_tau} ns)")


def load_config(path) -> RunConfig:
    """Read and validate a JSON run configuration file."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: invalid JSON: {exc.msg}") from exc
    return parse_run_config(doc)


def load_pipeline_config(path) -> PipelineConfig:
    """Read DSP settings from a JSON file.

    Accepts either a full run configuration (its 'pipeline' section is used)
    or a bare pipeline object.
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: invalid JSON: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    if "pipeline" in doc:
        doc = doc["pipeline"]
    elif {"seed", "events", "source", "detector", "detectors"} & set(doc):
        doc = {}   # a run configuration relying on the default DSP settings
    return _build(PipelineConfig, doc, "pipeline")


def preset_names() -> list[str]:
    return sorted(SIPM_PRESETS)
