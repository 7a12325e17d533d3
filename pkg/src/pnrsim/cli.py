"""Command line interface.

Subcommands:
  simulate         generate detection events (counts and, optionally, waveforms)
  process          run the DSP chain over waveform files to charge events
  analyze          histogram / fit / photon-statistics report for event files
  preset           run one of the named end-to-end experiment presets
  validate-config  parse and cross-check a run configuration

Exit codes: 0 success, 2 configuration error, 3 I/O or file-format error,
4 spectrum fit failed to converge.
"""
from __future__ import annotations

import argparse
import dataclasses
import sys

from .config import (AnalysisOptions, ConfigError, MODES, check_consistency,
                     load_config, load_pipeline_config)
from .pipeline import GateError, PipelineConfig
from .presets import PRESETS, run_preset
from .runner import run_analyze, run_process, run_simulate
from .spectra import FitError
from .wavefile import WaveFileError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_FIT = 4


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pnrsim",
        description="Photon-number-resolving SiPM detection chain simulator.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate",
                       help="generate an event ensemble from a config file")
    p.add_argument("--config", required=True, help="JSON run configuration")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, help="override the configured seed")
    p.add_argument("--events", type=int, help="override the configured size")
    p.add_argument("--mode", choices=MODES, help="override the run mode")
    p.add_argument("--workers", type=int, default=1,
                   help="worker processes (default 1; output is identical)")

    p = sub.add_parser("process",
                       help="waveform files -> charge events via the DSP chain")
    p.add_argument("inputs", nargs="+", metavar="WAVEFILE",
                   help="one waveform file per channel, same events")
    p.add_argument("--out", required=True, help="output charge file")
    p.add_argument("--config",
                   help="JSON with DSP settings (a 'pipeline' section or a "
                        "bare pipeline object); defaults if omitted")
    p.add_argument("--format", choices=("csv", "binary"),
                   help="charge file format (default: by --out extension)")

    p = sub.add_parser("analyze",
                       help="analyze a counts or charge event file")
    p.add_argument("input", help="counts CSV, charge CSV, or binary charges")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--bin-width", type=float, help="histogram bin width")
    p.add_argument("--blocks", type=int, help="blocks for error estimation")
    p.add_argument("--min-separation", type=float,
                   help="minimum peak separation in charge units")
    p.add_argument("--min-prominence", type=float,
                   help="minimum peak prominence in counts")
    p.add_argument("--no-figures", action="store_true",
                   help="skip PNG rendering")

    p = sub.add_parser("preset", help="run a named experiment preset")
    p.add_argument("name", nargs="?", choices=sorted(PRESETS),
                   help="preset name (see --list)")
    p.add_argument("--list", action="store_true", help="list presets and exit")
    p.add_argument("--out", help="output directory (required unless --list)")
    p.add_argument("--seed", type=int, default=12345)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--scale", type=float, default=1.0,
                   help="event-count multiplier for quick runs")
    p.add_argument("--no-figures", action="store_true")

    p = sub.add_parser("validate-config",
                       help="parse and cross-check a run configuration")
    p.add_argument("--config", required=True)

    return parser


def _cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.events is not None:
        overrides["events"] = args.events
    if args.mode is not None:
        overrides["mode"] = args.mode
    if overrides:
        try:
            cfg = dataclasses.replace(cfg, **overrides)
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc)) from exc
        check_consistency(cfg)
    manifest = run_simulate(cfg, args.out, workers=args.workers)
    print(f"wrote {manifest['events']} events to {args.out} "
          f"({manifest['mode']}, {manifest['channels']} channel(s))")
    return EXIT_OK


def _cmd_process(args) -> int:
    pipe = load_pipeline_config(args.config) if args.config else PipelineConfig()
    fmt_name = args.format
    if fmt_name is None:
        fmt_name = "binary" if str(args.out).endswith(".pnrq") else "csv"
    n = run_process(args.inputs, pipe, args.out, fmt_name=fmt_name)
    print(f"processed {n} records from {len(args.inputs)} channel(s) "
          f"into {args.out}")
    return EXIT_OK


def _cmd_analyze(args) -> int:
    kwargs = {}
    if args.bin_width is not None:
        kwargs["bin_width"] = args.bin_width
    if args.blocks is not None:
        kwargs["n_blocks"] = args.blocks
    if args.min_separation is not None:
        kwargs["min_separation"] = args.min_separation
    if args.min_prominence is not None:
        kwargs["min_prominence"] = args.min_prominence
    try:
        opts = AnalysisOptions(**kwargs)
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc
    report = run_analyze(args.input, opts, args.out,
                         figures=not args.no_figures)
    print(f"analyzed {report.n_events} events ({report.mode}); "
          f"report in {args.out}/report.json")
    return EXIT_OK


def _cmd_preset(args) -> int:
    if args.list:
        for name in sorted(PRESETS):
            doc = (PRESETS[name].__doc__ or "").strip().splitlines()
            print(f"{name}: {doc[0] if doc else ''}")
        return EXIT_OK
    if not args.name:
        raise ConfigError("preset name required (or use --list)")
    if not args.out:
        raise ConfigError("--out is required to run a preset")
    if args.scale <= 0:
        raise ConfigError("--scale must be positive")
    run_preset(args.name, args.seed, args.out, workers=args.workers,
               scale=args.scale, figures=not args.no_figures)
    print(f"preset {args.name} written to {args.out}")
    return EXIT_OK


def _cmd_validate(args) -> int:
    cfg = load_config(args.config)
    print(f"OK: {args.config} ({cfg.mode}, {cfg.events} events, "
          f"{cfg.channels} channel(s), source {cfg.source.kind})")
    return EXIT_OK


_HANDLERS = {
    "simulate": _cmd_simulate,
    "process": _cmd_process,
    "analyze": _cmd_analyze,
    "preset": _cmd_preset,
    "validate-config": _cmd_validate,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _HANDLERS[args.command](args)
    except (ConfigError, GateError) as exc:
        print(f"pnrsim: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (WaveFileError, OSError) as exc:
        print(f"pnrsim: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except FitError as exc:
        print(f"pnrsim: fit failed: {exc}", file=sys.stderr)
        return EXIT_FIT


if __name__ == "__main__":
    sys.exit(main())
