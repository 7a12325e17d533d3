"""Digital twin of a photon-number-resolving SiPM detection chain.

Simulates light sources with chosen photon statistics, the detector response
(efficiency, cell pile-up, optical cross-talk, dark counts), waveform
acquisition, and the charge-reconstruction DSP, then recovers photon
statistics from the reconstructed spectra.
"""
from .config import (AnalysisOptions, ConfigError, RunConfig, load_config,
                     parse_run_config)
from .pipeline import GateError, PipelineConfig, process_event, process_records
from .presets import PRESETS, run_preset
from .runner import (charge_ensemble, counts_ensemble, run_analyze,
                     run_process, run_simulate)
from .sipm import (SIPM_PRESETS, DetectionOutcome, SiPMConfig, Waveform,
                   WaveformParams, detect, get_preset, synthesize_waveform)
from .sources import (LightStateSpec, fano_theory, gamma_theory, pmf_multithermal,
                      pmf_poisson, r_theory, sample_photons)
from .spectra import (FitError, GaussianPeak, Histogram, SpectrumMetrics,
                      analyze_spectrum, build_histogram, find_peaks,
                      fit_multi_gaussian, fom, overlap_from_fom, visibility)
from .stats import (BlockResult, StatsReport, block_statistics, correlation,
                    fano, fidelity, noise_reduction, variance_vs_mean)
from .wavefile import PnrwHeader, PnrwWriter, WaveFileError, iter_pnrw, read_pnrw

__version__ = "0.1.0"

__all__ = [
    "AnalysisOptions", "BlockResult", "ConfigError", "DetectionOutcome",
    "FitError", "GateError", "GaussianPeak", "Histogram", "LightStateSpec",
    "PRESETS", "PipelineConfig", "PnrwHeader", "PnrwWriter", "RunConfig",
    "SIPM_PRESETS", "SiPMConfig", "SpectrumMetrics", "StatsReport",
    "Waveform", "WaveformParams", "WaveFileError", "analyze_spectrum",
    "block_statistics", "build_histogram", "charge_ensemble",
    "correlation", "counts_ensemble", "detect", "fano", "fano_theory",
    "fidelity", "find_peaks", "fit_multi_gaussian", "fom", "gamma_theory",
    "get_preset", "iter_pnrw", "load_config", "noise_reduction",
    "overlap_from_fom", "parse_run_config", "pmf_multithermal",
    "pmf_poisson", "process_event", "process_records", "r_theory",
    "read_pnrw", "run_analyze", "run_preset", "run_process", "run_simulate",
    "sample_photons", "synthesize_waveform", "variance_vs_mean",
    "visibility",
]
