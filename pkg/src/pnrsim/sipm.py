"""Monte Carlo model of a SiPM photon-number detector.

The detection cascade per optical event:

1. Bernoulli thinning of the incident photons by the photon detection
   efficiency.
2. Spatial pile-up: detected photons land on random cells, simultaneous
   hits on one cell fire it once.
3. Optical cross-talk: every avalanche can ignite neighbours; modelled as a
   branching (Borel) cascade where each avalanche spawns a Poisson number of
   secondaries with rate lambda = -ln(1 - p_ct).
4. Dark counts: Poisson with mean dark_rate * gate.

Scalar operations take an explicit numpy Generator and work on one event;
``detect_batch`` / ``synthesize_batch`` are the vectorized equivalents used
by the run harness (identical distributions, not identical draw order).

Synthesized waveforms are 14-bit ADC records at 1 ns sampling: each event is
an exponential pulse of decay ``pulse_tau`` whose amplitude is
``cell_amplitude`` per fired cell, on a constant baseline, with optional
white electronic noise, per-avalanche gain spread, and Gaussian arrival
jitter. The pulse phase is continuous: jitter shifts the true start time t0
by fractions of a sample, which is what broadens the charge peaks of an
asynchronous chain.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

ADC_MIN = -8192
ADC_MAX = 8191

# Default pulse decay of the shaped single-cell signal, in ns.
DEFAULT_TAU_NS = 20.0

# Calibration of the digitized single-cell amplitude: 60 ADU at a gain of
# 7.0e5, scaled linearly with the gain of the device.
_ADU_PER_GAIN = 60.0 / 7.0e5


@dataclass(frozen=True)
class SiPMConfig:
    """Static detector parameters.

    Parameters
    ----------
    n_cells : int
        Number of microcells, > 0.
    pde : float
        Photon detection efficiency in [0, 1].
    crosstalk_prob : float
        Probability in [0, 1) that one avalanche triggers at least one
        cross-talk avalanche.
    dark_rate : float
        Dark count rate in Hz, >= 0.
    gain : float
        Charge gain of the device (electrons per avalanche), > 0.
    pulse_tau : float
        Exponential decay of the shaped pulse in ns, > 0.
    cell_amplitude : float
        Digitized pulse amplitude per fired cell in ADU, > 0.
    gain_spread : float
        Relative rms spread of the single-avalanche amplitude, >= 0.
        Only affects synthesized waveforms.
    """

    n_cells: int
    pde: float
    crosstalk_prob: float
    dark_rate: float
    gain: float
    pulse_tau: float = DEFAULT_TAU_NS
    cell_amplitude: float = 60.0
    gain_spread: float = 0.0

    def __post_init__(self):
        if int(self.n_cells) != self.n_cells or self.n_cells <= 0:
            raise ValueError(f"n_cells must be a positive integer, got {self.n_cells}")
        if not 0.0 <= self.pde <= 1.0:
            raise ValueError(f"pde must lie in [0, 1], got {self.pde}")
        if not 0.0 <= self.crosstalk_prob < 1.0:
            raise ValueError(f"crosstalk_prob must lie in [0, 1), got {self.crosstalk_prob}")
        if self.dark_rate < 0:
            raise ValueError(f"dark_rate must be >= 0, got {self.dark_rate}")
        if self.gain <= 0:
            raise ValueError(f"gain must be > 0, got {self.gain}")
        if self.pulse_tau <= 0:
            raise ValueError(f"pulse_tau must be > 0, got {self.pulse_tau}")
        if self.cell_amplitude <= 0:
            raise ValueError(f"cell_amplitude must be > 0, got {self.cell_amplitude}")
        if self.gain_spread < 0:
            raise ValueError(f"gain_spread must be >= 0, got {self.gain_spread}")


def _preset(n_cells, pde, p_ct, dark, gain):
    return SiPMConfig(n_cells=n_cells, pde=pde, crosstalk_prob=p_ct,
                      dark_rate=dark, gain=gain,
                      cell_amplitude=gain * _ADU_PER_GAIN)


# Catalogued devices: 1.3 x 1.3 mm^2 SiPMs with 25/50/25 um cells.
# "ideal" is a synthetic lossless comparison device: so many cells that
# pile-up is negligible, no cross-talk, no dark counts.
SIPM_PRESETS: dict[str, SiPMConfig] = {
    "25CS": _preset(2668, 0.25, 0.01, 70e3, 7.0e5),
    "50CS": _preset(667, 0.40, 0.03, 90e3, 1.7e6),
    "25PS": _preset(2120, 0.30, 0.04, 700e3, 1.3e6),
    "ideal": SiPMConfig(n_cells=10**9, pde=1.0, crosstalk_prob=0.0,
                        dark_rate=0.0, gain=1.0e6, cell_amplitude=60.0),
}


def get_preset(name: str, **overrides) -> SiPMConfig:
    """Preset by name, optionally with replaced fields."""
    try:
        cfg = SIPM_PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown SiPM preset {name!r}, expected one of "
                         f"{sorted(SIPM_PRESETS)}") from None
    return replace(cfg, **overrides) if overrides else cfg


@dataclass(frozen=True)
class DetectionOutcome:
    """Per-event record of the detection cascade."""

    n_in: int            # incident photons
    m_detected: int      # photons surviving the efficiency thinning
    fired_primary: int   # distinct cells fired by detected photons
    fired_total: int     # avalanches incl. cross-talk and dark, capped at n_cells


@dataclass(frozen=True)
class Waveform:
    """One digitized record."""

    samples: np.ndarray          # int16, ADC counts
    sample_period_ns: float = 1.0
    trigger_index: int = 0


@dataclass(frozen=True)
class WaveformParams:
    """Record geometry and noise of the digitizer front end.

    ``onset`` is the nominal pulse start in samples; ``trigger_index`` is
    where the external trigger is asserted and must leave enough margin for
    the jittered pulse to start after it.
    """

    record_len: int = 192
    baseline: float = 200.0
    noise_sigma: float = 0.8
    jitter_sigma_ns: float = 0.0
    onset: float = 96.0
    trigger_index: int = 80
    sample_period_ns: float = 1.0

    def __post_init__(self):
        if self.record_len <= 0:
            raise ValueError(f"record_len must be > 0, got {self.record_len}")
        if not 0 <= self.trigger_index < self.record_len:
            raise ValueError(f"trigger_index must lie in [0, {self.record_len}), "
                             f"got {self.trigger_index}")
        if not 0 <= self.onset < self.record_len:
            raise ValueError(f"onset must lie in [0, record_len), got {self.onset}")
        if self.noise_sigma < 0 or self.jitter_sigma_ns < 0:
            raise ValueError("noise_sigma and jitter_sigma_ns must be >= 0")
        if self.sample_period_ns <= 0:
            raise ValueError("sample_period_ns must be > 0")


# ----------------------------------------------------------------- cascade

def thin_bernoulli(rng: np.random.Generator, n: int, eta: float) -> int:
    """Photons surviving an efficiency eta: Binomial(n, eta)."""
    if n < 0:
        raise ValueError(f"n must be >= 0, got {n}")
    if not 0.0 <= eta <= 1.0:
        raise ValueError(f"eta must lie in [0, 1], got {eta}")
    if n == 0 or eta == 0.0:
        return 0
    if eta == 1.0:
        return int(n)
    return int(rng.binomial(n, eta))


def assign_cells(rng: np.random.Generator, m: int, n_cells: int) -> int:
    """Distinct cells fired when m detected photons land on random cells."""
    if m < 0:
        raise ValueError(f"m must be >= 0, got {m}")
    if n_cells <= 0:
        raise ValueError(f"n_cells must be > 0, got {n_cells}")
    if m == 0:
        return 0
    return int(np.unique(rng.integers(0, n_cells, size=m)).size)


def crosstalk_lambda(p_ct: float) -> float:
    """Branching rate of the cross-talk cascade for a given trigger probability."""
    if not 0.0 <= p_ct < 1.0:
        raise ValueError(f"crosstalk probability must lie in [0, 1), got {p_ct}")
    return -np.log1p(-p_ct)


def apply_crosstalk(rng: np.random.Generator, fired: int, p_ct: float,
                    n_cells: int) -> int:
    """Total avalanches after the cross-talk cascade, capped at n_cells.

    Each avalanche spawns Poisson(lambda) secondaries, lambda = -ln(1-p_ct),
    so a single avalanche triggers at least one secondary with probability
    p_ct and the mean cascade size is 1 / (1 - lambda).
    """
    if fired < 0:
        raise ValueError(f"fired must be >= 0, got {fired}")
    lam = crosstalk_lambda(p_ct)
    total = int(fired)
    if lam == 0.0 or fired == 0:
        return min(total, n_cells)
    generation = fired
    while generation > 0 and total < n_cells:
        generation = int(rng.poisson(lam * generation))
        total += generation
    return min(total, n_cells)


def add_dark_counts(rng: np.random.Generator, dark_rate: float,
                    gate_ns: float) -> int:
    """Dark avalanches in one gate: Poisson(dark_rate * gate)."""
    if dark_rate < 0 or gate_ns < 0:
        raise ValueError("dark_rate and gate_ns must be >= 0")
    mean = dark_rate * gate_ns * 1e-9
    if mean == 0.0:
        return 0
    return int(rng.poisson(mean))


def detect(rng: np.random.Generator, n_in: int, config: SiPMConfig,
           gate_ns: float) -> DetectionOutcome:
    """Run the full cascade for one event."""
    m = thin_bernoulli(rng, n_in, config.pde)
    fired = assign_cells(rng, m, config.n_cells)
    total = apply_crosstalk(rng, fired, config.crosstalk_prob, config.n_cells)
    total = min(total + add_dark_counts(rng, config.dark_rate, gate_ns),
                config.n_cells)
    return DetectionOutcome(n_in=int(n_in), m_detected=m,
                            fired_primary=fired, fired_total=total)


# ------------------------------------------------------------ batch cascade

def _assign_cells_batch(rng: np.random.Generator, m: np.ndarray,
                        n_cells: int) -> np.ndarray:
    """Vectorized occupancy count: distinct cells hit per event."""
    n_events = m.size
    total = int(m.sum())
    if total == 0:
        return np.zeros(n_events, dtype=np.int64)
    cells = rng.integers(0, n_cells, size=total, dtype=np.int64)
    event_id = np.repeat(np.arange(n_events, dtype=np.int64), m)
    # one distinct key per (event, cell) pair; n_events * n_cells < 2**63
    keys = np.unique(event_id * np.int64(n_cells) + cells)
    return np.bincount(keys // np.int64(n_cells), minlength=n_events)


def _apply_crosstalk_batch(rng: np.random.Generator, fired: np.ndarray,
                           p_ct: float, n_cells: int) -> np.ndarray:
    lam = crosstalk_lambda(p_ct)
    total = fired.astype(np.int64).copy()
    if lam == 0.0:
        return np.minimum(total, n_cells)
    generation = total.copy()
    alive = generation > 0
    while np.any(alive):
        spawned = rng.poisson(lam * generation[alive])
        generation = np.zeros_like(generation)
        generation[alive] = spawned
        total += generation
        alive = (generation > 0) & (total < n_cells)
    return np.minimum(total, n_cells)


def detect_batch(rng: np.random.Generator, n_in: np.ndarray, config: SiPMConfig,
                 gate_ns: float) -> dict[str, np.ndarray]:
    """Vectorized detection cascade over a batch of events.

    Draw order is fixed (thinning, cell assignment, cross-talk, dark counts)
    so a given generator state always yields the same batch.
    """
    n_in = np.asarray(n_in, dtype=np.int64)
    if np.any(n_in < 0):
        raise ValueError("photon numbers must be >= 0")
    if config.pde == 0.0:
        m = np.zeros_like(n_in)
    elif config.pde == 1.0:
        m = n_in.copy()
    else:
        m = rng.binomial(n_in, config.pde).astype(np.int64)
    fired = _assign_cells_batch(rng, m, config.n_cells)
    total = _apply_crosstalk_batch(rng, fired, config.crosstalk_prob,
                                   config.n_cells)
    dark_mean = config.dark_rate * gate_ns * 1e-9
    if dark_mean > 0.0:
        total = total + rng.poisson(dark_mean, size=total.size)
    total = np.minimum(total, config.n_cells)
    return {"n_in": n_in, "m_detected": m, "fired_primary": fired,
            "fired_total": total}


# -------------------------------------------------------------- waveforms

def quantize_adc(samples: np.ndarray) -> np.ndarray:
    """Round half-to-even and clip to the 14-bit signed ADC span."""
    return np.clip(np.rint(samples), ADC_MIN, ADC_MAX).astype(np.int16)


def synthesize_batch(rng: np.random.Generator, fired_total: np.ndarray,
                     config: SiPMConfig, params: WaveformParams) -> np.ndarray:
    """Digitized records for a batch of events, shape (n_events, record_len).

    Per event: amplitude = cell_amplitude * sum over fired cells of
    (1 + gain_spread * eps_i), pulse start t0 = onset + jitter, samples
    baseline + amplitude * exp(-(k - t0) / tau) for k >= ceil(t0), plus
    white noise, quantized to int16.
    """
    fired = np.asarray(fired_total, dtype=np.int64)
    if np.any(fired < 0):
        raise ValueError("fired_total must be >= 0")
    n_events = fired.size
    length = params.record_len
    ts = params.sample_period_ns
    tau = config.pulse_tau / ts

    amp = fired.astype(np.float64)
    if config.gain_spread > 0.0:
        spread = config.gain_spread * np.sqrt(np.maximum(amp, 0.0))
        amp = amp + spread * rng.standard_normal(n_events)
    amp *= config.cell_amplitude

    t0 = np.full(n_events, params.onset / ts)
    if params.jitter_sigma_ns > 0.0:
        t0 = t0 + (params.jitter_sigma_ns / ts) * rng.standard_normal(n_events)

    k = np.arange(length, dtype=np.float64)
    arg = -(k[None, :] - t0[:, None]) / tau
    started = k[None, :] >= np.ceil(t0)[:, None]
    pulse = amp[:, None] * np.exp(np.where(started, arg, -np.inf))

    wave = params.baseline + pulse
    if params.noise_sigma > 0.0:
        wave = wave + rng.normal(0.0, params.noise_sigma, size=(n_events, length))
    return quantize_adc(wave)


def synthesize_waveform(rng: np.random.Generator, outcome: DetectionOutcome | int,
                        config: SiPMConfig, params: WaveformParams) -> Waveform:
    """Digitized record for one event (see synthesize_batch)."""
    fired = outcome.fired_total if isinstance(outcome, DetectionOutcome) else int(outcome)
    samples = synthesize_batch(rng, np.array([fired]), config, params)[0]
    return Waveform(samples=samples, sample_period_ns=params.sample_period_ns,
                    trigger_index=params.trigger_index)
