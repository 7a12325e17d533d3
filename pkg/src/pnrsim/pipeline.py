"""Golden model of the charge-measurement DSP chain.

The chain mirrors gateware stages, in order: signal delay line, baseline
restorer, pole-zero deconvolution, gated charge integration, with a
leading-edge discriminator for self-triggered operation.

The shaped single-cell pulse is a sampled exponential, i.e. the output of
H(z) = 1 / (1 - a z^-1) driven by an impulse, with a = exp(-Ts/tau). The
pole-zero stage applies the exact inverse y[n] = G (x[n] - a x[n-1]), which
collapses each pulse back to an impulse whose integral over a short gate is
the event charge.

All stages are single-pass state machines with O(baseline_window) state;
every input sample produces exactly one output sample. Pipeline state is
reset per record: events are independent. Double-precision floats are the
reference arithmetic; an optional fixed-point mode quantizes a and G to 16
fractional bits and accumulates in integers, mirroring gateware rounding.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, replace

import numpy as np

from .sipm import Waveform

TRIGGER_MODES = ("external", "internal")
ARITHMETIC_MODES = ("float", "fixed")

_FIX_BITS = 16
_FIX_ONE = 1 << _FIX_BITS


class GateError(Exception):
    """Raised when the integration gate falls outside the record."""


@dataclass(frozen=True)
class PipelineConfig:
    """Static DSP parameters.

    Parameters
    ----------
    a : float
        Pole-zero constant in (0, 1); exp(-Ts/tau) of the pulse shape.
    g : float
        Output gain of the deconvolution stage, > 0.
    baseline_window : int
        Samples averaged by the baseline restorer, >= 1.
    holdoff : int or None
        Baseline-freeze length in samples after the trigger; None freezes
        for the rest of the record.
    gate_len_ns : int
        Integration gate length in ns, in [10, 20]; the gate covers
        floor(gate/Ts) + 1 samples.
    gate_offset : int
        Gate start relative to the trigger anchor, in samples (may be < 0).
    signal_delay : int
        Delay line on the signal path, samples >= 0.
    trigger_delay : int
        Delay on the trigger path, samples >= 0.
    threshold : float
        Leading-edge threshold on the baseline-restored signal (internal
        trigger mode).
    trigger_mode : str
        "external" (gate anchored at the record trigger index) or
        "internal" (anchored at the discriminator crossing).
    arithmetic : str
        "float" reference or "fixed" 16-bit-coefficient integer mode.
    """

    a: float = math.exp(-1.0 / 20.0)
    g: float = 1.0
    baseline_window: int = 64
    holdoff: int | None = None
    gate_len_ns: int = 15
    gate_offset: int = 14
    signal_delay: int = 0
    trigger_delay: int = 0
    threshold: float = 20.0
    trigger_mode: str = "external"
    arithmetic: str = "float"

    def __post_init__(self):
        if not 0.0 < self.a < 1.0:
            raise ValueError(f"a must lie in (0, 1), got {self.a}")
        if self.g <= 0:
            raise ValueError(f"g must be > 0, got {self.g}")
        if int(self.baseline_window) != self.baseline_window or self.baseline_window < 1:
            raise ValueError(f"baseline_window must be an integer >= 1, "
                             f"got {self.baseline_window}")
        if self.holdoff is not None and self.holdoff < 0:
            raise ValueError(f"holdoff must be >= 0 or None, got {self.holdoff}")
        if int(self.gate_len_ns) != self.gate_len_ns or not 10 <= self.gate_len_ns <= 20:
            raise ValueError(f"gate_len_ns must be an integer in [10, 20], "
                             f"got {self.gate_len_ns}")
        if self.signal_delay < 0 or self.trigger_delay < 0:
            raise ValueError("delays must be >= 0")
        if self.trigger_mode not in TRIGGER_MODES:
            raise ValueError(f"trigger_mode must be one of {TRIGGER_MODES}, "
                             f"got {self.trigger_mode!r}")
        if self.arithmetic not in ARITHMETIC_MODES:
            raise ValueError(f"arithmetic must be one of {ARITHMETIC_MODES}, "
                             f"got {self.arithmetic!r}")

    def gate_samples(self, sample_period_ns: float = 1.0) -> int:
        """Number of samples in the gate (inclusive of both ends)."""
        return int(self.gate_len_ns / sample_period_ns) + 1


@dataclass(frozen=True)
class ChargeEvent:
    """Measured charge(s) of one event; a channel is None when untriggered."""

    index: int
    q1: float | None
    q2: float | None = None


class BaselineRestorer:
    """Running-mean baseline subtraction with trigger freeze.

    The estimate is the mean of the last ``window`` accepted samples, where
    a sample is accepted only when the stage is not frozen; the current
    sample never contributes to its own estimate. With no samples seen the
    estimate is 0.
    """

    def __init__(self, window: int, fixed: bool = False):
        if window < 1:
            raise ValueError("window must be >= 1")
        self.window = int(window)
        self.fixed = bool(fixed)
        self.reset()

    def reset(self):
        self._buf = deque()
        self._sum = 0 if self.fixed else 0.0

    def estimate(self):
        if not self._buf:
            return 0 if self.fixed else 0.0
        if self.fixed:
            return self._sum // len(self._buf)
        return self._sum / len(self._buf)

    def accept(self, x):
        self._buf.append(x)
        self._sum += x
        if len(self._buf) > self.window:
            self._sum -= self._buf.popleft()

    def step(self, x, freeze: bool = False):
        """Baseline-subtracted sample; x joins the window unless frozen."""
        out = x - self.estimate()
        if not freeze:
            self.accept(x)
        return out


class PoleZeroFilter:
    """Exact inverse of the exponential shaper: y[n] = G (x[n] - a x[n-1])."""

    def __init__(self, a: float, g: float = 1.0, fixed: bool = False):
        if not 0.0 < a < 1.0:
            raise ValueError("a must lie in (0, 1)")
        if g <= 0:
            raise ValueError("g must be > 0")
        self.a = float(a)
        self.g = float(g)
        self.fixed = bool(fixed)
        self._a_fix = round(a * _FIX_ONE)
        self._g_fix = round(g * _FIX_ONE)
        self.reset()

    def reset(self):
        self._x_prev = 0 if self.fixed else 0.0

    def step(self, x):
        if self.fixed:
            y = self._g_fix * ((int(x) << _FIX_BITS) - self._a_fix * self._x_prev)
            self._x_prev = int(x)
            return y / float(1 << (2 * _FIX_BITS))
        y = self.g * (x - self.a * self._x_prev)
        self._x_prev = x
        return y


def leading_edge_trigger(x0: np.ndarray, threshold: float) -> int | None:
    """Index of the first sample at or above threshold, or None."""
    hits = np.nonzero(np.asarray(x0, dtype=np.float64) >= threshold)[0]
    return int(hits[0]) if hits.size else None


def qdc_integrate(y: np.ndarray, n0: int, gate_len_ns: int,
                  sample_period_ns: float = 1.0) -> float:
    """Gated charge: sum of y[n0 .. n0 + floor(gate/Ts)] inclusive."""
    y = np.asarray(y, dtype=np.float64)
    n_gate = int(gate_len_ns / sample_period_ns) + 1
    if n0 < 0 or n0 + n_gate > y.size:
        raise GateError(f"gate [{n0}, {n0 + n_gate}) outside record of "
                        f"{y.size} samples")
    return float(y[n0:n0 + n_gate].sum())


def _frozen(n: int, anchor: int | None, holdoff: int | None) -> bool:
    if anchor is None or n < anchor:
        return False
    return holdoff is None or n <= anchor + holdoff


def run_chain(samples: np.ndarray, config: PipelineConfig,
              trigger_index: int | None = None,
              sample_period_ns: float = 1.0) -> tuple[np.ndarray, int | None]:
    """Single pass of delay line, baseline restorer and pole-zero stage.

    Returns the deconvolved sample stream and the trigger anchor (None if an
    internal trigger never fired). The reference per-sample state machine;
    see ``process_records`` for the batched equivalent.
    """
    x = np.asarray(samples, dtype=np.float64)
    n_samples = x.size
    fixed = config.arithmetic == "fixed"
    br = BaselineRestorer(config.baseline_window, fixed=fixed)
    pz = PoleZeroFilter(config.a, config.g, fixed=fixed)
    y = np.empty(n_samples)

    if config.trigger_mode == "external":
        if trigger_index is None:
            raise ValueError("external trigger mode needs a trigger index")
        anchor = int(trigger_index) + config.trigger_delay
    else:
        anchor = None

    delay = config.signal_delay
    if fixed:
        x = np.rint(x).astype(np.int64)
    internal = config.trigger_mode == "internal"
    # the discriminator arms only once the baseline window has filled,
    # otherwise the very first sample would read as a full-scale step
    armed_from = config.baseline_window + delay
    for n in range(n_samples):
        s = x[n - delay] if n >= delay else (0 if fixed else 0.0)
        x0 = s - br.estimate()
        if internal and anchor is None and n >= armed_from \
                and x0 >= config.threshold:
            anchor = n
        if not _frozen(n, anchor, config.holdoff):
            br.accept(s)
        y[n] = pz.step(x0)
    return y, anchor


def process_event(waveform: Waveform, config: PipelineConfig) -> float | None:
    """Charge of one record; None when an internal trigger never fired."""
    y, anchor = run_chain(waveform.samples, config,
                          trigger_index=waveform.trigger_index,
                          sample_period_ns=waveform.sample_period_ns)
    if anchor is None:
        return None
    n0 = anchor + config.gate_offset
    return qdc_integrate(y, n0, config.gate_len_ns, waveform.sample_period_ns)


def process_pair(wf1: Waveform, wf2: Waveform, config: PipelineConfig,
                 index: int = 0) -> ChargeEvent:
    """Process two channels with a shared trigger anchor.

    External mode requires equal trigger indices; internal mode takes the
    anchor from channel 1 and applies it to both gates.
    """
    if wf1.sample_period_ns != wf2.sample_period_ns:
        raise ValueError("channels must share the sample period")
    if config.trigger_mode == "external":
        if wf1.trigger_index != wf2.trigger_index:
            raise ValueError("external mode requires a common trigger index")
        return ChargeEvent(index=index,
                           q1=process_event(wf1, config),
                           q2=process_event(wf2, config))
    y1, anchor = run_chain(wf1.samples, config, trigger_index=None)
    if anchor is None:
        return ChargeEvent(index=index, q1=None, q2=None)
    follow = replace(config, trigger_mode="external", trigger_delay=0)
    y2, _ = run_chain(wf2.samples, follow, trigger_index=anchor,
                      sample_period_ns=wf2.sample_period_ns)
    n0 = anchor + config.gate_offset
    q1 = qdc_integrate(y1, n0, config.gate_len_ns, wf1.sample_period_ns)
    q2 = qdc_integrate(y2, n0, config.gate_len_ns, wf2.sample_period_ns)
    return ChargeEvent(index=index, q1=q1, q2=q2)


def process_records(records: np.ndarray, trigger_index: int,
                    config: PipelineConfig,
                    sample_period_ns: float = 1.0) -> np.ndarray:
    """Charges for a batch of externally triggered records.

    Vectorized equivalent of ``process_event`` over an (n_records, length)
    array for the float arithmetic, external-trigger, freeze-to-record-end
    case; anything else falls back to the per-sample reference.
    """
    records = np.atleast_2d(records)
    if (config.trigger_mode != "external" or config.holdoff is not None
            or config.arithmetic != "float"):
        out = np.empty(records.shape[0])
        for i in range(records.shape[0]):
            wf = Waveform(samples=records[i], sample_period_ns=sample_period_ns,
                          trigger_index=trigger_index)
            q = process_event(wf, config)
            out[i] = np.nan if q is None else q
        return out

    x = records.astype(np.float64)
    n_rec, length = x.shape
    window = config.baseline_window
    anchor = int(trigger_index) + config.trigger_delay
    if not 0 <= anchor < length:
        raise GateError(f"trigger anchor {anchor} outside record of {length} samples")

    if config.signal_delay > 0:
        shifted = np.zeros_like(x)
        shifted[:, config.signal_delay:] = x[:, :length - config.signal_delay]
        x = shifted

    # causal running mean of the last `window` samples, excluding the current
    prefix = np.cumsum(x, axis=1)
    baseline = np.empty_like(x)
    baseline[:, 0] = 0.0
    n_idx = np.arange(1, length)
    counts = np.minimum(n_idx, window).astype(np.float64)
    win_sum = prefix[:, n_idx - 1].copy()
    full = n_idx > window
    win_sum[:, full] -= prefix[:, n_idx[full] - window - 1]
    baseline[:, 1:] = win_sum / counts
    baseline[:, anchor:] = baseline[:, anchor][:, None]

    x0 = x - baseline
    y = config.g * (x0 - config.a * np.concatenate(
        [np.zeros((n_rec, 1)), x0[:, :-1]], axis=1))

    n0 = anchor + config.gate_offset
    n_gate = config.gate_samples(sample_period_ns)
    if n0 < 0 or n0 + n_gate > length:
        raise GateError(f"gate [{n0}, {n0 + n_gate}) outside record of "
                        f"{length} samples")
    return y[:, n0:n0 + n_gate].sum(axis=1)
