"""Drift-correction loop, DDS actuator, OCXO timescale and trigger timing."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import lfilter

from .dsp import ParameterError

#: Acquisition start latency after a trigger condition is met (s).
START_LATENCY = 32e-6
#: Dead time inserted in the record by an on-the-fly resynchronization (s).
RESYNC_LATENCY = 110e-6


# -- prefilter ---------------------------------------------------------------

@dataclass
class IirState:
    """Single-pole low-pass ``y += alpha*(x - y)``."""

    alpha: float
    y: float = 0.0

    @classmethod
    def for_cutoff(cls, cutoff: float, rate: float, y0: float = 0.0) -> "IirState":
        if cutoff <= 0 or rate <= 0:
            raise ParameterError("cutoff and rate must be positive")
        return cls(1.0 - math.exp(-2.0 * math.pi * cutoff / rate), y0)


def iir_prefilter_step(state: IirState, x: float) -> float:
    state.y += state.alpha * (x - state.y)
    return state.y


def iir_prefilter(state: IirState, x) -> np.ndarray:
    """Array form of ``iir_prefilter_step``; ``state`` is advanced."""
    x = np.asarray(x, dtype=float)
    if not len(x):
        return x
    a = state.alpha
    y, _ = lfilter([a], [1.0, a - 1.0], x, zi=[(1.0 - a) * state.y])
    state.y = float(y[-1])
    return y


# -- PID -----------------------------------------------------------------------

@dataclass(frozen=True)
class PidConfig:
    kp: float = 0.0
    ki: float = 0.0
    kd: float = 0.0
    update_rate: float = 1e3
    output_limits: tuple = (-1e6, 1e6)
    prefilter_cutoff: float = 0.01

    def __post_init__(self):
        if self.update_rate <= 0:
            raise ParameterError("update_rate must be positive")
        if not self.output_limits[0] < self.output_limits[1]:
            raise ParameterError("output_limits must be ordered")


def critical_pid(ki: float = 2000.0, prefilter_cutoff: float = 0.01, **kw) -> PidConfig:
    """PI gains giving a critically damped loop around the prefilter pole.

    With unit plant gain the closed loop is ``s^2 + wc(1+kp)s + wc*ki``, so
    ``kp = 2*sqrt(ki/wc) - 1``.  The steady tracking error of a frequency
    ramp ``r`` is ``r/ki``.
    """
    wc = 2.0 * math.pi * prefilter_cutoff
    kp = max(2.0 * math.sqrt(ki / wc) - 1.0, 0.0)
    return PidConfig(kp=kp, ki=ki, prefilter_cutoff=prefilter_cutoff, **kw)


@dataclass
class PidState:
    config: PidConfig
    integral: float = 0.0
    prev_error: float | None = None
    saturated: bool = False
    prefilter: IirState | None = None

    def __post_init__(self):
        if self.prefilter is None:
            self.prefilter = IirState.for_cutoff(self.config.prefilter_cutoff,
                                                 self.config.update_rate)


def pid_step(state: PidState, error: float, dt: float) -> float:
    """Positional PID with conditional-integration anti-windup."""
    if dt <= 0:
        raise ParameterError("dt must be positive")
    c = state.config
    lo, hi = c.output_limits
    deriv = 0.0 if state.prev_error is None else (error - state.prev_error) / dt
    integral = state.integral + error * dt
    u = c.kp * error + c.ki * integral + c.kd * deriv
    state.saturated = not lo <= u <= hi
    if state.saturated:
        # freeze the integrator while the actuator is pinned
        u = c.kp * error + c.ki * state.integral + c.kd * deriv
        u = min(max(u, lo), hi)
    else:
        state.integral = integral
    state.prev_error = error
    return u


# -- DDS -----------------------------------------------------------------------

@dataclass(frozen=True)
class DdsModel:
    clock: float = 500e6
    word_bits: int = 48

    @property
    def lsb(self) -> float:
        return self.clock / 2 ** self.word_bits

    def frequency(self, word: int) -> float:
        if not 0 <= word < 2 ** self.word_bits:
            raise ParameterError(f"tuning word {word} out of range")
        return word * self.clock / 2 ** self.word_bits


def dds_quantize(requested: float, model: DdsModel = DdsModel()):
    """Nearest tuning word; returns ``(word, actual_frequency)``."""
    if not 0.0 <= requested < model.clock / 2.0:
        raise ParameterError(f"DDS request {requested} Hz outside [0, {model.clock / 2})")
    word = int(round(requested * 2 ** model.word_bits / model.clock))
    return word, model.frequency(word)


# -- trigger ---------------------------------------------------------------------

@dataclass(frozen=True)
class TriggerConfig:
    channel: str = "amplitude"
    threshold: float = 0.5
    edge: str = "rising"
    check_rate: float = 200e3

    def __post_init__(self):
        if self.channel not in ("amplitude", "phase"):
            raise ParameterError("channel must be 'amplitude' or 'phase'")
        if self.edge not in ("rising", "falling"):
            raise ParameterError("edge must be 'rising' or 'falling'")


def detect_trigger(stream, config: TriggerConfig, settled_from: int = 0):
    """Index of the first edge crossing at or after ``settled_from``, else ``None``.

    ``stream`` is a ``PhaseAmplitude`` or a plain array of the monitored
    channel.  An edge needs the previous sample on the other side of the
    threshold, so a record that starts above a rising threshold does not fire.
    """
    if hasattr(stream, "amplitude"):
        x = stream.amplitude if config.channel == "amplitude" else stream.wrapped_phase
    else:
        x = stream
    x = np.asarray(x, dtype=float)[settled_from:]
    if len(x) < 2:
        return None
    if config.edge == "rising":
        hit = (x[1:] >= config.threshold) & (x[:-1] < config.threshold)
    else:
        hit = (x[1:] <= config.threshold) & (x[:-1] > config.threshold)
    idx = np.flatnonzero(hit)
    return None if not len(idx) else settled_from + int(idx[0]) + 1


# -- OCXO and resynchronization ---------------------------------------------------

@dataclass(frozen=True)
class OcxoModel:
    nominal: float = 10e6
    fractional_offset: float = 0.0
    drift_rate: float = 2e-13
    white_noise_level: float = 0.0
    tune_sensitivity: float = 1.0
    seed: int = 0


@dataclass
class OcxoClock:
    """Running timescale of one board; ``tune`` is the fractional correction."""

    model: OcxoModel
    true_time: float = 0.0
    local_time: float = 0.0
    tune: float = 0.0
    rng: np.random.Generator = field(default=None, repr=False)

    def __post_init__(self):
        if self.rng is None:
            self.rng = np.random.default_rng(self.model.seed)

    @property
    def error(self) -> float:
        return self.local_time - self.true_time


def clock_advance(clock: OcxoClock, true_dt: float) -> float:
    """Advance ``true_dt`` seconds; returns the elapsed local time.

    The linear drift term is integrated exactly over the step, so with noise
    disabled the accumulated error is ``offset*t + D*t^2/2``.
    """
    if true_dt <= 0:
        raise ParameterError("true_dt must be positive")
    m = clock.model
    t0 = clock.true_time
    frac = (m.fractional_offset + clock.tune) * true_dt + m.drift_rate * (t0 * true_dt + 0.5 * true_dt ** 2)
    if m.white_noise_level:
        frac += clock.rng.standard_normal() * math.sqrt(m.white_noise_level / (2.0 * true_dt)) * true_dt
    local_dt = true_dt + frac
    clock.true_time = t0 + true_dt
    clock.local_time += local_dt
    return local_dt


@dataclass
class SyncState:
    sigma_sync: float = 2.9e-6
    last_resync: float = 0.0
    resync_interval: float = 3600.0
    accumulated_offset: float = 0.0


def resync_interval_bound(sigma_sync: float, drift_rate: float) -> float:
    """Time for ``D*t^2/2`` to reach ``sigma_sync``; infinite without drift."""
    if drift_rate <= 0:
        return math.inf
    return math.sqrt(2.0 * sigma_sync / drift_rate)


def schedule_resync(state: SyncState, model: OcxoModel) -> float:
    """Next resynchronization time (s), capped at ``state.resync_interval``."""
    interval = min(state.resync_interval, resync_interval_bound(state.sigma_sync, model.drift_rate))
    return state.last_resync + interval


@dataclass
class ResyncEvent:
    time: float
    offset_before: float
    offset_after: float
    tune: float
    latency: float = RESYNC_LATENCY


def apply_resync(state: SyncState, reference: OcxoClock, steered: OcxoClock,
                 jitter: float) -> ResyncEvent:
    """Realign ``steered`` to ``reference`` and retune its OCXO.

    The relative offset is replaced by the trigger ``jitter`` of this
    realignment.  The rate measured since the last event (offset change over
    elapsed time) is removed from the steered oscillator's tune term.
    """
    now = reference.true_time
    before = steered.local_time - reference.local_time
    elapsed = now - state.last_resync
    if elapsed > 0:
        steered.tune -= (before - state.accumulated_offset) / elapsed
    steered.local_time = reference.local_time + jitter
    state.last_resync = now
    state.accumulated_offset = jitter
    return ResyncEvent(now, before, jitter, steered.tune)
