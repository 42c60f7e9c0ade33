"""IQ demodulation chain.

Raw ADC samples at ``f_smp`` are demodulated by two combined mixing/low-pass
FIR filters evaluated only once per ``f_smp/f_int`` input samples.  Amplitude
and wrapped phase are computed at ``f_int``, phase is unwrapped into
increments, and both channels are decimated to ``f_out`` by a second
Hamming-window FIR.

Sampling convention: with ``f_smp = 4*nu0`` the reference phase repeats every
four samples, and the combined filters are evaluated at absolute sample
indices ``n`` with ``n % (f_smp/f_int) == 1``.  At those instants the
coefficient references ``cos/sin(2*pi*nu0*i/f_smp)`` are equivalent to mixing
each input sample ``m`` with ``sin/cos(2*pi*nu0*m/f_smp)``, so an input
``A*sin(2*pi*nu0*t + phi)`` demodulates to ``I = A/2*cos(phi)`` and
``Q = A/2*sin(phi)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * math.pi

#: Supported configuration grid (Hz).
F_INT_RANGE = (10e3, 200e3)
F_OUT_RANGE = (500.0, 20e3)

#: Output phase of the demodulation grid within one decimation period.
DEMOD_PHASE = 1


class ParameterError(ValueError):
    """Invalid filter or pipeline parameter."""


class InsufficientDataError(ValueError):
    """Input block shorter than the filter it feeds."""


def _integer_ratio(num, den, what):
    ratio = num / den
    r = round(ratio)
    if r < 1 or abs(ratio - r) > 1e-9 * ratio:
        raise ParameterError(f"{what} must be an integer ratio, got {ratio!r}")
    return int(r)


@dataclass(frozen=True)
class DemodConfig:
    """Rates of one demodulation channel (all in Hz)."""

    nu0: float = 1e6
    f_smp: float = 4e6
    f_int: float = 100e3
    f_out: float = 4e3

    def __post_init__(self):
        if self.nu0 <= 0 or self.f_smp != 4.0 * self.nu0:
            raise ParameterError("f_smp must equal 4*nu0 exactly")
        if not F_INT_RANGE[0] <= self.f_int <= F_INT_RANGE[1]:
            raise ParameterError(f"f_int={self.f_int} outside {F_INT_RANGE}")
        if not F_OUT_RANGE[0] <= self.f_out <= F_OUT_RANGE[1]:
            raise ParameterError(f"f_out={self.f_out} outside {F_OUT_RANGE}")
        d = _integer_ratio(self.f_smp, self.f_int, "f_smp/f_int")
        if d % 4:
            # keeps the reference phase identical at every output instant
            raise ParameterError("f_smp/f_int must be a multiple of 4")
        _integer_ratio(self.f_int, self.f_out, "f_int/f_out")

    @property
    def f_bw(self) -> float:
        return self.f_int / 8.0

    @property
    def demod_ratio(self) -> int:
        return int(round(self.f_smp / self.f_int))

    @property
    def output_ratio(self) -> int:
        return int(round(self.f_int / self.f_out))

    @property
    def num_taps(self) -> int:
        return 8 * self.demod_ratio

    @property
    def decim_taps(self) -> int:
        return 12 * self.output_ratio

    @property
    def decim_cutoff(self) -> float:
        return self.f_out / 3.0

    def with_rates(self, f_int=None, f_out=None) -> "DemodConfig":
        return DemodConfig(self.nu0, self.f_smp,
                           self.f_int if f_int is None else f_int,
                           self.f_out if f_out is None else f_out)

    def to_dict(self) -> dict:
        return {"nu0": self.nu0, "f_smp": self.f_smp,
                "f_int": self.f_int, "f_out": self.f_out}


@dataclass(frozen=True)
class FilterBank:
    h_lpf: np.ndarray
    h_i: np.ndarray
    h_q: np.ndarray

    @property
    def num_taps(self) -> int:
        return len(self.h_lpf)

    @property
    def nonzero_i(self) -> np.ndarray:
        return np.flatnonzero(self.h_i)

    @property
    def nonzero_q(self) -> np.ndarray:
        return np.flatnonzero(self.h_q)


@dataclass
class IQStream:
    """I/Q samples at ``f_int``; ``index`` holds the absolute ADC index of each."""

    i: np.ndarray
    q: np.ndarray
    index: np.ndarray


@dataclass
class PhaseAmplitude:
    amplitude: np.ndarray
    wrapped_phase: np.ndarray
    carrier_lost: np.ndarray


@dataclass
class PhaseIncrementStream:
    """Unwrapped phase increments with amplitudes.

    ``start`` is the sample counter (at ``rate``) of the first element, so
    consecutive blocks from a streaming source can be concatenated.
    """

    increments: np.ndarray
    amplitudes: np.ndarray
    rate: float
    start: int = 0

    def __len__(self):
        return len(self.increments)

    @property
    def index(self) -> np.ndarray:
        return self.start + np.arange(len(self.increments))

    @classmethod
    def concatenate(cls, parts):
        parts = [p for p in parts if len(p)]
        if not parts:
            raise ValueError("nothing to concatenate")
        return cls(np.concatenate([p.increments for p in parts]),
                   np.concatenate([p.amplitudes for p in parts]),
                   parts[0].rate, parts[0].start)


def design_lowpass_hamming(num_taps: int, cutoff: float, rate: float) -> np.ndarray:
    """Hamming-windowed sinc low-pass, normalized to unit DC gain."""
    if int(num_taps) != num_taps or num_taps < 2:
        raise ParameterError(f"num_taps must be an integer >= 2, got {num_taps!r}")
    if not 0.0 < cutoff < rate / 2.0:
        raise ParameterError(f"cutoff {cutoff} not in (0, {rate / 2})")
    num_taps = int(num_taps)
    fc = cutoff / rate
    n = np.arange(num_taps) - (num_taps - 1) / 2.0
    h = 2.0 * fc * np.sinc(2.0 * fc * n) * np.hamming(num_taps)
    return h / h.sum()


def demod_lowpass(config: DemodConfig) -> np.ndarray:
    return design_lowpass_hamming(config.num_taps, config.f_bw, config.f_smp)


def decimation_lowpass(config: DemodConfig) -> np.ndarray:
    return design_lowpass_hamming(config.decim_taps, config.decim_cutoff, config.f_int)


# cos/sin(2*pi*i/4) tabulated so the zero coefficients are exact
_REF_I = np.array([1.0, 0.0, -1.0, 0.0])
_REF_Q = np.array([0.0, 1.0, 0.0, -1.0])


def build_demod_bank(h_lpf, config: DemodConfig) -> FilterBank:
    """Fold the I/Q references into the low-pass taps: ``h_i = r_i*h_lpf``."""
    h_lpf = np.asarray(h_lpf, dtype=float)
    if h_lpf.ndim != 1 or len(h_lpf) != config.num_taps:
        raise ParameterError(
            f"h_lpf has {h_lpf.size} taps, configuration needs {config.num_taps}")
    k = np.arange(len(h_lpf)) % 4
    return FilterBank(h_lpf.copy(), _REF_I[k] * h_lpf, _REF_Q[k] * h_lpf)


def default_bank(config: DemodConfig) -> FilterBank:
    return build_demod_bank(demod_lowpass(config), config)


def _fir_decimate(x, h, factor, phase, start):
    """Evaluate FIR ``h`` at indices ``n % factor == phase`` with a full window.

    ``x[0]`` has absolute index ``start``; ``x`` may carry trailing channel
    axes.  Taps that are zero across a whole column of the block layout are
    never multiplied.  Returns ``(y, indices)``.
    """
    L = len(h)
    if L % factor:
        raise ParameterError("filter length must be a multiple of the decimation factor")
    nb = L // factor
    first = start + L - 1
    first += (phase - first) % factor
    last = start + len(x) - 1
    if first > last:
        return np.zeros((0,) + x.shape[1:]), np.zeros(0, dtype=np.int64)
    m = (last - first) // factor + 1
    lo = first - L + 1 - start
    rows = x[lo:lo + (m + nb - 1) * factor].reshape((m + nb - 1, factor) + x.shape[1:])
    w = h[::-1].reshape(nb, factor)
    cols = np.flatnonzero(np.any(w != 0.0, axis=0))
    y = np.zeros((m,) + x.shape[1:])
    if len(cols):
        rows = rows[:, cols]
        w = w[:, cols]
        p = np.tensordot(rows, w, axes=([1], [1]))  # (m+nb-1, ..., nb)
        for j in range(nb):
            y += p[j:j + m, ..., j]
    return y, first + factor * np.arange(m, dtype=np.int64)


def demodulate_block(raw, bank: FilterBank, config: DemodConfig, start_index: int = 0) -> IQStream:
    """Combined mix+filter+decimate of one block of ADC samples (volts).

    Produces one I/Q pair per ``f_smp/f_int`` input samples, each from the
    most recent ``num_taps`` inputs.
    """
    raw = np.asarray(raw, dtype=float)
    if len(raw) < bank.num_taps:
        raise InsufficientDataError(
            f"block of {len(raw)} samples is shorter than the {bank.num_taps}-tap filter")
    d = config.demod_ratio
    i, idx = _fir_decimate(raw, bank.h_i, d, DEMOD_PHASE, start_index)
    q, _ = _fir_decimate(raw, bank.h_q, d, DEMOD_PHASE, start_index)
    return IQStream(i, q, idx)


def extract_amplitude_phase(i, q) -> PhaseAmplitude:
    """Amplitude ``2*|I+jQ|`` and phase in (-pi, pi]; the origin maps to phase 0."""
    i = np.asarray(i, dtype=float)
    q = np.asarray(q, dtype=float)
    amp = 2.0 * np.hypot(i, q)
    phase = np.arctan2(q, i)
    phase = np.where(phase == -math.pi, math.pi, phase)
    lost = (i == 0.0) & (q == 0.0)
    phase = np.where(lost, 0.0, phase)
    return PhaseAmplitude(amp, phase, lost)


def unwrap_increment(prev_phase: float, curr_phase: float) -> float:
    d = curr_phase - prev_phase
    if d > math.pi:
        return d - TWO_PI
    if d < -math.pi:
        return d + TWO_PI
    return d


def unwrap_increments(phases, prev_phase=None) -> np.ndarray:
    """Vectorized ``unwrap_increment`` over a wrapped-phase sequence.

    With ``prev_phase`` the output has one increment per input sample,
    otherwise one fewer.
    """
    phases = np.asarray(phases, dtype=float)
    if prev_phase is not None:
        d = np.diff(phases, prepend=prev_phase)
    else:
        d = np.diff(phases)
    d = np.where(d > math.pi, d - TWO_PI, d)
    return np.where(d < -math.pi, d + TWO_PI, d)


def increments_to_frequency(stream: PhaseIncrementStream) -> np.ndarray:
    return np.asarray(stream.increments) * (stream.rate / TWO_PI)


def frequency_to_increments(dnu, rate: float) -> np.ndarray:
    return np.asarray(dnu, dtype=float) * (TWO_PI / rate)


def decimate_output(stream: PhaseIncrementStream, config: DemodConfig,
                    taps=None) -> PhaseIncrementStream:
    """Anti-alias filter and keep one sample in ``f_int/f_out``.

    Increments are rescaled by the decimation ratio so they stay phase
    changes per output period.  Only full filter windows are emitted.
    """
    if not math.isclose(stream.rate, config.f_int):
        raise ParameterError(f"stream rate {stream.rate} != f_int {config.f_int}")
    r = config.output_ratio
    h = decimation_lowpass(config) if taps is None else np.asarray(taps, dtype=float)
    x = np.column_stack([stream.increments, stream.amplitudes])
    if len(x) < len(h):
        raise InsufficientDataError(
            f"stream of {len(x)} samples is shorter than the {len(h)}-tap decimator")
    y, idx = _fir_decimate(x, h, r, r - 1, stream.start)
    return PhaseIncrementStream(y[:, 0] * r, y[:, 1], config.f_out,
                                int(idx[0] // r) if len(idx) else 0)


class _FirStream:
    """Block-to-block state for ``_fir_decimate`` over a continuous input."""

    def __init__(self, taps, factor, phase, start=0, channels=()):
        self.taps = [np.asarray(h, dtype=float) for h in taps]
        self.factor = factor
        self.phase = phase
        self.length = len(self.taps[0])
        self.buf = np.zeros((0,) + tuple(channels))
        self.start = start

    def feed(self, x):
        self.buf = np.concatenate([self.buf, x]) if len(self.buf) else np.asarray(x, dtype=float)
        outs = [_fir_decimate(self.buf, h, self.factor, self.phase, self.start) for h in self.taps]
        idx = outs[0][1]
        if len(idx):
            keep_from = idx[-1] + self.factor - self.length + 1
            drop = keep_from - self.start
            self.buf = self.buf[drop:]
            self.start = keep_from
        return [o[0] for o in outs], idx


@dataclass
class PipelineOutput:
    output: PhaseIncrementStream
    intermediate: PhaseIncrementStream | None = None
    carrier_lost: int = 0


class DemodPipeline:
    """Streaming raw-sample -> (increments, amplitudes) at ``f_out``.

    Blocks of any size may be fed; the result is identical to processing the
    concatenated input at once.  Outputs whose filter windows would reach
    before the first sample are never produced, which drops the FIR settling
    transient of both stages.
    """

    def __init__(self, config: DemodConfig, bank: FilterBank | None = None,
                 start_index: int = 0, keep_intermediate: bool = False):
        self.config = config
        self.bank = default_bank(config) if bank is None else bank
        self.decim_taps = decimation_lowpass(config)
        self.keep_intermediate = keep_intermediate
        self._demod = _FirStream([self.bank.h_i, self.bank.h_q],
                                 config.demod_ratio, DEMOD_PHASE, start_index)
        self._decim = _FirStream([self.decim_taps], config.output_ratio,
                                 config.output_ratio - 1, channels=(2,))
        self._prev_phase = None
        self.carrier_lost = 0

    def process(self, raw) -> PipelineOutput:
        cfg = self.config
        (i, q), idx = self._demod.feed(np.asarray(raw, dtype=float))
        empty = PhaseIncrementStream(np.zeros(0), np.zeros(0), cfg.f_out, 0)
        if not len(idx):
            return PipelineOutput(empty)
        pa = extract_amplitude_phase(i, q)
        self.carrier_lost += int(pa.carrier_lost.sum())
        k = idx // cfg.demod_ratio
        if self._prev_phase is None:
            inc = unwrap_increments(pa.wrapped_phase)
            amp = pa.amplitude[1:]
            self._decim.start = int(k[0]) + 1
            k = k[1:]
        else:
            inc = unwrap_increments(pa.wrapped_phase, self._prev_phase)
            amp = pa.amplitude
        self._prev_phase = pa.wrapped_phase[-1]
        inter = PhaseIncrementStream(inc, amp, cfg.f_int, int(k[0]) if len(k) else 0)
        if not len(inc):
            return PipelineOutput(empty, inter if self.keep_intermediate else None)
        (y,), didx = self._decim.feed(np.column_stack([inc, amp]))
        r = cfg.output_ratio
        out = PhaseIncrementStream(y[:, 0] * r, y[:, 1], cfg.f_out,
                                   int(didx[0] // r) if len(didx) else 0)
        return PipelineOutput(out, inter if self.keep_intermediate else None)


def run_pipeline(raw, config: DemodConfig, chunk: int = 4_000_000, **kw) -> PhaseIncrementStream:
    """Process a whole record in chunks and return the concatenated output."""
    pipe = DemodPipeline(config, **kw)
    parts = []
    for s in range(0, len(raw), chunk):
        parts.append(pipe.process(raw[s:s + chunk]).output)
    return PhaseIncrementStream.concatenate(parts)
