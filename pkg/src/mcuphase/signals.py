"""Synthetic inputs: power-law frequency noise, beat-notes, ADC, RF mixing
and the two-photodiode fiber link."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .dsp import ParameterError

CHUNK = 1 << 20

SELF_HETERODYNE = "self-heterodyne"
HETERODYNE = "heterodyne"
SCHEMES = (SELF_HETERODYNE, HETERODYNE)


class OutOfBandError(ValueError):
    """Down-converted carrier falls outside the anti-alias filter band."""


@dataclass(frozen=True)
class NoiseSpec:
    """One-sided PSD levels of independent frequency-noise components.

    white_phase_level      S_phi = level            [rad^2/Hz]
    white_freq_level       S_nu  = level            [Hz^2/Hz]
    random_walk_freq_level S_nu  = level / f^2      [Hz^2 Hz]
    linear_drift           d(nu)/dt                 [Hz/s]
    """

    white_phase_level: float = 0.0
    white_freq_level: float = 0.0
    random_walk_freq_level: float = 0.0
    linear_drift: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in ("white_phase_level", "white_freq_level", "random_walk_freq_level"):
            if getattr(self, name) < 0:
                raise ParameterError(f"{name} must be >= 0")

    @property
    def is_zero(self) -> bool:
        return not (self.white_phase_level or self.white_freq_level
                    or self.random_walk_freq_level or self.linear_drift)

    def scaled(self, db: float) -> "NoiseSpec":
        """Scale all stochastic levels by ``db`` decibels (e.g. day vs night)."""
        k = 10.0 ** (db / 10.0)
        return replace(self, white_phase_level=self.white_phase_level * k,
                       white_freq_level=self.white_freq_level * k,
                       random_walk_freq_level=self.random_walk_freq_level * k)


def _chunk_normal(seed, component, n):
    """Unit normals for ``n`` samples, drawn in fixed chunks with derived seeds."""
    out = np.empty(n)
    for c, s in enumerate(range(0, n, CHUNK)):
        rng = np.random.default_rng(np.random.SeedSequence([seed, component, c]))
        out[s:s + CHUNK] = rng.standard_normal(min(CHUNK, n - s))
    return out


def generate_power_law_noise(spec: NoiseSpec, n: int, rate: float) -> np.ndarray:
    """Frequency fluctuation series (Hz) sampled at ``rate``."""
    if n < 2:
        raise ParameterError("need at least 2 samples")
    if rate <= 0:
        raise ParameterError("rate must be positive")
    y = np.zeros(n)
    if spec.white_phase_level:
        phi = _chunk_normal(spec.seed, 0, n + 1) * math.sqrt(spec.white_phase_level * rate / 2.0)
        y += np.diff(phi) * (rate / (2.0 * math.pi))
    if spec.white_freq_level:
        y += _chunk_normal(spec.seed, 1, n) * math.sqrt(spec.white_freq_level * rate / 2.0)
    if spec.random_walk_freq_level:
        step = math.sqrt(2.0 * math.pi ** 2 * spec.random_walk_freq_level / rate)
        y += np.cumsum(_chunk_normal(spec.seed, 2, n) * step)
    if spec.linear_drift:
        y += spec.linear_drift * (np.arange(n) / rate)
    return y


@dataclass(frozen=True)
class ToneSpec:
    amplitude: float = 1.0
    carrier: float = 1e6
    initial_phase: float = 0.0

    def __post_init__(self):
        if self.amplitude < 0:
            raise ParameterError("amplitude must be >= 0")


def carrier_cycles(carrier: float, index, rate: float) -> np.ndarray:
    """Fractional carrier cycles ``carrier*index/rate mod 1``, kept exact for large indices."""
    index = np.asarray(index, dtype=np.int64)
    whole = math.floor(carrier)
    frac = carrier - whole
    r = int(rate) if float(rate).is_integer() else None
    if r is not None and whole < 2 ** 31:
        c = (index % r) * whole % r / rate
    else:
        c = np.mod(index * (whole / rate), 1.0)
    return np.mod(c + np.mod(index * (frac / rate), 1.0), 1.0)


def tone_samples(tone: ToneSpec, index, rate: float, phase=0.0) -> np.ndarray:
    """Noiseless ``A*sin(2*pi*carrier*n/rate + phi0 + phase)`` at absolute indices."""
    cyc = carrier_cycles(tone.carrier, index, rate)
    return tone.amplitude * np.sin(2.0 * math.pi * cyc + tone.initial_phase + phase)


def synthesize_beatnote(tone: ToneSpec, noise: NoiseSpec | None, duration: float,
                        rate: float, start: int = 0) -> np.ndarray:
    """Sampled beat-note with phase noise integrated from ``noise``."""
    if rate < 2.0 * tone.carrier:
        raise ParameterError(f"rate {rate} below Nyquist for carrier {tone.carrier}")
    n = int(round(duration * rate))
    index = start + np.arange(n, dtype=np.int64)
    phase = 0.0
    if noise is not None and not noise.is_zero:
        dnu = generate_power_law_noise(noise, n, rate)
        phase = np.empty(n)
        phase[0] = 0.0
        np.cumsum(dnu[:-1], out=phase[1:])
        phase *= 2.0 * math.pi / rate
    return tone_samples(tone, index, rate, phase)


@dataclass(frozen=True)
class AdcModel:
    bits: int = 14
    full_scale: float = 2.5
    enob: float = 12.2
    gain: float = 15.0
    offset: float = 1.25
    rate: float = 4e6

    @property
    def lsb(self) -> float:
        return self.full_scale / 2 ** self.bits

    @property
    def max_code(self) -> int:
        return 2 ** self.bits - 1

    @property
    def excess_noise_rms(self) -> float:
        """Gaussian noise added on top of quantization to reach the ENOB."""
        total = self.full_scale / 2 ** self.enob / math.sqrt(12.0)
        quant = self.lsb / math.sqrt(12.0)
        return math.sqrt(max(total ** 2 - quant ** 2, 0.0))


def front_end(v_in, model: AdcModel) -> np.ndarray:
    """Non-inverting amplifier stage: ``gain*v + offset``."""
    return model.gain * np.asarray(v_in, dtype=float) + model.offset


def adc_quantize(analog, model: AdcModel, seed: int | None = 0):
    """Quantize conditioned volts to codes; returns ``(codes, saturated)``."""
    v = np.asarray(analog, dtype=float)
    sigma = model.excess_noise_rms
    if sigma > 0.0:
        v = v + np.random.default_rng(seed).standard_normal(v.shape) * sigma
    raw = np.rint(v / model.lsb)
    saturated = (raw < 0) | (raw > model.max_code)
    codes = np.clip(raw, 0, model.max_code).astype(np.int32)
    return codes, saturated


def codes_to_volts(codes, model: AdcModel) -> np.ndarray:
    """ADC codes back to volts around the configured offset."""
    return np.asarray(codes, dtype=float) * model.lsb - model.offset


@dataclass(frozen=True)
class RfChain:
    f_lo: float = 41e6
    f_off: float = 40e6
    f_drift_nominal: float = 40e6
    lpf_cutoff: float = 1.9e6


def mix_downconvert(rf_freq, chain: RfChain):
    """Frequency-domain mixer + ideal LPF.

    Returns ``(baseband, degenerate)`` where ``baseband = |rf - f_lo|`` and
    ``degenerate`` marks samples landing exactly at DC.
    """
    rf = np.asarray(rf_freq, dtype=float)
    bb = np.abs(rf - chain.f_lo)
    if np.any(bb > chain.lpf_cutoff):
        raise OutOfBandError(
            f"down-converted carrier up to {bb.max():.6g} Hz exceeds {chain.lpf_cutoff:.6g} Hz")
    return bb, bb == 0.0


@dataclass(frozen=True)
class LinkScenario:
    laser1: NoiseSpec = NoiseSpec(seed=11)
    laser2: NoiseSpec = NoiseSpec(seed=12)
    fiber_common: NoiseSpec = NoiseSpec(seed=13)
    fiber_differential: NoiseSpec = NoiseSpec(seed=14)
    aom_offset: NoiseSpec = NoiseSpec(seed=15)
    tau: float = 180e-6
    length: float = 36e3
    scheme: str = SELF_HETERODYNE
    optical_frequency: float = 194.5e12

    def __post_init__(self):
        if self.tau < 0:
            raise ParameterError("tau must be >= 0")
        if self.scheme not in SCHEMES:
            raise ParameterError(f"scheme must be one of {SCHEMES}")


@dataclass
class LinkSignals:
    """Photodiode frequency fluctuations on the true (absolute) time grid.

    ``pd1``/``pd2`` exclude the drift actuator; ``truth`` holds the injected
    processes at the same instants.
    """

    pd1: np.ndarray
    pd2: np.ndarray
    rate: float
    delay_samples: int
    truth: dict = field(default_factory=dict)


def delay_samples(tau: float, rate: float) -> int:
    k = tau * rate
    if abs(k - round(k)) > 1e-6:
        raise ParameterError(
            f"tau*rate = {k:.6g} is not an integer number of samples; adjust the rate")
    return int(round(k))


def simulate_link(scenario: LinkScenario, duration: float, rate: float,
                  drift=None) -> LinkSignals:
    """Photodiode signals for the configured detection scheme.

    Fiber one-way terms are lumped at the arrival instant: light reaching a
    photodiode at ``s`` after crossing fiber 1->2 carries ``eta(s) + d(s)/2``,
    fiber 2->1 carries ``eta(s) - d(s)/2`` (``d`` the differential residual).
    ``drift`` optionally supplies the actuator deviation on the same grid.
    """
    k = delay_samples(scenario.tau, rate)
    n = int(round(duration * rate))
    if n < 2 * k or n < 2:
        raise ParameterError("duration shorter than the round-trip delay")
    m = n + 2 * k
    gen = lambda spec: generate_power_law_noise(spec, m, rate)  # noqa: E731
    rho1, rho2 = gen(scenario.laser1), gen(scenario.laser2)
    eta, diff = gen(scenario.fiber_common), gen(scenario.fiber_differential)
    eta12 = eta + 0.5 * diff
    eta21 = eta - 0.5 * diff

    def at(x, lag):  # x(s - lag*tau) on the output grid
        return x[2 * k - lag * k: 2 * k - lag * k + n]

    if scenario.scheme == SELF_HETERODYNE:
        off = gen(scenario.aom_offset)
        pd1 = at(rho1, 2) - at(rho1, 0) + at(eta12, 1) + at(eta21, 0) + at(off, 2)
        pd2 = at(rho2, 2) - at(rho2, 0) + at(eta21, 1) + at(eta12, 0) + at(off, 1)
    else:
        pd1 = at(rho2, 1) - at(rho1, 0) + at(eta21, 0)
        pd2 = at(rho1, 1) - at(rho2, 0) + at(eta12, 0)
        if drift is not None:
            drift = np.asarray(drift, dtype=float)
            if len(drift) != n:
                raise ParameterError("drift series length mismatch")
            delayed = np.concatenate([np.full(k, drift[0]), drift[:n - k]]) if k else drift
            pd1 = pd1 + delayed
            pd2 = pd2 - drift
    truth = {"eta": at(eta, 0).copy(), "rho1": at(rho1, 0).copy(),
             "rho2": at(rho2, 0).copy(), "delta": at(diff, 0).copy()}
    return LinkSignals(pd1, pd2, rate, k, truth)
