"""Two-board fiber-link experiments.

Link physics is simulated on frequency-fluctuation series at the boards'
intermediate rate; each board samples its photodiode from its own trigger
instant, decimates to ``f_out`` with the real output filter and, in the
heterodyne scheme, closes the drift-correction loop through a DDS-driven
AOM.  Trigger instants come from demodulating a short RF record around the
frequency step with the armed filter bank.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import control
from .control import (DdsModel, OcxoModel, PidConfig, PidState, TriggerConfig, critical_pid,
                      dds_quantize, detect_trigger, iir_prefilter_step, pid_step)
from .dsp import (DemodConfig, FilterBank, ParameterError, PhaseIncrementStream,
                  decimate_output, decimation_lowpass, default_bank, demodulate_block,
                  extract_amplitude_phase, frequency_to_increments, increments_to_frequency)
from .signals import (HETERODYNE, SELF_HETERODYNE, AdcModel, LinkScenario, adc_quantize,
                      codes_to_volts, delay_samples, simulate_link)


class ExperimentError(RuntimeError):
    pass


class AlignmentError(ValueError):
    pass


class UsageError(ValueError):
    pass


#: Carrier used while the trigger step holds the beat-note out of band (Hz).
OUT_OF_BAND_CARRIER = 1.25e6
#: Nominal AOM / DDS drive around which the drift correction acts (Hz).
AOM_NOMINAL = 40e6


@dataclass
class BoardInstance:
    demod: DemodConfig = field(default_factory=lambda: DemodConfig(f_int=50e3, f_out=1e3))
    clock: OcxoModel = field(default_factory=OcxoModel)
    trigger: TriggerConfig = field(default_factory=TriggerConfig)
    pid: PidConfig = field(default_factory=critical_pid)
    timescale_offset: float = 0.0
    trigger_amplitude: float = 1.0
    adc: AdcModel | None = field(default_factory=AdcModel)

    @property
    def bank(self) -> FilterBank:
        return default_bank(self.demod)

    @property
    def armed(self) -> DemodConfig:
        """Configuration used while waiting for the trigger."""
        f_int = self.trigger.check_rate
        return DemodConfig(self.demod.nu0, self.demod.f_smp, f_int, f_int / 50.0)


def armed_detection_latency(board: BoardInstance, rng: np.random.Generator | None,
                            dwell: float = 100e-6) -> float:
    """Delay between the carrier stepping into band and the trigger sample (s).

    A short RF record is synthesized with the carrier at
    ``OUT_OF_BAND_CARRIER`` before the step and at ``nu0`` afterwards, with
    the step placed at a random continuous position relative to the board's
    sample and check grid (``rng=None`` puts it exactly on a grid point).  The
    record is quantized by the ADC model, demodulated with the armed filter
    bank and scanned with ``detect_trigger``.
    """
    cfg = board.armed
    bank = default_bank(cfg)
    fs = cfg.f_smp
    d = cfg.demod_ratio
    # step lands inside the first check period after the filter has settled
    base = bank.num_taps + 2 * d
    frac = rng.uniform(0.0, d) if rng is not None else 0.0
    t_step = base + frac  # in ADC samples
    n = int(base + d + dwell * fs + bank.num_taps)
    idx = np.arange(n, dtype=np.int64)
    a = board.trigger_amplitude
    phase0 = rng.uniform(0, 2 * math.pi) if rng is not None else 0.0
    # phase-continuous frequency switch at t_step
    carrier = np.where(idx < t_step, OUT_OF_BAND_CARRIER, cfg.nu0)
    v = a * np.sin(2 * math.pi * (idx - t_step) * carrier / fs + phase0)
    if board.adc is not None:
        codes, _ = adc_quantize(v + board.adc.offset, board.adc,
                                seed=None if rng is None else int(rng.integers(2 ** 63)))
        v = codes_to_volts(codes, board.adc)
    iq = demodulate_block(v, bank, cfg)
    pa = extract_amplitude_phase(iq.i, iq.q)
    k = detect_trigger(pa, board.trigger)
    if k is None:
        raise ExperimentError("trigger never detected; step not inside the demodulation band")
    return (iq.index[k] - t_step) / fs


@dataclass
class SyncExperiment:
    board1: BoardInstance = field(default_factory=BoardInstance)
    board2: BoardInstance = field(default_factory=BoardInstance)
    scenario: LinkScenario = field(default_factory=LinkScenario)
    #: where the step is imprinted; board 1 sees it ``tau`` after board 2
    trigger_encoding: str = "aom-step"
    settle: float = 0.05
    #: "int" aligns before output decimation, "out" after
    align_stage: str = "int"
    jitter: bool = True
    amplitude: float = 0.5


@dataclass
class AlignedAcquisition:
    dnu1: np.ndarray
    dnu2: np.ndarray
    common_time: np.ndarray
    rate: float
    scheme: str
    f_drift_record: np.ndarray | None = None
    shift: int = 0
    residual: float = 0.0
    amplitude1: np.ndarray | None = None
    amplitude2: np.ndarray | None = None
    truth: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.dnu1)


def align_timescales(raw1, raw2, tau: float, rate: float, jitter1: float = 0.0,
                     jitter2: float = 0.0):
    """Pair samples taken at the same instant of the common timescale.

    Board 1 starts ``tau`` after board 2, so ``raw1[n]`` matches
    ``raw2[n + k]`` with ``k = round(tau*rate)``.  Returns
    ``(a1, a2, k, residual)``; ``residual`` is the leftover misalignment in
    samples, including the (simulation-only) trigger jitters.
    """
    raw1 = np.asarray(raw1)
    raw2 = np.asarray(raw2)
    k = int(round(tau * rate))
    residual = tau * rate - k + (jitter1 - jitter2) * rate
    n = min(len(raw1), len(raw2) - k)
    if n < 2:
        raise AlignmentError(f"only {n} overlapping samples after a {k}-sample shift")
    return raw1[:n], raw2[k:k + n], k, residual


def _block_gain(h, r):
    return h.reshape(-1, r).sum(axis=1)


def _decimate(x, amp, start, cfg, taps):
    s = PhaseIncrementStream(frequency_to_increments(x, cfg.f_int), amp, cfg.f_int, start)
    out = decimate_output(s, cfg, taps)
    return increments_to_frequency(out), out.amplitudes


def _drift_loop(open2, cfg: DemodConfig, pid: PidConfig, taps, dds: DdsModel):
    """Close the drift loop on board 2.

    ``open2`` is board 2's decimated output without actuation.  The
    correction requested at output ``m`` is applied from the next
    intermediate-rate sample on, i.e. it holds over input block ``m+1``.
    Returns ``(u, seen)``: the applied corrections per output tick and their
    contribution through the output filter.
    """
    r = cfg.output_ratio
    g = _block_gain(taps, r)  # weight of input block m-b on output m
    nb = len(g)
    m0 = nb - 1  # first output with a full window
    n_out = len(open2)
    u = np.zeros(n_out + m0 + 1)  # u[m + 1] is applied during block m + 1
    seen = np.zeros(n_out)
    state = PidState(pid)
    dt = 1.0 / cfg.f_out
    for j in range(n_out):
        m = j + m0
        # blocks m-nb+1..m carry u values u[m-nb+1..m]
        contrib = float(np.dot(g, u[m - np.arange(nb)]))
        seen[j] = contrib
        y = open2[j] - contrib
        e = iir_prefilter_step(state.prefilter, y)
        req = pid_step(state, e, dt)
        _, actual = dds_quantize(AOM_NOMINAL + req, dds)
        u[m + 1] = actual - AOM_NOMINAL
    return u, seen


def run_two_board_experiment(exp: SyncExperiment, duration: float, seed: int = 0) -> AlignedAcquisition:
    """Trigger both boards from one step, acquire, and align.

    Each board's latency is its armed detection delay plus the fixed start
    latency; the simulated link is sampled at the common intermediate rate
    starting from the sample nearest each board's start instant.
    """
    b1, b2 = exp.board1, exp.board2
    cfg = b1.demod
    if b2.demod != cfg:
        raise ParameterError("both boards must share the demodulation configuration")
    sc = exp.scenario
    rate = cfg.f_int
    k = delay_samples(sc.tau, rate)
    rng = np.random.default_rng(seed)
    lat1 = armed_detection_latency(b1, rng if exp.jitter else None) + control.START_LATENCY
    lat2 = armed_detection_latency(b2, rng if exp.jitter else None) + control.START_LATENCY
    t_step = exp.settle
    start1 = t_step + sc.tau + lat1 + b1.timescale_offset
    start2 = t_step + lat2 + b2.timescale_offset
    j1 = int(round(start1 * rate))
    j2 = int(round(start2 * rate))
    n_acq = int(round(duration * rate))
    total = (max(j1, j2) + n_acq + 2) / rate
    link = simulate_link(sc, total, rate)
    taps = decimation_lowpass(cfg)
    r = cfg.output_ratio
    amp = np.full(n_acq, exp.amplitude)

    x1 = link.pd1[j1:j1 + n_acq]
    x2 = link.pd2[j2:j2 + n_acq]
    drift2 = None
    u = None
    if sc.scheme == HETERODYNE:
        open2, _ = _decimate(x2, amp, 0, cfg, taps)
        u, _ = _drift_loop(open2, cfg, b2.pid, taps, DdsModel())
        # per-sample actuation on board 2's counter; block b holds u[b]
        per_sample = np.repeat(u, r)[:n_acq]
        if len(per_sample) < n_acq:
            per_sample = np.concatenate([per_sample, np.full(n_acq - len(per_sample), u[-1])])
        drift_abs = np.zeros(len(link.pd1))
        drift_abs[j2:j2 + n_acq] = per_sample
        drift_abs[j2 + n_acq:] = per_sample[-1]
        delayed = np.concatenate([np.zeros(k), drift_abs[:len(drift_abs) - k]]) if k else drift_abs
        x1 = x1 + delayed[j1:j1 + n_acq]
        x2 = x2 - per_sample
        drift2 = per_sample

    truth_abs = {"eta": link.truth["eta"], "laser": link.truth["rho2"] - link.truth["rho1"]}
    jit1 = (start1 * rate - j1) / rate
    jit2 = (start2 * rate - j2) / rate
    diag = {"start1": start1, "start2": start2, "latency1": lat1, "latency2": lat2,
            "start_offset": (start1 - sc.tau) - start2, "j1": j1, "j2": j2}

    if exp.align_stage == "int":
        a1, a2, shift, resid = align_timescales(x1, x2, sc.tau, rate, jit1, jit2)
        n = len(a1)
        d1, am1 = _decimate(a1, amp[:n], 0, cfg, taps)
        d2, am2 = _decimate(a2, amp[:n], 0, cfg, taps)
        fdr = None
        if drift2 is not None:
            fdr, _ = _decimate(drift2[shift:shift + n], amp[:n], 0, cfg, taps)
        truth = {name: _decimate(v[j1:j1 + n], amp[:n], 0, cfg, taps)[0]
                 for name, v in truth_abs.items()}
        out_rate = cfg.f_out
        t0 = (shift + r * (len(taps) // r) - 1) / rate
    elif exp.align_stage == "out":
        o1, am1 = _decimate(x1, amp, 0, cfg, taps)
        o2, am2 = _decimate(x2, amp, 0, cfg, taps)
        d1, d2, shift, resid = align_timescales(o1, o2, sc.tau, cfg.f_out, jit1, jit2)
        am1, am2 = am1[:len(d1)], am2[shift:shift + len(d1)]
        fdr = None
        if drift2 is not None:
            fdr = _decimate(drift2, amp, 0, cfg, taps)[0][shift:shift + len(d1)]
        truth = {name: _decimate(v[j1:j1 + n_acq], amp, 0, cfg, taps)[0][:len(d1)]
                 for name, v in truth_abs.items()}
        out_rate = cfg.f_out
        t0 = (shift * r + len(taps) - 1) / rate
    else:
        raise ParameterError(f"unknown align_stage {exp.align_stage!r}")
    common = t0 + np.arange(len(d1)) / out_rate
    diag["drift_ticks"] = u
    return AlignedAcquisition(d1, d2, common, out_rate, sc.scheme, fdr, shift, resid,
                              am1, am2, truth, diag)


def combine_self_heterodyne(acq: AlignedAcquisition):
    """``(fiber_estimate, residual) = (dnu1/2, dnu1 - dnu2)``."""
    if acq.scheme != SELF_HETERODYNE:
        raise UsageError(f"acquisition scheme is {acq.scheme!r}, not self-heterodyne")
    return acq.dnu1 / 2.0, acq.dnu1 - acq.dnu2


def combine_heterodyne(acq: AlignedAcquisition):
    """``fiber = (dnu1 + dnu2)/2``, ``laser = (dnu1 - dnu2 - 2*f_drift)/2``."""
    if acq.scheme != HETERODYNE:
        raise UsageError(f"acquisition scheme is {acq.scheme!r}, not heterodyne")
    if acq.f_drift_record is None:
        raise UsageError("heterodyne combination needs the drift-correction record")
    fiber = (acq.dnu1 + acq.dnu2) / 2.0
    laser = (acq.dnu1 - acq.dnu2 - 2.0 * acq.f_drift_record) / 2.0
    return fiber, laser


def trigger_offsets(board1: BoardInstance, board2: BoardInstance, trials: int, seed: int = 0):
    """Relative start offsets of independently triggered boards (s).

    The propagation delay and the fixed start latency are common to every
    trial and removed, leaving the detection jitter difference.
    """
    rng = np.random.default_rng(seed)
    out = np.empty(trials)
    for t in range(trials):
        out[t] = armed_detection_latency(board1, rng) - armed_detection_latency(board2, rng)
    return out
