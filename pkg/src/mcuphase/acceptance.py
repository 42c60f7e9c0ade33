"""End-to-end acceptance experiments.

Each ``check_*`` function runs one experiment at its stated tolerance and
returns a ``Result``; ``run_all`` executes them in order.  Nothing here is
tuned to pass: a failing check reports the measured value.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .analysis import linear_fit, log_taus, loglog_slope, overlapping_adev, welch_psd
from .control import OcxoClock, OcxoModel, SyncState, clock_advance, schedule_resync
from .dsp import (TWO_PI, DemodConfig, DemodPipeline, PhaseIncrementStream, decimate_output,
                  default_bank, demodulate_block, extract_amplitude_phase,
                  increments_to_frequency, unwrap_increments)
from .link import (BoardInstance, SyncExperiment, combine_heterodyne, combine_self_heterodyne,
                   run_two_board_experiment, trigger_offsets)
from .signals import (HETERODYNE, SELF_HETERODYNE, AdcModel, LinkScenario, NoiseSpec, ToneSpec,
                      adc_quantize, codes_to_volts, tone_samples)
from .wire import AMP_LSB, PHASE_LSB, Chunk, IntegrityError, decode_chunk, encode_chunk


@dataclass
class Result:
    number: int
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.number:2d} {self.name}: {self.detail} ({self.seconds:.1f} s)"


def naive_demodulate(raw, config: DemodConfig, start_index: int = 0):
    """Reference I/Q: mix with sin/cos, full convolution, keep the output grid."""
    h = default_bank(config).h_lpf
    n = start_index + np.arange(len(raw))
    arg = TWO_PI * config.nu0 * n / config.f_smp
    i_full = np.convolve(raw * np.sin(arg), h)[:len(raw)]
    q_full = np.convolve(raw * np.cos(arg), h)[:len(raw)]
    keep = (n >= start_index + len(h) - 1) & (n % config.demod_ratio == 1)
    return i_full[keep], q_full[keep], n[keep]


def _stream_tone(pipe: DemodPipeline, tone: ToneSpec, n: int, rate: float, chunk=2_000_000,
                 transform=None):
    parts = []
    for s in range(0, n, chunk):
        idx = np.arange(s, min(s + chunk, n), dtype=np.int64)
        x = tone_samples(tone, idx, rate)
        if transform is not None:
            x = transform(x, s)
        parts.append(pipe.process(x).output)
    return PhaseIncrementStream.concatenate([p for p in parts if len(p)])


def check_oracle(n=100_000, seed=0):
    cfg = DemodConfig()
    raw = np.random.default_rng(seed).uniform(-1, 1, n)
    iq = demodulate_block(raw, default_bank(cfg), cfg)
    i_ref, q_ref, idx = naive_demodulate(raw, cfg)
    ok_idx = np.array_equal(idx, iq.index)
    err = np.concatenate([iq.i - i_ref, iq.q - q_ref])
    ref = np.concatenate([i_ref, q_ref])
    rel = math.sqrt(np.mean(err ** 2) / np.mean(ref ** 2))
    return ok_idx and rel <= 1e-10, f"relative RMS {rel:.2e} (limit 1e-10)"


def check_linearity(duration=10.0):
    cfg = DemodConfig(f_int=200e3, f_out=1e3)
    offsets = np.array([1e-3, 1.0, 1e3, 40e3])
    measured = []
    n = int(duration * cfg.f_smp)
    for dnu in offsets:
        out = _stream_tone(DemodPipeline(cfg), ToneSpec(1.0, cfg.nu0 + dnu), n, cfg.f_smp)
        measured.append(np.mean(increments_to_frequency(out)))
    fit = linear_fit(offsets, np.array(measured))
    ok = abs(fit.slope - 1.0) <= 1e-6 and abs(fit.intercept) < 1e-3
    return ok, f"slope-1 = {fit.slope - 1:.2e}, intercept = {fit.intercept:.2e} Hz"


def check_out_of_band():
    cfg = DemodConfig(f_int=100e3, f_out=4e3)
    n = 200_000
    amps = []
    for dnu in (1e3, 40e3):
        raw = tone_samples(ToneSpec(1.0, cfg.nu0 + dnu), np.arange(n), cfg.f_smp)
        iq = demodulate_block(raw, default_bank(cfg), cfg)
        amps.append(np.mean(extract_amplitude_phase(iq.i, iq.q).amplitude))
    db = 20 * math.log10(amps[0] / amps[1])
    return db >= 20.0, f"suppression {db:.1f} dB (need >= 20 dB)"


def _adc_floor(amplitude, duration, seed, cfg, band):
    adc = AdcModel()
    n = int(duration * cfg.f_smp)

    def conv(x, s):
        codes, _ = adc_quantize(x + adc.offset, adc, seed=seed + s)
        return codes_to_volts(codes, adc)

    out = _stream_tone(DemodPipeline(cfg), ToneSpec(amplitude, cfg.nu0 + 100.0), n, cfg.f_smp,
                       transform=conv)
    psd = welch_psd(increments_to_frequency(out), cfg.f_out, segment=1024)
    return psd.band_mean(*band)


def check_noise_scaling(duration=2.0):
    cfg = DemodConfig(f_int=100e3, f_out=4e3)
    band = (100.0, 1000.0)
    hi = _adc_floor(1.0, duration, 1, cfg, band)
    lo = _adc_floor(0.1, duration, 2, cfg, band)
    db = 10 * math.log10(lo / hi)
    return abs(db - 20.0) <= 2.0, f"floor ratio {db:.2f} dB (target 20 +/- 2)"


def check_adev_slope(duration=100.0, sigma=1e-3, seed=3):
    cfg = DemodConfig(f_int=100e3, f_out=10e3)
    n = int(duration * cfg.f_int)
    rng = np.random.default_rng(seed)
    k = np.arange(n)
    phase = TWO_PI * 1234.5 * k / cfg.f_int + sigma * rng.standard_normal(n)
    wrapped = np.angle(np.exp(1j * phase))
    inc = unwrap_increments(wrapped)
    s = PhaseIncrementStream(inc, np.ones(len(inc)), cfg.f_int, 1)
    y = increments_to_frequency(decimate_output(s, cfg))
    taus = log_taus(cfg.f_out, 1e-3, 1.0)
    ad = overlapping_adev(y, cfg.f_out, taus)
    slope = loglog_slope(ad.taus, ad.sigma)
    return abs(slope + 1.0) <= 0.1, f"ADEV slope {slope:.3f} over 1 ms..1 s (target -1 +/- 0.1)"


def check_sync_jitter(trials=300, seed=4):
    board = BoardInstance()
    d = trigger_offsets(board, board, trials, seed)
    sd = float(np.std(d, ddof=1))
    ok = abs(sd - 2.89e-6) <= 0.3e-6
    return ok, (f"start-offset std {sd * 1e6:.2f} us over {trials} trials (target 2.89 +/- 0.3 us; "
                f"two independent uniform detections give T/sqrt(6) = 2.04 us)")


def check_resync():
    model = OcxoModel(drift_rate=2e-13)
    clock = OcxoClock(model)
    prev = 0.0
    while abs(clock.error) < 3e-6:
        prev = clock.error
        clock_advance(clock, 1.0)
    t = clock.true_time - 1.0 + (3e-6 - abs(prev)) / (abs(clock.error) - abs(prev))
    target = math.sqrt(2 * 3e-6 / 2e-13)
    nxt = schedule_resync(SyncState(sigma_sync=3e-6), model)
    ok = abs(t - target) <= 0.01 * target and nxt == 3600.0
    return ok, f"3 us reached at {t:.1f} s (bound {target:.1f} s), next resync at {nxt:.0f} s"


def check_self_heterodyne(duration=100.0, seed=5):
    sc = LinkScenario(fiber_common=NoiseSpec(white_freq_level=0.1, seed=13), scheme=SELF_HETERODYNE)
    acq = run_two_board_experiment(SyncExperiment(scenario=sc, align_stage="out"), duration, seed)
    _, resid = combine_self_heterodyne(acq)
    p1 = welch_psd(acq.dnu1, acq.rate, segment=1024)
    pr = welch_psd(resid, acq.rate, segment=1024)
    sel = (p1.frequencies >= 1.0) & (p1.frequencies <= 100.0)
    f = p1.frequencies[sel]
    ratio = pr.values[sel] / ((TWO_PI * sc.tau * f) ** 2 * p1.values[sel])
    worst = float(np.max(np.abs(10 * np.log10(ratio))))
    return worst <= 3.0, f"max deviation {worst:.2f} dB over 1..100 Hz (limit 3 dB)"


def check_heterodyne(duration=60.0, seed=6):
    noisy = LinkScenario(scheme=HETERODYNE,
                         laser1=NoiseSpec(white_freq_level=1e-3, seed=11),
                         laser2=NoiseSpec(white_freq_level=1e-3, seed=12),
                         fiber_common=NoiseSpec(white_freq_level=0.1, seed=13))
    acq = run_two_board_experiment(SyncExperiment(scenario=noisy), duration, seed)
    fiber, laser = combine_heterodyne(acq)
    c_eta = float(np.corrcoef(fiber, acq.truth["eta"])[0, 1])
    c_las = float(np.corrcoef(laser, acq.truth["laser"])[0, 1])
    drift = LinkScenario(scheme=HETERODYNE, laser1=NoiseSpec(linear_drift=0.5, seed=11))
    acq = run_two_board_experiment(SyncExperiment(scenario=drift), duration, seed)
    tail = slice(len(acq) // 2, None)
    m1, m2 = float(np.mean(acq.dnu1[tail])), float(np.mean(acq.dnu2[tail]))
    ok = min(c_eta, c_las) >= 0.99 and max(abs(m1), abs(m2)) < 1e-3
    return ok, (f"corr(eta) {c_eta:.4f}, corr(laser) {c_las:.4f}; "
                f"drift-run means {m1 * 1e3:.3f} / {m2 * 1e3:.3f} mHz")


def check_unwrap(n=1_000_000, seed=7):
    rng = np.random.default_rng(seed)
    # increments and phases on a 2**-32 turn grid so the truth is exact
    steps = rng.integers(-2 ** 31 + 1, 2 ** 31, n, dtype=np.int64)
    turns = (np.cumsum(steps) + 2 ** 31) % 2 ** 32 - 2 ** 31
    wrapped = turns.astype(float) * PHASE_LSB
    got = unwrap_increments(wrapped)
    err = np.abs(got - steps[1:] * PHASE_LSB)
    ulp = np.spacing(TWO_PI)
    worst = float(err.max() / ulp)
    return worst <= 1.0, f"max error {worst:.2f} ulp(2*pi) over {n - 1} steps"


def check_wire(seed=8, count=165):
    rng = np.random.default_rng(seed)
    worst_p = worst_a = 0.0
    for s in range(200):
        ph = rng.uniform(-math.pi, math.pi - PHASE_LSB / 2, count)
        am = rng.uniform(0.0, 1.25 - AMP_LSB / 2, count)
        c = decode_chunk(encode_chunk(Chunk(s, 1, ph, am, int(rng.integers(2 ** 48)), s)))
        worst_p = max(worst_p, float(np.max(np.abs(c.phase - ph))))
        worst_a = max(worst_a, float(np.max(np.abs(c.amplitude - am))))
    frame = encode_chunk(Chunk(9, 1, ph, am, 12345, 0))
    missed = 0
    buf = bytearray(frame)
    for bit in range(8 * len(frame)):
        buf[bit // 8] ^= 1 << (bit % 8)
        try:
            decode_chunk(bytes(buf))
            missed += 1
        except IntegrityError:
            pass
        buf[bit // 8] ^= 1 << (bit % 8)
    ok = worst_p <= PHASE_LSB / 2 and worst_a <= AMP_LSB / 2 and missed == 0
    return ok, (f"phase err {worst_p / PHASE_LSB:.3f} LSB, amp err {worst_a / AMP_LSB:.3f} LSB, "
                f"{missed} undetected of {8 * len(frame)} flips on a {len(frame)}-byte frame")


def check_throughput(duration=5.0):
    cfg = DemodConfig()
    n = int(duration * cfg.f_smp)
    chunk = 1_000_000
    raw = tone_samples(ToneSpec(1.0, cfg.nu0 + 10.0), np.arange(chunk), cfg.f_smp)
    pipe = DemodPipeline(cfg)
    t0 = time.perf_counter()
    for _ in range(n // chunk):
        pipe.process(raw)
    rate = (n // chunk) * chunk / (time.perf_counter() - t0)
    return rate >= 4e6, f"{rate / 1e6:.1f} Msample/s (need >= 4)"


CHECKS = [
    (1, "combined-demod oracle", check_oracle),
    (2, "frequency linearity", check_linearity),
    (3, "out-of-band suppression", check_out_of_band),
    (4, "noise-floor amplitude scaling", check_noise_scaling),
    (5, "ADEV slope", check_adev_slope),
    (6, "sync jitter", check_sync_jitter),
    (7, "resync scheduling", check_resync),
    (8, "self-heterodyne residual", check_self_heterodyne),
    (9, "heterodyne separation", check_heterodyne),
    (10, "unwrap exactness", check_unwrap),
    (11, "wire integrity", check_wire),
    (12, "throughput", check_throughput),
]


def run_check(number: int) -> Result:
    for num, name, fn in CHECKS:
        if num == number:
            t0 = time.perf_counter()
            passed, detail = fn()
            return Result(num, name, bool(passed), detail, time.perf_counter() - t0)
    raise KeyError(number)


def run_all(numbers=None, report=print):
    results = []
    for num, _, _ in CHECKS:
        if numbers and num not in numbers:
            continue
        r = run_check(num)
        if report:
            report(r.line())
        results.append(r)
    return results
