import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mcuphase.acceptance import naive_demodulate
from mcuphase.dsp import (TWO_PI, DemodConfig, DemodPipeline, InsufficientDataError, ParameterError,
                          PhaseIncrementStream, build_demod_bank, decimate_output,
                          decimation_lowpass, default_bank, demod_lowpass, demodulate_block,
                          design_lowpass_hamming, extract_amplitude_phase,
                          increments_to_frequency, run_pipeline, unwrap_increment,
                          unwrap_increments)
from mcuphase.signals import ToneSpec, tone_samples


def tone(cfg, dnu, n, amp=1.0, phase=0.0, start=0):
    return tone_samples(ToneSpec(amp, cfg.nu0 + dnu, phase), start + np.arange(n), cfg.f_smp)


# -- configuration -----------------------------------------------------------------

def test_default_config_derived_sizes():
    cfg = DemodConfig()
    assert cfg.demod_ratio == 40
    assert cfg.num_taps == 320
    assert cfg.f_bw == 12.5e3
    assert cfg.output_ratio == 25
    assert cfg.decim_taps == 300


@pytest.mark.parametrize("kw", [
    {"f_smp": 3e6},
    {"f_int": 300e3},
    {"f_int": 5e3},
    {"f_out": 100.0},
    {"f_int": 30e3},        # 4e6/30e3 not an integer
    {"f_int": 200e3, "f_out": 3e3},
    {"f_int": 80e3, "f_out": 1e3},  # ratio 50 is not a multiple of 4
])
def test_invalid_configs_rejected(kw):
    with pytest.raises(ParameterError):
        DemodConfig(**kw)


def test_with_rates_round_trip():
    cfg = DemodConfig().with_rates(f_int=200e3, f_out=1e3)
    assert DemodConfig(**cfg.to_dict()) == cfg


# -- filters -----------------------------------------------------------------------

def test_hamming_lowpass_unit_dc_gain_and_symmetry():
    h = design_lowpass_hamming(101, 1e3, 10e3)
    assert math.isclose(h.sum(), 1.0, rel_tol=1e-12)
    assert np.allclose(h, h[::-1])


def test_demod_bank_lengths_and_zero_taps():
    cfg = DemodConfig()
    bank = default_bank(cfg)
    assert bank.num_taps == 8 * cfg.demod_ratio
    # quarter-rate references zero every other tap of each filter
    assert len(bank.nonzero_i) == bank.num_taps // 2
    assert len(bank.nonzero_q) == bank.num_taps // 2
    assert not set(bank.nonzero_i) & set(bank.nonzero_q)


def test_bank_rejects_wrong_length():
    cfg = DemodConfig()
    with pytest.raises(ParameterError):
        build_demod_bank(np.ones(10), cfg)


def test_decimation_filter_shape():
    cfg = DemodConfig()
    h = decimation_lowpass(cfg)
    assert len(h) == 12 * cfg.output_ratio
    assert math.isclose(h.sum(), 1.0, rel_tol=1e-12)


# -- demodulation --------------------------------------------------------------------

@pytest.mark.parametrize("phi", [0.0, 0.7, -2.1, math.pi / 2])
def test_in_band_tone_phase_and_amplitude(phi):
    cfg = DemodConfig()
    raw = tone(cfg, 0.0, 4000, amp=0.8, phase=phi)
    iq = demodulate_block(raw, default_bank(cfg), cfg)
    pa = extract_amplitude_phase(iq.i, iq.q)
    assert np.allclose(pa.amplitude, 0.8, rtol=1e-3)
    assert np.allclose(np.angle(np.exp(1j * (pa.wrapped_phase - phi))), 0.0, atol=1e-9)


def test_zero_input_flags_carrier_loss():
    cfg = DemodConfig()
    iq = demodulate_block(np.zeros(1000), default_bank(cfg), cfg)
    pa = extract_amplitude_phase(iq.i, iq.q)
    assert np.all(pa.amplitude == 0.0)
    assert np.all(pa.wrapped_phase == 0.0)
    assert np.all(pa.carrier_lost)


def test_short_block_raises():
    cfg = DemodConfig()
    with pytest.raises(InsufficientDataError):
        demodulate_block(np.zeros(cfg.num_taps - 1), default_bank(cfg), cfg)


def test_output_grid_indices():
    cfg = DemodConfig()
    iq = demodulate_block(np.zeros(2000), default_bank(cfg), cfg, start_index=17)
    assert np.all(iq.index % cfg.demod_ratio == 1)
    assert iq.index[0] >= 17 + cfg.num_taps - 1
    assert np.all(np.diff(iq.index) == cfg.demod_ratio)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(0, 2 ** 32 - 1),
       st.sampled_from([(100e3, 4e3), (200e3, 1e3), (50e3, 1e3), (10e3, 500.0)]))
def test_combined_filter_matches_mix_then_filter(start, seed, rates):
    cfg = DemodConfig(f_int=rates[0], f_out=rates[1])
    raw = np.random.default_rng(seed).uniform(-1, 1, cfg.num_taps + 5 * cfg.demod_ratio)
    iq = demodulate_block(raw, default_bank(cfg), cfg, start)
    i_ref, q_ref, idx = naive_demodulate(raw, cfg, start)
    assert np.array_equal(iq.index, idx)
    assert np.allclose(iq.i, i_ref, atol=1e-12)
    assert np.allclose(iq.q, q_ref, atol=1e-12)


def test_out_of_band_tone_suppressed_by_20_db():
    cfg = DemodConfig(f_int=100e3)
    bank = default_bank(cfg)
    amp = {}
    for dnu in (1e3, 40e3):
        iq = demodulate_block(tone(cfg, dnu, 100_000), bank, cfg)
        amp[dnu] = np.mean(extract_amplitude_phase(iq.i, iq.q).amplitude)
    assert 20 * math.log10(amp[1e3] / amp[40e3]) > 20


def test_phase_range_maps_minus_pi_to_pi():
    pa = extract_amplitude_phase([-1.0, -1.0], [0.0, -0.0])
    assert np.all(pa.wrapped_phase == math.pi)


# -- unwrapping ------------------------------------------------------------------------

def test_unwrap_increment_examples():
    assert math.isclose(unwrap_increment(3.0, -3.0), -6.0 + TWO_PI)
    assert math.isclose(unwrap_increment(-3.0, 3.0), 6.0 - TWO_PI)
    assert unwrap_increment(0.1, 0.3) == pytest.approx(0.2)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-math.pi * 0.999, math.pi * 0.999), min_size=2, max_size=200),
       st.floats(-math.pi, math.pi))
def test_wrap_unwrap_recovers_increments(steps, phi0):
    phase = phi0 + np.concatenate([[0.0], np.cumsum(steps)])
    wrapped = np.angle(np.exp(1j * phase))
    got = unwrap_increments(wrapped)
    assert np.allclose(got, steps, atol=1e-9)


def test_unwrap_with_previous_phase():
    got = unwrap_increments([3.0, -3.0], prev_phase=2.9)
    assert len(got) == 2
    assert got[0] == pytest.approx(0.1)


# -- decimation and streaming -------------------------------------------------------------

def test_decimate_output_constant_increment_is_frequency_preserving():
    cfg = DemodConfig()
    dnu = 123.0
    inc = np.full(5000, TWO_PI * dnu / cfg.f_int)
    out = decimate_output(PhaseIncrementStream(inc, np.ones(5000), cfg.f_int), cfg)
    assert np.allclose(increments_to_frequency(out), dnu, rtol=1e-12)
    assert np.allclose(out.amplitudes, 1.0)
    assert out.rate == cfg.f_out


def test_decimate_rejects_wrong_rate():
    cfg = DemodConfig()
    with pytest.raises(ParameterError):
        decimate_output(PhaseIncrementStream(np.zeros(500), np.zeros(500), 1e3), cfg)


def test_pipeline_reports_offset_frequency():
    cfg = DemodConfig()
    out = run_pipeline(tone(cfg, 1000.0, 400_000), cfg)
    f = increments_to_frequency(out)
    assert np.allclose(f, 1000.0, atol=1e-6)


@settings(max_examples=10, deadline=None)
@given(st.lists(st.integers(1, 20_000), min_size=1, max_size=8))
def test_streaming_equals_batch(cuts):
    cfg = DemodConfig()
    raw = tone(cfg, 37.0, 60_000, amp=0.5) + 1e-3 * np.random.default_rng(1).standard_normal(60_000)
    batch = run_pipeline(raw, cfg, chunk=len(raw))
    pipe = DemodPipeline(cfg)
    edges = np.unique(np.clip(np.cumsum(cuts), 0, len(raw)))
    parts = [pipe.process(p).output for p in np.split(raw, edges)]
    stream = PhaseIncrementStream.concatenate([p for p in parts if len(p)])
    assert stream.start == batch.start
    assert np.allclose(stream.increments, batch.increments, atol=1e-13)
    assert np.allclose(stream.amplitudes, batch.amplitudes, atol=1e-13)


def test_demod_lowpass_cutoff():
    cfg = DemodConfig()
    h = demod_lowpass(cfg)
    w = np.exp(-2j * np.pi * cfg.f_bw / cfg.f_smp * np.arange(len(h)))
    assert abs(np.dot(h, w)) < 1.0
