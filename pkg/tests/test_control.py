import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mcuphase.control import (RESYNC_LATENCY, START_LATENCY, DdsModel, IirState, OcxoClock,
                              OcxoModel, PidConfig, PidState, SyncState, TriggerConfig,
                              apply_resync, clock_advance, critical_pid, dds_quantize,
                              detect_trigger, iir_prefilter, iir_prefilter_step, pid_step,
                              resync_interval_bound, schedule_resync)
from mcuphase.dsp import ParameterError


def test_iir_array_matches_steps():
    x = np.random.default_rng(0).standard_normal(500)
    a = IirState.for_cutoff(5.0, 1e3, y0=0.3)
    b = IirState.for_cutoff(5.0, 1e3, y0=0.3)
    ys = [iir_prefilter_step(a, v) for v in x]
    assert np.allclose(iir_prefilter(b, x), ys)
    assert b.y == pytest.approx(a.y)


def test_iir_unit_dc_gain():
    s = IirState.for_cutoff(1.0, 1e3)
    y = iir_prefilter(s, np.ones(20_000))
    assert y[-1] == pytest.approx(1.0, abs=1e-9)


def test_critical_gains():
    c = critical_pid(ki=2000.0, prefilter_cutoff=0.01)
    wc = 2 * math.pi * 0.01
    # closed-loop discriminant (wc(1+kp))^2 - 4 wc ki vanishes
    assert (wc * (1 + c.kp)) ** 2 == pytest.approx(4 * wc * c.ki, rel=1e-12)


def test_pid_proportional_only():
    s = PidState(PidConfig(kp=2.0))
    assert pid_step(s, 0.5, 1e-3) == pytest.approx(1.0)


def test_pid_integrates():
    s = PidState(PidConfig(ki=10.0))
    for _ in range(100):
        u = pid_step(s, 1.0, 1e-3)
    assert u == pytest.approx(1.0)


def test_pid_anti_windup_freezes_integral():
    s = PidState(PidConfig(ki=1000.0, output_limits=(-1.0, 1.0)))
    for _ in range(1000):
        u = pid_step(s, 1.0, 1e-3)
    assert u == 1.0 and s.saturated
    assert s.integral <= 1.0 / 1000.0 + 1e-12
    # recovers immediately once the error reverses
    assert pid_step(s, -1.0, 1e-3) < 1.0


def test_pid_rejects_bad_dt():
    with pytest.raises(ParameterError):
        pid_step(PidState(PidConfig()), 1.0, 0.0)


def _closed_loop(ramp, ki, seconds=30.0, rate=1e3):
    """Unit plant: measured = disturbance - correction."""
    cfg = critical_pid(ki=ki, update_rate=rate)
    st_ = PidState(cfg)
    u = 0.0
    err = []
    for k in range(int(seconds * rate)):
        y = ramp * k / rate - u
        e = iir_prefilter_step(st_.prefilter, y)
        u = pid_step(st_, e, 1.0 / rate)
        err.append(y)
    return np.array(err)


def test_ramp_tracking_error_is_rate_over_ki():
    err = _closed_loop(0.5, 2000.0)
    assert err[-1000:].mean() == pytest.approx(0.5 / 2000.0, rel=0.05)


@settings(max_examples=8, deadline=None)
@given(st.floats(100.0, 5000.0))
def test_loop_stable_for_positive_gains(ki):
    err = _closed_loop(0.1, ki, seconds=20.0)
    assert np.all(np.isfinite(err))
    assert abs(err[-1]) < 0.01


def test_dds_quantization():
    dds = DdsModel()
    word, f = dds_quantize(40e6)
    assert abs(f - 40e6) <= dds.lsb / 2
    assert dds.lsb == pytest.approx(500e6 / 2 ** 48)
    with pytest.raises(ParameterError):
        dds_quantize(300e6)


@settings(max_examples=100)
@given(st.floats(1.0, 249e6))
def test_dds_error_within_half_lsb(f):
    dds = DdsModel()
    _, actual = dds_quantize(f, dds)
    assert abs(actual - f) <= dds.lsb / 2 * (1 + 1e-6)


# -- trigger --------------------------------------------------------------------------

def test_trigger_first_rising_crossing():
    cfg = TriggerConfig(threshold=0.5)
    x = np.array([0.0, 0.2, 0.6, 0.7, 0.3, 0.8])
    assert detect_trigger(x, cfg) == 2
    assert detect_trigger(x, cfg, settled_from=3) == 5


def test_trigger_requires_edge():
    cfg = TriggerConfig(threshold=0.5)
    assert detect_trigger(np.ones(100), cfg) is None
    assert detect_trigger(np.zeros(100), cfg) is None


def test_trigger_falling_edge():
    cfg = TriggerConfig(threshold=0.5, edge="falling")
    assert detect_trigger(np.array([1.0, 0.9, 0.4]), cfg) == 2


def test_trigger_config_validation():
    with pytest.raises(ParameterError):
        TriggerConfig(channel="power")
    with pytest.raises(ParameterError):
        TriggerConfig(edge="both")


def test_latency_constants():
    assert START_LATENCY == 32e-6
    assert RESYNC_LATENCY == 110e-6


# -- clocks and resync --------------------------------------------------------------------

def test_clock_error_is_quadratic_in_time():
    c = OcxoClock(OcxoModel(drift_rate=2e-13))
    for _ in range(100):
        clock_advance(c, 10.0)
    assert c.error == pytest.approx(0.5 * 2e-13 * 1000.0 ** 2, rel=1e-6)


def test_resync_interval_examples():
    assert resync_interval_bound(3e-6, 2e-13) == pytest.approx(5477.2, rel=1e-4)
    assert math.isinf(resync_interval_bound(3e-6, 0.0))
    assert schedule_resync(SyncState(sigma_sync=3e-6), OcxoModel(drift_rate=2e-13)) == 3600.0
    assert schedule_resync(SyncState(resync_interval=1e9), OcxoModel(drift_rate=0.0)) == 1e9


def test_hourly_resync_keeps_offset_bounded_over_a_day():
    ref = OcxoClock(OcxoModel(drift_rate=0.0))
    slave = OcxoClock(OcxoModel(drift_rate=2e-13, fractional_offset=1e-10))
    state = SyncState(sigma_sync=3e-6)
    rng = np.random.default_rng(0)
    worst = 0.0
    t = 0.0
    while t < 86400.0:
        clock_advance(ref, 60.0)
        clock_advance(slave, 60.0)
        t += 60.0
        drift_part = slave.local_time - ref.local_time - state.accumulated_offset
        worst = max(worst, abs(drift_part))
        if t >= schedule_resync(state, slave.model):
            apply_resync(state, ref, slave, jitter=rng.uniform(-5e-6, 5e-6))
    # after the first retune only the uncorrected aging remains between events
    assert worst <= 3e-6 + 0.5 * 2e-13 * 3600.0 ** 2 + 1e-10 * 3600.0


def test_resync_retunes_rate():
    ref = OcxoClock(OcxoModel(drift_rate=0.0))
    slave = OcxoClock(OcxoModel(drift_rate=0.0, fractional_offset=1e-9))
    state = SyncState()
    clock_advance(ref, 3600.0)
    clock_advance(slave, 3600.0)
    ev = apply_resync(state, ref, slave, jitter=0.0)
    assert ev.offset_before == pytest.approx(3.6e-6)
    assert slave.tune == pytest.approx(-1e-9)
    clock_advance(ref, 3600.0)
    clock_advance(slave, 3600.0)
    assert abs(slave.local_time - ref.local_time) < 1e-12
