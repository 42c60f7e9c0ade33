import math

import numpy as np
import pytest

from mcuphase.analysis import (FitError, columnar_text, linear_fit, log_taus, loglog_slope,
                               overlapping_adev, welch_psd)


def test_welch_tone_power():
    rate = 1e3
    t = np.arange(200_000) / rate
    x = 2.0 * np.sin(2 * np.pi * 50.0 * t)
    p = welch_psd(x, rate, segment=4096)
    df = p.frequencies[1] - p.frequencies[0]
    assert np.sum(p.values) * df == pytest.approx(2.0, rel=1e-3)


def test_welch_white_level():
    rate = 100.0
    x = np.random.default_rng(0).standard_normal(200_000)
    p = welch_psd(x, rate, segment=1024)
    # one-sided density of unit-variance white noise is 2/rate
    assert p.band_mean(1, 45) == pytest.approx(2.0 / rate, rel=0.05)
    assert p.frequencies[0] > 0


def test_welch_rejects_short_series():
    with pytest.raises(ValueError):
        welch_psd(np.zeros(10), 1.0, segment=64)


def test_adev_white_fm():
    rate = 1.0
    h0 = 2.0
    y = np.random.default_rng(1).standard_normal(400_000) * math.sqrt(h0 * rate / 2)
    taus = [1, 10, 100]
    ad = overlapping_adev(y, rate, taus)
    # white FM: sigma^2 = h0 / (2 tau)
    assert np.allclose(ad.sigma, np.sqrt(h0 / (2 * np.array(taus))), rtol=0.1)
    assert loglog_slope(ad.taus, ad.sigma) == pytest.approx(-0.5, abs=0.05)


def test_adev_constant_frequency_is_zero():
    ad = overlapping_adev(np.full(1000, 3.0), 10.0, [0.1, 1.0])
    assert np.allclose(ad.sigma, 0.0, atol=1e-12)


def test_adev_skips_invalid_taus():
    ad = overlapping_adev(np.zeros(100), 10.0, [0.05, 0.15, 50.0, 1.0])
    assert 0.05 in ad.skipped and 0.15 in ad.skipped and 50.0 in ad.skipped
    assert list(ad.taus) == [1.0]


def test_log_taus_whole_samples():
    taus = log_taus(1e3, 1e-3, 1.0)
    assert taus[0] == pytest.approx(1e-3) and taus[-1] == pytest.approx(1.0)
    assert np.allclose(np.array(taus) * 1e3, np.round(np.array(taus) * 1e3))


def test_linear_fit_exact_line():
    x = np.arange(10.0)
    fit = linear_fit(x, 3 * x - 2)
    assert fit.slope == pytest.approx(3) and fit.intercept == pytest.approx(-2)
    assert fit.slope_uncertainty == pytest.approx(0, abs=1e-12)
    slope, intercept, *_ = fit
    assert slope == fit.slope


def test_linear_fit_degenerate():
    with pytest.raises(FitError):
        linear_fit([1, 1, 1], [1, 2, 3])
    with pytest.raises(FitError):
        linear_fit([1, 2], [1, 2])


def test_columnar_text():
    text = columnar_text({"a": [1, 2], "b": [3, 4]}, fmt="%g")
    assert text == "# a b\n1 3\n2 4\n"
