"""Spectral density, Allan deviation and linear fits of acquired series."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import signal


class FitError(ValueError):
    pass


@dataclass
class PsdEstimate:
    frequencies: np.ndarray
    values: np.ndarray
    segment_length: int
    overlap: float
    window: str = "hann"

    def band(self, f_lo: float, f_hi: float):
        sel = (self.frequencies >= f_lo) & (self.frequencies <= f_hi)
        return self.frequencies[sel], self.values[sel]

    def band_mean(self, f_lo: float, f_hi: float) -> float:
        return float(np.mean(self.band(f_lo, f_hi)[1]))


def welch_psd(series, rate: float, segment: int = 4096, overlap: float = 0.5,
              detrend="constant") -> PsdEstimate:
    """One-sided Welch density with Hann windows.

    Calibrated so a tone of amplitude ``a`` integrates to ``a**2/2``.
    The DC bin is dropped to keep log-frequency plots well defined.
    """
    x = np.asarray(series, dtype=float)
    segment = int(segment)
    if segment < 2 or len(x) < segment:
        raise ValueError(f"series of {len(x)} samples shorter than segment {segment}")
    if not 0.0 <= overlap < 1.0:
        raise ValueError("overlap must lie in [0, 1)")
    f, p = signal.welch(x, fs=rate, window="hann", nperseg=segment,
                        noverlap=int(round(overlap * segment)), detrend=detrend,
                        return_onesided=True, scaling="density")
    return PsdEstimate(f[1:], p[1:], segment, overlap)


@dataclass
class AdevEstimate:
    taus: np.ndarray
    sigma: np.ndarray
    counts: np.ndarray
    skipped: list


def overlapping_adev(freq_series, rate: float, taus) -> AdevEstimate:
    """Overlapping Allan deviation of a frequency series (same units as input).

    Each tau must be a whole number of samples; taus leaving fewer than three
    clusters are skipped and listed in ``skipped``.
    """
    y = np.asarray(freq_series, dtype=float)
    n = len(y)
    x = np.concatenate([[0.0], np.cumsum(y)]) / rate  # phase (units * s)
    out_t, out_s, out_c, skipped = [], [], [], []
    for tau in taus:
        m = tau * rate
        mi = int(round(m))
        if mi < 1 or abs(m - mi) > 1e-6 * max(m, 1.0):
            skipped.append(tau)
            continue
        if n < 3 * mi:
            skipped.append(tau)
            continue
        d = x[2 * mi:] - 2.0 * x[mi:-mi] + x[:-2 * mi]
        var = np.sum(d * d) / (2.0 * len(d) * (mi / rate) ** 2)
        out_t.append(mi / rate)
        out_s.append(math.sqrt(var))
        out_c.append(len(d))
    return AdevEstimate(np.array(out_t), np.array(out_s), np.array(out_c, dtype=np.int64), skipped)


def log_taus(rate: float, tau_min: float, tau_max: float, per_decade: int = 5):
    """Log-spaced taus rounded to whole samples (duplicates removed)."""
    m = np.unique(np.rint(np.logspace(math.log10(tau_min * rate), math.log10(tau_max * rate),
                                      int(per_decade * math.log10(tau_max / tau_min)) + 1)))
    return list(m[m >= 1] / rate)


@dataclass
class LinearFit:
    slope: float
    intercept: float
    slope_uncertainty: float
    intercept_uncertainty: float

    def __iter__(self):
        return iter((self.slope, self.intercept, self.slope_uncertainty, self.intercept_uncertainty))


def linear_fit(x, y) -> LinearFit:
    """Ordinary least squares ``y = slope*x + intercept`` with standard errors."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = len(x)
    if n < 3 or len(y) != n:
        raise FitError("need at least 3 matching points")
    xm = x.mean()
    sxx = np.sum((x - xm) ** 2)
    if not sxx > 0 or not np.isfinite(sxx):
        raise FitError("degenerate abscissa")
    ym = y.mean()
    slope = np.sum((x - xm) * (y - ym)) / sxx
    intercept = ym - slope * xm
    resid = y - (slope * x + intercept)
    s2 = np.sum(resid ** 2) / (n - 2)
    return LinearFit(float(slope), float(intercept), float(math.sqrt(s2 / sxx)),
                     float(math.sqrt(s2 * (1.0 / n + xm ** 2 / sxx))))


def loglog_slope(x, y) -> float:
    return linear_fit(np.log10(x), np.log10(y)).slope


def columnar_text(columns: dict, fmt: str = "%.12e") -> str:
    """Whitespace-separated columns with a ``#`` header line."""
    names = list(columns)
    data = np.column_stack([np.asarray(columns[k], dtype=float) for k in names])
    lines = ["# " + " ".join(names)]
    lines += [" ".join(fmt % v for v in row) for row in data]
    return "\n".join(lines) + "\n"
