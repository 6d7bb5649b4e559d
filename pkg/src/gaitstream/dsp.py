"""Signal conditioning for sEMG and IMU channels."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import signal

from .errors import DegenerateScaleWarning, DesignError, InputError, InterpolationError, LengthError

log = logging.getLogger(__name__)

DEFAULT_ORDER = 4
ROBUST_SIGMA = 1.4826  # MAD -> sigma for Gaussian data
MEAN_AD_SIGMA = 1.2533  # mean absolute deviation -> sigma for Gaussian data


@dataclass(frozen=True)
class FilterCoefficients:
    b: tuple
    a: tuple
    low_hz: float | None
    high_hz: float | None
    order: int
    rate_hz: float

    @property
    def design(self) -> dict:
        return {"low_hz": self.low_hz, "high_hz": self.high_hz, "order": self.order, "rate_hz": self.rate_hz}

    @property
    def poles(self) -> np.ndarray:
        return np.roots(self.a)

    def response(self, freqs_hz) -> np.ndarray:
        """Complex frequency response H(e^{jw}) evaluated directly from b, a."""
        z = np.exp(1j * 2 * np.pi * np.asarray(freqs_hz, dtype=float) / self.rate_hz)
        # b, a are in descending powers of z^-1
        zi = 1.0 / z
        num = np.polyval(self.b[::-1], zi)
        den = np.polyval(self.a[::-1], zi)
        return num / den

    def gain_db(self, freqs_hz) -> np.ndarray:
        return 20 * np.log10(np.abs(self.response(freqs_hz)))


def _finish(b, a, low, high, order, rate_hz) -> FilterCoefficients:
    b = np.asarray(b, dtype=float) / a[0]
    a = np.asarray(a, dtype=float) / a[0]
    if np.max(np.abs(np.roots(a))) > 1 - 1e-8:
        raise DesignError(f"unstable design for {low}-{high} Hz order {order} at {rate_hz} Hz")
    return FilterCoefficients(tuple(b.tolist()), tuple(a.tolist()), low, high, order, rate_hz)


@lru_cache(maxsize=64)
def design_bandpass(low_hz: float, high_hz: float, order: int = DEFAULT_ORDER, rate_hz: float = 2000.0):
    """Butterworth band-pass; ``order`` is the per-edge prototype order."""
    nyq = rate_hz / 2
    if not low_hz > 0:
        raise DesignError(f"low cut-off must be > 0, got {low_hz}")
    if not high_hz < nyq:
        raise DesignError(f"high cut-off {high_hz} Hz must be below Nyquist ({nyq} Hz)")
    if not low_hz < high_hz:
        raise DesignError(f"low cut-off {low_hz} must be below high cut-off {high_hz}")
    if order not in (2, 4, 6, 8):
        raise DesignError(f"order must be one of 2, 4, 6, 8, got {order}")
    b, a = signal.butter(order, [low_hz, high_hz], btype="bandpass", fs=rate_hz)
    return _finish(b, a, float(low_hz), float(high_hz), order, float(rate_hz))


@lru_cache(maxsize=64)
def design_lowpass(cutoff_hz: float, order: int = DEFAULT_ORDER, rate_hz: float = 200.0):
    if not 0 < cutoff_hz < rate_hz / 2:
        raise DesignError(f"cut-off {cutoff_hz} Hz must be in (0, {rate_hz / 2})")
    if order not in (2, 4, 6, 8):
        raise DesignError(f"order must be one of 2, 4, 6, 8, got {order}")
    b, a = signal.butter(order, cutoff_hz, btype="lowpass", fs=rate_hz)
    return _finish(b, a, None, float(cutoff_hz), order, float(rate_hz))


def _check_finite(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise InputError("expected a 1-D sample sequence")
    if not np.all(np.isfinite(x)):
        raise InputError("input contains non-finite samples")
    return x


def apply_filter(x, c: FilterCoefficients, mode: str = "zero_phase") -> np.ndarray:
    """Filter ``x`` causally (direct-form recurrence from rest) or with zero phase.

    Zero-phase output averages forward-backward and backward-forward passes,
    each with odd-reflection padding of ``3 * order`` samples, which makes the
    result exactly time-reversal symmetric.
    """
    x = _check_finite(x)
    b, a = np.asarray(c.b), np.asarray(c.a)
    if mode == "causal":
        return signal.lfilter(b, a, x)
    if mode != "zero_phase":
        raise ValueError(f"mode must be 'causal' or 'zero_phase', got {mode!r}")
    padlen = 3 * c.order
    if len(x) <= padlen:
        raise LengthError(f"zero-phase filtering needs more than {padlen} samples, got {len(x)}")
    fb = signal.filtfilt(b, a, x, padtype="odd", padlen=padlen)
    bf = signal.filtfilt(b, a, x[::-1], padtype="odd", padlen=padlen)[::-1]
    return 0.5 * (fb + bf)


class FilterState:
    """Delay-line state for chunked causal filtering of one channel.

    Feeding a signal in any chunking reproduces ``apply_filter(x, c, "causal")``
    bit for bit.
    """

    def __init__(self, c: FilterCoefficients):
        self.coefficients = c
        self._b = np.asarray(c.b)
        self._a = np.asarray(c.a)
        self.zi = np.zeros(max(len(c.a), len(c.b)) - 1)

    def reset(self) -> None:
        self.zi[:] = 0.0

    def process(self, chunk) -> np.ndarray:
        chunk = _check_finite(chunk)
        y, self.zi = signal.lfilter(self._b, self._a, chunk, zi=self.zi)
        return y


# ---------------------------------------------------------------------------
# gaps and outliers


def find_runs(mask) -> list:
    """[(start, stop), ...] for each run of True values."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return []
    d = np.diff(np.concatenate([[0], mask.view(np.int8), [0]]))
    return list(zip(np.flatnonzero(d == 1).tolist(), np.flatnonzero(d == -1).tolist()))


def interpolate_gaps(x, gap_mask, poly_order: int = 3, max_gap: int = 200) -> np.ndarray:
    """Fill masked samples by local least-squares polynomial fits.

    Each interior gap of at most ``max_gap`` samples is filled from a degree
    ``poly_order`` fit to the ``2 * (poly_order + 1)`` nearest valid samples,
    half on each side where available. Edge gaps repeat the nearest valid
    value. Longer gaps are left as NaN and logged.
    """
    x = np.array(x, dtype=np.float64)
    gap_mask = np.asarray(gap_mask, dtype=bool)
    if x.shape != gap_mask.shape:
        raise InputError("x and gap_mask lengths differ")
    if poly_order < 1:
        raise InterpolationError("poly_order must be >= 1")
    if not gap_mask.any():
        return x
    valid = np.flatnonzero(~gap_mask)
    if len(valid) < poly_order + 1:
        raise InterpolationError(
            f"need at least {poly_order + 1} valid samples, found {len(valid)}"
        )
    n = len(x)
    k = 2 * (poly_order + 1)
    unfilled = []
    out = x.copy()
    for start, stop in find_runs(gap_mask):
        if start == 0:
            out[start:stop] = x[valid[0]]
            continue
        if stop == n:
            out[start:stop] = x[valid[-1]]
            continue
        if stop - start > max_gap:
            out[start:stop] = np.nan
            unfilled.append((start, stop))
            continue
        pos = np.searchsorted(valid, start)
        left = valid[max(0, pos - k):pos][::-1]  # nearest first
        right = valid[pos:pos + k]
        half = k // 2
        n_left = min(len(left), max(half, k - len(right)))
        n_right = min(len(right), k - n_left)
        idx = np.concatenate([left[:n_left][::-1], right[:n_right]])
        centre = 0.5 * (start + stop - 1)
        scale = max(1.0, 0.5 * (idx[-1] - idx[0]))
        coef = np.polynomial.polynomial.polyfit((idx - centre) / scale, x[idx], poly_order)
        t = (np.arange(start, stop) - centre) / scale
        out[start:stop] = np.polynomial.polynomial.polyval(t, coef)
    if unfilled:
        log.warning("left %d gap(s) longer than %d samples unfilled: %s", len(unfilled), max_gap, unfilled)
    return out


def remove_outliers(x, threshold_sigma: float = 5.0):
    """Flag samples beyond ``threshold_sigma`` robust z-scores and interpolate them.

    Returns ``(cleaned, outlier_mask)``. The robust scale is 1.4826 * MAD; when
    the MAD is zero the scale falls back to 1.2533 * mean absolute deviation
    from the median and a :class:`DegenerateScaleWarning` is issued.
    """
    x = _check_finite(x)
    if not threshold_sigma > 0:
        raise ValueError("threshold_sigma must be positive")
    if len(x) < 16:
        raise LengthError(f"outlier removal needs at least 16 samples, got {len(x)}")
    med = np.median(x)
    dev = np.abs(x - med)
    mad = np.median(dev)
    if mad > 0:
        mask = dev > threshold_sigma * ROBUST_SIGMA * mad
    elif np.any(dev > 0):
        warnings.warn("MAD is zero; using mean absolute deviation threshold", DegenerateScaleWarning, stacklevel=2)
        mask = dev > threshold_sigma * MEAN_AD_SIGMA * np.mean(dev)
    else:
        mask = np.zeros(len(x), dtype=bool)
    if not mask.any():
        return x.copy(), mask
    return interpolate_gaps(x, mask, poly_order=1, max_gap=len(x)), mask


def running_median(x, width: int) -> np.ndarray:
    """Centered running median with edge replication (odd ``width``)."""
    x = np.asarray(x, dtype=np.float64)
    half = width // 2
    padded = np.pad(x, half, mode="edge")
    return np.median(np.lib.stride_tricks.sliding_window_view(padded, 2 * half + 1), axis=1)
