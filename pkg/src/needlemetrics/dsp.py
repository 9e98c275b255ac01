"""Sampled-signal utilities: PCHIP interpolation, uniform resampling,
zero-phase Butterworth filtering, differentiation, local extrema."""

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.signal import butter, filtfilt

FILTER_ORDER = 2
MIN_FILTER_LEN = 12


class SignalRangeError(ValueError):
    """Query times outside the recorded span (no extrapolation)."""


class SignalLengthError(ValueError):
    """Too few samples for the requested operation."""


class FilterConfigError(ValueError):
    """Invalid filter configuration (e.g. cutoff at or above Nyquist)."""


def pchip_interpolate(t, values, t_query):
    """Shape-preserving cubic Hermite interpolation (Fritsch-Carlson slopes).

    Exact at knots, no overshoot beyond local data extrema. ``values`` may
    be (N,) or (N, k); interpolation runs along the first axis.
    """
    t = np.asarray(t, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    t_query = np.asarray(t_query, dtype=np.float64)
    if t.size < 2:
        raise SignalLengthError("pchip needs at least 2 samples")
    if t_query.size and (t_query.min() < t[0] or t_query.max() > t[-1]):
        raise SignalRangeError(
            f"query times [{t_query.min():.6g}, {t_query.max():.6g}] outside "
            f"recorded span [{t[0]:.6g}, {t[-1]:.6g}]"
        )
    return PchipInterpolator(t, values, axis=0)(t_query)


def uniform_grid(t_start, t_end, rate):
    """Uniform grid from ``t_start`` at exactly 1/rate spacing within span."""
    n = int(np.floor((t_end - t_start) * rate + 1e-9)) + 1
    return t_start + np.arange(n) / rate


def resample_uniform(t, values, rate):
    """Resample onto a uniform grid starting at t[0] via PCHIP."""
    if rate <= 0:
        raise FilterConfigError("rate must be positive")
    t = np.asarray(t, dtype=np.float64)
    if t[-1] - t[0] < 2.0 / rate:
        raise SignalLengthError("signal span shorter than 2 sample intervals")
    grid = uniform_grid(t[0], t[-1], rate)
    return grid, pchip_interpolate(t, values, grid)


def filtfilt_butter2(values, rate, cutoff):
    """Zero-phase 2nd-order low-pass Butterworth (forward-backward).

    Bilinear-transform design with frequency pre-warping; effective
    magnitude response is |H(f)|^2 and net phase is zero. Edge handling
    uses Gustafsson's matched initial conditions, which makes the output
    exactly symmetric under time reversal of the input.
    """
    values = np.asarray(values, dtype=np.float64)
    if not 0.0 < cutoff < rate / 2.0:
        raise FilterConfigError(
            f"cutoff {cutoff} Hz must lie in (0, Nyquist={rate / 2.0}) Hz"
        )
    if values.shape[0] < MIN_FILTER_LEN:
        raise SignalLengthError(
            f"need at least {MIN_FILTER_LEN} samples, got {values.shape[0]}"
        )
    b, a = butter(FILTER_ORDER, cutoff, fs=rate)
    return filtfilt(b, a, values, axis=0, method="gust")


def differentiate(values, dt):
    """Central differences interior, one-sided 2nd-order at the endpoints."""
    values = np.asarray(values, dtype=np.float64)
    if values.shape[0] < 3:
        raise SignalLengthError("differentiation needs at least 3 samples")
    return np.gradient(values, dt, axis=0, edge_order=2)


def local_extrema(values, kind):
    """Indices of strict local minima/maxima; plateaus report their first index.

    Comparison is against the nearest distinct neighbor values on either
    side, so flat tops/bottoms count once. Endpoints never qualify.
    """
    values = np.asarray(values, dtype=np.float64)
    n = values.size
    if n < 3:
        raise SignalLengthError("extrema detection needs at least 3 samples")
    if kind not in ("min", "max"):
        raise ValueError(f"kind must be 'min' or 'max', got {kind!r}")
    sign = 1.0 if kind == "min" else -1.0
    v = sign * values
    out = []
    i = 0
    while i < n:
        j = i
        while j + 1 < n and v[j + 1] == v[i]:
            j += 1
        if i > 0 and j < n - 1 and v[i - 1] > v[i] and v[j + 1] > v[i]:
            out.append(i)
        i = j + 1
    return np.array(out, dtype=int)
