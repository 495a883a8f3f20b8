"""Waveform preprocessing, labelling and augmentation.

Per window: demean, zero-phase 2-8 Hz band-pass, normalise each component by
the median over stations of the per-station peak amplitude, then decimate
200 Hz -> 25 Hz by keeping every 8th sample.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np
from scipy import signal

__all__ = [
    "WaveformWindow",
    "demean",
    "bandpass_2_8",
    "bandpass_sos",
    "normalize_window",
    "downsample_8x",
    "preprocess_window",
    "label_series",
    "augment",
    "LABEL_EXTENSION",
]

LOW_HZ = 2.0
HIGH_HZ = 8.0
FILTER_ORDER = 2  # band-pass of order 4 (two second-order sections)
PAD_SAMPLES = 100
DECIMATION = 8
LABEL_EXTENSION = 1.4

PickSet = Sequence[Optional[tuple[float, float]]]


@dataclass
class WaveformWindow:
    data: np.ndarray  # N x P x 3
    sample_rate_hz: float = 25.0
    start_time_s: float = 0.0


def demean(trace) -> np.ndarray:
    trace = np.asarray(trace, dtype=float)
    if trace.size == 0:
        raise ValueError("demean: empty trace")
    return trace - trace.mean(axis=-1, keepdims=True)


@lru_cache(maxsize=8)
def bandpass_sos(sample_rate_hz: float) -> np.ndarray:
    if sample_rate_hz <= 2 * HIGH_HZ:
        raise ValueError(f"sample rate {sample_rate_hz} Hz must exceed {2 * HIGH_HZ} Hz")
    return signal.butter(FILTER_ORDER, [LOW_HZ, HIGH_HZ], btype="bandpass", fs=sample_rate_hz, output="sos")


def bandpass_2_8(trace, sample_rate_hz: float) -> np.ndarray:
    """Zero-phase Butterworth band-pass along the last axis."""
    sos = bandpass_sos(float(sample_rate_hz))
    trace = np.asarray(trace, dtype=float)
    padlen = min(PAD_SAMPLES, trace.shape[-1] - 1)
    if padlen < 1:
        return trace.copy()
    return signal.sosfiltfilt(sos, trace, axis=-1, padtype="even", padlen=padlen)


def normalize_window(data) -> tuple[np.ndarray, list[str]]:
    """Scale each component by the median over stations of per-station max |x|.

    Components whose divisor is zero are returned unscaled and reported in
    the warning list.
    """
    data = np.asarray(data, dtype=float)
    if data.ndim != 3:
        raise ValueError(f"normalize_window: expected N x P x C, got {data.shape}")
    peaks = np.abs(data).max(axis=1)  # N x C
    divisor = np.median(peaks, axis=0)  # C
    warnings = []
    out = data.copy()
    for c, d in enumerate(divisor):
        if d > 0:
            out[:, :, c] /= d
        else:
            warnings.append(f"component {c}: zero median peak amplitude, left unscaled")
    return out, warnings


def downsample_8x(trace) -> np.ndarray:
    trace = np.asarray(trace)
    n = trace.shape[-1]
    if n < DECIMATION:
        raise ValueError(f"downsample_8x: need at least {DECIMATION} samples, got {n}")
    return trace[..., : (n // DECIMATION) * DECIMATION : DECIMATION]


def preprocess_window(raw: np.ndarray, sample_rate_hz: float = 200.0) -> tuple[np.ndarray, list[str]]:
    """Raw ``N x T x 3`` window -> normalised ``N x T//8 x 3`` window at rate/8."""
    raw = np.asarray(raw, dtype=float)
    if raw.ndim != 3:
        raise ValueError(f"expected N x T x 3 raw window, got {raw.shape}")
    x = np.moveaxis(raw, 1, -1)  # N x 3 x T
    x = demean(x)
    x = bandpass_2_8(x, sample_rate_hz)
    x, warnings = normalize_window(np.moveaxis(x, -1, 1))
    x = downsample_8x(np.moveaxis(x, 1, -1))
    return np.ascontiguousarray(np.moveaxis(x, -1, 1)), warnings


def label_series(picks: PickSet, window_start_s: float, P: int, sample_rate_hz: float) -> np.ndarray:
    """Binary ``N x P`` labels: 1 on ``[t_p, t_p + 1.4 (t_s - t_p)]``, clipped to the window."""
    if P < 1:
        raise ValueError(f"P must be >= 1, got {P}")
    labels = np.zeros((len(picks), P), dtype=np.uint8)
    for i, pick in enumerate(picks):
        if pick is None:
            continue
        tp, ts = pick
        if not ts > tp:
            raise ValueError(f"station {i}: S pick {ts} is not after P pick {tp}")
        end = tp + LABEL_EXTENSION * (ts - tp)
        first = int(np.ceil((tp - window_start_s) * sample_rate_hz - 1e-9))
        last = int(np.floor((end - window_start_s) * sample_rate_hz + 1e-9))
        first, last = max(first, 0), min(last, P - 1)
        if first <= last:
            labels[i, first : last + 1] = 1
    return labels


def _shift(a: np.ndarray, s: int, axis: int) -> np.ndarray:
    out = np.zeros_like(a)
    n = a.shape[axis]
    src = [slice(None)] * a.ndim
    dst = [slice(None)] * a.ndim
    if s >= 0:
        src[axis], dst[axis] = slice(0, n - s), slice(s, n)
    else:
        src[axis], dst[axis] = slice(-s, n), slice(0, n + s)
    out[tuple(dst)] = a[tuple(src)]
    return out


def augment(data, labels, max_shift_samples: int, seed, noise_mean: float = 0.001):
    """Random joint time shift (zero-filled) plus Gaussian noise of random std.

    The shift is uniform on ``[-max_shift, max_shift]``; the noise std is drawn
    from an exponential distribution with mean ``noise_mean``.
    """
    data = np.asarray(data)
    labels = np.asarray(labels)
    P = data.shape[1]
    if not 0 <= max_shift_samples < P:
        raise ValueError(f"max_shift_samples must be in [0, {P}), got {max_shift_samples}")
    rng = np.random.default_rng(seed)
    shift = int(rng.integers(-max_shift_samples, max_shift_samples + 1))
    sigma = rng.exponential(noise_mean) if noise_mean > 0 else 0.0
    out = _shift(data, shift, axis=1)
    out_labels = _shift(labels, shift, axis=1)
    if sigma > 0:
        out = out + rng.normal(0.0, sigma, size=out.shape).astype(out.dtype)
    return out, out_labels
