"""Sliding-window detection over continuous raw records.

Windows of ``P`` output samples (``8 P`` raw samples) are evaluated every
``S`` output samples.  Each window is preprocessed on its own and the model
state is reset per window; a timestep covered by several windows gets the
arithmetic mean of their probabilities.  A timestep is emitted as soon as no
later window can cover it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator

import numpy as np

from .model import ModelParams, predict
from .preprocess import DECIMATION, preprocess_window

__all__ = ["DetectionRow", "StreamDetector", "windowed_detect", "window_geometry"]


@dataclass(frozen=True)
class DetectionRow:
    time_s: float
    station_id: str
    probability: float


def window_geometry(sample_rate_hz: float, window_s: float, stride_s: float) -> tuple[int, int]:
    """``(P, S)`` in decimated samples; the raw stride must be a whole number of decimation blocks."""
    raw_window = int(round(window_s * sample_rate_hz))
    raw_stride = int(round(stride_s * sample_rate_hz))
    if raw_window % DECIMATION or raw_stride % DECIMATION:
        raise ValueError(f"window and stride must be multiples of {DECIMATION} raw samples")
    P, S = raw_window // DECIMATION, raw_stride // DECIMATION
    if not 1 <= S <= P:
        raise ValueError(f"stride must satisfy 1 <= S <= P, got S={S}, P={P}")
    return P, S


def _window_probs(raw: np.ndarray, params: ModelParams, sample_rate_hz: float) -> np.ndarray:
    x, _ = preprocess_window(raw, sample_rate_hz)
    return predict(x.astype(params.dtype), params).astype(np.float64)


def windowed_detect(traces: np.ndarray, params: ModelParams, sample_rate_hz: float = 200.0,
                    window_s: float = 20.0, stride_s: float = 5.0) -> np.ndarray:
    """Batch evaluation of a whole record; returns ``N x K`` means (NaN where uncovered)."""
    P, S = window_geometry(sample_rate_hz, window_s, stride_s)
    n, T, _ = traces.shape
    K = T // DECIMATION
    total = np.zeros((n, K))
    count = np.zeros(K)
    for w in range(0, K - P + 1, S):
        total[:, w : w + P] += _window_probs(traces[:, w * DECIMATION : (w + P) * DECIMATION], params, sample_rate_hz)
        count[w : w + P] += 1
    with np.errstate(invalid="ignore"):
        return np.where(count > 0, total / np.maximum(count, 1), np.nan)


class StreamDetector:
    """Incremental counterpart of :func:`windowed_detect`.

    Feed raw ``N x t x 3`` chunks with :meth:`push`; each call returns the
    rows that became final.  :meth:`finish` flushes whatever is still pending.
    """

    def __init__(self, params: ModelParams, station_ids: list[str], sample_rate_hz: float = 200.0,
                 window_s: float = 20.0, stride_s: float = 5.0, start_time_s: float = 0.0):
        if len(station_ids) != params.arch.n_stations:
            raise ValueError(
                f"stream has {len(station_ids)} stations, checkpoint expects {params.arch.n_stations}"
            )
        self.params = params
        self.station_ids = list(station_ids)
        self.rate = sample_rate_hz
        self.P, self.S = window_geometry(sample_rate_hz, window_s, stride_s)
        self.start_time_s = start_time_s
        n = len(station_ids)
        # raw ring buffer; holds at least one window
        self._buf = np.zeros((n, 2 * self.P * DECIMATION, 3), dtype=np.float64)
        self._buf_start = 0  # absolute raw index of _buf[:, 0]
        self._buf_len = 0
        self._next_window = 0  # decimated index of next window start
        self._acc_start = 0  # decimated index of _total[:, 0]
        self._total = np.zeros((n, self.P))
        self._count = np.zeros(self.P)
        self.last_emitted_time: float | None = None

    def _append(self, chunk: np.ndarray) -> None:
        need = self._buf_len + chunk.shape[1]
        if need > self._buf.shape[1]:
            grown = np.zeros((self._buf.shape[0], max(need, 2 * self._buf.shape[1]), 3))
            grown[:, : self._buf_len] = self._buf[:, : self._buf_len]
            self._buf = grown
        self._buf[:, self._buf_len : need] = chunk
        self._buf_len = need

    def _emit_until(self, stop: int) -> list[DetectionRow]:
        """Emit decimated indices in ``[acc_start, stop)``."""
        rows = []
        k = stop - self._acc_start
        if k <= 0:
            return rows
        for j in range(k):
            idx = self._acc_start + j
            if self._count[j] == 0:
                continue
            t = self.start_time_s + idx * DECIMATION / self.rate
            for s, sid in enumerate(self.station_ids):
                rows.append(DetectionRow(t, sid, float(self._total[s, j] / self._count[j])))
            self.last_emitted_time = t
        self._total = np.concatenate([self._total[:, k:], np.zeros((len(self.station_ids), k))], axis=1)
        self._count = np.concatenate([self._count[k:], np.zeros(k)])
        self._acc_start = stop
        return rows

    def push(self, chunk) -> list[DetectionRow]:
        chunk = np.asarray(chunk, dtype=np.float64)
        if chunk.ndim != 3 or chunk.shape[0] != len(self.station_ids) or chunk.shape[2] != 3:
            raise ValueError(f"chunk must be {len(self.station_ids)} x t x 3, got {chunk.shape}")
        self._append(chunk)
        rows = []
        W = self.P * DECIMATION
        while True:
            raw0 = self._next_window * DECIMATION
            if raw0 + W > self._buf_start + self._buf_len:
                break
            off = raw0 - self._buf_start
            probs = _window_probs(self._buf[:, off : off + W], self.params, self.rate)
            rel = self._next_window - self._acc_start
            self._total[:, rel : rel + self.P] += probs
            self._count[rel : rel + self.P] += 1
            self._next_window += self.S
            rows.extend(self._emit_until(self._next_window))
            # drop raw samples no future window needs
            drop = self._next_window * DECIMATION - self._buf_start
            if drop > 0:
                self._buf[:, : self._buf_len - drop] = self._buf[:, drop : self._buf_len]
                self._buf_len -= drop
                self._buf_start += drop
        return rows

    def finish(self) -> list[DetectionRow]:
        return self._emit_until(self._acc_start + self.P)


def stream_rows(chunks: Iterable[np.ndarray], detector: StreamDetector) -> Iterator[DetectionRow]:
    for chunk in chunks:
        yield from detector.push(chunk)
    yield from detector.finish()
