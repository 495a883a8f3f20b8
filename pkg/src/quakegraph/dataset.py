"""Labelled, preprocessed event windows cut from (synthetic) continuous data.

Events are represented by their pick sets: one ``(t_p, t_s)`` pair or ``None``
per station.  Windows start a random lead time before an event's earliest P
pick and are labelled from every event whose positive interval overlaps them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .preprocess import DECIMATION, LABEL_EXTENSION, label_series, preprocess_window
from .synth import StationGeometry, event_picks, generate_catalog, generate_network, synth_waveforms

__all__ = [
    "WindowDataset",
    "group_picks",
    "window_starts",
    "window_labels",
    "windows_from_traces",
    "synthetic_dataset",
    "SyntheticSetup",
]


@dataclass
class WindowDataset:
    windows: np.ndarray  # M x N x P x 3, float32
    labels: np.ndarray  # M x N x P, uint8
    start_times: np.ndarray  # M
    station_ids: list[str]
    sample_rate_hz: float = 25.0

    def __len__(self):
        return len(self.windows)

    def subset(self, idx) -> "WindowDataset":
        return WindowDataset(self.windows[idx], self.labels[idx], self.start_times[idx],
                             list(self.station_ids), self.sample_rate_hz)

    def chronological_split(self, n_test: int) -> tuple["WindowDataset", "WindowDataset"]:
        """Oldest windows for training, the latest ``n_test`` held out."""
        if not 0 < n_test < len(self):
            raise ValueError(f"n_test must be in (0, {len(self)}), got {n_test}")
        order = np.argsort(self.start_times, kind="stable")
        return self.subset(order[:-n_test]), self.subset(order[-n_test:])

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            np.savez(fh, windows=self.windows, labels=self.labels, start_times=self.start_times,
                     station_ids=np.array(self.station_ids), sample_rate_hz=self.sample_rate_hz)

    @classmethod
    def load(cls, path) -> "WindowDataset":
        with np.load(path, allow_pickle=False) as z:
            missing = {"windows", "labels", "start_times", "station_ids", "sample_rate_hz"} - set(z.files)
            if missing:
                raise ValueError(f"{path}: dataset missing arrays {sorted(missing)}")
            ds = cls(z["windows"], z["labels"], z["start_times"], [str(s) for s in z["station_ids"]],
                     float(z["sample_rate_hz"]))
        if ds.labels.shape != ds.windows.shape[:3]:
            raise ValueError(f"{path}: labels {ds.labels.shape} do not match windows {ds.windows.shape}")
        return ds


EventPicks = list  # per-station (t_p, t_s) or None


def group_picks(rows, station_ids: list[str], gap_s: float = 30.0) -> list[EventPicks]:
    """Cluster ``(station_id, t_p, t_s)`` rows into events by gaps in P time."""
    index = {sid: i for i, sid in enumerate(station_ids)}
    rows = sorted(rows, key=lambda r: r[1])
    events: list[EventPicks] = []
    last_tp = -np.inf
    for sid, tp, ts in rows:
        if sid not in index:
            raise ValueError(f"pick for unknown station {sid!r}")
        if tp - last_tp > gap_s:
            events.append([None] * len(station_ids))
        if events[-1][index[sid]] is not None:
            raise ValueError(f"station {sid!r} has two picks in one event near t={tp}")
        events[-1][index[sid]] = (tp, ts)
        last_tp = tp
    return events


def _span(picks: EventPicks) -> tuple[float, float]:
    present = [p for p in picks if p is not None]
    lo = min(tp for tp, _ in present)
    hi = max(tp + LABEL_EXTENSION * (ts - tp) for tp, ts in present)
    return lo, hi


def window_starts(events: list[EventPicks], seed: int, lead_s: tuple[float, float] = (0.5, 5.0)) -> np.ndarray:
    """One start per event, a uniform random lead before its earliest P pick."""
    rng = np.random.default_rng([seed, 2])
    leads = rng.uniform(*lead_s, size=len(events))
    return np.array([_span(ev)[0] for ev in events]) - leads


def window_labels(events: list[EventPicks], start: float, P: int, rate: float, n: int) -> np.ndarray:
    labels = np.zeros((n, P), dtype=np.uint8)
    end = start + P / rate
    for picks in events:
        lo, hi = _span(picks)
        if hi >= start and lo < end:
            labels |= label_series(picks, start, P, rate)
    return labels


def windows_from_traces(traces: np.ndarray, sample_rate_hz: float, start_time_s: float,
                        station_ids: list[str], events: list[EventPicks], starts,
                        window_s: float = 20.0) -> WindowDataset:
    """Cut, preprocess and label windows of a continuous ``N x T x 3`` record.

    Windows that do not fit inside the record are dropped.
    """
    rate = sample_rate_hz
    T = int(round(window_s * rate))
    P = T // DECIMATION
    out_rate = rate / DECIMATION
    wins, labs, kept = [], [], []
    for start in starts:
        i0 = int(round((start - start_time_s) * rate))
        if i0 < 0 or i0 + T > traces.shape[1]:
            continue
        t0 = start_time_s + i0 / rate
        x, _ = preprocess_window(traces[:, i0 : i0 + T], rate)
        wins.append(x.astype(np.float32))
        labs.append(window_labels(events, t0, P, out_rate, len(station_ids)))
        kept.append(t0)
    if not wins:
        raise ValueError("no window fits inside the record")
    return WindowDataset(np.stack(wins), np.stack(labs), np.array(kept), list(station_ids), out_rate)


@dataclass
class SyntheticSetup:
    n_stations: int = 13
    extent_km: float = 50.0
    n_events: int = 260
    noise_std: float = 0.1
    window_s: float = 20.0
    sample_rate_hz: float = 200.0
    seed: int = 0
    lead_s: tuple[float, float] = field(default=(0.5, 5.0))


def synthetic_dataset(setup: SyntheticSetup):
    """Event windows generated segment by segment, without a continuous record in memory.

    Returns ``(dataset, geometry, catalog)``.  Windows are in chronological order.
    """
    geometry: StationGeometry = generate_network(setup.n_stations, setup.extent_km, setup.seed)
    catalog = generate_catalog(setup.n_events, setup.extent_km, setup.seed + 1)
    events = [event_picks(geometry, catalog, i) for i in range(len(catalog))]
    rate = setup.sample_rate_hz
    starts = np.round(window_starts(events, setup.seed, setup.lead_s) * rate) / rate
    T = int(round(setup.window_s * rate))
    P = T // DECIMATION
    out_rate = rate / DECIMATION
    wins, labs = [], []
    for i, start in enumerate(starts):
        raw = synth_waveforms(geometry, catalog, setup.window_s, setup.noise_std, seed=setup.seed + 2,
                              start_time_s=start, sample_rate_hz=rate, noise_seed=(setup.seed, i))
        x, _ = preprocess_window(raw.traces[:, :T], rate)
        wins.append(x.astype(np.float32))
        labs.append(window_labels(events, start, P, out_rate, len(geometry)))
    ds = WindowDataset(np.stack(wins), np.stack(labs), np.asarray(starts), list(geometry.station_ids), out_rate)
    return ds, geometry, catalog
