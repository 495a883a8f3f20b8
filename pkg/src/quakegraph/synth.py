"""Synthetic station networks, event catalogs and three-component traces.

Traces are white Gaussian noise plus, for every event and station, two
exponentially decaying sinusoid bursts: a P onset dominant on the vertical
(UD) channel and a stronger S onset dominant on the horizontals.  Arrival
times come from straight rays at constant velocity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "StationGeometry",
    "EventCatalog",
    "RawTraceSet",
    "VP_KM_S",
    "VS_KM_S",
    "generate_network",
    "generate_catalog",
    "arrival_times",
    "event_picks",
    "synth_waveforms",
]

VP_KM_S = 6.0
VS_KM_S = 3.5
COMPONENTS = ("NS", "EW", "UD")

# burst shape constants
S_TO_P_AMPLITUDE = 4.0
P_FREQ_HZ = (4.0, 7.0)
S_FREQ_HZ = (2.5, 5.0)
TAIL_DECAYS = 12.0


@dataclass
class StationGeometry:
    station_ids: list[str]
    xy_km: np.ndarray  # N x 2

    def __post_init__(self):
        self.xy_km = np.asarray(self.xy_km, dtype=float).reshape(-1, 2)
        if len(self.station_ids) != len(self.xy_km):
            raise ValueError("station_ids and coordinates differ in length")
        if any(not s for s in self.station_ids):
            raise ValueError("station ids must be non-empty")
        if len(set(self.station_ids)) != len(self.station_ids):
            raise ValueError("station ids must be unique")

    def __len__(self):
        return len(self.station_ids)


@dataclass
class EventCatalog:
    origin_time_s: np.ndarray
    x_km: np.ndarray
    y_km: np.ndarray
    depth_km: np.ndarray
    amplitude: np.ndarray

    def __post_init__(self):
        for name in ("origin_time_s", "x_km", "y_km", "depth_km", "amplitude"):
            setattr(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=float)))
        n = len(self.origin_time_s)
        if any(len(getattr(self, k)) != n for k in ("x_km", "y_km", "depth_km", "amplitude")):
            raise ValueError("catalog columns differ in length")
        if np.any(np.diff(self.origin_time_s) <= 0):
            raise ValueError("origin times must be strictly increasing")
        if np.any(self.depth_km < 0):
            raise ValueError("depth must be non-negative")
        if np.any(self.amplitude <= 0):
            raise ValueError("amplitude must be positive")

    def __len__(self):
        return len(self.origin_time_s)

    def event(self, i: int) -> tuple[float, float, float, float, float]:
        return (float(self.origin_time_s[i]), float(self.x_km[i]), float(self.y_km[i]),
                float(self.depth_km[i]), float(self.amplitude[i]))

    def subset(self, idx) -> "EventCatalog":
        idx = np.atleast_1d(idx)
        return EventCatalog(self.origin_time_s[idx], self.x_km[idx], self.y_km[idx],
                            self.depth_km[idx], self.amplitude[idx])


@dataclass
class RawTraceSet:
    traces: np.ndarray  # N x T x 3
    sample_rate_hz: float = 200.0
    start_time_s: float = 0.0

    @property
    def n_samples(self) -> int:
        return self.traces.shape[1]


def generate_network(n_stations: int, extent_km: float, seed: int) -> StationGeometry:
    """Place stations uniformly at random in ``[0, extent_km]^2``."""
    if n_stations < 1:
        raise ValueError(f"n_stations must be >= 1, got {n_stations}")
    if extent_km <= 0:
        raise ValueError(f"extent_km must be positive, got {extent_km}")
    rng = np.random.default_rng(seed)
    xy = rng.uniform(0.0, extent_km, size=(n_stations, 2))
    ids = [f"ST{i:02d}" for i in range(n_stations)]
    return StationGeometry(ids, xy)


def generate_catalog(
    n_events: int,
    extent_km: float,
    seed: int,
    start_s: float = 30.0,
    min_gap_s: float = 60.0,
    max_gap_s: float = 90.0,
    depth_km: tuple[float, float] = (5.0, 25.0),
    amplitude: tuple[float, float] = (0.5, 3.0),
) -> EventCatalog:
    """Events with epicentres around the network, separated by ``min_gap_s``..``max_gap_s``."""
    if n_events < 0:
        raise ValueError("n_events must be >= 0")
    rng = np.random.default_rng(seed)
    gaps = rng.uniform(min_gap_s, max_gap_s, size=n_events)
    origin = start_s + np.concatenate([[0.0], np.cumsum(gaps[1:])]) if n_events else np.zeros(0)
    margin = 0.2 * extent_km
    x = rng.uniform(-margin, extent_km + margin, size=n_events)
    y = rng.uniform(-margin, extent_km + margin, size=n_events)
    z = rng.uniform(*depth_km, size=n_events)
    amp = np.exp(rng.uniform(np.log(amplitude[0]), np.log(amplitude[1]), size=n_events))
    return EventCatalog(origin, x, y, z, amp)


def _distance(station_xy, event_xyz) -> float:
    dx = station_xy[0] - event_xyz[0]
    dy = station_xy[1] - event_xyz[1]
    return float(np.sqrt(dx * dx + dy * dy + event_xyz[2] ** 2))


def arrival_times(station, event, vp_km_s: float = VP_KM_S, vs_km_s: float = VS_KM_S) -> tuple[float, float]:
    """P and S arrival times (s) for a station ``(x, y)`` and catalog entry.

    ``event`` is ``(origin_time_s, x_km, y_km, depth_km, ...)``.
    """
    if vp_km_s <= 0 or vs_km_s <= 0:
        raise ValueError("velocities must be positive")
    if vp_km_s <= vs_km_s:
        raise ValueError(f"need vp > vs, got vp={vp_km_s}, vs={vs_km_s}")
    origin, ex, ey, ez = event[:4]
    d = _distance(station, (ex, ey, ez))
    return origin + d / vp_km_s, origin + d / vs_km_s


def event_picks(geometry: StationGeometry, catalog: EventCatalog, i: int,
                vp_km_s: float = VP_KM_S, vs_km_s: float = VS_KM_S) -> list[tuple[float, float]]:
    ev = catalog.event(i)
    return [arrival_times(xy, ev, vp_km_s, vs_km_s) for xy in geometry.xy_km]


def _burst_params(rng: np.random.Generator, n_events: int, n_stations: int) -> dict[str, np.ndarray]:
    shape = (n_events, n_stations)
    return {
        "f_p": rng.uniform(*P_FREQ_HZ, size=shape),
        "f_s": rng.uniform(*S_FREQ_HZ, size=shape),
        "pol": rng.uniform(0.0, 2 * np.pi, size=shape),
    }


def synth_waveforms(
    geometry: StationGeometry,
    catalog: EventCatalog,
    duration_s: float,
    noise_std: float,
    seed: int,
    start_time_s: float = 0.0,
    sample_rate_hz: float = 200.0,
    vp_km_s: float = VP_KM_S,
    vs_km_s: float = VS_KM_S,
    dtype=np.float64,
    noise_seed=None,
) -> RawTraceSet:
    """Noise plus P/S bursts for every event, sampled on ``[start, start + duration)``.

    Burst shapes are drawn from ``seed`` per (event, station) for the whole
    catalog, so a sub-interval of a long record can be regenerated exactly
    (up to the noise) by passing the same catalog and seed.  ``noise_seed``
    overrides the seed of the background noise stream.
    """
    if len(geometry) == 0:
        raise ValueError("geometry has no stations")
    if duration_s <= 0:
        raise ValueError(f"duration_s must be positive, got {duration_s}")
    n = len(geometry)
    T = int(round(duration_s * sample_rate_hz))
    rng = np.random.default_rng(seed)
    shapes = _burst_params(rng, len(catalog), n)
    noise_rng = np.random.default_rng([seed, 1] if noise_seed is None else noise_seed)
    if noise_std > 0:
        traces = noise_rng.normal(0.0, noise_std, size=(n, T, 3)).astype(dtype)
    else:
        traces = np.zeros((n, T, 3), dtype=dtype)

    end_time = start_time_s + T / sample_rate_hz
    for e in range(len(catalog)):
        ev = catalog.event(e)
        for s in range(n):
            sx, sy = geometry.xy_km[s]
            tp, ts = arrival_times((sx, sy), ev, vp_km_s, vs_km_s)
            delta = ts - tp
            tau_p = 0.6 * delta + 0.3
            tau_s = 0.1 * delta + 0.4
            t_end = max(tp + TAIL_DECAYS * tau_p, ts + TAIL_DECAYS * tau_s)
            if t_end < start_time_s or tp >= end_time:
                continue
            i0 = max(0, int(np.ceil((tp - start_time_s) * sample_rate_hz)))
            i1 = min(T, int(np.ceil((t_end - start_time_s) * sample_rate_hz)))
            if i1 <= i0:
                continue
            t = start_time_s + np.arange(i0, i1) / sample_rate_hz
            d = _distance((sx, sy), ev[1:4])
            amp = ev[4] * 10.0 / (10.0 + d)
            baz = np.arctan2(sx - ev[1], sy - ev[2])
            pol = shapes["pol"][e, s]

            rel_p = t - tp
            on_p = rel_p >= 0
            p_wave = np.where(on_p, amp * np.exp(-rel_p / tau_p) * np.sin(2 * np.pi * shapes["f_p"][e, s] * rel_p), 0.0)
            rel_s = t - ts
            on_s = rel_s >= 0
            s_wave = np.where(
                on_s,
                S_TO_P_AMPLITUDE * amp * np.exp(-np.where(on_s, rel_s, 0.0) / tau_s)
                * np.sin(2 * np.pi * shapes["f_s"][e, s] * rel_s),
                0.0,
            )
            # P: radial horizontal + strong vertical; S: transverse horizontal + weak vertical
            p_weights = (0.3 * np.cos(baz), 0.3 * np.sin(baz), 1.0)
            s_weights = (-np.sin(baz + 0.2 * np.sin(pol)), np.cos(baz + 0.2 * np.sin(pol)), 0.3)
            for c in range(3):
                traces[s, i0:i1, c] += p_weights[c] * p_wave + s_weights[c] * s_wave
    return RawTraceSet(traces, sample_rate_hz, start_time_s)
