"""On-disk formats: waveform container, CSV tables and the INI run configuration.

Waveform container
------------------
A text header, one ``key=value`` per line, closed by ``end_header``::

    quakegraph-waveforms
    schema_version=1
    n_stations=13
    n_components=3
    sample_rate_hz=200.0
    start_time_s=0.0
    n_samples=4000
    station_ids=ST00,ST01,...
    end_header

followed by ``n_stations * n_samples * 3`` little-endian float32 values,
station-major, then time, then component.  Several containers may be
concatenated in one stream (used for chunked stdin input).
"""

from __future__ import annotations

import configparser
import csv
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Iterator

import numpy as np

from .synth import EventCatalog, StationGeometry

__all__ = [
    "WaveformContainer",
    "FormatError",
    "write_container",
    "read_container",
    "iter_containers",
    "container_bytes",
    "write_geometry",
    "read_geometry",
    "write_catalog",
    "read_catalog",
    "write_picks",
    "read_picks",
    "write_rows",
    "fmt",
    "DEFAULT_CONFIG",
    "load_config",
]

_MAGIC = "quakegraph-waveforms"
SCHEMA_VERSION = 1


class FormatError(ValueError):
    pass


def fmt(x: float) -> str:
    """Shortest decimal string that round-trips to the same float."""
    return repr(float(x))


@dataclass
class WaveformContainer:
    traces: np.ndarray  # N x T x 3
    sample_rate_hz: float
    start_time_s: float
    station_ids: list[str]

    def __post_init__(self):
        self.traces = np.asarray(self.traces, dtype=np.float32)
        if self.traces.ndim != 3 or self.traces.shape[2] != 3:
            raise FormatError(f"traces must be N x T x 3, got {self.traces.shape}")
        if len(self.station_ids) != self.traces.shape[0]:
            raise FormatError("station_ids length does not match trace count")
        if any("," in s or not s for s in self.station_ids):
            raise FormatError("station ids must be non-empty and comma-free")


def container_bytes(c: WaveformContainer) -> bytes:
    n, t, k = c.traces.shape
    header = [
        _MAGIC,
        f"schema_version={SCHEMA_VERSION}",
        f"n_stations={n}",
        f"n_components={k}",
        f"sample_rate_hz={fmt(c.sample_rate_hz)}",
        f"start_time_s={fmt(c.start_time_s)}",
        f"n_samples={t}",
        f"station_ids={','.join(c.station_ids)}",
        "end_header",
    ]
    payload = np.ascontiguousarray(c.traces, dtype="<f4").tobytes()
    return ("\n".join(header) + "\n").encode("ascii") + payload


def write_container(path, c: WaveformContainer) -> None:
    Path(path).write_bytes(container_bytes(c))


def _read_one(stream: BinaryIO, name: str) -> WaveformContainer | None:
    first = stream.readline()
    if not first:
        return None
    if first.decode("ascii", errors="replace").strip() != _MAGIC:
        raise FormatError(f"{name}: not a waveform container")
    meta = {}
    while True:
        line = stream.readline()
        if not line.endswith(b"\n"):
            raise FormatError(f"{name}: truncated header")
        text = line.decode("ascii", errors="replace").rstrip("\n")
        if text == "end_header":
            break
        key, sep, value = text.partition("=")
        if not sep:
            raise FormatError(f"{name}: malformed header line {text!r}")
        meta[key] = value
    try:
        if meta["schema_version"] != str(SCHEMA_VERSION):
            raise FormatError(f"{name}: unsupported schema_version {meta['schema_version']!r}")
        n = int(meta["n_stations"])
        k = int(meta["n_components"])
        t = int(meta["n_samples"])
        rate = float(meta["sample_rate_hz"])
        start = float(meta["start_time_s"])
        ids = meta["station_ids"].split(",") if meta["station_ids"] else []
    except KeyError as exc:
        raise FormatError(f"{name}: header missing field {exc.args[0]}") from None
    except ValueError as exc:
        raise FormatError(f"{name}: bad header value ({exc})") from None
    if k != 3:
        raise FormatError(f"{name}: n_components must be 3, got {k}")
    if len(ids) != n:
        raise FormatError(f"{name}: station_ids lists {len(ids)} stations, n_stations={n}")
    nbytes = n * t * k * 4
    payload = stream.read(nbytes)
    if len(payload) != nbytes:
        raise FormatError(f"{name}: payload has {len(payload)} bytes, expected {nbytes}")
    traces = np.frombuffer(payload, dtype="<f4").reshape(n, t, k).astype(np.float32)
    return WaveformContainer(traces, rate, start, ids)


def iter_containers(stream: BinaryIO, name: str = "<stream>") -> Iterator[WaveformContainer]:
    while True:
        c = _read_one(stream, name)
        if c is None:
            return
        yield c


def read_container(path) -> WaveformContainer:
    with open(path, "rb") as fh:
        c = _read_one(fh, str(path))
        if c is None:
            raise FormatError(f"{path}: empty file")
        if fh.read(1):
            raise FormatError(f"{path}: trailing bytes after payload")
    return c


# CSV tables -------------------------------------------------------------------


def write_rows(path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])


def _read_table(path, expected: list[str]) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != expected:
            raise FormatError(f"{path}: expected columns {','.join(expected)}, got {reader.fieldnames}")
        return list(reader)


def _float(path, row: dict, key: str) -> float:
    try:
        return float(row[key])
    except (TypeError, ValueError):
        raise FormatError(f"{path}: bad value for {key}: {row[key]!r}") from None


def write_geometry(path, g: StationGeometry) -> None:
    write_rows(path, ["station_id", "x_km", "y_km"],
               ((sid, float(x), float(y)) for sid, (x, y) in zip(g.station_ids, g.xy_km)))


def read_geometry(path) -> StationGeometry:
    rows = _read_table(path, ["station_id", "x_km", "y_km"])
    return StationGeometry([r["station_id"] for r in rows],
                           [(_float(path, r, "x_km"), _float(path, r, "y_km")) for r in rows])


_CATALOG_COLS = ["origin_time_s", "x_km", "y_km", "depth_km", "amplitude"]


def write_catalog(path, c: EventCatalog) -> None:
    cols = [getattr(c, k) for k in _CATALOG_COLS]
    write_rows(path, _CATALOG_COLS, (tuple(float(col[i]) for col in cols) for i in range(len(c))))


def read_catalog(path) -> EventCatalog:
    rows = _read_table(path, _CATALOG_COLS)
    return EventCatalog(*[[_float(path, r, k) for r in rows] for k in _CATALOG_COLS])


def write_picks(path, rows) -> None:
    """Rows of ``(station_id, t_p_s, t_s_s)``."""
    write_rows(path, ["station_id", "t_p_s", "t_s_s"], rows)


def read_picks(path) -> list[tuple[str, float, float]]:
    rows = _read_table(path, ["station_id", "t_p_s", "t_s_s"])
    return [(r["station_id"], _float(path, r, "t_p_s"), _float(path, r, "t_s_s")) for r in rows]


# configuration ------------------------------------------------------------------

DEFAULT_CONFIG: dict[str, dict[str, object]] = {
    "synth": {
        "n_stations": 13,
        "extent_km": 50.0,
        "n_events": 260,
        "noise_std": 0.1,
        "sample_rate_hz": 200.0,
        "min_gap_s": 60.0,
        "max_gap_s": 90.0,
        "seed": 0,
    },
    "preprocess": {
        "window_s": 20.0,
        "lead_min_s": 0.5,
        "lead_max_s": 5.0,
        "n_test": 60,
        "seed": 0,
    },
    "model": {
        "kind": "slc",
        "hidden": 32,
        "n_layers": 5,
        "cheb_k": 3,
        "dropout": 0.2,
    },
    "train": {
        "learning_rate": 1e-3,
        "batch_size": 8,
        "epochs": 10,
        "seed": 0,
        "augment": True,
        "max_shift_fraction": 0.25,
        "noise_mean": 0.001,
        "pos_weight": 1.0,
    },
    "eval": {
        "mdps": "0.55,0.6,0.71",
    },
    "stream": {
        "window_s": 20.0,
        "stride_s": 5.0,
    },
}


def _coerce(section: str, key: str, raw: str, default):
    try:
        if isinstance(default, bool):
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return type(default)(raw.strip())
    except ValueError:
        raise FormatError(f"config [{section}] {key}: cannot parse {raw!r} as {type(default).__name__}") from None


def load_config(path=None, text: str | None = None) -> dict[str, dict[str, object]]:
    """Defaults overlaid with an INI file; unknown sections or keys are errors."""
    cfg = {s: dict(v) for s, v in DEFAULT_CONFIG.items()}
    if path is None and text is None:
        return cfg
    parser = configparser.ConfigParser()
    try:
        if text is not None:
            parser.read_string(text)
        else:
            with open(path) as fh:
                parser.read_file(fh)
    except configparser.Error as exc:
        raise FormatError(f"config {path or '<text>'}: {exc}") from None
    for section in parser.sections():
        if section not in cfg:
            raise FormatError(f"config: unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in cfg[section]:
                raise FormatError(f"config [{section}]: unknown key {key!r}")
            cfg[section][key] = _coerce(section, key, raw, DEFAULT_CONFIG[section][key])
    return cfg


def parse_float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise FormatError(f"cannot parse number list {text!r}") from None
