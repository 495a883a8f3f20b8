"""Stacked spatial-temporal detector and the fixed-graph GCN baseline.

Each layer applies a spatial graph convolution independently at every
timestep, runs a per-station GRU over the resulting sequence, then applies
(inverted) dropout in training mode.  A shared linear head and a sigmoid map
the last hidden state of every station/timestep to a detection probability.
"""

from __future__ import annotations

import hashlib
import io
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import Tensor, matmul, no_grad, sigmoid, transpose
from .gru import GruParams, gru_sequence, init_gru_params
from .slc import SlcLayerParams, _fan_in_uniform, init_slc_params, slc_spatial_forward, static_gcn_forward

__all__ = [
    "Architecture",
    "GcnLayerParams",
    "ModelParams",
    "CheckpointError",
    "dropout_mask",
    "init_model",
    "forward",
    "baseline_gcn_forward",
    "predict",
    "save_checkpoint",
    "load_checkpoint",
    "checkpoint_bytes",
    "checkpoint_hash",
]

SCHEMA_VERSION = 1
_MAGIC = "quakegraph-checkpoint"


@dataclass(frozen=True)
class Architecture:
    n_stations: int
    in_channels: int = 3
    hidden: int = 32
    n_layers: int = 5
    cheb_k: int = 3
    dropout: float = 0.2
    kind: str = "slc"  # "slc" or "baseline"

    def __post_init__(self):
        if self.kind not in ("slc", "baseline"):
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.n_stations < 1 or self.hidden < 1 or self.n_layers < 1 or self.cheb_k < 1:
            raise ValueError(f"invalid architecture {self}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")


@dataclass
class GcnLayerParams:
    """Baseline spatial step: Chebyshev filter over the uniform 1/N graph."""

    theta: list[Tensor]

    def named_tensors(self, prefix: str = "") -> dict[str, Tensor]:
        return {f"{prefix}theta.{k}": th for k, th in enumerate(self.theta)}


@dataclass
class ModelParams:
    arch: Architecture
    layers: list[tuple[SlcLayerParams | GcnLayerParams, GruParams]]
    head_W: Tensor
    head_b: Tensor
    _uniform_adj: Tensor | None = field(default=None, repr=False)

    @property
    def dropout_rate(self) -> float:
        return self.arch.dropout

    def named_tensors(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for i, (spatial, gru) in enumerate(self.layers):
            out.update(spatial.named_tensors(f"layers.{i}.spatial."))
            out.update(gru.named_tensors(f"layers.{i}.gru."))
        out["head.W"] = self.head_W
        out["head.b"] = self.head_b
        return out

    @property
    def dtype(self):
        return self.head_W.data.dtype

    def uniform_adjacency(self) -> Tensor:
        n = self.arch.n_stations
        if self._uniform_adj is None or self._uniform_adj.data.dtype != self.dtype:
            self._uniform_adj = Tensor(np.full((n, n), 1.0 / n, dtype=self.dtype))
        return self._uniform_adj


def init_model(arch: Architecture, seed: int = 0, dtype=np.float32) -> ModelParams:
    rng = np.random.default_rng(seed)
    layers = []
    c_in = arch.in_channels
    for _ in range(arch.n_layers):
        if arch.kind == "slc":
            spatial = init_slc_params(arch.n_stations, c_in, arch.hidden, arch.cheb_k, rng, dtype)
        else:
            spatial = GcnLayerParams(
                [_fan_in_uniform(rng, (c_in, arch.hidden), c_in * arch.cheb_k, dtype) for _ in range(arch.cheb_k)]
            )
        gru = init_gru_params(arch.hidden, arch.hidden, rng, dtype)
        layers.append((spatial, gru))
        c_in = arch.hidden
    head_W = _fan_in_uniform(rng, (arch.hidden, 1), arch.hidden, dtype)
    head_b = Tensor(np.zeros(1, dtype=dtype), requires_grad=True)
    return ModelParams(arch, layers, head_W, head_b)


def _prepare_input(window, params: ModelParams) -> tuple[Tensor, bool]:
    data = window.data if hasattr(window, "data") and not isinstance(window, (np.ndarray, Tensor)) else window
    if isinstance(data, Tensor):
        x = data
    else:
        x = Tensor(np.asarray(data, dtype=params.dtype))
    single = x.ndim == 3
    if single:
        x = x.reshape((1,) + x.shape)
    if x.ndim != 4:
        raise ValueError(f"expected window of shape (N, P, C) or (B, N, P, C), got {x.shape}")
    _, n, p, c = x.shape
    if n != params.arch.n_stations or c != params.arch.in_channels:
        raise ValueError(
            f"window has N={n}, C={c}; model expects N={params.arch.n_stations}, C={params.arch.in_channels}"
        )
    if p < 1:
        raise ValueError("window has no timesteps")
    return x, single


def dropout_mask(shape, rate: float, rng: np.random.Generator) -> np.ndarray:
    """Inverted-dropout multiplier: 0 with probability ``rate``, else ``1 / (1 - rate)``."""
    if not 0 <= rate < 1:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    return (rng.random(shape) >= rate) / (1.0 - rate)


def _run(window, params: ModelParams, mode: str, seed: int) -> Tensor:
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    x, single = _prepare_input(window, params)
    B, N, P, _ = x.shape
    h = x.transpose((0, 2, 1, 3))  # B x P x N x C
    rng = np.random.default_rng(seed) if mode == "train" else None
    rate = params.arch.dropout
    for spatial, gru in params.layers:
        if isinstance(spatial, SlcLayerParams):
            s = slc_spatial_forward(h, spatial)
        else:
            s = static_gcn_forward(h, params.uniform_adjacency(), spatial.theta)
        c = s.shape[-1]
        seq = s.transpose((1, 0, 2, 3)).reshape((P, B * N, c))
        hs = gru_sequence(seq, gru)
        h = hs.reshape((P, B, N, gru.hidden)).transpose((1, 0, 2, 3))
        if rng is not None and rate > 0:
            h = h * dropout_mask(h.shape, rate, rng).astype(params.dtype)
    logits = matmul(h, params.head_W).reshape((B, P, N)) + params.head_b
    probs = sigmoid(transpose(logits))  # B x N x P
    return probs.reshape((N, P)) if single else probs


def forward(window, params: ModelParams, mode: str = "infer", seed: int = 0) -> Tensor:
    """Per-station, per-timestep detection probabilities.

    ``window`` is an ``N x P x 3`` array (or a batch ``B x N x P x 3``); the
    result has shape ``N x P`` (or ``B x N x P``).  Dropout is active only in
    ``"train"`` mode and is drawn from ``seed``.
    """
    return _run(window, params, mode, seed)


def baseline_gcn_forward(window, params: ModelParams, mode: str = "infer", seed: int = 0) -> Tensor:
    """Same contract as :func:`forward` for a model built with ``kind="baseline"``."""
    if params.arch.kind != "baseline":
        raise ValueError("baseline_gcn_forward needs baseline parameters")
    return _run(window, params, mode, seed)


def predict(window, params: ModelParams) -> np.ndarray:
    with no_grad():
        return _run(window, params, "infer", 0).data


# checkpoints -------------------------------------------------------------------


class CheckpointError(ValueError):
    pass


def checkpoint_bytes(params: ModelParams) -> bytes:
    tensors = params.named_tensors()
    lines = [_MAGIC, f"schema_version={SCHEMA_VERSION}"]
    for key, value in asdict(params.arch).items():
        lines.append(f"{key}={value!r}" if isinstance(value, float) else f"{key}={value}")
    lines.append(f"n_blobs={len(tensors)}")
    blobs = []
    for name, t in tensors.items():
        arr = np.ascontiguousarray(t.data, dtype="<f4")
        shape = "x".join(str(s) for s in arr.shape)
        lines.append(f"blob {name} {shape} {arr.nbytes}")
        blobs.append(arr.tobytes())
    lines.append("end_manifest")
    return ("\n".join(lines) + "\n").encode("ascii") + b"".join(blobs)


def checkpoint_hash(params: ModelParams) -> str:
    return hashlib.sha256(checkpoint_bytes(params)).hexdigest()


def save_checkpoint(params: ModelParams, path) -> None:
    Path(path).write_bytes(checkpoint_bytes(params))


_ARCH_TYPES = {"n_stations": int, "in_channels": int, "hidden": int, "n_layers": int,
               "cheb_k": int, "dropout": float, "kind": str}


def load_checkpoint(path, dtype=np.float32) -> ModelParams:
    raw = Path(path).read_bytes()
    buf = io.BytesIO(raw)
    try:
        first = buf.readline().decode("ascii").strip()
    except UnicodeDecodeError:
        raise CheckpointError(f"{path}: not a checkpoint file") from None
    if first != _MAGIC:
        raise CheckpointError(f"{path}: missing checkpoint header")
    meta: dict[str, str] = {}
    blobs: list[tuple[str, tuple[int, ...], int]] = []
    while True:
        line = buf.readline()
        if not line.endswith(b"\n"):
            raise CheckpointError(f"{path}: truncated manifest")
        line = line.decode("ascii", errors="replace").rstrip("\n")
        if line == "end_manifest":
            break
        if line.startswith("blob "):
            try:
                _, name, shape, nbytes = line.split(" ")
                dims = tuple(int(s) for s in shape.split("x")) if shape else ()
                blobs.append((name, dims, int(nbytes)))
            except ValueError:
                raise CheckpointError(f"{path}: malformed blob line {line!r}") from None
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise CheckpointError(f"{path}: malformed manifest line {line!r}")
        meta[key] = value
    version = meta.get("schema_version")
    if version != str(SCHEMA_VERSION):
        raise CheckpointError(f"{path}: schema_version {version!r} unsupported (expected {SCHEMA_VERSION})")
    try:
        arch = Architecture(**{k: typ(meta[k]) for k, typ in _ARCH_TYPES.items()})
    except KeyError as exc:
        raise CheckpointError(f"{path}: manifest missing field {exc.args[0]}") from None
    except ValueError as exc:
        raise CheckpointError(f"{path}: bad architecture field: {exc}") from None
    if int(meta.get("n_blobs", -1)) != len(blobs):
        raise CheckpointError(f"{path}: n_blobs does not match blob list")

    params = init_model(arch, seed=0, dtype=dtype)
    tensors = params.named_tensors()
    if [b[0] for b in blobs] != list(tensors):
        raise CheckpointError(f"{path}: parameter names do not match architecture")
    for name, dims, nbytes in blobs:
        target = tensors[name]
        if dims != target.shape or nbytes != 4 * int(np.prod(dims, dtype=int)):
            raise CheckpointError(f"{path}: blob {name} has shape {dims}, expected {target.shape}")
        chunk = buf.read(nbytes)
        if len(chunk) != nbytes:
            raise CheckpointError(f"{path}: truncated payload in blob {name}")
        target.data = np.frombuffer(chunk, dtype="<f4").reshape(dims).astype(dtype)
    if buf.read(1):
        raise CheckpointError(f"{path}: trailing bytes after payload")
    return params
