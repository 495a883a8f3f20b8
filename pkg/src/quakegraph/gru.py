"""Gated recurrent unit run independently per station with shared weights.

Convention::

    z  = sigmoid(W_z x + U_z h + b_z)
    r  = sigmoid(W_r x + U_r h + b_r)
    h~ = tanh(W_h x + U_h (r * h) + b_h)
    h' = (1 - z) * h + z * h~
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, gru_sequence_op, matmul, sigmoid, tanh

__all__ = ["GruParams", "gru_cell", "gru_sequence", "init_gru_params"]

_NAMES = ("W_z", "W_r", "W_h", "U_z", "U_r", "U_h", "b_z", "b_r", "b_h")


@dataclass
class GruParams:
    W_z: Tensor
    W_r: Tensor
    W_h: Tensor
    U_z: Tensor
    U_r: Tensor
    U_h: Tensor
    b_z: Tensor
    b_r: Tensor
    b_h: Tensor

    @property
    def hidden(self) -> int:
        return self.U_z.shape[0]

    @property
    def c_in(self) -> int:
        return self.W_z.shape[1]

    def as_tuple(self) -> tuple[Tensor, ...]:
        return tuple(getattr(self, n) for n in _NAMES)

    def named_tensors(self, prefix: str = "") -> dict[str, Tensor]:
        return {f"{prefix}{n}": getattr(self, n) for n in _NAMES}

    def validate(self) -> None:
        h, c = self.hidden, self.c_in
        for n in ("W_z", "W_r", "W_h"):
            if getattr(self, n).shape != (h, c):
                raise ValueError(f"{n} has shape {getattr(self, n).shape}, expected {(h, c)}")
        for n in ("U_z", "U_r", "U_h"):
            if getattr(self, n).shape != (h, h):
                raise ValueError(f"{n} has shape {getattr(self, n).shape}, expected {(h, h)}")
        for n in ("b_z", "b_r", "b_h"):
            if getattr(self, n).shape != (h,):
                raise ValueError(f"{n} has shape {getattr(self, n).shape}, expected {(h,)}")


def _t(a) -> Tensor:
    return a if isinstance(a, Tensor) else Tensor(np.asarray(a, dtype=float))


def gru_cell(x_t, h_prev, params: GruParams) -> Tensor:
    """One GRU step; ``x_t`` is ``(..., C_in)`` and ``h_prev`` is ``(..., H)``."""
    x_t, h_prev = _t(x_t), _t(h_prev)
    if x_t.shape[-1] != params.c_in or h_prev.shape[-1] != params.hidden:
        raise ValueError(
            f"gru_cell: x {x_t.shape} / h {h_prev.shape} do not match C_in={params.c_in}, H={params.hidden}"
        )
    p = params
    z = sigmoid(matmul(x_t, p.W_z.T) + matmul(h_prev, p.U_z.T) + p.b_z)
    r = sigmoid(matmul(x_t, p.W_r.T) + matmul(h_prev, p.U_r.T) + p.b_r)
    cand = tanh(matmul(x_t, p.W_h.T) + matmul(r * h_prev, p.U_h.T) + p.b_h)
    return (1.0 - z) * h_prev + z * cand


def gru_sequence(X_seq, params: GruParams) -> Tensor:
    """Apply the GRU along axis 0 of ``X_seq`` (``P x N x C_in``) from ``h0 = 0``.

    Returns every hidden state, shape ``P x N x H``.
    """
    X_seq = _t(X_seq)
    if X_seq.ndim != 3:
        raise ValueError(f"gru_sequence: expected P x N x C input, got {X_seq.shape}")
    if X_seq.shape[0] < 1:
        raise ValueError("gru_sequence: need at least one timestep")
    if X_seq.shape[-1] != params.c_in:
        raise ValueError(f"gru_sequence: input channels {X_seq.shape[-1]} != {params.c_in}")
    return gru_sequence_op(X_seq, *params.as_tuple())


def init_gru_params(c_in: int, hidden: int, rng: np.random.Generator, dtype=np.float32) -> GruParams:
    bound = 1.0 / np.sqrt(hidden)

    def u(shape):
        return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype), requires_grad=True)

    params = GruParams(
        W_z=u((hidden, c_in)), W_r=u((hidden, c_in)), W_h=u((hidden, c_in)),
        U_z=u((hidden, hidden)), U_r=u((hidden, hidden)), U_h=u((hidden, hidden)),
        b_z=u((hidden,)), b_r=u((hidden,)), b_h=u((hidden,)),
    )
    params.validate()
    return params
