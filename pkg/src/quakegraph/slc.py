"""Spatial half of the spectral structure-learning convolution.

A layer mixes node features through Chebyshev polynomials of two adjacencies:
a learned static one ``W_s`` and a dynamic one computed bilinearly from the
layer input, ``X W_phi X^T``.  Both are symmetrized and scaled to unit
spectral radius before the recursion.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, matmul, relu, spectral_normalize, transpose

__all__ = [
    "SlcLayerParams",
    "cheb_basis",
    "cheb_apply",
    "dynamic_adjacency",
    "normalize_adjacency",
    "slc_spatial_forward",
    "static_gcn_forward",
    "init_slc_params",
]


@dataclass
class SlcLayerParams:
    W_s: Tensor
    W_phi: Tensor
    theta_s: list[Tensor]
    theta_d: list[Tensor]

    @property
    def K(self) -> int:
        return len(self.theta_s)

    @property
    def n_nodes(self) -> int:
        return self.W_s.shape[0]

    @property
    def c_in(self) -> int:
        return self.W_phi.shape[0]

    @property
    def c_out(self) -> int:
        return self.theta_s[0].shape[1]

    def named_tensors(self, prefix: str = "") -> dict[str, Tensor]:
        out = {f"{prefix}W_s": self.W_s, f"{prefix}W_phi": self.W_phi}
        for k, th in enumerate(self.theta_s):
            out[f"{prefix}theta_s.{k}"] = th
        for k, th in enumerate(self.theta_d):
            out[f"{prefix}theta_d.{k}"] = th
        return out

    def validate(self) -> None:
        n, c_in = self.n_nodes, self.c_in
        if self.W_s.shape != (n, n):
            raise ValueError(f"W_s must be square, got {self.W_s.shape}")
        if self.W_phi.shape != (c_in, c_in):
            raise ValueError(f"W_phi must be square, got {self.W_phi.shape}")
        if len(self.theta_s) != len(self.theta_d) or not self.theta_s:
            raise ValueError("theta_s and theta_d must both hold K >= 1 matrices")
        c_out = self.c_out
        for th in (*self.theta_s, *self.theta_d):
            if th.shape != (c_in, c_out):
                raise ValueError(f"theta shape {th.shape} != {(c_in, c_out)}")


def _as_tensor(a) -> Tensor:
    return a if isinstance(a, Tensor) else Tensor(np.asarray(a, dtype=float))


def cheb_basis(A, K: int) -> list:
    """Return ``[T_0(A), ..., T_{K-1}(A)]`` via the three-term recursion.

    Works on numpy arrays or :class:`Tensor` (then the result is differentiable).
    """
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    shape = A.shape
    if len(shape) != 2 or shape[0] != shape[1]:
        raise ValueError(f"cheb_basis: A must be square, got shape {shape}")
    if isinstance(A, Tensor):
        eye = Tensor(np.eye(shape[0], dtype=A.data.dtype))
        basis = [eye]
        if K > 1:
            basis.append(A)
        for _ in range(2, K):
            basis.append(2.0 * matmul(A, basis[-1]) - basis[-2])
        return basis
    A = np.asarray(A)
    basis = [np.eye(shape[0], dtype=A.dtype if A.dtype.kind == "f" else float)]
    if K > 1:
        basis.append(A)
    for _ in range(2, K):
        basis.append(2.0 * A @ basis[-1] - basis[-2])
    return basis


def cheb_apply(A: Tensor, X: Tensor, K: int) -> list[Tensor]:
    """``[T_k(A) X for k < K]`` without forming the matrix polynomials."""
    terms = [X]
    if K > 1:
        terms.append(matmul(A, X))
    for _ in range(2, K):
        terms.append(2.0 * matmul(A, terms[-1]) - terms[-2])
    return terms


def dynamic_adjacency(X, W_phi):
    """Input-driven node-to-node weights ``X W_phi X^T`` over trailing ``N x C`` axes."""
    X, W_phi = _as_tensor(X), _as_tensor(W_phi)
    if X.shape[-1] != W_phi.shape[0] or W_phi.shape[0] != W_phi.shape[-1]:
        raise ValueError(f"dynamic_adjacency: X {X.shape} incompatible with W_phi {W_phi.shape}")
    return matmul(matmul(X, W_phi), transpose(X))


def normalize_adjacency(A, eps: float = 1e-6):
    """Symmetrize and divide by (spectral radius + eps); zero maps to zero."""
    return spectral_normalize(_as_tensor(A), eps)


def _filter(A_hat: Tensor, X: Tensor, thetas: list[Tensor]) -> Tensor:
    terms = cheb_apply(A_hat, X, len(thetas))
    out = matmul(terms[0], thetas[0])
    for z, th in zip(terms[1:], thetas[1:]):
        out = out + matmul(z, th)
    return out


def slc_spatial_forward(X, params: SlcLayerParams) -> Tensor:
    """``ReLU(F_s) + ReLU(F_d)`` for node features ``X`` of shape ``(..., N, C_in)``."""
    X = _as_tensor(X)
    if X.ndim < 2 or X.shape[-2] != params.n_nodes or X.shape[-1] != params.c_in:
        raise ValueError(
            f"slc_spatial_forward: X {X.shape} does not match N={params.n_nodes}, C_in={params.c_in}"
        )
    A_s = normalize_adjacency(params.W_s)
    A_d = normalize_adjacency(dynamic_adjacency(X, params.W_phi))
    return relu(_filter(A_s, X, params.theta_s)) + relu(_filter(A_d, X, params.theta_d))


def static_gcn_forward(X, A: Tensor, thetas: list[Tensor]) -> Tensor:
    """Chebyshev convolution over a fixed adjacency, followed by ReLU."""
    X = _as_tensor(X)
    if X.shape[-2] != A.shape[0] or X.shape[-1] != thetas[0].shape[0]:
        raise ValueError(f"static_gcn_forward: X {X.shape} incompatible with A {A.shape}")
    return relu(_filter(A, X, thetas))


def _fan_in_uniform(rng: np.random.Generator, shape, fan_in: int, dtype) -> Tensor:
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype), requires_grad=True)


def init_slc_params(n_nodes: int, c_in: int, c_out: int, K: int, rng: np.random.Generator,
                    dtype=np.float32) -> SlcLayerParams:
    W_s = np.full((n_nodes, n_nodes), 1.0 / n_nodes) + rng.normal(0.0, 0.01, size=(n_nodes, n_nodes))
    params = SlcLayerParams(
        W_s=Tensor(W_s.astype(dtype), requires_grad=True),
        W_phi=_fan_in_uniform(rng, (c_in, c_in), c_in, dtype),
        theta_s=[_fan_in_uniform(rng, (c_in, c_out), c_in * K, dtype) for _ in range(K)],
        theta_d=[_fan_in_uniform(rng, (c_in, c_out), c_in * K, dtype) for _ in range(K)],
    )
    params.validate()
    return params
