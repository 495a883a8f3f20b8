"""Define-by-run reverse-mode automatic differentiation over numpy arrays.

Every op on a :class:`Tensor` records its parents and a closure mapping the
output gradient to one gradient per parent.  :func:`backward` walks the tape
in reverse topological order and returns a fresh gradient map; nothing is
accumulated on the tensors themselves, so calling it twice gives identical
results.
"""

from __future__ import annotations

import contextlib
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import expit

__all__ = [
    "Tensor",
    "tensor",
    "no_grad",
    "backward",
    "grad_check",
    "GradCheckReport",
    "matmul",
    "concat",
    "relu",
    "sigmoid",
    "tanh",
    "log",
    "clip",
    "spectral_normalize",
    "gru_sequence_op",
]

_state = threading.local()


def _grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable tape recording for the current thread."""
    prev = _grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    """A dense array that can take part in a recorded computation."""

    __slots__ = ("data", "requires_grad", "_parents", "_backward", "op", "__weakref__")
    # make numpy defer to the reflected operators
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None, op="leaf"):
        self.data = np.asarray(data)
        if self.data.dtype.kind not in "f":
            self.data = self.data.astype(np.float64)
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self.op = op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    # arithmetic ------------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_wrap(other, self)))

    def __rsub__(self, other):
        return add(_wrap(other, self), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, reciprocal(other))
        return mul(self, 1.0 / other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    # shape helpers ---------------------------------------------------------
    @property
    def T(self):
        return transpose(self)

    def transpose(self, axes=None):
        return transpose(self, axes)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def relu(self):
        return relu(self)

    def sigmoid(self):
        return sigmoid(self)

    def tanh(self):
        return tanh(self)


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    arr = np.array(data, dtype=dtype if dtype is not None else None)
    return Tensor(arr, requires_grad=requires_grad)


def _wrap(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _make(data, parents: Sequence[Tensor], backward_fn, op: str) -> Tensor:
    if _grad_enabled() and any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=tuple(parents), _backward=backward_fn, op=op)
    return Tensor(data, op=op)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# elementwise -----------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _check_broadcast("add", a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), bw, "add")


def mul(a, b) -> Tensor:
    a = _wrap(a)
    b = _wrap(b, a)
    _check_broadcast("mul", a, b)

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), bw, "mul")


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def reciprocal(a: Tensor) -> Tensor:
    out = 1.0 / a.data
    return _make(out, (a,), lambda g: (-g * out * out,), "reciprocal")


def relu(a: Tensor) -> Tensor:
    # derivative at exactly 0 is taken as 0
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0.0).astype(a.data.dtype), (a,), lambda g: (g * mask,), "relu")


def sigmoid(a: Tensor) -> Tensor:
    out = expit(a.data)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def log(a: Tensor) -> Tensor:
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    inside = (a.data >= lo) & (a.data <= hi)
    return _make(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,), "clip")


# linear algebra and shape ------------------------------------------------------

def matmul(a, b) -> Tensor:
    """Matrix product with numpy's ``@`` broadcasting rules (1-D operands allowed)."""
    a, b = _wrap(a), _wrap(b)
    if a.ndim == 0 or b.ndim == 0:
        raise ValueError(f"matmul: scalar operand, shapes {a.shape} and {b.shape}")
    ka = a.shape[-1]
    kb = b.shape[0] if b.ndim == 1 else b.shape[-2]
    if ka != kb:
        raise ValueError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    try:
        out = a.data @ b.data
    except ValueError:
        raise ValueError(f"matmul: incompatible shapes {a.shape} and {b.shape}") from None

    def bw(g):
        ad = a.data[None, :] if a.ndim == 1 else a.data
        bd = b.data[:, None] if b.ndim == 1 else b.data
        gg = g
        if a.ndim == 1:
            gg = np.expand_dims(gg, -2)
        if b.ndim == 1:
            gg = np.expand_dims(gg, -1)
        ga = gg @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ gg
        if a.ndim == 1:
            ga = _unbroadcast(ga, (1,) + a.shape).reshape(a.shape)
        else:
            ga = _unbroadcast(ga, a.shape)
        if b.ndim == 1:
            gb = _unbroadcast(gb, b.shape + (1,)).reshape(b.shape)
        else:
            gb = _unbroadcast(gb, b.shape)
        return ga, gb

    return _make(out, (a, b), bw, "matmul")


def transpose(a: Tensor, axes=None) -> Tensor:
    """Swap the last two axes, or permute by ``axes``."""
    if axes is None:
        if a.ndim < 2:
            return a
        out = np.swapaxes(a.data, -1, -2)
        return _make(out, (a,), lambda g: (np.swapaxes(g, -1, -2),), "transpose")
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),), "permute")


def reshape(a: Tensor, shape) -> Tensor:
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def getitem(a: Tensor, index) -> Tensor:
    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return _make(a.data[index], (a,), bw, "slice")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        shapes = ", ".join(str(t.shape) for t in tensors)
        raise ValueError(f"concat: incompatible shapes {shapes}") from None
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, sizes, axis=axis))

    return _make(out, tensors, bw, "concat")


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(out, (a,), bw, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.data.size
    else:
        axes = (axis,) if np.isscalar(axis) else axis
        count = int(np.prod([a.shape[ax] for ax in axes]))
    return tsum(a, axis, keepdims) * (1.0 / count)


# fused primitives ----------------------------------------------------------------

def spectral_normalize(a: Tensor, eps: float = 1e-6) -> Tensor:
    """Symmetrize the trailing ``N x N`` matrices and divide by spectral radius + eps.

    The spectral radius is taken from a symmetric eigendecomposition, so its
    derivative is ``sign(l) v v^T`` for the eigenpair of largest magnitude.
    """
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise ValueError(f"spectral_normalize: expected square trailing matrices, got {a.shape}")
    sym = 0.5 * (a.data + np.swapaxes(a.data, -1, -2))
    evals, evecs = np.linalg.eigh(sym)
    idx = np.argmax(np.abs(evals), axis=-1)
    lam = np.take_along_axis(evals, idx[..., None], axis=-1)[..., 0]
    vec = np.take_along_axis(evecs, idx[..., None, None], axis=-1)[..., 0]
    rho = np.abs(lam)
    denom = (rho + eps)[..., None, None]
    out = sym / denom

    def bw(g):
        g_sym = g / denom
        coef = (g * sym).sum(axis=(-1, -2)) / (rho + eps) ** 2
        drho = np.sign(lam)[..., None, None] * vec[..., :, None] * vec[..., None, :]
        g_sym = g_sym - coef[..., None, None] * drho
        return (0.5 * (g_sym + np.swapaxes(g_sym, -1, -2)),)

    return _make(out.astype(a.data.dtype), (a,), bw, "spectral_normalize")


def gru_sequence_op(x: Tensor, W_z, W_r, W_h, U_z, U_r, U_h, b_z, b_r, b_h) -> Tensor:
    """Run a GRU over axis 0 of ``x`` (shape ``P x M x C``) from a zero state.

    Backward is hand-written backpropagation through time.
    """
    P, M, _ = x.shape
    H = U_z.shape[0]
    X = x.data
    xz = X @ W_z.data.T + b_z.data
    xr = X @ W_r.data.T + b_r.data
    xh = X @ W_h.data.T + b_h.data
    Uz, Ur, Uh = U_z.data, U_r.data, U_h.data
    dtype = np.result_type(X, Uz)
    hs = np.zeros((P + 1, M, H), dtype=dtype)
    zs = np.empty((P, M, H), dtype=dtype)
    rs = np.empty_like(zs)
    cs = np.empty_like(zs)
    for t in range(P):
        h = hs[t]
        z = expit(xz[t] + h @ Uz.T)
        r = expit(xr[t] + h @ Ur.T)
        c = np.tanh(xh[t] + (r * h) @ Uh.T)
        hs[t + 1] = h + z * (c - h)
        zs[t], rs[t], cs[t] = z, r, c
    out = hs[1:].copy()

    def bw(G):
        daz = np.empty_like(zs)
        dar = np.empty_like(zs)
        dah = np.empty_like(zs)
        dh = np.zeros((M, H), dtype=dtype)
        for t in range(P - 1, -1, -1):
            h, z, r, c = hs[t], zs[t], rs[t], cs[t]
            dh = dh + G[t]
            dc = dh * z
            dz = dh * (c - h)
            dprev = dh * (1.0 - z)
            a_h = dc * (1.0 - c * c)
            drh = a_h @ Uh
            dr = drh * h
            dprev += drh * r
            a_z = dz * z * (1.0 - z)
            a_r = dr * r * (1.0 - r)
            dprev += a_z @ Uz + a_r @ Ur
            daz[t], dar[t], dah[t] = a_z, a_r, a_h
            dh = dprev
        hprev = hs[:-1]
        gx = daz @ W_z.data + dar @ W_r.data + dah @ W_h.data
        gWz = np.einsum("pmh,pmc->hc", daz, X)
        gWr = np.einsum("pmh,pmc->hc", dar, X)
        gWh = np.einsum("pmh,pmc->hc", dah, X)
        gUz = np.einsum("pmh,pmk->hk", daz, hprev)
        gUr = np.einsum("pmh,pmk->hk", dar, hprev)
        gUh = np.einsum("pmh,pmk->hk", dah, rs * hprev)
        return (gx, gWz, gWr, gWh, gUz, gUr, gUh,
                daz.sum(axis=(0, 1)), dar.sum(axis=(0, 1)), dah.sum(axis=(0, 1)))

    return _make(out, (x, W_z, W_r, W_h, U_z, U_r, U_h, b_z, b_r, b_h), bw, "gru_sequence")


# backward ------------------------------------------------------------------------

def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, wrt: Iterable[Tensor] | None = None) -> dict[Tensor, np.ndarray]:
    """Gradients of a scalar ``loss`` with respect to leaf tensors.

    Returns a new dict keyed by leaf tensor.  When ``wrt`` is given, exactly
    those tensors are keys, with zero gradients for leaves the loss does not
    reach.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward: loss must be scalar, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    if loss.requires_grad:
        for node in reversed(_topo_order(loss)):
            g = grads.pop(id(node), None)
            if node.is_leaf:
                leaves[id(node)] = node
                grads[id(node)] = g if g is not None else np.zeros_like(node.data)
                continue
            if g is None:
                continue
            parent_grads = node._backward(g)
            for p, pg in zip(node._parents, parent_grads):
                if pg is None or not p.requires_grad:
                    continue
                if id(p) in grads:
                    grads[id(p)] = grads[id(p)] + pg
                else:
                    grads[id(p)] = pg
    if wrt is None:
        return {leaf: grads[k] for k, leaf in leaves.items()}
    out = {}
    for t in wrt:
        g = grads.get(id(t)) if id(t) in leaves else None
        out[t] = np.zeros_like(t.data) if g is None else g
    return out


# gradient checking -----------------------------------------------------------------

@dataclass
class GradCheckReport:
    passed: bool
    n_checked: int
    n_skipped: int
    worst_rel_error: float
    worst_tensor: int | None = None
    worst_index: tuple | None = None
    skipped: list = field(default_factory=list)

    def __str__(self):
        status = "pass" if self.passed else "FAIL"
        return (f"grad_check {status}: checked={self.n_checked} skipped={self.n_skipped} "
                f"worst_rel={self.worst_rel_error:.3e} at tensor {self.worst_tensor} {self.worst_index}")


def grad_check(
    f: Callable,
    x: Tensor | Sequence[Tensor],
    step: float = 1e-5,
    rtol: float = 1e-4,
    floor: float = 1e-6,
) -> GradCheckReport:
    """Compare analytic gradients with central differences, coordinate by coordinate.

    ``f`` maps ``x`` (a tensor, or the sequence of tensors) to a scalar tensor.
    The relative error is ``|a - n| / max(|a|, |n|, floor)``.  Coordinates where
    the one-sided differences disagree sharply straddle a kink and are skipped.
    """
    if step <= 0:
        raise ValueError("grad_check: step must be positive")
    single = isinstance(x, Tensor)
    xs = [x] if single else list(x)
    call = (lambda: f(xs[0])) if single else (lambda: f(xs))

    loss = call()
    analytic = backward(loss, xs)
    with no_grad():
        base = float(call().data)

    worst, worst_t, worst_i = 0.0, None, None
    n_checked, skipped = 0, []
    for ti, t in enumerate(xs):
        flat = t.data.reshape(-1)
        ga = analytic[t].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            with no_grad():
                flat[i] = orig + step
                fp = float(call().data)
                flat[i] = orig - step
                fm = float(call().data)
            flat[i] = orig
            d_plus = (fp - base) / step
            d_minus = (base - fm) / step
            if abs(d_plus - d_minus) > 1e-2 * max(abs(d_plus), abs(d_minus)) + 1e-3:
                skipped.append((ti, np.unravel_index(i, t.shape)))
                continue
            num = (fp - fm) / (2 * step)
            a = float(ga[i])
            rel = abs(a - num) / max(abs(a), abs(num), floor)
            n_checked += 1
            if rel > worst:
                worst, worst_t, worst_i = rel, ti, tuple(int(k) for k in np.unravel_index(i, t.shape))
    return GradCheckReport(
        passed=worst <= rtol,
        n_checked=n_checked,
        n_skipped=len(skipped),
        worst_rel_error=worst,
        worst_tensor=worst_t,
        worst_index=worst_i,
        skipped=skipped,
    )
