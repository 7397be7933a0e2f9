"""Reverse-mode automatic differentiation on float64 numpy arrays.

A ``Tensor`` wraps an ``np.ndarray`` and records, for every operation whose
output requires gradients, the parent tensors plus a closure that maps the
output gradient to per-parent gradients.  ``backward`` replays those closures
in reverse creation order, which is a valid topological order because parents
are always created before their children.

Broadcasting is deliberately restricted: two operands are compatible when one
shape is a suffix of the other (leading batch axes on the larger operand).
The reverse pass then only has to sum over the leading axes, which keeps the
gradient logic exact and easy to audit.
"""

from __future__ import annotations

import itertools
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "NumericsError",
    "no_grad",
    "set_finite_checks",
    "backward_grad",
    "from_op",
    "add",
    "sub",
    "mul",
    "matmul",
    "exp",
    "reciprocal",
    "softplus",
    "sigmoid",
    "silu",
    "tsum",
    "tmean",
    "narrow",
    "concat",
    "causal_conv1d",
    "rms_norm",
    "layer_norm",
]


class NumericsError(ArithmeticError):
    """Raised when an operation produces NaN or Inf."""


_grad_enabled = True
_finite_checks = True
_counter = itertools.count()


@contextmanager
def no_grad():
    """Disable graph construction inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def set_finite_checks(enabled: bool) -> bool:
    """Toggle the NaN/Inf check after each op; returns the previous setting."""
    global _finite_checks
    prev = _finite_checks
    _finite_checks = enabled
    return prev


def _check_finite(data: np.ndarray, opname: str) -> None:
    if _finite_checks and not np.all(np.isfinite(data)):
        raise NumericsError(f"non-finite result in op '{opname}'")


class Tensor:
    """Float64 array node in the autodiff graph."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_seq")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], tuple] | None = None
        self._seq = next(_counter)

    # -- basic introspection ------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self._not_scalar()

    def _not_scalar(self):
        raise ValueError(f"item() on tensor of shape {self.shape}")

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- operators ----------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return mul(self, reciprocal(_lift(other)))

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tmean(self, axis=axis, keepdims=keepdims)

    # -- reverse pass -------------------------------------------------------

    def backward(self) -> None:
        """Accumulate gradients into ``.grad`` of every requires-grad tensor
        reachable from this scalar output."""
        grads = _run_backward(self)
        for node, g in grads.items():
            if node.requires_grad:
                node.grad = g if node.grad is None else node.grad + g


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def from_op(
    data: np.ndarray,
    parents: Sequence[Tensor],
    backward: Callable[[np.ndarray], tuple],
    opname: str = "custom",
) -> Tensor:
    """Create a tensor from a fused operation.

    ``backward(grad_out)`` must return one gradient (or ``None``) per parent,
    each matching the parent's shape.  The node is only recorded when grad
    mode is on and at least one parent requires gradients.
    """
    _check_finite(data, opname)
    track = _grad_enabled and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=track)
    if track:
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _run_backward(root: Tensor) -> dict:
    if root.data.size != 1:
        raise ValueError("backward() requires a scalar output")
    if not root.requires_grad:
        raise ValueError("backward() on a tensor that does not require grad")
    # Reachable interior nodes, found by DFS through parent links.
    seen: set[int] = set()
    nodes: list[Tensor] = []
    stack = [root]
    while stack:
        t = stack.pop()
        if id(t) in seen:
            continue
        seen.add(id(t))
        nodes.append(t)
        if t._backward is not None:
            stack.extend(t._parents)
    nodes.sort(key=lambda t: t._seq, reverse=True)

    grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
    by_id: dict[int, Tensor] = {id(t): t for t in nodes}
    for node in nodes:
        g = grads.get(id(node))
        if g is None or node._backward is None:
            continue
        parent_grads = node._backward(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None:
                continue
            pid = id(parent)
            if pid in grads:
                grads[pid] = grads[pid] + pg
            else:
                grads[pid] = pg
    return {by_id[i]: g for i, g in grads.items() if i in by_id}


def backward_grad(output: Tensor, wrt: Iterable[Tensor]) -> list[np.ndarray]:
    """Gradients of a scalar ``output`` with respect to each tensor in ``wrt``.

    Does not touch ``.grad``; returns zeros for tensors the output does not
    depend on.
    """
    grads = _run_backward(output)
    return [grads.get(t, np.zeros_like(t.data)) for t in wrt]


# -- broadcasting helpers ---------------------------------------------------


def _suffix_shapes(sa: tuple, sb: tuple) -> tuple:
    """Output shape for suffix broadcasting; raises on incompatible shapes."""
    if sa == sb:
        return sa
    small, large = (sa, sb) if len(sa) <= len(sb) else (sb, sa)
    if small != large[len(large) - len(small):]:
        raise ValueError(f"shapes {sa} and {sb} are not suffix-broadcastable")
    return large


def _reduce_to(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum the leading axes of ``grad`` so the result has ``shape``."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    return grad.sum(axis=tuple(range(extra)))


# -- elementwise arithmetic -------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _suffix_shapes(a.shape, b.shape)
    out = a.data + b.data

    def bw(g):
        ga = _reduce_to(g, a.shape) if a.requires_grad else None
        gb = _reduce_to(g, b.shape) if b.requires_grad else None
        return ga, gb

    return from_op(out, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _suffix_shapes(a.shape, b.shape)
    out = a.data - b.data

    def bw(g):
        ga = _reduce_to(g, a.shape) if a.requires_grad else None
        gb = -_reduce_to(g, b.shape) if b.requires_grad else None
        return ga, gb

    return from_op(out, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _suffix_shapes(a.shape, b.shape)
    out = a.data * b.data
    ad, bd = a.data, b.data

    def bw(g):
        ga = _reduce_to(g * bd, a.shape) if a.requires_grad else None
        gb = _reduce_to(g * ad, b.shape) if b.requires_grad else None
        return ga, gb

    return from_op(out, (a, b), bw, "mul")


def matmul(a: Tensor, w: Tensor) -> Tensor:
    """``a @ w`` with ``w`` two-dimensional; ``a`` may carry leading batch axes."""
    a, w = _lift(a), _lift(w)
    if w.ndim != 2:
        raise ValueError(f"matmul weight must be 2-D, got shape {w.shape}")
    if a.ndim < 1 or a.shape[-1] != w.shape[0]:
        raise ValueError(f"matmul shapes {a.shape} and {w.shape} do not align")
    out = a.data @ w.data
    ad, wd = a.data, w.data

    def bw(g):
        ga = g @ wd.T if a.requires_grad else None
        gw = None
        if w.requires_grad:
            gw = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        return ga, gw

    return from_op(out, (a, w), bw, "matmul")


# -- unary nonlinearities ---------------------------------------------------


def exp(a) -> Tensor:
    a = _lift(a)
    out = np.exp(a.data)

    def bw(g):
        return ((g * out) if a.requires_grad else None,)

    return from_op(out, (a,), bw, "exp")


def reciprocal(a) -> Tensor:
    a = _lift(a)
    out = 1.0 / a.data

    def bw(g):
        return ((-g * out * out) if a.requires_grad else None,)

    return from_op(out, (a,), bw, "reciprocal")


def _np_sigmoid(x: np.ndarray) -> np.ndarray:
    # exp(-|x|) never overflows; both branches share the single exp pass.
    t = np.exp(-np.abs(x))
    d = 1.0 + t
    return np.where(x >= 0, 1.0 / d, t / d)


def _np_softplus(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def sigmoid(a) -> Tensor:
    a = _lift(a)
    out = _np_sigmoid(a.data)

    def bw(g):
        return ((g * out * (1.0 - out)) if a.requires_grad else None,)

    return from_op(out, (a,), bw, "sigmoid")


def softplus(a) -> Tensor:
    a = _lift(a)
    out = _np_softplus(a.data)
    ad = a.data

    def bw(g):
        return ((g * _np_sigmoid(ad)) if a.requires_grad else None,)

    return from_op(out, (a,), bw, "softplus")


def silu(a) -> Tensor:
    a = _lift(a)
    s = _np_sigmoid(a.data)
    out = a.data * s
    ad = a.data

    def bw(g):
        # d/dx x*sig(x) = sig(x) * (1 + x * (1 - sig(x)))
        return ((g * s * (1.0 + ad * (1.0 - s))) if a.requires_grad else None,)

    return from_op(out, (a,), bw, "silu")


# -- reductions -------------------------------------------------------------


def _norm_axes(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _lift(a)
    axes = _norm_axes(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)
    shape = a.shape

    def bw(g):
        if not a.requires_grad:
            return (None,)
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape).copy(),)

    return from_op(out, (a,), bw, "sum")


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _lift(a)
    axes = _norm_axes(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    out = a.data.mean(axis=axes, keepdims=keepdims) if axes else a.data.copy()
    shape = a.shape

    def bw(g):
        if not a.requires_grad:
            return (None,)
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, shape).copy(),)

    return from_op(out, (a,), bw, "mean")


# -- structural ops ---------------------------------------------------------


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice ``[start, start+length)`` along ``axis``."""
    a = _lift(a)
    axis = axis % a.ndim
    if start < 0 or start + length > a.shape[axis]:
        raise ValueError(
            f"narrow [{start}:{start + length}] out of range for axis {axis} "
            f"of shape {a.shape}"
        )
    idx = tuple(
        slice(start, start + length) if d == axis else slice(None) for d in range(a.ndim)
    )
    out = a.data[idx].copy()
    shape = a.shape

    def bw(g):
        if not a.requires_grad:
            return (None,)
        full = np.zeros(shape, dtype=np.float64)
        full[idx] = g
        return (full,)

    return from_op(out, (a,), bw, "narrow")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    ts = [_lift(t) for t in tensors]
    if not ts:
        raise ValueError("concat of an empty sequence")
    axis = axis % ts[0].ndim
    out = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        pieces = np.split(g, splits, axis=axis)
        return tuple(
            p.copy() if t.requires_grad else None for t, p in zip(ts, pieces)
        )

    return from_op(out, ts, bw, "concat")


# -- fused layer ops --------------------------------------------------------


def causal_conv1d(x: Tensor, kernel: Tensor, bias: Tensor | None = None) -> Tensor:
    """Depthwise causal convolution over the time axis.

    ``x`` is ``[batch, time, channels]``, ``kernel`` is ``[width, channels]``;
    tap ``k`` multiplies the input lagged by ``width - 1 - k`` steps, so output
    at time ``t`` never sees inputs after ``t``.
    """
    x, kernel = _lift(x), _lift(kernel)
    if x.ndim != 3 or kernel.ndim != 2 or x.shape[2] != kernel.shape[1]:
        raise ValueError(f"conv shapes {x.shape} and {kernel.shape} do not align")
    if bias is not None:
        bias = _lift(bias)
        if bias.shape != (x.shape[2],):
            raise ValueError(f"conv bias shape {bias.shape} does not match channels")
    bsz, T, C = x.shape
    K = kernel.shape[0]
    xd, kd = x.data, kernel.data
    out = np.zeros((bsz, T, C), dtype=np.float64)
    for k in range(K):
        lag = K - 1 - k
        if lag >= T:
            continue
        if lag == 0:
            out += kd[k] * xd
        else:
            out[:, lag:, :] += kd[k] * xd[:, : T - lag, :]
    if bias is not None:
        out = out + bias.data

    parents = (x, kernel) if bias is None else (x, kernel, bias)

    def bw(g):
        gx = gk = gb = None
        if x.requires_grad:
            gx = np.zeros_like(xd)
            for k in range(K):
                lag = K - 1 - k
                if lag >= T:
                    continue
                if lag == 0:
                    gx += kd[k] * g
                else:
                    gx[:, : T - lag, :] += kd[k] * g[:, lag:, :]
        if kernel.requires_grad:
            gk = np.zeros_like(kd)
            for k in range(K):
                lag = K - 1 - k
                if lag >= T:
                    continue
                if lag == 0:
                    gk[k] = (g * xd).sum(axis=(0, 1))
                else:
                    gk[k] = (g[:, lag:, :] * xd[:, : T - lag, :]).sum(axis=(0, 1))
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 1))
        return (gx, gk) if bias is None else (gx, gk, gb)

    return from_op(out, parents, bw, "causal_conv1d")


def rms_norm(x: Tensor, weight: Tensor, eps: float = 1e-5) -> Tensor:
    """RMS normalisation over the last axis, scaled by ``weight``."""
    x, weight = _lift(x), _lift(weight)
    if weight.shape != (x.shape[-1],):
        raise ValueError(f"rms_norm weight shape {weight.shape} does not match input")
    n = x.shape[-1]
    r = 1.0 / np.sqrt((x.data * x.data).mean(axis=-1, keepdims=True) + eps)
    xhat = x.data * r
    out = xhat * weight.data
    wd = x.data, weight.data

    def bw(g):
        xd, w = wd
        gxhat = g * w
        gx = gw = None
        if x.requires_grad:
            # r depends on x: dr/dx_i = -r^3 x_i / n
            gx = r * gxhat - (r ** 3 / n) * xd * (gxhat * xd).sum(axis=-1, keepdims=True)
        if weight.requires_grad:
            gw = (g * xhat).reshape(-1, n).sum(axis=0)
        return gx, gw

    return from_op(out, (x, weight), bw, "rms_norm")


def layer_norm(x: Tensor, weight: Tensor, eps: float = 1e-5) -> Tensor:
    """Zero-mean unit-variance normalisation over the last axis, scaled by ``weight``."""
    x, weight = _lift(x), _lift(weight)
    if weight.shape != (x.shape[-1],):
        raise ValueError(f"layer_norm weight shape {weight.shape} does not match input")
    n = x.shape[-1]
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    r = 1.0 / np.sqrt(var + eps)
    xhat = xc * r
    out = xhat * weight.data
    w = weight.data

    def bw(g):
        gxhat = g * w
        gx = gw = None
        if x.requires_grad:
            m1 = gxhat.mean(axis=-1, keepdims=True)
            m2 = (gxhat * xhat).mean(axis=-1, keepdims=True)
            gx = r * (gxhat - m1 - xhat * m2)
        if weight.requires_grad:
            gw = (g * xhat).reshape(-1, n).sum(axis=0)
        return gx, gw

    return from_op(out, (x, weight), bw, "layer_norm")
