"""Reverse-mode automatic differentiation over dense numpy buffers.

Every operation builds a node that remembers its parents and a backward
closure; ``Tensor.backward()`` walks the recorded graph in reverse
topological order. Buffers are row-major (C order) float32 or float64
arrays. Gradients accumulate across repeated backward calls until
``zero_grad`` / ``reset_grads`` clears them.

Execution is single-threaded and fully deterministic: identical inputs
produce bit-identical values and gradients.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ShapeError

_ALLOWED_DTYPES = (np.float32, np.float64)

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference / probing)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """N-dimensional numeric array with an optional gradient slot."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _ALLOWED_DTYPES:
            arr = arr.astype(np.float32)
        self.data = np.ascontiguousarray(arr)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad)

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g.astype(self.data.dtype, copy=False)

    def backward(self) -> None:
        """Backpropagate from a scalar loss.

        Leaf gradients accumulate across calls (each call adds one full
        gradient); use ``reset_grads`` between optimisation steps.
        Intermediate node grads are scratch space cleared per pass.
        """
        if self.size != 1:
            raise ShapeError(f"backward() requires a scalar loss, got shape {self.shape}")
        order = _toposort(self)
        for node in order:
            if node._parents:
                node.grad = None
        self.accumulate_grad(np.ones_like(self.data))
        for node in reversed(order):
            if node._backward is not None:
                node._backward()

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}, requires_grad={self.requires_grad})"

    # light operator sugar used throughout the model code
    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)


def _toposort(root: Tensor) -> list[Tensor]:
    # iterative DFS: generation graphs can be deeper than the recursion limit
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def reset_grads(tensors: Iterable[Tensor]) -> None:
    """Explicitly clear gradient buffers (accumulation is the default)."""
    for t in tensors:
        t.zero_grad()


def _make_node(data: np.ndarray, parents: Sequence[Tensor],
               backward: Callable[[Tensor], None] | None) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and backward is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = lambda: backward(out)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    # sum out axes that numpy broadcasting expanded
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# arithmetic
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} do not broadcast") from None

    def backward(out: Tensor) -> None:
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(out.grad, a.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(out.grad, b.shape))

    return _make_node(data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} do not broadcast") from None

    def backward(out: Tensor) -> None:
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(out.grad * b.data, a.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(out.grad * a.data, b.shape))

    return _make_node(data, (a, b), backward)


def scale(x: Tensor, factor: float) -> Tensor:
    data = x.data * x.dtype.type(factor)

    def backward(out: Tensor) -> None:
        x.accumulate_grad(out.grad * x.dtype.type(factor))

    return _make_node(data, (x,), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; also accepts identically stacked leading dims."""
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands must be at least 2-D, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2] or a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    data = a.data @ b.data

    def backward(out: Tensor) -> None:
        if a.requires_grad:
            a.accumulate_grad(out.grad @ np.swapaxes(b.data, -1, -2))
        if b.requires_grad:
            b.accumulate_grad(np.swapaxes(a.data, -1, -2) @ out.grad)

    return _make_node(data, (a, b), backward)


def relu(x: Tensor) -> Tensor:
    data = np.maximum(x.data, 0)

    def backward(out: Tensor) -> None:
        x.accumulate_grad(out.grad * (x.data > 0))

    return _make_node(data, (x,), backward)


# ---------------------------------------------------------------------------
# shape plumbing
# ---------------------------------------------------------------------------

def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    data = x.data.reshape(shape)

    def backward(out: Tensor) -> None:
        x.accumulate_grad(out.grad.reshape(x.shape))

    return _make_node(data, (x,), backward)


def transpose(x: Tensor, axes: tuple[int, ...]) -> Tensor:
    data = x.data.transpose(axes)
    inverse = tuple(np.argsort(axes))

    def backward(out: Tensor) -> None:
        x.accumulate_grad(out.grad.transpose(inverse))

    return _make_node(data, (x,), backward)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(out: Tensor) -> None:
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                index = [slice(None)] * out.grad.ndim
                index[axis] = slice(lo, hi)
                t.accumulate_grad(out.grad[tuple(index)])

    return _make_node(data, tuple(tensors), backward)


def narrow(x: Tensor, axis: int, start: int, length: int) -> Tensor:
    index = [slice(None)] * x.ndim
    index[axis] = slice(start, start + length)
    index = tuple(index)
    data = x.data[index].copy()

    def backward(out: Tensor) -> None:
        g = np.zeros_like(x.data)
        g[index] = out.grad
        x.accumulate_grad(g)

    return _make_node(data, (x,), backward)


def tensor_sum(x: Tensor) -> Tensor:
    data = np.array(x.data.sum(dtype=x.dtype), dtype=x.dtype)

    def backward(out: Tensor) -> None:
        x.accumulate_grad(np.full_like(x.data, out.grad))

    return _make_node(data, (x,), backward)


def mean(x: Tensor) -> Tensor:
    return scale(tensor_sum(x), 1.0 / x.size)


# ---------------------------------------------------------------------------
# neural-net operations
# ---------------------------------------------------------------------------

def conv2d(x: Tensor, kernel: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D convolution: input N,C,H,W with kernel F,C,kh,kw (zero padding)."""
    if x.ndim != 4 or kernel.ndim != 4:
        raise ShapeError(f"conv2d: need 4-D input and kernel, got {x.shape} and {kernel.shape}")
    n, c, h, w = x.shape
    f, ck, kh, kw = kernel.shape
    if ck != c:
        raise ShapeError(f"conv2d: channel mismatch, input {x.shape} vs kernel {kernel.shape}")
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (w + 2 * padding - kw) // stride + 1
    if kh > h + 2 * padding or kw > w + 2 * padding or oh <= 0 or ow <= 0:
        raise ShapeError(
            f"conv2d: kernel {kernel.shape} does not fit input {x.shape} "
            f"with stride={stride} padding={padding}")

    xp = x.data
    if padding:
        xp = np.pad(xp, ((0, 0), (0, 0), (padding, padding), (padding, padding)))

    # im2col via kh*kw strided slices, then a single GEMM
    cols = np.empty((n, c, kh, kw, oh, ow), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride]
    cols_mat = cols.transpose(0, 4, 5, 1, 2, 3).reshape(n * oh * ow, c * kh * kw)
    kmat = kernel.data.reshape(f, c * kh * kw)
    out_mat = cols_mat @ kmat.T
    data = out_mat.reshape(n, oh, ow, f).transpose(0, 3, 1, 2)

    def backward(out: Tensor) -> None:
        gmat = out.grad.transpose(0, 2, 3, 1).reshape(n * oh * ow, f)
        if kernel.requires_grad:
            kernel.accumulate_grad((gmat.T @ cols_mat).reshape(kernel.shape))
        if x.requires_grad:
            gcols = (gmat @ kmat).reshape(n, oh, ow, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
            gx = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gx[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += gcols[:, :, i, j]
            if padding:
                gx = gx[:, :, padding:padding + h, padding:padding + w]
            x.accumulate_grad(gx)

    return _make_node(data, (x, kernel), backward)


def global_avg_pool_2d(x: Tensor) -> Tensor:
    """N,C,H,W -> N,C mean over the spatial grid."""
    if x.ndim != 4:
        raise ShapeError(f"global_avg_pool_2d: need 4-D input, got {x.shape}")
    n, c, h, w = x.shape
    data = x.data.mean(axis=(2, 3))

    def backward(out: Tensor) -> None:
        x.accumulate_grad(np.broadcast_to(out.grad[:, :, None, None] / (h * w), x.shape).copy())

    return _make_node(data, (x,), backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"softmax: axis {axis} out of range for shape {x.shape}")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def backward(out: Tensor) -> None:
        s = out.data
        g = out.grad
        x.accumulate_grad(s * (g - (g * s).sum(axis=axis, keepdims=True)))

    return _make_node(data, (x,), backward)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis, then apply an elementwise affine."""
    if gamma.shape != (x.shape[-1],) or beta.shape != (x.shape[-1],):
        raise ShapeError(
            f"layer_norm: affine shapes {gamma.shape}/{beta.shape} do not match feature dim {x.shape[-1]}")
    d = x.shape[-1]
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + x.dtype.type(eps))
    xhat = xc * inv
    data = xhat * gamma.data + beta.data

    def backward(out: Tensor) -> None:
        g = out.grad
        if beta.requires_grad:
            beta.accumulate_grad(g.reshape(-1, d).sum(axis=0))
        if gamma.requires_grad:
            gamma.accumulate_grad((g * xhat).reshape(-1, d).sum(axis=0))
        if x.requires_grad:
            gx_hat = g * gamma.data
            x.accumulate_grad(inv * (
                gx_hat
                - gx_hat.mean(axis=-1, keepdims=True)
                - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True)))

    return _make_node(data, (x, gamma, beta), backward)


def batch_norm_2d(x: Tensor, gamma: Tensor, beta: Tensor,
                  running_mean: np.ndarray, running_var: np.ndarray,
                  training: bool, momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Per-channel batch norm on N,C,H,W.

    In training mode the batch statistics are used and the running buffers
    are updated in place (momentum 0.1, torch-style unbiased running var).
    Eval mode before any training step sees the initialized buffers
    (mean 0, var 1).
    """
    if x.ndim != 4:
        raise ShapeError(f"batch_norm_2d: need 4-D input, got {x.shape}")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batch_norm_2d: affine shapes {gamma.shape}/{beta.shape} do not match C={c}")

    gshape = (1, c, 1, 1)
    if training:
        count = x.size // c
        mu = x.data.mean(axis=(0, 2, 3))
        xc = x.data - mu.reshape(gshape)
        var = (xc * xc).mean(axis=(0, 2, 3))
        if count > 1:
            unbiased = var * (count / (count - 1))
        else:
            unbiased = var
        running_mean *= (1 - momentum)
        running_mean += momentum * mu.astype(running_mean.dtype)
        running_var *= (1 - momentum)
        running_var += momentum * unbiased.astype(running_var.dtype)
        inv = 1.0 / np.sqrt(var + x.dtype.type(eps))
        xhat = xc * inv.reshape(gshape)
        data = xhat * gamma.data.reshape(gshape) + beta.data.reshape(gshape)

        def backward(out: Tensor) -> None:
            g = out.grad
            if beta.requires_grad:
                beta.accumulate_grad(g.sum(axis=(0, 2, 3)))
            if gamma.requires_grad:
                gamma.accumulate_grad((g * xhat).sum(axis=(0, 2, 3)))
            if x.requires_grad:
                gx_hat = g * gamma.data.reshape(gshape)
                mean_g = gx_hat.mean(axis=(0, 2, 3)).reshape(gshape)
                mean_gx = (gx_hat * xhat).mean(axis=(0, 2, 3)).reshape(gshape)
                x.accumulate_grad(inv.reshape(gshape) * (gx_hat - mean_g - xhat * mean_gx))

        return _make_node(data, (x, gamma, beta), backward)

    inv = (1.0 / np.sqrt(running_var + eps)).astype(x.dtype)
    mu = running_mean.astype(x.dtype)
    data = (x.data - mu.reshape(gshape)) * inv.reshape(gshape) * gamma.data.reshape(gshape) \
        + beta.data.reshape(gshape)

    def backward_eval(out: Tensor) -> None:
        g = out.grad
        if beta.requires_grad:
            beta.accumulate_grad(g.sum(axis=(0, 2, 3)))
        if gamma.requires_grad:
            xhat = (x.data - mu.reshape(gshape)) * inv.reshape(gshape)
            gamma.accumulate_grad((g * xhat).sum(axis=(0, 2, 3)))
        if x.requires_grad:
            x.accumulate_grad(g * (gamma.data * inv).reshape(gshape))

    return _make_node(data, (x, gamma, beta), backward_eval)


def embedding_lookup(table: Tensor, ids) -> Tensor:
    """Gather rows of an embedding table; ids are not differentiated."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 1:
        raise ShapeError(f"embedding_lookup: ids must be 1-D, got shape {ids.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ValueError(f"embedding_lookup: id out of range [0, {table.shape[0]})")
    data = table.data[ids]

    def backward(out: Tensor) -> None:
        g = np.zeros_like(table.data)
        np.add.at(g, ids, out.grad)
        table.accumulate_grad(g)

    return _make_node(data, (table,), backward)


def cross_entropy(logits: Tensor, targets, ignore_index: int = -1) -> Tensor:
    """Mean negative log-softmax over positions whose target is not ignored."""
    if logits.ndim != 2:
        raise ShapeError(f"cross_entropy: logits must be B x V, got {logits.shape}")
    targets = np.asarray(targets, dtype=np.int64)
    if targets.shape != (logits.shape[0],):
        raise ShapeError(
            f"cross_entropy: targets shape {targets.shape} does not match batch {logits.shape[0]}")
    v = logits.shape[1]
    keep = targets != ignore_index
    if not keep.any():
        raise ValueError("cross_entropy: every target is ignored (empty effective batch)")
    kept = targets[keep]
    if kept.min() < 0 or kept.max() >= v:
        raise ValueError(f"cross_entropy: target out of range [0, {v})")

    m = logits.data.max(axis=1, keepdims=True)
    shifted = logits.data - m
    lse = np.log(np.exp(shifted).sum(axis=1)) + m[:, 0]
    rows = np.nonzero(keep)[0]
    nll = lse[rows] - logits.data[rows, kept]
    n_eff = rows.size
    data = np.array(nll.sum() / n_eff, dtype=logits.dtype)

    def backward(out: Tensor) -> None:
        p = np.exp(shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True)))
        g = np.zeros_like(logits.data)
        g[rows] = p[rows]
        g[rows, kept] -= 1
        logits.accumulate_grad(g * (out.grad / n_eff))

    return _make_node(data, (logits,), backward)
