"""Reverse-mode automatic differentiation over dense numpy arrays.

Every training-time computation in this package is expressed as a graph of
primitive operations recorded on a :class:`Tape`.  The tape stores one node
per executed op and replays the chain rule in exact reverse execution order,
so gradients are deterministic for a fixed op sequence.  Only the small set
of operations the segmentation model actually needs is implemented; shapes
are validated eagerly and mismatches raise with both offending shapes in the
message.

Conventions:

* tensors hold float32 or float64 data; reductions accumulate in float64;
* subgradients at kinks (relu, abs, min, max) take the left/zero branch;
* integer index arguments (``gather_rows``, cross-entropy targets) are plain
  numpy arrays, not tensors, and never receive gradients.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tape",
    "Tensor",
    "add",
    "sub",
    "mul",
    "div",
    "matmul",
    "transpose",
    "reshape",
    "concat",
    "narrow",
    "gather_rows",
    "conv1d",
    "relu",
    "tanh",
    "log",
    "exp",
    "absolute",
    "minimum",
    "maximum",
    "reduce_min",
    "reduce_max",
    "sum_axis",
    "mean_axis",
    "cumsum",
    "outer_sub",
    "cosine_sim",
    "softmax_cross_entropy_with_index",
    "stop_gradient",
]

_ALLOWED_DTYPES = (np.float32, np.float64)


class Tensor:
    """A dense array plus its gradient slot, bound to one tape."""

    __slots__ = ("data", "requires_grad", "grad", "tape", "is_leaf")

    def __init__(self, data: np.ndarray, requires_grad: bool, tape: "Tape", is_leaf: bool):
        self.data = data
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.tape = tape
        self.is_leaf = is_leaf

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # Operator sugar; python numbers are promoted to constants on the same tape.
    def __add__(self, other):
        return add(self, _wrap(other, self))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _wrap(other, self))

    def __rsub__(self, other):
        return sub(_wrap(other, self), self)

    def __mul__(self, other):
        return mul(self, _wrap(other, self))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, _wrap(other, self))

    def __rtruediv__(self, other):
        return div(_wrap(other, self), self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return mul(self, _wrap(-1.0, self))


class _Node:
    __slots__ = ("inputs", "output", "vjp")

    def __init__(self, inputs: tuple[Tensor, ...], output: Tensor, vjp: Callable):
        self.inputs = inputs
        self.output = output
        self.vjp = vjp


class Tape:
    """Records primitive ops and runs the chain rule in reverse order.

    A tape is single-use: after :meth:`backward` it refuses further backward
    calls until :meth:`reset` clears the stored gradients.  Tapes are not
    thread-safe; confine each tape to one thread.
    """

    def __init__(self) -> None:
        self._nodes: list[_Node] = []
        self._spent = False

    def tensor(self, data, requires_grad: bool = False, dtype=None) -> Tensor:
        """Create a leaf tensor on this tape.

        Python scalars and lists default to float32; numpy arrays keep their
        dtype, which must be float32 or float64.
        """
        if isinstance(data, Tensor):
            raise TypeError("tensor() expects raw array data, not a Tensor")
        if dtype is None and not isinstance(data, np.ndarray):
            dtype = np.float32
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.type not in _ALLOWED_DTYPES:
            raise TypeError(f"tensor dtype must be float32 or float64, got {arr.dtype}")
        return Tensor(arr, requires_grad, self, is_leaf=True)

    def constant(self, data, dtype=None) -> Tensor:
        return self.tensor(data, requires_grad=False, dtype=dtype)

    def _record(self, inputs: tuple[Tensor, ...], out_data: np.ndarray, vjp: Callable) -> Tensor:
        for t in inputs:
            if t.tape is not self:
                raise ValueError("op mixes tensors from different tapes")
        out = Tensor(out_data, any(t.requires_grad for t in inputs), self, is_leaf=False)
        self._nodes.append(_Node(inputs, out, vjp))
        return out

    def backward(self, loss: Tensor) -> None:
        """Propagate d(loss)/d(leaf) into ``.grad`` of every reachable leaf.

        ``loss`` must be a scalar produced on this tape.  Leaves that feed the
        graph but receive no gradient signal (e.g. behind ``stop_gradient``)
        end up with an explicit zero gradient rather than ``None``.
        """
        if loss.tape is not self:
            raise ValueError("backward() called with a tensor detached from this tape")
        if loss.data.shape != ():
            raise ValueError(f"backward() needs a scalar loss, got shape {loss.data.shape}")
        if self._spent:
            raise RuntimeError("backward() already ran on this tape; call reset() first")
        self._spent = True

        loss.grad = np.ones((), dtype=loss.data.dtype)
        for node in reversed(self._nodes):
            g_out = node.output.grad
            if g_out is None:
                continue
            grads = node.vjp(g_out)
            for inp, g in zip(node.inputs, grads):
                if g is None or not inp.requires_grad:
                    continue
                if inp.grad is None:
                    inp.grad = g
                else:
                    inp.grad = inp.grad + g
        # Reachable grad-requiring leaves always end with a concrete gradient.
        for node in self._nodes:
            for inp in node.inputs:
                if inp.is_leaf and inp.requires_grad and inp.grad is None:
                    inp.grad = np.zeros_like(inp.data)

    def reset(self) -> None:
        """Clear all gradients so backward may run again on the same graph."""
        for node in self._nodes:
            node.output.grad = None
            for inp in node.inputs:
                inp.grad = None
        self._spent = False


def _wrap(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return like.tape.constant(value, dtype=like.data.dtype)


def _check_tape(*tensors: Tensor) -> Tape:
    tape = tensors[0].tape
    for t in tensors[1:]:
        if t.tape is not tape:
            raise ValueError("op mixes tensors from different tapes")
    return tape


def _broadcast_ok(sa: tuple[int, ...], sb: tuple[int, ...]) -> bool:
    # Supported: identical shapes, scalar with anything, and row vector (n,)
    # against matrix (m, n).  General broadcasting is deliberately absent.
    if sa == sb or sa == () or sb == ():
        return True
    if len(sa) == 2 and sb == (sa[1],):
        return True
    if len(sb) == 2 and sa == (sb[1],):
        return True
    return False


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    if shape == ():
        return np.asarray(g.sum(dtype=np.float64), dtype=g.dtype)
    # Row vector broadcast across matrix rows.
    return g.sum(axis=0, dtype=np.float64).astype(g.dtype)


def _elementwise_pair(a: Tensor, b: Tensor, name: str):
    tape = _check_tape(a, b)
    if not _broadcast_ok(a.data.shape, b.data.shape):
        raise ValueError(f"{name}: incompatible shapes {a.data.shape} and {b.data.shape}")
    return tape


def add(a: Tensor, b: Tensor) -> Tensor:
    tape = _elementwise_pair(a, b, "add")
    out = a.data + b.data

    def vjp(g):
        return _reduce_to(g, a.data.shape), _reduce_to(g, b.data.shape)

    return tape._record((a, b), out, vjp)


def sub(a: Tensor, b: Tensor) -> Tensor:
    tape = _elementwise_pair(a, b, "sub")
    out = a.data - b.data

    def vjp(g):
        return _reduce_to(g, a.data.shape), _reduce_to(-g, b.data.shape)

    return tape._record((a, b), out, vjp)


def mul(a: Tensor, b: Tensor) -> Tensor:
    tape = _elementwise_pair(a, b, "mul")
    out = a.data * b.data

    def vjp(g):
        return _reduce_to(g * b.data, a.data.shape), _reduce_to(g * a.data, b.data.shape)

    return tape._record((a, b), out, vjp)


def div(a: Tensor, b: Tensor) -> Tensor:
    tape = _elementwise_pair(a, b, "div")
    out = a.data / b.data

    def vjp(g):
        ga = _reduce_to(g / b.data, a.data.shape)
        gb = _reduce_to(-g * a.data / (b.data * b.data), b.data.shape)
        return ga, gb

    return tape._record((a, b), out, vjp)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    tape = _check_tape(a, b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {a.data.shape} and {b.data.shape}")
    out = a.data @ b.data

    def vjp(g):
        return g @ b.data.T, a.data.T @ g

    return tape._record((a, b), out, vjp)


def transpose(x: Tensor) -> Tensor:
    if x.data.ndim != 2:
        raise ValueError(f"transpose: expected a matrix, got shape {x.data.shape}")

    def vjp(g):
        return (g.T.copy(),)

    return x.tape._record((x,), x.data.T.copy(), vjp)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    out = x.data.reshape(shape)
    old = x.data.shape

    def vjp(g):
        return (g.reshape(old),)

    return x.tape._record((x,), out, vjp)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ValueError("concat: empty tensor list")
    tape = _check_tape(*tensors)
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=axis))

    return tape._record(tuple(tensors), out, vjp)


def narrow(x: Tensor, start: int, length: int, axis: int = 0) -> Tensor:
    """Contiguous slice of ``length`` entries along ``axis`` starting at ``start``."""
    n = x.data.shape[axis]
    if start < 0 or length < 0 or start + length > n:
        raise ValueError(f"narrow: slice [{start}, {start + length}) out of range for size {n}")
    idx = [slice(None)] * x.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    out = x.data[idx].copy()

    def vjp(g):
        full = np.zeros_like(x.data)
        full[idx] = g
        return (full,)

    return x.tape._record((x,), out, vjp)


def gather_rows(x: Tensor, index) -> Tensor:
    """Select rows of ``x`` by an integer index array (no gradient to the index)."""
    idx = np.asarray(index)
    if idx.ndim != 1 or not np.issubdtype(idx.dtype, np.integer):
        raise ValueError(f"gather_rows: index must be a 1-D integer array, got {idx.dtype} shape {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= x.data.shape[0]):
        raise ValueError(f"gather_rows: index out of range for {x.data.shape[0]} rows")
    out = x.data[idx].copy()

    def vjp(g):
        full = np.zeros_like(x.data)
        np.add.at(full, idx, g)
        return (full,)

    return x.tape._record((x,), out, vjp)


def conv1d(x: Tensor, weight: Tensor, stride: int) -> Tensor:
    """Valid-mode strided 1-D convolution.

    ``x`` has shape (c_in, t), ``weight`` has shape (c_out, c_in, k); the
    result has shape (c_out, 1 + (t - k) // stride).  No padding is applied.
    """
    tape = _check_tape(x, weight)
    if x.data.ndim != 2 or weight.data.ndim != 3:
        raise ValueError(f"conv1d: expected (c_in, t) and (c_out, c_in, k), got {x.data.shape} and {weight.data.shape}")
    c_in, t = x.data.shape
    c_out, c_in_w, k = weight.data.shape
    if c_in != c_in_w:
        raise ValueError(f"conv1d: channel mismatch between input {x.data.shape} and weight {weight.data.shape}")
    if stride < 1:
        raise ValueError(f"conv1d: stride must be positive, got {stride}")
    if t < k:
        raise ValueError(f"conv1d: input length {t} shorter than kernel {k}")
    t_out = 1 + (t - k) // stride

    windows = np.lib.stride_tricks.sliding_window_view(x.data, k, axis=1)[:, :: stride, :]
    # windows: (c_in, t_out, k); contract into (c_out, t_out).
    w2 = weight.data.reshape(c_out, c_in * k)
    cols = windows.transpose(1, 0, 2).reshape(t_out, c_in * k)
    out = (cols @ w2.T).T.copy()

    def vjp(g):
        # g: (c_out, t_out)
        gw = (g @ cols).reshape(c_out, c_in, k)
        contrib = (g.T @ w2).reshape(t_out, c_in, k)
        gx = np.zeros_like(x.data)
        for j in range(k):
            gx[:, j : j + stride * t_out : stride] += contrib[:, :, j].T
        return gx, gw

    return tape._record((x, weight), out, vjp)


def _unary(x: Tensor, out: np.ndarray, dvdx: Callable[[], np.ndarray]) -> Tensor:
    def vjp(g):
        return (g * dvdx(),)

    return x.tape._record((x,), out, vjp)


def relu(x: Tensor) -> Tensor:
    return _unary(x, np.maximum(x.data, 0), lambda: (x.data > 0).astype(x.data.dtype))


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return _unary(x, out, lambda: 1 - out * out)


def log(x: Tensor) -> Tensor:
    return _unary(x, np.log(x.data), lambda: 1 / x.data)


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _unary(x, out, lambda: out)


def absolute(x: Tensor) -> Tensor:
    # Subgradient 0 at the kink.
    return _unary(x, np.abs(x.data), lambda: np.sign(x.data))


def minimum(a: Tensor, b: Tensor) -> Tensor:
    tape = _elementwise_pair(a, b, "minimum")
    out = np.minimum(a.data, b.data)

    def vjp(g):
        take_a = a.data <= b.data  # ties go to the first argument
        ga = _reduce_to(g * take_a, a.data.shape)
        gb = _reduce_to(g * ~take_a, b.data.shape)
        return ga, gb

    return tape._record((a, b), out, vjp)


def maximum(a: Tensor, b: Tensor) -> Tensor:
    tape = _elementwise_pair(a, b, "maximum")
    out = np.maximum(a.data, b.data)

    def vjp(g):
        take_a = a.data >= b.data
        ga = _reduce_to(g * take_a, a.data.shape)
        gb = _reduce_to(g * ~take_a, b.data.shape)
        return ga, gb

    return tape._record((a, b), out, vjp)


def reduce_min(x: Tensor) -> Tensor:
    flat_idx = int(np.argmin(x.data))  # first occurrence on ties
    out = np.asarray(x.data.reshape(-1)[flat_idx])

    def vjp(g):
        full = np.zeros_like(x.data)
        full.reshape(-1)[flat_idx] = g
        return (full,)

    return x.tape._record((x,), out, vjp)


def reduce_max(x: Tensor) -> Tensor:
    flat_idx = int(np.argmax(x.data))
    out = np.asarray(x.data.reshape(-1)[flat_idx])

    def vjp(g):
        full = np.zeros_like(x.data)
        full.reshape(-1)[flat_idx] = g
        return (full,)

    return x.tape._record((x,), out, vjp)


def sum_axis(x: Tensor, axis: int | None = None) -> Tensor:
    out = x.data.sum(axis=axis, dtype=np.float64).astype(x.data.dtype)

    def vjp(g):
        if axis is None:
            return (np.full_like(x.data, g),)
        return (np.broadcast_to(np.expand_dims(g, axis), x.data.shape).copy(),)

    return x.tape._record((x,), np.asarray(out), vjp)


def mean_axis(x: Tensor, axis: int | None = None) -> Tensor:
    """Mean over one axis (or all entries), accumulated in float64."""
    out = x.data.mean(axis=axis, dtype=np.float64).astype(x.data.dtype)
    n = x.data.size if axis is None else x.data.shape[axis]

    def vjp(g):
        if axis is None:
            return (np.full_like(x.data, g / n),)
        return (np.broadcast_to(np.expand_dims(g / n, axis), x.data.shape).copy(),)

    return x.tape._record((x,), np.asarray(out), vjp)


def cumsum(x: Tensor) -> Tensor:
    if x.data.ndim != 1:
        raise ValueError(f"cumsum: expected a vector, got shape {x.data.shape}")
    out = np.cumsum(x.data, dtype=np.float64).astype(x.data.dtype)

    def vjp(g):
        return (np.cumsum(g[::-1])[::-1].astype(x.data.dtype),)

    return x.tape._record((x,), out, vjp)


def outer_sub(a: Tensor, b: Tensor) -> Tensor:
    """Outer difference a[i] - b[j] of two vectors, shape (len(a), len(b))."""
    tape = _check_tape(a, b)
    if a.data.ndim != 1 or b.data.ndim != 1:
        raise ValueError(f"outer_sub: expected vectors, got shapes {a.data.shape} and {b.data.shape}")
    out = a.data[:, None] - b.data[None, :]

    def vjp(g):
        return g.sum(axis=1, dtype=np.float64).astype(a.data.dtype), -g.sum(axis=0, dtype=np.float64).astype(b.data.dtype)

    return tape._record((a, b), out, vjp)


_COS_EPS = 1e-8


def cosine_sim(a: Tensor, b: Tensor) -> Tensor:
    """Cosine similarity of two vectors, or row-wise of two equal-shape matrices.

    An epsilon of 1e-8 in the denominator guards near-zero norms; an exactly
    zero vector is rejected because its direction is undefined.
    """
    tape = _check_tape(a, b)
    if a.data.shape != b.data.shape or a.data.ndim not in (1, 2):
        raise ValueError(f"cosine_sim: expected matching vectors or matrices, got {a.data.shape} and {b.data.shape}")
    ax = a.data.ndim - 1
    na = np.linalg.norm(a.data, axis=ax)
    nb = np.linalg.norm(b.data, axis=ax)
    if np.any(na == 0) or np.any(nb == 0):
        raise ValueError("cosine_sim: zero vector has no direction")
    dot = (a.data * b.data).sum(axis=ax, dtype=np.float64).astype(a.data.dtype)
    denom = (na * nb + _COS_EPS).astype(a.data.dtype)
    out = dot / denom

    def vjp(g):
        if a.data.ndim == 1:
            ga = g * (b.data / denom - (dot / denom**2) * nb * a.data / na)
            gb = g * (a.data / denom - (dot / denom**2) * na * b.data / nb)
        else:
            gc = (g / denom)[:, None]
            sc = (g * dot / denom**2)[:, None]
            ga = gc * b.data - sc * (nb / na)[:, None] * a.data
            gb = gc * a.data - sc * (na / nb)[:, None] * b.data
        return ga.astype(a.data.dtype), gb.astype(b.data.dtype)

    return tape._record((a, b), np.asarray(out), vjp)


def softmax_cross_entropy_with_index(logits: Tensor, index) -> Tensor:
    """Per-row cross-entropy -log softmax(logits)[i, index[i]], shape (n,).

    Uses the max-shift trick for stability; ``index`` is a constant integer
    array and receives no gradient.
    """
    idx = np.asarray(index)
    if logits.data.ndim != 2:
        raise ValueError(f"softmax_cross_entropy_with_index: logits must be (n, c), got {logits.data.shape}")
    n, c = logits.data.shape
    if idx.shape != (n,) or not np.issubdtype(idx.dtype, np.integer):
        raise ValueError(f"softmax_cross_entropy_with_index: index must be {n} ints, got {idx.dtype} shape {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= c):
        raise ValueError(f"softmax_cross_entropy_with_index: index out of range for {c} classes")

    shift = logits.data.max(axis=1, keepdims=True)
    ex = np.exp(logits.data - shift)
    z = ex.sum(axis=1, dtype=np.float64).astype(logits.data.dtype)
    rows = np.arange(n)
    out = np.log(z) + shift[:, 0] - logits.data[rows, idx]

    def vjp(g):
        p = ex / z[:, None]
        p[rows, idx] -= 1
        return (p * g[:, None],)

    return logits.tape._record((logits,), out, vjp)


def stop_gradient(x: Tensor) -> Tensor:
    """Identity in the forward pass; blocks all gradient flow in the backward pass."""

    def vjp(g):
        return (None,)

    out = x.tape._record((x,), x.data.copy(), vjp)
    out.requires_grad = False
    return out
