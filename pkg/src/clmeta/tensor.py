"""Tape-based reverse-mode autodiff over float64 numpy arrays.

Design notes:

* Every op is a free function producing a new ``Tensor``; a node remembers
  its input tensors and a VJP closure. ``backward`` walks reachable nodes
  in reverse creation order (creation order is a topological order), so
  traversal is deterministic and iterative.
* VJP rules are written in terms of the ops themselves, referencing only
  the node's input/output tensors and the incoming gradient. Run with
  ``create_graph=True`` the backward pass is therefore itself recorded,
  which is what makes second-order meta-gradients exact. A few rules take
  a fused-kernel shortcut when no graph is being recorded.
* Gradients accumulate additively into ``.grad`` buffers of leaf tensors;
  the caller zeroes them between steps.
* No implicit broadcasting: elementwise ops demand identical shapes, and
  the only shape-changing helpers are explicit (``tile_rows``,
  ``tile_cols``, ``expand_scalar``). This keeps every backward rule small
  enough to audit by eye.
"""

from __future__ import annotations

import itertools
import threading
from collections.abc import Callable, Sequence
from contextlib import nullcontext

import numpy as np

from . import kernels
from .errors import DimensionError, GraphError, InvalidInputError

Array = np.ndarray

_SERIAL = itertools.count()


class _Mode(threading.local):
    recording = True


_MODE = _Mode()


class no_grad:
    """Context manager: ops executed inside build no graph."""

    def __enter__(self) -> None:
        self._prev = _MODE.recording
        _MODE.recording = False

    def __exit__(self, *exc) -> None:
        _MODE.recording = self._prev


def is_recording() -> bool:
    return _MODE.recording


def _as_f64(data) -> Array:
    # np.ascontiguousarray would promote 0-d scalars to shape (1,); avoid that.
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim and not arr.flags["C_CONTIGUOUS"]:
        arr = np.ascontiguousarray(arr)
    return arr


class Tensor:
    """N-dimensional float64 array participating in the autodiff graph."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_serial", "_inputs", "_vjp")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = _as_f64(data)
        self.grad: Array | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._serial = next(_SERIAL)
        self._inputs: tuple[Tensor, ...] = ()
        self._vjp: Callable | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._vjp is None

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> Array:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        tag = self.name or ("leaf" if self.is_leaf else "node")
        return f"Tensor({tag}, shape={self.shape}, requires_grad={self.requires_grad})"

    # Operator sugar; the named functions are the canonical API.
    def __add__(self, other):
        return shift(self, float(other)) if _is_number(other) else add(self, other)

    def __radd__(self, other):
        return shift(self, float(other))

    def __sub__(self, other):
        return shift(self, -float(other)) if _is_number(other) else sub(self, other)

    def __mul__(self, other):
        return scale(self, float(other)) if _is_number(other) else mul(self, other)

    def __rmul__(self, other):
        return scale(self, float(other))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def _is_number(x) -> bool:
    return isinstance(x, (int, float, np.floating, np.integer))


def _ensure(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: Array, inputs: tuple[Tensor, ...], vjp: Callable, name: str) -> Tensor:
    if not (_MODE.recording and any(t.requires_grad for t in inputs)):
        return Tensor(data)
    out = Tensor(data, requires_grad=True, name=name)
    out._inputs = inputs
    out._vjp = vjp
    return out


# ---------------------------------------------------------------------------
# Backward engine
# ---------------------------------------------------------------------------


def _reachable_nodes(root: Tensor) -> list[Tensor]:
    """All graph nodes feeding root, sorted by descending creation order."""
    seen: dict[int, Tensor] = {}
    stack = [root]
    while stack:
        t = stack.pop()
        if id(t) in seen:
            continue
        seen[id(t)] = t
        for src in t._inputs:
            if src.requires_grad and id(src) not in seen:
                stack.append(src)
    nodes = [t for t in seen.values() if t._vjp is not None]
    nodes.sort(key=lambda t: t._serial, reverse=True)
    return nodes


def _backprop(root: Tensor, create_graph: bool) -> dict[Tensor, Tensor]:
    if root.ndim != 0:
        raise GraphError(f"backward root must be a scalar, got shape {root.shape}")
    grads: dict[Tensor, Tensor] = {root: Tensor(np.ones(()))}
    if not root.requires_grad:
        return {}
    ctx = nullcontext() if create_graph else no_grad()
    with ctx:
        for node in _reachable_nodes(root):
            g = grads.pop(node, None)
            if g is None:
                continue
            for src, ig in zip(node._inputs, node._vjp(node, g)):
                if ig is None or not src.requires_grad:
                    continue
                held = grads.get(src)
                grads[src] = ig if held is None else add(held, ig)
    return grads


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into .grad of every reachable leaf tensor."""
    for leaf, g in _backprop(loss, create_graph=False).items():
        if leaf.is_leaf and leaf.requires_grad:
            if leaf.grad is None:
                leaf.grad = np.zeros_like(leaf.data)
            leaf.grad += g.data


def grad(
    loss: Tensor, wrt: Sequence[Tensor], create_graph: bool = False
) -> list[Tensor]:
    """Gradients of loss w.r.t. each tensor in wrt, as tensors.

    With create_graph=True the returned gradients stay connected to the
    graph, so they can be differentiated again (second order).
    """
    table = _backprop(loss, create_graph=create_graph)
    out = []
    for t in wrt:
        g = table.get(t)
        out.append(Tensor(np.zeros_like(t.data)) if g is None else g)
    return out


# ---------------------------------------------------------------------------
# Elementwise arithmetic
# ---------------------------------------------------------------------------


def _check_same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shapes differ: {a.shape} vs {b.shape}")


def add(a, b) -> Tensor:
    a, b = _ensure(a), _ensure(b)
    _check_same_shape("add", a, b)

    def vjp(out, g):
        return g, g

    return _node(a.data + b.data, (a, b), vjp, "add")


def sub(a, b) -> Tensor:
    a, b = _ensure(a), _ensure(b)
    _check_same_shape("sub", a, b)

    def vjp(out, g):
        return g, neg(g)

    return _node(a.data - b.data, (a, b), vjp, "sub")


def neg(a) -> Tensor:
    a = _ensure(a)

    def vjp(out, g):
        return (neg(g),)

    return _node(-a.data, (a,), vjp, "neg")


def mul(a, b) -> Tensor:
    a, b = _ensure(a), _ensure(b)
    _check_same_shape("mul", a, b)

    def vjp(out, g):
        return mul(g, b), mul(g, a)

    return _node(a.data * b.data, (a, b), vjp, "mul")


def scale(a, c: float) -> Tensor:
    a = _ensure(a)
    c = float(c)

    def vjp(out, g):
        return (scale(g, c),)

    return _node(a.data * c, (a,), vjp, "scale")


def shift(a, c: float) -> Tensor:
    a = _ensure(a)

    def vjp(out, g):
        return (g,)

    return _node(a.data + float(c), (a,), vjp, "shift")


def recip(a) -> Tensor:
    a = _ensure(a)

    def vjp(out, g):
        if not _MODE.recording:
            return (Tensor(-(g.data * out.data * out.data)),)
        return (neg(mul(g, mul(out, out))),)

    return _node(1.0 / a.data, (a,), vjp, "recip")


# ---------------------------------------------------------------------------
# Matrix products
# ---------------------------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = _ensure(a), _ensure(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} x {b.shape}")

    def vjp(out, g):
        return matmul(g, transpose(b)), matmul(transpose(a), g)

    return _node(a.data @ b.data, (a, b), vjp, "matmul")


def bmm(a, b) -> Tensor:
    a, b = _ensure(a), _ensure(b)
    if (
        a.ndim != 3
        or b.ndim != 3
        or a.shape[0] != b.shape[0]
        or a.shape[2] != b.shape[1]
    ):
        raise DimensionError(f"bmm: incompatible shapes {a.shape} x {b.shape}")

    def vjp(out, g):
        return bmm(g, permute(b, (0, 2, 1))), bmm(permute(a, (0, 2, 1)), g)

    return _node(np.matmul(a.data, b.data), (a, b), vjp, "bmm")


# ---------------------------------------------------------------------------
# Shape ops
# ---------------------------------------------------------------------------


def transpose(a) -> Tensor:
    a = _ensure(a)
    if a.ndim != 2:
        raise DimensionError(f"transpose: expected 2-d, got {a.shape}")

    def vjp(out, g):
        return (transpose(g),)

    return _node(np.ascontiguousarray(a.data.T), (a,), vjp, "transpose")


def permute(a, axes: tuple[int, ...]) -> Tensor:
    a = _ensure(a)
    axes = tuple(axes)
    inv = tuple(int(i) for i in np.argsort(axes))

    def vjp(out, g):
        return (permute(g, inv),)

    return _node(np.ascontiguousarray(np.transpose(a.data, axes)), (a,), vjp, "permute")


def reshape(a, shape: tuple[int, ...]) -> Tensor:
    a = _ensure(a)
    old = a.shape

    def vjp(out, g):
        return (reshape(g, old),)

    return _node(np.ascontiguousarray(a.data.reshape(shape)), (a,), vjp, "reshape")


def tile_rows(b, rows: int) -> Tensor:
    """[C] -> [rows, C] by repeating the vector as every row."""
    b = _ensure(b)
    if b.ndim != 1:
        raise DimensionError(f"tile_rows: expected 1-d, got {b.shape}")

    def vjp(out, g):
        return (sum_cols(g),)

    data = np.ascontiguousarray(np.broadcast_to(b.data, (rows, b.shape[0])))
    return _node(data, (b,), vjp, "tile_rows")


def tile_cols(s, cols: int) -> Tensor:
    """[R, 1] -> [R, cols] by repeating the column."""
    s = _ensure(s)
    if s.ndim != 2 or s.shape[1] != 1:
        raise DimensionError(f"tile_cols: expected [R, 1], got {s.shape}")

    def vjp(out, g):
        return (sum_rows(g),)

    data = np.ascontiguousarray(np.broadcast_to(s.data, (s.shape[0], cols)))
    return _node(data, (s,), vjp, "tile_cols")


def expand_scalar(a, shape: tuple[int, ...]) -> Tensor:
    """Scalar -> constant-filled array of the given shape."""
    a = _ensure(a)
    if a.ndim != 0:
        raise DimensionError(f"expand_scalar: expected scalar, got {a.shape}")

    def vjp(out, g):
        return (sum_all(g),)

    return _node(np.full(shape, a.data), (a,), vjp, "expand_scalar")


# ---------------------------------------------------------------------------
# Reductions
# ---------------------------------------------------------------------------


def sum_all(a) -> Tensor:
    a = _ensure(a)
    shape = a.shape

    def vjp(out, g):
        return (expand_scalar(g, shape),)

    return _node(a.data.sum(), (a,), vjp, "sum_all")


def mean_all(a) -> Tensor:
    a = _ensure(a)
    return scale(sum_all(a), 1.0 / a.size)


def sum_rows(a) -> Tensor:
    """[R, C] -> [R, 1]."""
    a = _ensure(a)
    if a.ndim != 2:
        raise DimensionError(f"sum_rows: expected 2-d, got {a.shape}")
    cols = a.shape[1]

    def vjp(out, g):
        return (tile_cols(g, cols),)

    return _node(a.data.sum(axis=1, keepdims=True), (a,), vjp, "sum_rows")


def sum_cols(a) -> Tensor:
    """[R, C] -> [C]."""
    a = _ensure(a)
    if a.ndim != 2:
        raise DimensionError(f"sum_cols: expected 2-d, got {a.shape}")
    rows = a.shape[0]

    def vjp(out, g):
        return (tile_rows(g, rows),)

    return _node(a.data.sum(axis=0), (a,), vjp, "sum_cols")


# ---------------------------------------------------------------------------
# Nonlinearities
# ---------------------------------------------------------------------------


def tanh(a) -> Tensor:
    a = _ensure(a)

    def vjp(out, g):
        if not _MODE.recording:
            return (Tensor(kernels.tanh_bwd(out.data, g.data)),)
        return (sub(g, mul(g, mul(out, out))),)

    return _node(np.tanh(a.data), (a,), vjp, "tanh")


def relu(a) -> Tensor:
    a = _ensure(a)

    def vjp(out, g):
        if not _MODE.recording:
            return (Tensor(kernels.relu_bwd(a.data, g.data)),)
        return (mul(g, Tensor((a.data > 0.0).astype(np.float64))),)

    return _node(np.maximum(a.data, 0.0), (a,), vjp, "relu")


def exp(a) -> Tensor:
    a = _ensure(a)

    def vjp(out, g):
        return (mul(g, out),)

    return _node(np.exp(a.data), (a,), vjp, "exp")


def log(a) -> Tensor:
    a = _ensure(a)

    def vjp(out, g):
        if not _MODE.recording:
            return (Tensor(g.data / a.data),)
        return (mul(g, recip(a)),)

    return _node(np.log(a.data), (a,), vjp, "log")


def clamp_min(a, floor: float) -> Tensor:
    a = _ensure(a)
    floor = float(floor)

    def vjp(out, g):
        return (mul(g, Tensor((a.data > floor).astype(np.float64))),)

    return _node(np.maximum(a.data, floor), (a,), vjp, "clamp_min")


def rsqrt(a) -> Tensor:
    a = _ensure(a)

    def vjp(out, g):
        if not _MODE.recording:
            return (Tensor(-0.5 * g.data * out.data**3),)
        return (scale(mul(g, mul(mul(out, out), out)), -0.5),)

    return _node(1.0 / np.sqrt(a.data), (a,), vjp, "rsqrt")


# ---------------------------------------------------------------------------
# Indexing
# ---------------------------------------------------------------------------


def gather_rows(table, ids) -> Tensor:
    """Select rows: out[r] = table[ids[r]]."""
    table = _ensure(table)
    ids = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2 or ids.ndim != 1:
        raise DimensionError(f"gather_rows: table {table.shape}, ids {ids.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise InvalidInputError(
            f"gather_rows: id out of range [0, {table.shape[0]}): "
            f"min {ids.min()}, max {ids.max()}"
        )
    nrows = table.shape[0]

    def vjp(out, g):
        return (scatter_rows(g, ids, nrows),)

    return _node(table.data[ids], (table,), vjp, "gather_rows")


def scatter_rows(x, ids, num_rows: int) -> Tensor:
    """Opposite of gather_rows: out[ids[r]] += x[r], duplicates accumulate."""
    x = _ensure(x)
    ids = np.asarray(ids, dtype=np.int64)
    if x.ndim != 2 or ids.shape != (x.shape[0],):
        raise DimensionError(f"scatter_rows: x {x.shape}, ids {ids.shape}")

    def vjp(out, g):
        return (gather_rows(g, ids),)

    data = np.zeros((num_rows, x.shape[1]))
    kernels.scatter_add_rows(data, ids, x.data)
    return _node(data, (x,), vjp, "scatter_rows")


def take_per_row(x, idx) -> Tensor:
    """out[r, 0] = x[r, idx[r]]."""
    x = _ensure(x)
    idx = np.asarray(idx, dtype=np.int64)
    if x.ndim != 2 or idx.shape != (x.shape[0],):
        raise DimensionError(f"take_per_row: x {x.shape}, idx {idx.shape}")
    cols = x.shape[1]

    def vjp(out, g):
        return (put_per_row(g, idx, cols),)

    data = x.data[np.arange(x.shape[0]), idx][:, None]
    return _node(np.ascontiguousarray(data), (x,), vjp, "take_per_row")


def put_per_row(s, idx, num_cols: int) -> Tensor:
    """Opposite of take_per_row: out[r, idx[r]] = s[r, 0], zeros elsewhere."""
    s = _ensure(s)
    idx = np.asarray(idx, dtype=np.int64)
    if s.ndim != 2 or s.shape[1] != 1 or idx.shape != (s.shape[0],):
        raise DimensionError(f"put_per_row: s {s.shape}, idx {idx.shape}")

    def vjp(out, g):
        return (take_per_row(g, idx),)

    data = np.zeros((s.shape[0], num_cols))
    data[np.arange(s.shape[0]), idx] = s.data[:, 0]
    return _node(data, (s,), vjp, "put_per_row")


# ---------------------------------------------------------------------------
# Fused primitives
# ---------------------------------------------------------------------------


def _mask_array(mask, shape) -> Array | None:
    if mask is None:
        return None
    m = mask.data if isinstance(mask, Tensor) else np.asarray(mask)
    m = m.astype(bool)
    if m.shape != shape:
        raise DimensionError(f"mask shape {m.shape} does not match input {shape}")
    return m


def softmax_rows(x, mask=None) -> Tensor:
    """Row-wise masked softmax; masked entries are exactly 0 in the output."""
    x = _ensure(x)
    if x.ndim != 2:
        raise DimensionError(f"softmax_rows: expected 2-d, got {x.shape}")
    m = _mask_array(mask, x.shape)
    if m is not None and not m.any(axis=1).all():
        raise InvalidInputError("softmax_rows: some row has every position masked")

    def vjp(out, g):
        if not _MODE.recording:
            return (Tensor(kernels.softmax_rows_bwd(out.data, g.data, m)),)
        s = sum_rows(mul(g, out))
        return (mul(out, sub(g, tile_cols(s, x.shape[1]))),)

    return _node(kernels.softmax_rows(x.data, m), (x,), vjp, "softmax_rows")


def softmax(x, mask=None) -> Tensor:
    """Masked softmax over a vector, or row-wise over a matrix."""
    x = _ensure(x)
    if x.ndim == 1:
        m = None if mask is None else np.asarray(
            mask.data if isinstance(mask, Tensor) else mask
        ).astype(bool).reshape(1, -1)
        return reshape(softmax_rows(reshape(x, (1, x.shape[0])), m), (x.shape[0],))
    return softmax_rows(x, mask)


def layer_norm_rows(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Row-wise layer norm with learned gain/bias."""
    x, gamma, beta = _ensure(x), _ensure(gamma), _ensure(beta)
    if x.ndim != 2 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise DimensionError(
            f"layer_norm_rows: x {x.shape}, gamma {gamma.shape}, beta {beta.shape}"
        )
    cols = x.shape[1]
    y, xhat, rstd = kernels.layernorm(x.data, gamma.data, beta.data, eps)

    def vjp(out, g):
        if not _MODE.recording:
            dx, dgamma, dbeta = kernels.layernorm_bwd(xhat, rstd, gamma.data, g.data)
            return Tensor(dx), Tensor(dgamma), Tensor(dbeta)
        # Recompute the normalization from x with recorded ops so the rule
        # stays differentiable for second-order gradients.
        mu = scale(sum_rows(x), 1.0 / cols)
        xc = sub(x, tile_cols(mu, cols))
        var = scale(sum_rows(mul(xc, xc)), 1.0 / cols)
        r = rsqrt(shift(var, eps))
        xhat_t = mul(xc, tile_cols(r, cols))
        dxhat = mul(g, tile_rows(gamma, x.shape[0]))
        m1 = scale(sum_rows(dxhat), 1.0 / cols)
        m2 = scale(sum_rows(mul(dxhat, xhat_t)), 1.0 / cols)
        inner = sub(sub(dxhat, tile_cols(m1, cols)), mul(xhat_t, tile_cols(m2, cols)))
        dx = mul(inner, tile_cols(r, cols))
        dgamma = sum_cols(mul(g, xhat_t))
        dbeta = sum_cols(g)
        return dx, dgamma, dbeta

    return _node(y, (x, gamma, beta), vjp, "layer_norm_rows")


# ---------------------------------------------------------------------------
# Composites
# ---------------------------------------------------------------------------


def add_bias(x, b) -> Tensor:
    """[R, C] + [C], the one sanctioned broadcast."""
    x, b = _ensure(x), _ensure(b)
    if x.ndim != 2 or b.shape != (x.shape[1],):
        raise DimensionError(f"add_bias: x {x.shape}, b {b.shape}")
    return add(x, tile_rows(b, x.shape[0]))


def dropout(x, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted-scaling dropout; identity when rate == 0."""
    if rate <= 0.0:
        return x
    x = _ensure(x)
    keep = rng.random(x.shape) >= rate
    return mul(x, Tensor(keep.astype(np.float64) / (1.0 - rate)))
