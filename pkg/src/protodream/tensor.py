"""Dense tensors with reverse-mode automatic differentiation.

The graph is define-by-run: every op returns a fresh Tensor holding its
forward value, its parents, and a closure that scatters the output gradient
back to the parents. Training runs in float32; gradient-check tests switch
the whole stack to float64 via `use_dtype`.
"""

from __future__ import annotations

import contextlib

import numpy as np

_DEFAULT_DTYPE = np.float32


def default_dtype():
    return _DEFAULT_DTYPE


def set_default_dtype(dtype) -> None:
    global _DEFAULT_DTYPE
    _DEFAULT_DTYPE = np.dtype(dtype).type


@contextlib.contextmanager
def use_dtype(dtype):
    """Temporarily switch the dtype used for newly created leaf tensors."""
    global _DEFAULT_DTYPE
    saved = _DEFAULT_DTYPE
    _DEFAULT_DTYPE = np.dtype(dtype).type
    try:
        yield
    finally:
        _DEFAULT_DTYPE = saved


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=_DEFAULT_DTYPE)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple = ()
        self._backward = None

    @classmethod
    def _op(cls, data: np.ndarray, parents: tuple, backward) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.requires_grad = any(p.requires_grad for p in parents)
        out.name = None
        out._parents = parents if out.requires_grad else ()
        out._backward = backward if out.requires_grad else None
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return stop_gradient(self)

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        # Copy on first set: closures may hand us views or shared buffers,
        # and later in-place adds must not leak into other nodes' grads.
        if self.grad is None:
            self.grad = np.array(g)
        else:
            self.grad += g

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into every reachable requires_grad leaf.

        Repeated calls without zeroing keep adding into leaf grads;
        intermediate node grads are reset per call.
        """
        if self.data.size != 1:
            raise ValueError(f"backward() needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            return

        topo: list[Tensor] = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))

        for node in topo:
            if node._parents:
                node.grad = None
        if self._parents:
            self.grad = np.ones_like(self.data)
        else:
            self._accumulate(np.ones_like(self.data))

        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # operator sugar
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
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise arithmetic

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.data.shape))

    return Tensor._op(out_data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data - b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.data.shape))

    return Tensor._op(out_data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.data.shape))

    return Tensor._op(out_data, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data / b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g / b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g * out_data / b.data, b.data.shape))

    return Tensor._op(out_data, (a, b), backward)


def neg(a) -> Tensor:
    a = _as_tensor(a)

    def backward(g):
        a._accumulate(-g)

    return Tensor._op(-a.data, (a,), backward)


def maximum(a, b) -> Tensor:
    """Elementwise max; at ties the gradient goes to the first argument."""
    a, b = _as_tensor(a), _as_tensor(b)
    mask = a.data >= b.data
    out_data = np.where(mask, a.data, b.data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * mask, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * ~mask, b.data.shape))

    return Tensor._op(out_data, (a, b), backward)


# ---------------------------------------------------------------------------
# transcendental / activations

def exp(a) -> Tensor:
    a = _as_tensor(a)
    out_data = np.exp(a.data)

    def backward(g):
        a._accumulate(g * out_data)

    return Tensor._op(out_data, (a,), backward)


def log(a) -> Tensor:
    a = _as_tensor(a)

    def backward(g):
        a._accumulate(g / a.data)

    return Tensor._op(np.log(a.data), (a,), backward)


def sqrt(a) -> Tensor:
    a = _as_tensor(a)
    out_data = np.sqrt(a.data)

    def backward(g):
        a._accumulate(g / (2.0 * out_data))

    return Tensor._op(out_data, (a,), backward)


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    out_data = np.tanh(a.data)

    def backward(g):
        a._accumulate(g * (1.0 - out_data * out_data))

    return Tensor._op(out_data, (a,), backward)


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    out_data = 0.5 * (np.tanh(0.5 * a.data) + 1.0)

    def backward(g):
        a._accumulate(g * out_data * (1.0 - out_data))

    return Tensor._op(out_data, (a,), backward)


def softplus(a) -> Tensor:
    a = _as_tensor(a)
    out_data = np.logaddexp(np.zeros((), dtype=a.data.dtype), a.data)

    def backward(g):
        a._accumulate(g * 0.5 * (np.tanh(0.5 * a.data) + 1.0))

    return Tensor._op(out_data, (a,), backward)


def softmax(a) -> Tensor:
    """Softmax over the last axis."""
    a = _as_tensor(a)
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        dot = (g * out_data).sum(axis=-1, keepdims=True)
        a._accumulate(out_data * (g - dot))

    return Tensor._op(out_data, (a,), backward)


def l2_normalize(a) -> Tensor:
    """Scale rows (last axis) to unit Euclidean norm."""
    a = _as_tensor(a)
    norm = np.sqrt((a.data * a.data).sum(axis=-1, keepdims=True))
    norm = np.maximum(norm, np.asarray(1e-12, dtype=a.data.dtype))
    out_data = a.data / norm

    def backward(g):
        dot = (g * out_data).sum(axis=-1, keepdims=True)
        a._accumulate((g - out_data * dot) / norm)

    return Tensor._op(out_data, (a,), backward)


# ---------------------------------------------------------------------------
# shape / structure

def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    in_shape = a.data.shape

    def backward(g):
        a._accumulate(g.reshape(in_shape))

    return Tensor._op(a.data.reshape(shape), (a,), backward)


def transpose(a) -> Tensor:
    a = _as_tensor(a)
    if a.ndim != 2:
        raise ValueError(f"transpose expects a 2-D tensor, got shape {a.shape}")

    def backward(g):
        a._accumulate(np.ascontiguousarray(g.T))

    return Tensor._op(np.ascontiguousarray(a.data.T), (a,), backward)


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t._accumulate(g[tuple(idx)])

    return Tensor._op(out_data, tuple(tensors), backward)


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    out_data = np.stack([t.data for t in tensors], axis=axis)

    def backward(g):
        parts = np.moveaxis(g, axis, 0)
        for t, part in zip(tensors, parts):
            if t.requires_grad:
                t._accumulate(part)

    return Tensor._op(out_data, tuple(tensors), backward)


def narrow(a, axis: int, start: int, size: int) -> Tensor:
    """Contiguous slice [start, start+size) along one axis."""
    a = _as_tensor(a)
    idx = [slice(None)] * a.ndim
    idx[axis] = slice(start, start + size)
    idx = tuple(idx)

    def backward(g):
        full = np.zeros_like(a.data)
        full[idx] = g
        a._accumulate(full)

    return Tensor._op(np.ascontiguousarray(a.data[idx]), (a,), backward)


def take(a, index: int, axis: int) -> Tensor:
    """Select one slice along an axis, dropping that axis."""
    a = _as_tensor(a)
    idx = [slice(None)] * a.ndim
    idx[axis] = index
    idx = tuple(idx)

    def backward(g):
        full = np.zeros_like(a.data)
        full[idx] = g
        a._accumulate(full)

    return Tensor._op(np.ascontiguousarray(a.data[idx]), (a,), backward)


def gather(a, indices, axis: int = 0) -> Tensor:
    a = _as_tensor(a)
    indices = np.asarray(indices)
    out_data = np.take(a.data, indices, axis=axis)

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, _gather_index(indices, axis, a.ndim), g)
        a._accumulate(full)

    return Tensor._op(out_data, (a,), backward)


def _gather_index(indices, axis, ndim):
    idx = [slice(None)] * ndim
    idx[axis] = indices
    return tuple(idx)


def one_hot(indices, depth: int) -> Tensor:
    indices = np.asarray(indices, dtype=np.int64)
    out = np.zeros(indices.shape + (depth,), dtype=_DEFAULT_DTYPE)
    np.put_along_axis(out, indices[..., None], 1.0, axis=-1)
    return Tensor(out)


def stop_gradient(a) -> Tensor:
    a = _as_tensor(a)
    out = Tensor.__new__(Tensor)
    out.data = a.data
    out.grad = None
    out.requires_grad = False
    out.name = None
    out._parents = ()
    out._backward = None
    return out


# ---------------------------------------------------------------------------
# reductions

def _axis_tuple(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        return (axis % ndim,)
    return tuple(a % ndim for a in axis)


def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001 - mirrors np.sum
    a = _as_tensor(a)
    axes = _axis_tuple(axis, a.ndim)
    out_data = a.data.sum(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        a._accumulate(np.broadcast_to(g, a.data.shape))

    return Tensor._op(out_data, (a,), backward)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    axes = _axis_tuple(axis, a.ndim)
    count = 1
    for ax in axes:
        count *= a.data.shape[ax]
    out_data = a.data.mean(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        a._accumulate(np.broadcast_to(g, a.data.shape) / count)

    return Tensor._op(out_data, (a,), backward)


# ---------------------------------------------------------------------------
# matmul / convolution

def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects 2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    out_data = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    return Tensor._op(out_data, (a, b), backward)


def _conv_geometry(h, w, kh, kw, stride, pad):
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    return oh, ow


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int):
    """(N,C,H,W) -> (N*oh*ow, C*kh*kw) patch matrix."""
    n, c, h, w = x.shape
    oh, ow = _conv_geometry(h, w, kh, kw, stride, pad)
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    cols = np.empty((n, c, kh, kw, oh, ow), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = x[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride]
    # (N, oh, ow, C*kh*kw) so each row is one receptive field
    return cols.transpose(0, 4, 5, 1, 2, 3).reshape(n * oh * ow, c * kh * kw), oh, ow


def _col2im(cols: np.ndarray, x_shape, kh: int, kw: int, stride: int, pad: int) -> np.ndarray:
    """Adjoint of _im2col: scatter-add patch rows back into an image."""
    n, c, h, w = x_shape
    oh, ow = _conv_geometry(h, w, kh, kw, stride, pad)
    cols = cols.reshape(n, oh, ow, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
    out = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += cols[:, :, i, j]
    if pad:
        out = out[:, :, pad:pad + h, pad:pad + w]
    return np.ascontiguousarray(out)


def conv2d(x, w, b=None, stride: int = 2, pad: int = 1) -> Tensor:
    """2-D convolution, NCHW input, OIHW weight."""
    x, w = _as_tensor(x), _as_tensor(w)
    if x.ndim != 4 or w.ndim != 4:
        raise ValueError(f"conv2d expects 4-D input and weight, got {x.shape}, {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ValueError(f"conv2d channel mismatch: input {x.shape} vs weight {w.shape}")
    n, _, h, _ = x.shape
    o, _, kh, kw = w.shape
    cols, oh, ow = _im2col(x.data, kh, kw, stride, pad)
    w_flat = w.data.reshape(o, -1)
    out2 = cols @ w_flat.T
    out_data = out2.reshape(n, oh, ow, o).transpose(0, 3, 1, 2)
    out_data = np.ascontiguousarray(out_data)
    if b is not None:
        b = _as_tensor(b)
        out_data += b.data.reshape(1, o, 1, 1)
    parents = (x, w) if b is None else (x, w, b)

    def backward(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(n * oh * ow, o)
        if b is not None and b.requires_grad:
            b._accumulate(g.sum(axis=(0, 2, 3)))
        if w.requires_grad:
            w._accumulate((g2.T @ cols).reshape(w.data.shape))
        if x.requires_grad:
            x._accumulate(_col2im(g2 @ w_flat, x.data.shape, kh, kw, stride, pad))

    return Tensor._op(out_data, parents, backward)


def conv2d_transpose(x, w, b=None, stride: int = 2, pad: int = 1) -> Tensor:
    """Transposed 2-D convolution (the adjoint of conv2d), IOHW weight."""
    x, w = _as_tensor(x), _as_tensor(w)
    if x.shape[1] != w.shape[0]:
        raise ValueError(f"conv2d_transpose channel mismatch: input {x.shape} vs weight {w.shape}")
    n, c, h, wdth = x.shape
    _, o, kh, kw = w.shape
    out_h = stride * (h - 1) + kh - 2 * pad
    out_w = stride * (wdth - 1) + kw - 2 * pad
    x2 = x.data.transpose(0, 2, 3, 1).reshape(n * h * wdth, c)
    w_flat = w.data.reshape(c, o * kh * kw)
    out_data = _col2im(x2 @ w_flat, (n, o, out_h, out_w), kh, kw, stride, pad)
    if b is not None:
        b = _as_tensor(b)
        out_data += b.data.reshape(1, o, 1, 1)
    parents = (x, w) if b is None else (x, w, b)

    def backward(g):
        gcols, _, _ = _im2col(g, kh, kw, stride, pad)
        if b is not None and b.requires_grad:
            b._accumulate(g.sum(axis=(0, 2, 3)))
        if w.requires_grad:
            w._accumulate((x2.T @ gcols).reshape(w.data.shape))
        if x.requires_grad:
            gx = (gcols @ w_flat.T).reshape(n, h, wdth, c).transpose(0, 3, 1, 2)
            x._accumulate(np.ascontiguousarray(gx))

    return Tensor._op(out_data, parents, backward)


def graph_leaves(t: Tensor) -> list:
    """All leaf tensors (no parents) reachable from `t`, including constants."""
    leaves, visited, stack = [], set(), [t]
    while stack:
        node = stack.pop()
        if id(node) in visited:
            continue
        visited.add(id(node))
        if node._parents:
            stack.extend(node._parents)
        else:
            leaves.append(node)
    return leaves
