"""Reverse-mode autodiff over dense numpy arrays.

A ``Tensor`` wraps an ``np.ndarray`` and records the operations applied to
it. Calling :meth:`Tensor.backward` on a scalar result walks the recorded
graph once in reverse topological order and accumulates gradients into
``.grad`` of every tensor that has ``requires_grad`` set.

Only the operations the model family needs are implemented; each op is
vectorized numpy on the forward and the backward path.
"""

from __future__ import annotations

import contextlib

import numpy as np
from scipy.special import erf

# Parameters are float32 by default (matches the checkpoint payload format);
# gradient-check tests switch to float64 via default_dtype().
_DEFAULT_DTYPE = np.float32
_GRAD_ENABLED = True


def get_default_dtype():
    return _DEFAULT_DTYPE


@contextlib.contextmanager
def default_dtype(dtype):
    """Temporarily change the dtype used for newly created parameters."""
    global _DEFAULT_DTYPE
    prev = _DEFAULT_DTYPE
    _DEFAULT_DTYPE = np.dtype(dtype).type
    try:
        yield
    finally:
        _DEFAULT_DTYPE = prev


@contextlib.contextmanager
def no_grad():
    """Disable graph recording (inference / evaluation)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the original shape."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    """Dense n-d array with optional gradient tracking."""

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad: bool = False):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if arr.dtype.kind != "f":
            arr = arr.astype(_DEFAULT_DTYPE)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._backward = None
        self._parents = ()

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def _make(data, parents, backward):
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        out.requires_grad = _GRAD_ENABLED and any(p.requires_grad for p in parents)
        if out.requires_grad:
            out._parents = parents
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
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

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    # -- backward pass ---------------------------------------------------------

    def backward(self, grad=None):
        """Accumulate gradients of this (scalar) tensor w.r.t. the graph."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without an explicit gradient needs a scalar tensor")
            grad = np.ones_like(self.data)
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
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))
        self._accumulate(np.asarray(grad, dtype=self.data.dtype))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- elementwise arithmetic --------------------------------------------------
    # Non-Tensor operands (python scalars, numpy arrays) are treated as
    # constants so they never widen the graph dtype.

    def __add__(self, other):
        if not isinstance(other, Tensor):
            def backward_const(g):
                self._accumulate(_unbroadcast(g, self.data.shape))

            return Tensor._make(self.data + other, (self,), backward_const)

        def backward(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g, self.data.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g, other.data.shape))

        return Tensor._make(self.data + other.data, (self, other), backward)

    __radd__ = __add__

    def __sub__(self, other):
        if not isinstance(other, Tensor):
            def backward_const(g):
                self._accumulate(_unbroadcast(g, self.data.shape))

            return Tensor._make(self.data - other, (self,), backward_const)

        def backward(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g, self.data.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(-g, other.data.shape))

        return Tensor._make(self.data - other.data, (self, other), backward)

    def __rsub__(self, other):
        def backward(g):
            self._accumulate(_unbroadcast(-g, self.data.shape))

        return Tensor._make(other - self.data, (self,), backward)

    def __mul__(self, other):
        if not isinstance(other, Tensor):
            def backward_const(g):
                self._accumulate(_unbroadcast(g * other, self.data.shape))

            return Tensor._make(self.data * other, (self,), backward_const)

        def backward(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g * other.data, self.data.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g * self.data, other.data.shape))

        return Tensor._make(self.data * other.data, (self, other), backward)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if not isinstance(other, Tensor):
            def backward_const(g):
                self._accumulate(_unbroadcast(g / other, self.data.shape))

            return Tensor._make(self.data / other, (self,), backward_const)

        def backward(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g / other.data, self.data.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(-g * self.data / (other.data * other.data), other.data.shape))

        return Tensor._make(self.data / other.data, (self, other), backward)

    def __rtruediv__(self, other):
        def backward(g):
            self._accumulate(_unbroadcast(-g * other / (self.data * self.data), self.data.shape))

        return Tensor._make(other / self.data, (self,), backward)

    def __neg__(self):
        def backward(g):
            self._accumulate(-g)

        return Tensor._make(-self.data, (self,), backward)

    def __pow__(self, exponent):
        if not isinstance(exponent, (int, float)):
            raise TypeError("only scalar exponents are supported")
        out_data = self.data ** exponent

        def backward(g):
            self._accumulate(g * exponent * self.data ** (exponent - 1))

        return Tensor._make(out_data, (self,), backward)

    # -- linear algebra -----------------------------------------------------------

    def __matmul__(self, other):
        if not isinstance(other, Tensor):
            other = Tensor(other)

        def backward(g):
            if self.requires_grad:
                if other.data.ndim == 1:
                    ga = np.expand_dims(g, -1) * other.data
                else:
                    ga = g @ other.data.swapaxes(-1, -2)
                self._accumulate(_unbroadcast(ga, self.data.shape))
            if other.requires_grad:
                if self.data.ndim == 1:
                    gb = np.outer(self.data, g)
                else:
                    gb = self.data.swapaxes(-1, -2) @ g
                other._accumulate(_unbroadcast(gb, other.data.shape))

        return Tensor._make(self.data @ other.data, (self, other), backward)

    # -- shape manipulation ---------------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        src_shape = self.data.shape

        def backward(g):
            self._accumulate(g.reshape(src_shape))

        return Tensor._make(self.data.reshape(shape), (self,), backward)

    def swapaxes(self, a, b):
        def backward(g):
            self._accumulate(g.swapaxes(a, b))

        return Tensor._make(self.data.swapaxes(a, b), (self,), backward)

    def transpose(self, axes):
        inv = np.argsort(axes)

        def backward(g):
            self._accumulate(g.transpose(inv))

        return Tensor._make(self.data.transpose(axes), (self,), backward)

    def __getitem__(self, key):
        src_shape = self.data.shape
        parts = key if isinstance(key, tuple) else (key,)
        advanced = any(isinstance(p, np.ndarray) or isinstance(p, (list,)) for p in parts)

        def backward(g):
            full = np.zeros(src_shape, dtype=g.dtype)
            if advanced:
                # integer-array indexing may repeat elements
                np.add.at(full, key, g)
            else:
                # basic indexing selects disjoint elements
                full[key] += g
            self._accumulate(full)

        return Tensor._make(self.data[key], (self,), backward)

    # -- reductions --------------------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        src_shape = self.data.shape

        def backward(g):
            if axis is None:
                self._accumulate(np.broadcast_to(g, src_shape).copy())
                return
            if not keepdims:
                g = np.expand_dims(g, axis)
            self._accumulate(np.broadcast_to(g, src_shape).copy())

        return Tensor._make(self.data.sum(axis=axis, keepdims=keepdims), (self,), backward)

    def mean(self, axis=None, keepdims=False):
        if axis is None:
            count = self.data.size
        else:
            count = self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    # -- nonlinearities -------------------------------------------------------------

    def exp(self):
        out_data = np.exp(self.data)

        def backward(g):
            self._accumulate(g * out_data)

        return Tensor._make(out_data, (self,), backward)

    def log(self):
        def backward(g):
            self._accumulate(g / self.data)

        return Tensor._make(np.log(self.data), (self,), backward)

    def tanh(self):
        out_data = np.tanh(self.data)

        def backward(g):
            self._accumulate(g * (1.0 - out_data * out_data))

        return Tensor._make(out_data, (self,), backward)

    def sigmoid(self):
        # exp of -|x| avoids overflow on either tail
        x = self.data
        out_data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
        out_data = out_data.astype(x.dtype, copy=False)

        def backward(g):
            self._accumulate(g * out_data * (1.0 - out_data))

        return Tensor._make(out_data, (self,), backward)

    def relu(self):
        mask = self.data > 0

        def backward(g):
            self._accumulate(g * mask)

        return Tensor._make(np.where(mask, self.data, 0.0).astype(self.data.dtype, copy=False), (self,), backward)

    def gelu(self):
        # exact form: x * Phi(x), with Phi the standard normal CDF
        x = self.data
        cdf = 0.5 * (1.0 + erf(x / np.sqrt(2.0)))
        out_data = (x * cdf).astype(x.dtype, copy=False)

        def backward(g):
            pdf = np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi)
            self._accumulate(g * (cdf + x * pdf))

        return Tensor._make(out_data, (self,), backward)


# -- free-function ops ----------------------------------------------------------------


def concat(tensors: list, axis: int = -1) -> Tensor:
    datas = [t.data for t in tensors]
    sizes = [d.shape[axis] for d in datas]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                index = [slice(None)] * g.ndim
                index[axis] = slice(lo, hi)
                t._accumulate(g[tuple(index)])

    return Tensor._make(np.concatenate(datas, axis=axis), tuple(tensors), backward)


def stack(tensors: list, axis: int = 0) -> Tensor:
    def backward(g):
        parts = np.moveaxis(g, axis, 0)
        for t, part in zip(tensors, parts):
            if t.requires_grad:
                t._accumulate(part)

    return Tensor._make(np.stack([t.data for t in tensors], axis=axis), tuple(tensors), backward)


def take_rows(table: Tensor, index: np.ndarray) -> Tensor:
    """Gather rows ``table[index]``; the backward pass scatter-adds.

    ``index`` may have any shape; the result has shape ``index.shape +
    table.shape[1:]``. This is the embedding lookup primitive.
    """
    index = np.asarray(index)

    def backward(g):
        full = np.zeros_like(table.data)
        np.add.at(full, index.reshape(-1), g.reshape(-1, *table.data.shape[1:]))
        table._accumulate(full)

    return Tensor._make(table.data[index], (table,), backward)


def broadcast_to(x: Tensor, shape: tuple) -> Tensor:
    """Explicit broadcast; the backward pass sums over expanded axes.

    ``x`` must already have the target rank (size-1 axes where expansion
    happens), so the gradient lands back in ``x``'s exact shape.
    """
    if len(shape) != x.data.ndim:
        raise ValueError(f"broadcast_to needs matching rank: {x.data.shape} -> {shape}")

    def backward(g):
        x._accumulate(_unbroadcast(g, x.data.shape))

    return Tensor._make(np.broadcast_to(x.data, shape).copy(), (x,), backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Row-stochastic softmax along ``axis`` (max-shifted for stability)."""
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        inner = (g * out_data).sum(axis=axis, keepdims=True)
        x._accumulate(out_data * (g - inner))

    return Tensor._make(out_data, (x,), backward)


def softmax_cross_entropy(logits: Tensor, targets: np.ndarray, loss_mask: np.ndarray) -> Tensor:
    """Weighted mean negative log-likelihood over positions where
    ``loss_mask`` is nonzero.

    ``logits`` has shape (..., V); ``targets`` and ``loss_mask`` the leading
    shape. ``loss_mask`` may be 0/1 or arbitrary non-negative weights; the
    loss is sum(w * nll) / sum(w). Zero-weight positions contribute nothing
    to loss or gradient; with every weight zero the loss is exactly 0.
    """
    targets = np.asarray(targets)
    mask = np.asarray(loss_mask).astype(logits.data.dtype)
    flat_logits = logits.data.reshape(-1, logits.data.shape[-1])
    flat_targets = targets.reshape(-1)
    flat_mask = mask.reshape(-1)
    count = flat_mask.sum()
    if count == 0:
        def backward_zero(g):
            logits._accumulate(np.zeros_like(logits.data))

        return Tensor._make(np.asarray(0.0, dtype=logits.data.dtype), (logits,), backward_zero)

    shifted = flat_logits - flat_logits.max(axis=-1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    log_probs = shifted - log_z
    picked = log_probs[np.arange(flat_logits.shape[0]), np.clip(flat_targets, 0, None)]
    loss_value = -(picked * flat_mask).sum() / count

    def backward(g):
        probs = np.exp(log_probs)
        probs[np.arange(flat_logits.shape[0]), np.clip(flat_targets, 0, None)] -= 1.0
        probs *= (flat_mask[:, None] * (g / count))
        logits._accumulate(probs.reshape(logits.data.shape).astype(logits.data.dtype, copy=False))

    return Tensor._make(np.asarray(loss_value, dtype=logits.data.dtype), (logits,), backward)


def _im2col(x: np.ndarray, k: int, stride: int, pad: int):
    n, c, h, w = x.shape
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    out_h = (h + 2 * pad - k) // stride + 1
    out_w = (w + 2 * pad - k) // stride + 1
    windows = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride, :, :]
    # (n, out_h*out_w, c*k*k)
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(n, out_h * out_w, c * k * k)
    return np.ascontiguousarray(cols), out_h, out_w


def _col2im(cols: np.ndarray, x_shape: tuple, k: int, stride: int, pad: int, out_h: int, out_w: int):
    n, c, h, w = x_shape
    padded = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    cols = cols.reshape(n, out_h, out_w, c, k, k).transpose(0, 3, 1, 2, 4, 5)
    for i in range(k):
        for j in range(k):
            padded[:, :, i:i + stride * out_h:stride, j:j + stride * out_w:stride] += cols[:, :, :, :, i, j]
    if pad:
        return padded[:, :, pad:-pad, pad:-pad]
    return padded


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1, pad: int = 1) -> Tensor:
    """2-d convolution, NCHW layout, square kernel, via im2col.

    ``weight`` has shape (out_c, in_c, k, k); ``bias`` shape (out_c,).
    """
    out_c, in_c, k, _ = weight.data.shape
    n = x.data.shape[0]
    cols, out_h, out_w = _im2col(x.data, k, stride, pad)
    w_mat = weight.data.reshape(out_c, in_c * k * k)
    out = cols @ w_mat.T + bias.data
    out_data = out.reshape(n, out_h, out_w, out_c).transpose(0, 3, 1, 2)

    def backward(g):
        g_cols = g.transpose(0, 2, 3, 1).reshape(n, out_h * out_w, out_c)
        if bias.requires_grad:
            bias._accumulate(g_cols.sum(axis=(0, 1)))
        if weight.requires_grad:
            gw = np.einsum("npo,npk->ok", g_cols, cols)
            weight._accumulate(gw.reshape(weight.data.shape))
        if x.requires_grad:
            gx_cols = g_cols @ w_mat
            x._accumulate(_col2im(gx_cols, x.data.shape, k, stride, pad, out_h, out_w))

    return Tensor._make(np.ascontiguousarray(out_data), (x, weight, bias), backward)


def dropout(x: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; call only in training mode with rate > 0."""
    keep = (rng.random(x.data.shape) >= rate).astype(x.data.dtype) / (1.0 - rate)

    def backward(g):
        x._accumulate(g * keep)

    return Tensor._make(x.data * keep, (x,), backward)
