"""Trainable layers: linear, embedding, layernorm, attention, GRU, conv.

Modules register parameters as attributes; ``named_parameters`` walks the
attribute tree in construction order, so parameter ordering (and therefore
checkpoint layout) is deterministic.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.stats import truncnorm

from . import tensor as T
from .tensor import Tensor

INIT_STD = 0.02
LN_EPS = 1e-12
ATTN_MASK_BIAS = -1e9


def trunc_normal(shape, rng: np.random.Generator, std: float = INIT_STD) -> np.ndarray:
    """Truncated normal init, cut at two standard deviations."""
    vals = truncnorm.rvs(-2.0, 2.0, scale=std, size=int(np.prod(shape)), random_state=rng)
    return vals.reshape(shape).astype(T.get_default_dtype())


def zeros(shape) -> np.ndarray:
    return np.zeros(shape, dtype=T.get_default_dtype())


def ones(shape) -> np.ndarray:
    return np.ones(shape, dtype=T.get_default_dtype())


class Module:
    """Base class providing parameter discovery and train/eval mode."""

    def named_parameters(self, prefix: str = ""):
        for name, value in vars(self).items():
            key = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield key, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{key}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{key}.{i}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def set_training(self, flag: bool):
        for value in vars(self).values():
            if isinstance(value, Module):
                value.set_training(flag)
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        item.set_training(flag)
        self.training = flag

    def state_dict(self) -> dict:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict, prefix: str = ""):
        """Copy arrays into parameters by name; shapes must match."""
        for name, p in self.named_parameters():
            key = prefix + name
            if key not in state:
                raise KeyError(f"missing parameter in checkpoint: {key}")
            src = state[key]
            if tuple(src.shape) != tuple(p.data.shape):
                raise ValueError(f"shape mismatch for {key}: checkpoint {src.shape} vs model {p.data.shape}")
            p.data = np.ascontiguousarray(src, dtype=p.data.dtype)

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Linear(Module):
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator):
        self.weight = Tensor(trunc_normal((in_dim, out_dim), rng), requires_grad=True)
        self.bias = Tensor(zeros(out_dim), requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        return x @ self.weight + self.bias


class Embedding(Module):
    def __init__(self, num_entries: int, dim: int, rng: np.random.Generator):
        self.weight = Tensor(trunc_normal((num_entries, dim), rng), requires_grad=True)

    def forward(self, ids: np.ndarray) -> Tensor:
        return T.take_rows(self.weight, ids)


class LayerNorm(Module):
    """Normalize the last axis to zero mean / unit variance, then affine."""

    def __init__(self, dim: int):
        self.gain = Tensor(ones(dim), requires_grad=True)
        self.bias = Tensor(zeros(dim), requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        mu = x.mean(axis=-1, keepdims=True)
        centered = x - mu
        var = (centered * centered).mean(axis=-1, keepdims=True)
        normed = centered * ((var + LN_EPS) ** -0.5)
        return normed * self.gain + self.bias


class Dropout(Module):
    def __init__(self, rate: float, rng: np.random.Generator):
        self.rate = rate
        self.rng = rng
        self.training = False

    def forward(self, x: Tensor) -> Tensor:
        if not self.training or self.rate <= 0.0:
            return x
        return T.dropout(x, self.rate, self.rng)


class MultiHeadAttention(Module):
    """Scaled dot-product attention over (B, N, d) inputs.

    PAD keys receive a large negative score bias before the softmax; PAD
    query rows are zeroed after the output projection so no junk leaks
    into the residual stream.
    """

    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        if dim % heads:
            raise ValueError(f"model dim {dim} not divisible by head count {heads}")
        self.heads = heads
        self.head_dim = dim // heads
        self.query = Linear(dim, dim, rng)
        self.key = Linear(dim, dim, rng)
        self.value = Linear(dim, dim, rng)
        self.out = Linear(dim, dim, rng)

    def _split(self, x: Tensor, batch: int, n: int) -> Tensor:
        return x.reshape(batch, n, self.heads, self.head_dim).transpose((0, 2, 1, 3))

    def forward(self, x: Tensor, mask: np.ndarray) -> Tensor:
        batch, n, dim = x.shape
        q = self._split(self.query(x), batch, n)
        k = self._split(self.key(x), batch, n)
        v = self._split(self.value(x), batch, n)
        scores = (q @ k.swapaxes(-1, -2)) * (1.0 / np.sqrt(self.head_dim))
        key_bias = (1.0 - mask[:, None, None, :]) * ATTN_MASK_BIAS
        attn = T.softmax(scores + key_bias.astype(x.dtype), axis=-1)
        ctx = (attn @ v).transpose((0, 2, 1, 3)).reshape(batch, n, dim)
        out = self.out(ctx)
        return out * mask[:, :, None].astype(x.dtype)


class FeedForward(Module):
    def __init__(self, dim: int, hidden: int, rng: np.random.Generator):
        self.expand = Linear(dim, hidden, rng)
        self.contract = Linear(hidden, dim, rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.contract(self.expand(x).gelu())


class TransformerLayer(Module):
    """Post-norm encoder layer: attention and feed-forward sublayers, each
    wrapped in residual-add followed by layer normalization."""

    def __init__(self, dim: int, heads: int, ffn_dim: int, rng: np.random.Generator, dropout: float = 0.0):
        self.attn = MultiHeadAttention(dim, heads, rng)
        self.norm_attn = LayerNorm(dim)
        self.ffn = FeedForward(dim, ffn_dim, rng)
        self.norm_ffn = LayerNorm(dim)
        self.drop_attn = Dropout(dropout, rng)
        self.drop_ffn = Dropout(dropout, rng)

    def forward(self, x: Tensor, mask: np.ndarray) -> Tensor:
        x = self.norm_attn(x + self.drop_attn(self.attn(x, mask)))
        x = self.norm_ffn(x + self.drop_ffn(self.ffn(x)))
        return x


class TransformerStack(Module):
    def __init__(self, layers: int, dim: int, heads: int, ffn_dim: int, rng: np.random.Generator, dropout: float = 0.0):
        self.layers = [TransformerLayer(dim, heads, ffn_dim, rng, dropout) for _ in range(layers)]

    def forward(self, x: Tensor, mask: np.ndarray) -> Tensor:
        for layer in self.layers:
            x = layer(x, mask)
        return x


class GruCell(Module):
    """Single-layer unidirectional GRU (reset/update/candidate gating).

    With all-zero weights the update gate sits at 0.5 and the candidate at
    0, so the hidden state halves every step.
    """

    def __init__(self, in_dim: int, hidden_dim: int, rng: np.random.Generator):
        self.hidden_dim = hidden_dim
        self.w_input = Tensor(trunc_normal((in_dim, 3 * hidden_dim), rng), requires_grad=True)
        self.w_hidden = Tensor(trunc_normal((hidden_dim, 3 * hidden_dim), rng), requires_grad=True)
        self.b_input = Tensor(zeros(3 * hidden_dim), requires_grad=True)
        self.b_hidden = Tensor(zeros(3 * hidden_dim), requires_grad=True)

    def step(self, x: Tensor, h: Tensor) -> Tensor:
        d = self.hidden_dim
        gx = x @ self.w_input + self.b_input
        gh = h @ self.w_hidden + self.b_hidden
        reset = (gx[..., :d] + gh[..., :d]).sigmoid()
        update = (gx[..., d:2 * d] + gh[..., d:2 * d]).sigmoid()
        candidate = (gx[..., 2 * d:] + reset * gh[..., 2 * d:]).tanh()
        return (1.0 - update) * candidate + update * h

    def forward(self, seq: Tensor, h0: Tensor | None = None):
        """Run over a (B, T, e) batch; returns (all hiddens (B, T, h), last hidden)."""
        batch, steps, _ = seq.shape
        h = h0 if h0 is not None else Tensor(zeros((batch, self.hidden_dim)))
        hiddens = []
        for t in range(steps):
            h = self.step(seq[:, t, :], h)
            hiddens.append(h)
        return T.stack(hiddens, axis=1), h


class Conv2d(Module):
    def __init__(self, in_ch: int, out_ch: int, kernel: int, stride: int, pad: int, rng: np.random.Generator):
        self.stride = stride
        self.pad = pad
        # fan-in scaling: at sigma=0.02 activations vanish within a few
        # stacked blocks and ReLU units die faster than they can recover
        std = math.sqrt(2.0 / (in_ch * kernel * kernel))
        self.weight = Tensor(trunc_normal((out_ch, in_ch, kernel, kernel), rng, std=std),
                             requires_grad=True)
        self.bias = Tensor(zeros(out_ch), requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.bias, stride=self.stride, pad=self.pad)


class ResBlock(Module):
    """Downsampling residual block: 3x3 stride-2 conv, 3x3 conv, and a 1x1
    stride-2 shortcut; halves the spatial size and changes channel count."""

    def __init__(self, in_ch: int, out_ch: int, rng: np.random.Generator):
        self.conv_down = Conv2d(in_ch, out_ch, kernel=3, stride=2, pad=1, rng=rng)
        self.conv_keep = Conv2d(out_ch, out_ch, kernel=3, stride=1, pad=1, rng=rng)
        self.shortcut = Conv2d(in_ch, out_ch, kernel=1, stride=2, pad=0, rng=rng)

    def forward(self, x: Tensor) -> Tensor:
        main = self.conv_keep(self.conv_down(x).relu())
        return (main + self.shortcut(x)).relu()


class ResNetTower(Module):
    """Stack of residual blocks turning a (B, 3, 32, 32) image batch into a
    (B, dim) feature batch; each block halves height and width, so five
    blocks take 32 px down to a single pixel."""

    CHANNEL_DIVISORS = (16, 8, 4, 2, 1)

    def __init__(self, dim: int, rng: np.random.Generator, in_ch: int = 3):
        if dim % 16:
            raise ValueError(f"feature dim {dim} must be divisible by 16")
        widths = [dim // d for d in self.CHANNEL_DIVISORS]
        chans = [in_ch] + widths
        self.blocks = [ResBlock(chans[i], chans[i + 1], rng) for i in range(len(widths))]

    def forward(self, images: Tensor, want_trace: bool = False):
        if images.shape[-2:] != (32, 32) or images.shape[-3] != 3:
            raise ValueError(f"expected (..., 3, 32, 32) images, got {images.shape}")
        x = images
        trace = [x.shape[-1]]
        for block in self.blocks:
            x = block(x)
            trace.append(x.shape[-1])
        out = x.reshape(x.shape[0], x.shape[1])
        if want_trace:
            return out, trace
        return out
