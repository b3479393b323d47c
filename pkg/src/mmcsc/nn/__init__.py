"""Numpy-backed neural substrate: autodiff tensors, layers, optimizer,
gradient checking, and checkpoint serialization."""

from .tensor import (
    Tensor,
    broadcast_to,
    concat,
    conv2d,
    default_dtype,
    dropout,
    get_default_dtype,
    no_grad,
    softmax,
    softmax_cross_entropy,
    stack,
    take_rows,
)
from .layers import (
    Conv2d,
    Dropout,
    Embedding,
    FeedForward,
    GruCell,
    LayerNorm,
    Linear,
    Module,
    MultiHeadAttention,
    ResBlock,
    ResNetTower,
    TransformerLayer,
    TransformerStack,
    trunc_normal,
)
from .optim import AdamW, warmup_linear
from .gradcheck import check_gradients, numeric_gradient, relative_error
from .serialize import (CheckpointError, load_checkpoint, save_checkpoint,
                        sidecar_path, write_json)

__all__ = [
    "AdamW",
    "CheckpointError",
    "Conv2d",
    "Dropout",
    "Embedding",
    "FeedForward",
    "GruCell",
    "LayerNorm",
    "Linear",
    "Module",
    "MultiHeadAttention",
    "ResBlock",
    "ResNetTower",
    "Tensor",
    "TransformerLayer",
    "TransformerStack",
    "broadcast_to",
    "check_gradients",
    "concat",
    "conv2d",
    "default_dtype",
    "dropout",
    "get_default_dtype",
    "load_checkpoint",
    "no_grad",
    "numeric_gradient",
    "relative_error",
    "save_checkpoint",
    "sidecar_path",
    "softmax",
    "softmax_cross_entropy",
    "stack",
    "take_rows",
    "trunc_normal",
    "warmup_linear",
    "write_json",
]
