"""The three modality encoders, each mapping a batch of sentences to
aligned per-character representations of shape (B, L, d):

* semantic  — token + position embeddings into a transformer stack;
* phonetic  — per-character GRU over pinyin symbols, then position
  embeddings and a 4-layer sentence transformer;
* graphic   — per-character ResNet tower over 3x32x32 glyph bitmaps,
  position-independent by construction.
"""

from __future__ import annotations

import numpy as np

from . import nn
from .nn import Tensor


class SemanticEncoder(nn.Module):
    """Contextual character representations H^t.

    The token embedding doubles as the (tied) output projection, so it
    lives here and is handed to the fusion head at prediction time.
    """

    def __init__(self, vocab_size: int, dim: int, layers: int, heads: int, ffn_dim: int,
                 max_len: int, rng: np.random.Generator, dropout: float = 0.1):
        self.token_emb = nn.Embedding(vocab_size, dim, rng)
        self.pos_emb = nn.Embedding(max_len, dim, rng)
        self.norm_emb = nn.LayerNorm(dim)
        self.drop_emb = nn.Dropout(dropout, rng)
        self.stack = nn.TransformerStack(layers, dim, heads, ffn_dim, rng, dropout)

    def forward(self, ids: np.ndarray, mask: np.ndarray) -> Tensor:
        b, n = ids.shape
        positions = np.broadcast_to(np.arange(n), (b, n))
        x = self.token_emb(ids) + self.pos_emb(positions)
        x = self.drop_emb(self.norm_emb(x))
        return self.stack(x, mask)


class PhoneticEncoder(nn.Module):
    """Hierarchical acoustic representations H^a.

    Character level: a GRU consumes each character's pinyin symbols and
    its last hidden state becomes the character vector. Sentence level:
    those vectors plus position embeddings run through a 4-layer
    transformer, followed by a normalization.
    """

    def __init__(self, alphabet_size: int, dim: int, heads: int, ffn_dim: int,
                 max_len: int, rng: np.random.Generator, layers: int = 4, dropout: float = 0.1):
        self.symbol_emb = nn.Embedding(alphabet_size, dim, rng)
        self.gru = nn.GruCell(dim, dim, rng)
        self.pos_emb = nn.Embedding(max_len, dim, rng)
        self.stack = nn.TransformerStack(layers, dim, heads, ffn_dim, rng, dropout)
        self.norm_out = nn.LayerNorm(dim)

    def char_vectors(self, symbol_ids: np.ndarray, lengths: np.ndarray) -> Tensor:
        """(M, T) padded symbol ids + true lengths -> (M, d) vectors: the
        GRU hidden state after exactly |p_i| steps per row."""
        hiddens, _ = self.gru(self.symbol_emb(symbol_ids))
        return hiddens[np.arange(len(lengths)), lengths - 1]

    def forward(self, symbol_ids: np.ndarray, lengths: np.ndarray, mask: np.ndarray,
                inverse: np.ndarray | None = None) -> Tensor:
        """``inverse`` (optional, length B*L) scatters deduplicated GRU
        rows back to batch positions, so repeated characters cost one
        GRU pass; gradients accumulate through the gather."""
        b, n = mask.shape
        chars = self.char_vectors(symbol_ids, lengths.reshape(-1))
        if inverse is not None:
            chars = nn.take_rows(chars, inverse)
        chars = chars.reshape(b, n, -1)
        positions = np.broadcast_to(np.arange(n), (b, n))
        x = chars + self.pos_emb(positions)
        return self.norm_out(self.stack(x, mask))


class GraphicEncoder(nn.Module):
    """Visual representations H^v: ResNet tower + layer normalization,
    applied per character with no cross-position mixing."""

    def __init__(self, dim: int, rng: np.random.Generator):
        self.tower = nn.ResNetTower(dim, rng)
        self.norm = nn.LayerNorm(dim)

    def forward(self, images) -> Tensor:
        """(M, 3, 32, 32) images already normalized to [0, 1] -> (M, d)."""
        if not isinstance(images, Tensor):
            images = Tensor(images)
        return self.norm(self.tower(images))
