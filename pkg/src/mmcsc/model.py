"""Selective modality fusion and the complete spell-checker assembly.

Per character i the three modality vectors are mixed by scalar sigmoid
gates computed from [h^t_i, h^a_i, h^v_i, hbar^t] (hbar^t is the mean
textual vector over non-PAD positions):

    g^m_i = sigmoid(W^m . [h^t_i, h^a_i, h^v_i, hbar^t] + b^m)
    h~_i  = g^t_i h^t_i + g^a_i h^a_i + g^v_i h^v_i

The mixed sequence runs through a small transformer and an output
projection whose weight is the token embedding matrix itself (tied), so
embedding updates and projection updates are the same storage.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass

import numpy as np

from . import nn
from .corpus import Batch, Vocabulary, batch as make_batch
from .encoders import GraphicEncoder, PhoneticEncoder, SemanticEncoder
from .glyph import GlyphAtlas
from .nn import Tensor
from .pinyin import ALPHABET, PinyinTable, decompose, encode_batch

log = logging.getLogger(__name__)


@dataclass
class ModelConfig:
    """Architecture and ablation switches; desk-scale defaults."""

    dim: int = 64
    semantic_layers: int = 2
    heads: int = 2
    ffn_dim: int = 256
    phonetic_layers: int = 4
    fusion_layers: int = 3
    max_len: int = 16
    dropout: float = 0.1
    use_phonetic: bool = True      # off = "- Phonetic" ablation
    use_graphic: bool = True       # off = "- Graphic" ablation
    selective_fusion: bool = True  # off = plain sum, gates pinned to 1
    single_font: bool = False      # on = "- Multi-Fonts": one font replicated

    def to_json(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_json(cls, payload: dict) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in payload.items() if k in known})


@dataclass
class GateTrace:
    """Per-character gate triples (g^t, g^a, g^v) for one sentence."""

    sentence: str
    gates: list  # one (g_t, g_a, g_v) float triple per character


class SelectiveFusion(nn.Module):
    def __init__(self, dim: int, rng: np.random.Generator):
        self.gate_text = nn.Linear(4 * dim, 1, rng)
        self.gate_acoustic = nn.Linear(4 * dim, 1, rng)
        self.gate_visual = nn.Linear(4 * dim, 1, rng)

    def forward(self, h_text: Tensor, h_acoustic: Tensor, h_visual: Tensor,
                mask: np.ndarray, forced_gates=None):
        """Returns (mixed (B,L,d) tensor, gates (B,L,3) array).

        ``forced_gates`` pins the three gates to exact constants (used by
        oracles and the plain-sum ablation); the gate parameters are then
        bypassed entirely.
        """
        b, n, d = h_text.shape
        if forced_gates is not None:
            gt, ga, gv = (float(g) for g in forced_gates)
            mixed = h_text * gt + h_acoustic * ga + h_visual * gv
            gates = np.broadcast_to(np.array([gt, ga, gv], dtype=np.float64), (b, n, 3))
            return mixed, gates
        m = mask[:, :, None].astype(h_text.dtype)
        denom = np.maximum(mask.sum(axis=1, keepdims=True), 1.0).astype(h_text.dtype)
        mean_text = (h_text * m).sum(axis=1) / denom          # (B, d) over non-PAD
        mean_b = nn.broadcast_to(mean_text.reshape(b, 1, d), (b, n, d))
        gate_in = nn.concat([h_text, h_acoustic, h_visual, mean_b], axis=-1)
        g_t = self.gate_text(gate_in).sigmoid()
        g_a = self.gate_acoustic(gate_in).sigmoid()
        g_v = self.gate_visual(gate_in).sigmoid()
        mixed = g_t * h_text + g_a * h_acoustic + g_v * h_visual
        gates = np.stack([g_t.data[..., 0], g_a.data[..., 0], g_v.data[..., 0]], axis=-1)
        return mixed, gates


class FusionHead(nn.Module):
    """Transformer over the mixed sequence + tied output projection."""

    def __init__(self, dim: int, vocab_size: int, heads: int, ffn_dim: int,
                 rng: np.random.Generator, layers: int = 3, dropout: float = 0.1):
        self.stack = nn.TransformerStack(layers, dim, heads, ffn_dim, rng, dropout)
        self.out_bias = Tensor(nn.layers.zeros(vocab_size), requires_grad=True)

    def forward(self, mixed: Tensor, mask: np.ndarray, token_emb: Tensor) -> Tensor:
        h = self.stack(mixed, mask)
        return h @ token_emb.swapaxes(0, 1) + self.out_bias


class PretrainHead(nn.Module):
    """Linear d -> V map over the character vocabulary."""

    def __init__(self, dim: int, vocab_size: int, rng: np.random.Generator):
        self.proj = nn.Linear(dim, vocab_size, rng)

    def forward(self, h: Tensor) -> Tensor:
        return self.proj(h)


class FeatureTables:
    """Per-vocabulary-id lookup arrays for the non-text modalities:
    pinyin symbol ids/lengths and [0,1]-normalized glyph images."""

    def __init__(self, vocab: Vocabulary, table: PinyinTable, atlas: GlyphAtlas,
                 single_font: bool = False):
        seqs = [decompose(tok, table) for tok in vocab.tokens()]
        self.pinyin_ids, self.pinyin_lengths = encode_batch(seqs)
        images = np.stack([atlas.lookup(tok) for tok in vocab.tokens()])
        if single_font:
            images = np.repeat(images[:, :1], 3, axis=1)
        self.images = images.astype(np.float32) / 255.0

    def pinyin_for(self, ids: np.ndarray):
        return self.pinyin_ids[ids.reshape(-1)], self.pinyin_lengths[ids.reshape(-1)]

    def images_for(self, ids: np.ndarray) -> np.ndarray:
        flat = self.images[ids.reshape(-1)]
        return flat


class SpellChecker(nn.Module):
    """Full three-modality corrector over a fixed vocabulary."""

    def __init__(self, vocab: Vocabulary, table: PinyinTable, atlas: GlyphAtlas,
                 config: ModelConfig, rng: np.random.Generator):
        self.config = config
        self.vocab = vocab
        self.features = FeatureTables(vocab, table, atlas, single_font=config.single_font)
        c = config
        self.semantic = SemanticEncoder(len(vocab), c.dim, c.semantic_layers, c.heads,
                                        c.ffn_dim, c.max_len, rng, c.dropout)
        if c.use_phonetic:
            self.phonetic = PhoneticEncoder(len(ALPHABET), c.dim, c.heads, c.ffn_dim,
                                            c.max_len, rng, c.phonetic_layers, c.dropout)
        if c.use_graphic:
            self.graphic = GraphicEncoder(c.dim, rng)
        self.fusion = SelectiveFusion(c.dim, rng)
        self.head = FusionHead(c.dim, len(vocab), c.heads, c.ffn_dim, rng,
                               c.fusion_layers, c.dropout)

    def encode(self, input_ids: np.ndarray, mask: np.ndarray,
               semantic_ids: np.ndarray | None = None):
        """``semantic_ids`` (optional) feeds the text encoder a corrupted
        view — e.g. [MASK] at sampled positions — while the acoustic and
        visual features still come from ``input_ids``. Training with such
        views forces sound/shape -> character binding instead of pure
        token memorization."""
        b, n = input_ids.shape
        d = self.config.dim
        h_text = self.semantic(input_ids if semantic_ids is None else semantic_ids, mask)
        # per-character modality work runs once per distinct id in the batch
        uniq, inverse = np.unique(input_ids.reshape(-1), return_inverse=True)
        if self.config.use_phonetic:
            py_ids, py_lens = self.features.pinyin_for(uniq)
            h_acoustic = self.phonetic(py_ids, py_lens, mask, inverse=inverse)
        else:
            h_acoustic = Tensor(np.zeros((b, n, d), dtype=h_text.dtype))
        if self.config.use_graphic:
            images = self.features.images_for(uniq)
            h_visual = nn.take_rows(self.graphic(images), inverse).reshape(b, n, d)
        else:
            h_visual = Tensor(np.zeros((b, n, d), dtype=h_text.dtype))
        return h_text, h_acoustic, h_visual

    def forward(self, input_ids: np.ndarray, mask: np.ndarray, forced_gates=None,
                semantic_ids: np.ndarray | None = None):
        """Returns (logits (B,L,V) tensor, gates (B,L,3) array)."""
        h_text, h_acoustic, h_visual = self.encode(input_ids, mask, semantic_ids)
        if forced_gates is None and not self.config.selective_fusion:
            forced_gates = (1.0, 1.0, 1.0)
        mixed, gates = self.fusion(h_text, h_acoustic, h_visual, mask, forced_gates)
        logits = self.head(mixed, mask, self.semantic.token_emb.weight)
        return logits, gates

    def loss(self, b: Batch, semantic_ids: np.ndarray | None = None,
             weights: np.ndarray | None = None) -> Tensor:
        logits, _ = self.forward(b.input_ids, b.attention_mask, semantic_ids=semantic_ids)
        mask = b.loss_mask if weights is None else b.loss_mask * weights
        return nn.softmax_cross_entropy(logits, b.target_ids, mask)

    def predict(self, input_ids: np.ndarray, mask: np.ndarray):
        """Row-stochastic prediction distributions as float64 (B,L,V),
        plus the gate array. No gradient graph is built."""
        with nn.no_grad():
            logits, gates = self.forward(input_ids, mask)
        z = logits.data.astype(np.float64)
        z -= z.max(axis=-1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=-1, keepdims=True), gates

    def correct(self, sentences, post_rule=None):
        """Correct raw sentences; returns (corrected list, GateTrace list).

        Characters outside the vocabulary are encoded as UNK but always
        passed through unchanged. Output length equals input length.
        """
        from .corpus import CscExample
        from .evaluation import post_process

        if not sentences:
            return [], []
        self.set_training(False)
        max_len = self.config.max_len
        examples = [CscExample(s, s) for s in sentences]
        b = make_batch(examples, self.vocab, max_len)
        probs, gates = self.predict(b.input_ids, b.attention_mask)
        # specials ([PAD], [SEP], ...) are never legal corrections
        special = [i for i, t in enumerate(self.vocab.tokens()) if len(t) != 1]
        probs[:, :, special] = 0.0
        choices = probs.argmax(axis=-1)
        corrected, traces = [], []
        for r, sent in enumerate(sentences):
            kept = min(len(sent), max_len - 2)
            out = list(sent)
            row_gates = []
            for i in range(kept):
                col = 1 + i  # skip [CLS]
                ch = sent[i]
                if ch in self.vocab:
                    out[i] = self.vocab.token(int(choices[r, col]))
                row_gates.append(tuple(float(g) for g in gates[r, col]))
            fixed = "".join(out)
            if post_rule is not None:
                fixed = post_process(sent, fixed, post_rule)
            corrected.append(fixed)
            traces.append(GateTrace(sentence=sent, gates=row_gates))
        return corrected, traces


class AcousticPretrainModel(nn.Module):
    """Phonetic encoder + disposable projection head: recover the correct
    character sequence from (possibly corrupted) pinyin alone."""

    def __init__(self, phonetic: PhoneticEncoder, vocab_size: int, dim: int,
                 rng: np.random.Generator):
        self.phonetic = phonetic
        self.head = PretrainHead(dim, vocab_size, rng)

    def forward(self, symbol_ids: np.ndarray, lengths: np.ndarray, mask: np.ndarray) -> Tensor:
        return self.head(self.phonetic(symbol_ids, lengths, mask))


class VisualPretrainModel(nn.Module):
    """Graphic encoder + disposable head: classify a character from its
    rendered bitmap."""

    def __init__(self, graphic: GraphicEncoder, vocab_size: int, dim: int,
                 rng: np.random.Generator):
        self.graphic = graphic
        self.head = PretrainHead(dim, vocab_size, rng)

    def forward(self, images) -> Tensor:
        return self.head(self.graphic(images))


def transfer_encoder_weights(model: SpellChecker, acoustic_state: dict | None = None,
                             visual_state: dict | None = None):
    """Copy pretrained encoder weights into the full model; the
    pretraining heads are dropped on the floor."""
    if acoustic_state is not None:
        if not model.config.use_phonetic:
            raise ValueError("cannot load phonetic weights into a - Phonetic model")
        model.phonetic.load_state_dict(_strip(acoustic_state, "phonetic."))
    if visual_state is not None:
        if not model.config.use_graphic:
            raise ValueError("cannot load graphic weights into a - Graphic model")
        model.graphic.load_state_dict(_strip(visual_state, "graphic."))


def _strip(state: dict, prefix: str) -> dict:
    out = {k[len(prefix):]: v for k, v in state.items() if k.startswith(prefix)}
    if not out:
        raise KeyError(f"checkpoint holds no tensors under {prefix!r}")
    return out
