"""The three training procedures: acoustic pretraining (pinyin -> correct
characters), visual pretraining (glyph bitmap -> character identity), and
the final spell-checker fine-tune with per-epoch checkpointing and
best-by-dev-F1 retention.

All three are deterministic given the config seed: batch order, dropout
masks, and parameter init each draw from seeded streams keyed on
(seed, epoch, purpose), so an interrupted run resumed from ``last.bin``
reproduces the uninterrupted run's next-step loss bitwise.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import nn
from .corpus import Vocabulary, batch as make_batch, load_corpus
from .glyph import load_atlas
from .model import (AcousticPretrainModel, ModelConfig, SpellChecker,
                    VisualPretrainModel, transfer_encoder_weights)
from .encoders import GraphicEncoder, PhoneticEncoder
from .pinyin import ALPHABET, PinyinTable, decompose, encode_batch

log = logging.getLogger(__name__)

# rng stream tags so batch order, dropout masks, semantic-view masking, and
# corruption replay never share draws
_ORDER, _DROPOUT, _MASKING, _REPLAY = 0, 1, 2, 3


class DivergenceError(RuntimeError):
    """Raised when a training loss goes non-finite."""


@dataclass
class TrainConfig:
    """One flat config shared by all three procedures; CLI flags mirror
    these field names."""

    corpus: str = ""
    pinyin_table: str = ""
    atlas: str = ""
    checkpoint_dir: str = "checkpoints"
    epochs: int = 30
    batch_size: int = 16
    peak_lr: float = 1e-3
    warmup_frac: float = 0.1
    weight_decay: float = 0.01
    seed: int = 0
    max_len: int = 16
    dev_frac: float = 0.1
    semantic_mask_rate: float = 0.25  # finetune only; see SpellChecker.encode
    typo_mask_rate: float = 0.5  # extra semantic masking at corrupted positions
    error_weight: float = 4.0   # loss multiplier at corrupted positions
    replay_frac: float = 0.8    # fraction of train examples recorrupted per epoch
    replay_rate: float = 0.25   # per-char corruption rate when replaying
    dim: int = 64
    semantic_layers: int = 2
    heads: int = 2
    ffn_dim: int = 256
    phonetic_layers: int = 4
    fusion_layers: int = 3
    dropout: float = 0.1
    use_phonetic: bool = True
    use_graphic: bool = True
    selective_fusion: bool = True
    single_font: bool = False

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0.0 <= self.warmup_frac <= 1.0:
            raise ValueError(f"warmup_frac must lie in [0, 1], got {self.warmup_frac}")
        if not 0.0 <= self.dev_frac < 1.0:
            raise ValueError(f"dev_frac must lie in [0, 1), got {self.dev_frac}")
        if not 0.0 <= self.semantic_mask_rate < 1.0:
            raise ValueError(f"semantic_mask_rate must lie in [0, 1), "
                             f"got {self.semantic_mask_rate}")
        if not 0.0 <= self.typo_mask_rate <= 1.0:
            raise ValueError(f"typo_mask_rate must lie in [0, 1], "
                             f"got {self.typo_mask_rate}")
        if self.error_weight <= 0.0:
            raise ValueError(f"error_weight must be > 0, got {self.error_weight}")
        if not 0.0 <= self.replay_frac <= 1.0 or not 0.0 <= self.replay_rate < 1.0:
            raise ValueError("replay_frac must lie in [0, 1] and replay_rate in [0, 1)")

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            dim=self.dim, semantic_layers=self.semantic_layers, heads=self.heads,
            ffn_dim=self.ffn_dim, phonetic_layers=self.phonetic_layers,
            fusion_layers=self.fusion_layers, max_len=self.max_len,
            dropout=self.dropout, use_phonetic=self.use_phonetic,
            use_graphic=self.use_graphic, selective_fusion=self.selective_fusion,
            single_font=self.single_font,
        )

    def to_json(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_json(cls, payload: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(payload) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**payload)


@dataclass
class TrainReport:
    procedure: str
    losses: list            # mean loss per epoch
    metrics: dict
    wall_clock: float       # seconds; excluded from determinism comparisons
    config: dict
    checkpoint: str

    def to_json(self) -> dict:
        return dataclasses.asdict(self)


def reseed(rng: np.random.Generator, key) -> None:
    """Rewind a shared generator to a deterministic point in place, so every
    module holding a reference sees the new stream."""
    rng.bit_generator.state = np.random.PCG64(np.random.SeedSequence(key)).state


def _epoch_order(seed: int, epoch: int, n: int) -> np.ndarray:
    return np.random.default_rng([seed, epoch, _ORDER]).permutation(n)


def _check_finite(value: float, procedure: str, epoch: int, step: int) -> None:
    if not math.isfinite(value):
        raise DivergenceError(
            f"{procedure}: non-finite loss {value} at epoch {epoch} step {step}")


def _new_optimizer(model: nn.Module, config: TrainConfig, steps_per_epoch: int) -> nn.AdamW:
    total = config.epochs * steps_per_epoch
    return nn.AdamW(model.named_parameters(), peak_lr=config.peak_lr,
                    weight_decay=config.weight_decay,
                    warmup_steps=int(round(config.warmup_frac * total)),
                    total_steps=total)


def _token_pinyin(vocab: Vocabulary, table: PinyinTable):
    """Symbol-id rows aligned with vocabulary ids (specials -> no-pinyin)."""
    seqs = [decompose(tok, table) for tok in vocab.tokens()]
    return encode_batch(seqs)


def observed_confusions(examples) -> dict:
    """Directed (correct char -> typo chars seen for it) map read off the
    corpus itself; the raw material for corruption replay."""
    pairs: dict = {}
    for ex in examples:
        for i in ex.error_positions():
            bucket = pairs.setdefault(ex.target[i], [])
            if ex.source[i] not in bucket:
                bucket.append(ex.source[i])
    return pairs


def confusion_candidates(chars, table: PinyinTable, atlas) -> dict:
    """Corruption candidates derived from the modality resources rather
    than from whatever typos the corpus happens to contain: characters
    sharing a full pinyin reading are confusable by sound, and characters
    whose atlas bitmaps agree on >= 75% of pixels are confusable by shape
    (drawn-similar glyphs overlap on >= 80%, unrelated ones near 50%).
    """
    chars = sorted(ch for ch in set(chars) if len(ch) == 1)
    cands: dict = {ch: [] for ch in chars}
    by_reading: dict = {}
    for ch in chars:
        reading = table.get(ch)
        if reading:
            by_reading.setdefault(reading, []).append(ch)
    for group in by_reading.values():
        for ch in group:
            cands[ch] += [c for c in group if c != ch]
    drawn = [ch for ch in chars if ch in atlas]
    if drawn:
        x = np.stack([atlas.lookup(ch)[0].reshape(-1) for ch in drawn])
        x = (x >= 128).astype(np.float32)
        agree = (x @ x.T + (1.0 - x) @ (1.0 - x).T) / x.shape[1]
        for i, ch in enumerate(drawn):
            for j in np.nonzero(agree[i] >= 0.75)[0]:
                if j != i and drawn[j] not in cands[ch]:
                    cands[ch].append(drawn[j])
    return {ch: c for ch, c in cands.items() if c}


def replay_corrupt(ex, pairs: dict, rate: float, rng: np.random.Generator):
    """Fresh (source, target) pair: the clean target re-corrupted at new
    positions with confusions drawn from ``pairs``."""
    from .corpus import CscExample

    chars = list(ex.target)
    for i, ch in enumerate(chars):
        cands = pairs.get(ch)
        if cands and rng.random() < rate:
            chars[i] = cands[int(rng.integers(len(cands)))]
    return CscExample("".join(chars), ex.target)


def _load_inputs(config: TrainConfig):
    examples, diagnostics = load_corpus(config.corpus)
    if diagnostics:
        log.info("corpus %s: %d lines skipped", config.corpus, len(diagnostics))
    vocab = Vocabulary.from_corpus(examples)
    return examples, vocab


def pretrain_acoustic(config: TrainConfig) -> TrainReport:
    """Train the phonetic encoder to recover correct characters from the
    pinyin of the (possibly erroneous) source sentences."""
    t0 = time.perf_counter()
    examples, vocab = _load_inputs(config)
    table = PinyinTable.load(config.pinyin_table)
    py_ids, py_lens = _token_pinyin(vocab, table)

    rng = np.random.default_rng(config.seed)
    phonetic = PhoneticEncoder(len(ALPHABET), config.dim, config.heads, config.ffn_dim,
                               config.max_len, rng, config.phonetic_layers, config.dropout)
    model = AcousticPretrainModel(phonetic, len(vocab), config.dim, rng)

    def step_loss(b):
        flat = b.input_ids.reshape(-1)
        logits = model(py_ids[flat], py_lens[flat], b.attention_mask)
        return nn.softmax_cross_entropy(logits, b.target_ids, b.loss_mask)

    def accuracy():
        model.set_training(False)
        hit = seen = 0
        for b in _full_pass(examples, vocab, config):
            flat = b.input_ids.reshape(-1)
            with nn.no_grad():
                logits = model(py_ids[flat], py_lens[flat], b.attention_mask)
            pred = logits.data.argmax(axis=-1)
            sup = b.loss_mask.astype(bool)
            hit += int((pred[sup] == b.target_ids[sup]).sum())
            seen += int(sup.sum())
        return hit / max(seen, 1)

    losses = _run_epochs("acoustic", model, rng, examples, vocab, config, step_loss)
    acc = accuracy()
    path = _save(config, "acoustic.bin", model.state_dict(),
                 {"procedure": "acoustic", "recovery_accuracy": acc,
                  "config": config.to_json()})
    return TrainReport("acoustic", losses, {"recovery_accuracy": acc},
                       time.perf_counter() - t0, config.to_json(), str(path))


def pretrain_visual(config: TrainConfig) -> TrainReport:
    """Train the graphic encoder to classify every (non-special) vocabulary
    character from its rendered bitmap."""
    t0 = time.perf_counter()
    examples, vocab = _load_inputs(config)
    atlas = load_atlas(config.atlas)
    char_ids = np.array([vocab.id(t) for t in vocab.tokens() if len(t) == 1],
                        dtype=np.int64)
    images = np.stack([atlas.lookup(vocab.token(int(i))) for i in char_ids])
    if config.single_font:
        images = np.repeat(images[:, :1], 3, axis=1)
    images = images.astype(np.float32) / 255.0

    rng = np.random.default_rng(config.seed)
    graphic = GraphicEncoder(config.dim, rng)
    model = VisualPretrainModel(graphic, len(vocab), config.dim, rng)
    n = len(char_ids)
    steps_per_epoch = math.ceil(n / config.batch_size)
    opt = _new_optimizer(model, config, steps_per_epoch)

    losses = []
    for epoch in range(config.epochs):
        model.set_training(True)
        reseed(rng, [config.seed, epoch, _DROPOUT])
        order = _epoch_order(config.seed, epoch, n)
        epoch_losses = []
        for s in range(steps_per_epoch):
            idx = order[s * config.batch_size:(s + 1) * config.batch_size]
            logits = model(images[idx]).reshape(1, len(idx), len(vocab))
            loss = nn.softmax_cross_entropy(
                logits, char_ids[idx][None, :], np.ones((1, len(idx)), dtype=np.int64))
            value = float(loss.data)
            _check_finite(value, "visual", epoch, s)
            loss.backward()
            opt.step()
            opt.zero_grad()
            epoch_losses.append(value)
        losses.append(float(np.mean(epoch_losses)))
        log.info("visual epoch %d loss %.4f", epoch, losses[-1])

    model.set_training(False)
    with nn.no_grad():
        pred = model(images).data.argmax(axis=-1)
    acc = float((pred == char_ids).mean())
    path = _save(config, "visual.bin", model.state_dict(),
                 {"procedure": "visual", "classification_accuracy": acc,
                  "config": config.to_json()})
    return TrainReport("visual", losses, {"classification_accuracy": acc},
                       time.perf_counter() - t0, config.to_json(), str(path))


def finetune(config: TrainConfig, acoustic: str | None = None,
             visual: str | None = None, resume: str | None = None) -> TrainReport:
    """Train the full spell checker; per-epoch ``last.bin``, best dev
    correction F1 kept as ``best.bin``. ``resume`` restarts from a
    ``last.bin`` written by a previous run with the same config."""
    from .evaluation import evaluate

    t0 = time.perf_counter()
    examples, vocab = _load_inputs(config)
    table = PinyinTable.load(config.pinyin_table)
    atlas = load_atlas(config.atlas)

    n_dev = int(round(config.dev_frac * len(examples)))
    perm = np.random.default_rng([config.seed, 2]).permutation(len(examples))
    dev = [examples[i] for i in perm[:n_dev]]
    train = [examples[i] for i in perm[n_dev:]]
    if not train:
        raise ValueError("dev split leaves no training examples")

    rng = np.random.default_rng(config.seed)
    model = SpellChecker(vocab, table, atlas, config.model_config(), rng)
    if acoustic is not None:
        transfer_encoder_weights(model, acoustic_state=nn.load_checkpoint(acoustic))
    if visual is not None:
        transfer_encoder_weights(model, visual_state=nn.load_checkpoint(visual))

    steps_per_epoch = math.ceil(len(train) / config.batch_size)
    opt = _new_optimizer(model, config, steps_per_epoch)
    start_epoch = 0
    if resume is not None:
        model.load_state_dict(nn.load_checkpoint(resume))
        sidecar = nn.sidecar_path(resume)
        with open(sidecar, encoding="utf-8") as f:
            start_epoch = json.load(f)["epoch"] + 1
        opt.t = start_epoch * steps_per_epoch
        log.info("resuming from %s at epoch %d", resume, start_epoch)

    ckpt_dir = Path(config.checkpoint_dir)
    best_f1, best_epoch = -1.0, -1
    losses, dev_curve = [], []
    mask_id = vocab.id("[MASK]")
    confusions = {}
    if config.replay_frac > 0:
        confusions = confusion_candidates(
            (t for t in vocab.tokens() if len(t) == 1), table, atlas)
        for tgt, seen in observed_confusions(train).items():
            bucket = confusions.setdefault(tgt, [])
            bucket += [s for s in seen if s not in bucket]

    for epoch in range(start_epoch, config.epochs):
        model.set_training(True)
        reseed(rng, [config.seed, epoch, _DROPOUT])
        mask_rng = np.random.default_rng([config.seed, epoch, _MASKING])
        replay_rng = np.random.default_rng([config.seed, epoch, _REPLAY])
        order = _epoch_order(config.seed, epoch, len(train))
        epoch_losses = []
        for s in range(steps_per_epoch):
            idx = order[s * config.batch_size:(s + 1) * config.batch_size]
            chosen = [train[i] for i in idx]
            if confusions:
                chosen = [replay_corrupt(ex, confusions, config.replay_rate, replay_rng)
                          if replay_rng.random() < config.replay_frac else ex
                          for ex in chosen]
            b = make_batch(chosen, vocab, config.max_len)
            semantic_ids = None
            if config.semantic_mask_rate > 0.0 or config.typo_mask_rate > 0.0:
                drop = (mask_rng.random(b.input_ids.shape) < config.semantic_mask_rate)
                # Corrupted positions are masked at their own rate: with the
                # wrong token hidden, sound/shape plus context already pick
                # the intended char, so the visible-typo case reduces to
                # learning when to distrust the token it sees.
                typo = b.input_ids != b.target_ids
                drop |= typo & (mask_rng.random(b.input_ids.shape)
                                < config.typo_mask_rate)
                drop &= b.loss_mask.astype(bool)
                semantic_ids = np.where(drop, mask_id, b.input_ids)
            weights = None
            if config.error_weight != 1.0:
                weights = np.where(b.input_ids != b.target_ids,
                                   config.error_weight, 1.0)
            loss = model.loss(b, semantic_ids=semantic_ids, weights=weights)
            value = float(loss.data)
            _check_finite(value, "finetune", epoch, s)
            loss.backward()
            opt.step()
            opt.zero_grad()
            epoch_losses.append(value)
        losses.append(float(np.mean(epoch_losses)))

        model.set_training(False)
        if dev:
            preds, _ = model.correct([ex.source for ex in dev])
            f1 = evaluate(preds, dev).correction.f1
        else:
            f1 = 0.0
        dev_curve.append(f1)
        log.info("finetune epoch %d loss %.4f dev F1 %.4f", epoch, losses[-1], f1)

        state = model.state_dict()
        _save(config, "last.bin", state,
              {"procedure": "finetune", "epoch": epoch, "dev_f1": f1,
               "loss": losses[-1], "config": config.to_json()})
        if f1 > best_f1:
            best_f1, best_epoch = f1, epoch
            _save(config, "best.bin", state,
                  {"procedure": "finetune", "epoch": epoch, "dev_f1": f1,
                   "loss": losses[-1], "config": config.to_json()})

    best_path = ckpt_dir / ("best.bin" if best_epoch >= 0 else "last.bin")
    metrics = {"dev_f1": best_f1 if best_epoch >= 0 else 0.0,
               "best_epoch": best_epoch, "dev_f1_curve": dev_curve,
               "train_size": len(train), "dev_size": len(dev)}
    return TrainReport("finetune", losses, metrics, time.perf_counter() - t0,
                       config.to_json(), str(best_path))


def load_model(checkpoint: str, config: TrainConfig) -> SpellChecker:
    """Rebuild a spell checker from a finetune checkpoint plus the config
    that produced it (corpus/table/atlas paths included)."""
    examples, vocab = _load_inputs(config)
    table = PinyinTable.load(config.pinyin_table)
    atlas = load_atlas(config.atlas)
    model = SpellChecker(vocab, table, atlas, config.model_config(),
                         np.random.default_rng(config.seed))
    model.load_state_dict(nn.load_checkpoint(checkpoint))
    model.set_training(False)
    return model


def _full_pass(examples, vocab, config):
    for s in range(0, len(examples), config.batch_size):
        yield make_batch(examples[s:s + config.batch_size], vocab, config.max_len)


def _run_epochs(procedure, model, rng, examples, vocab, config, step_loss) -> list:
    n = len(examples)
    steps_per_epoch = math.ceil(n / config.batch_size)
    opt = _new_optimizer(model, config, steps_per_epoch)
    losses = []
    for epoch in range(config.epochs):
        model.set_training(True)
        reseed(rng, [config.seed, epoch, _DROPOUT])
        order = _epoch_order(config.seed, epoch, n)
        epoch_losses = []
        for s in range(steps_per_epoch):
            idx = order[s * config.batch_size:(s + 1) * config.batch_size]
            b = make_batch([examples[i] for i in idx], vocab, config.max_len)
            loss = step_loss(b)
            value = float(loss.data)
            _check_finite(value, procedure, epoch, s)
            loss.backward()
            opt.step()
            opt.zero_grad()
            epoch_losses.append(value)
        losses.append(float(np.mean(epoch_losses)))
        log.info("%s epoch %d loss %.4f", procedure, epoch, losses[-1])
    return losses


def _save(config: TrainConfig, name: str, state: dict, meta: dict) -> Path:
    ckpt_dir = Path(config.checkpoint_dir)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    return nn.save_checkpoint(ckpt_dir / name, state, meta=meta)
