"""Spell-checking corpora: aligned source/target pairs, vocabulary,
synthetic corruption, and batching with CLS/SEP framing.

Wire formats: UTF-8 TSV ``source<TAB>target`` one pair per line, or JSON
lines with ``source``/``target`` keys. A confusion spec is JSON with keys
``rate``, ``phonetic``, ``graphic``.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

PAD, UNK, CLS, SEP, MASK = "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"
SPECIALS = (PAD, UNK, CLS, SEP, MASK)


class CorpusError(ValueError):
    pass


@dataclass(frozen=True)
class CscExample:
    """One character-aligned (misspelled, correct) sentence pair."""

    source: str
    target: str

    def __post_init__(self):
        if len(self.source) != len(self.target):
            raise CorpusError(
                f"source/target length mismatch: {len(self.source)} vs {len(self.target)}")

    def error_positions(self) -> set:
        return {i for i, (s, t) in enumerate(zip(self.source, self.target)) if s != t}


class Vocabulary:
    """Dense token<->id map with fixed leading special ids.

    ``tokens`` supplies the non-special entries in a caller-chosen order;
    duplicates and specials in the input are ignored.
    """

    def __init__(self, tokens=()):
        self._tokens: list[str] = list(SPECIALS)
        self._ids: dict[str, int] = {t: i for i, t in enumerate(self._tokens)}
        for tok in tokens:
            if tok not in self._ids:
                self._ids[tok] = len(self._tokens)
                self._tokens.append(tok)

    @classmethod
    def from_corpus(cls, examples) -> "Vocabulary":
        """Vocabulary over all characters in the corpus, sorted for
        run-to-run determinism."""
        chars = set()
        for ex in examples:
            chars.update(ex.source)
            chars.update(ex.target)
        return cls(sorted(chars))

    def __len__(self):
        return len(self._tokens)

    def __contains__(self, tok):
        return tok in self._ids

    def id(self, tok: str) -> int:
        return self._ids.get(tok, self._ids[UNK])

    def token(self, idx: int) -> str:
        return self._tokens[idx]

    @property
    def pad_id(self):
        return self._ids[PAD]

    @property
    def unk_id(self):
        return self._ids[UNK]

    @property
    def cls_id(self):
        return self._ids[CLS]

    @property
    def sep_id(self):
        return self._ids[SEP]

    def encode(self, text: str) -> list:
        return [self.id(ch) for ch in text]

    def tokens(self) -> list:
        return list(self._tokens)

    def save(self, path):
        Path(path).write_text("\n".join(self._tokens) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if lines[:len(SPECIALS)] != list(SPECIALS):
            raise CorpusError(f"{path}: vocabulary file must start with {SPECIALS}")
        return cls(lines[len(SPECIALS):])


@dataclass
class ConfusionSpec:
    """Substitution candidates for corpus synthesis, split by similarity
    kind; each character is corrupted independently with probability
    ``rate`` by a uniform draw over its combined candidate list."""

    rate: float
    phonetic: dict = field(default_factory=dict)
    graphic: dict = field(default_factory=dict)

    def candidates(self, ch: str) -> list:
        return list(self.phonetic.get(ch, ())) + list(self.graphic.get(ch, ()))

    def validate(self, vocab: Vocabulary) -> list:
        problems = []
        for kind, table in (("phonetic", self.phonetic), ("graphic", self.graphic)):
            for ch, cands in table.items():
                for c in cands:
                    if c == ch:
                        problems.append(f"{kind}: {ch!r} lists itself as a candidate")
                    elif c not in vocab:
                        problems.append(f"{kind}: candidate {c!r} for {ch!r} not in vocabulary")
        if not 0.0 <= self.rate <= 1.0:
            problems.append(f"rate {self.rate} outside [0, 1]")
        return problems

    def to_json(self) -> dict:
        return {"rate": self.rate, "phonetic": self.phonetic, "graphic": self.graphic}

    @classmethod
    def from_json(cls, payload: dict) -> "ConfusionSpec":
        return cls(rate=float(payload["rate"]),
                   phonetic={k: list(v) for k, v in payload.get("phonetic", {}).items()},
                   graphic={k: list(v) for k, v in payload.get("graphic", {}).items()})

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_json(), ensure_ascii=False, sort_keys=True,
                                         indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "ConfusionSpec":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def load_corpus(path, fmt: str = "tsv"):
    """Read a corpus file; returns (examples, diagnostics).

    Malformed records are skipped and described (with 1-based line
    numbers) in the diagnostics list; an entirely empty result is an
    error.
    """
    path = Path(path)
    if fmt not in ("tsv", "jsonl"):
        raise CorpusError(f"unknown corpus format {fmt!r} (expected tsv or jsonl)")
    examples: list[CscExample] = []
    diagnostics: list[str] = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            if fmt == "tsv":
                parts = line.split("\t")
                if len(parts) != 2:
                    raise CorpusError(f"expected 2 tab-separated fields, got {len(parts)}")
                src, tgt = parts
            else:
                record = json.loads(line)
                src, tgt = record["source"], record["target"]
            examples.append(CscExample(src, tgt))
        except (CorpusError, KeyError, json.JSONDecodeError) as exc:
            diagnostics.append(f"{path}:{lineno}: {exc}")
    for msg in diagnostics:
        log.warning("%s", msg)
    if not examples:
        raise CorpusError(f"{path}: no valid examples" + (f" ({len(diagnostics)} rejected)" if diagnostics else ""))
    return examples, diagnostics


def save_corpus(path, examples, fmt: str = "tsv"):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if fmt == "tsv":
        text = "".join(f"{ex.source}\t{ex.target}\n" for ex in examples)
    elif fmt == "jsonl":
        text = "".join(json.dumps({"source": ex.source, "target": ex.target},
                                  ensure_ascii=False) + "\n" for ex in examples)
    else:
        raise CorpusError(f"unknown corpus format {fmt!r}")
    path.write_text(text, encoding="utf-8")
    return path


def synthesize_corpus(clean, spec: ConfusionSpec, seed: int):
    """Corrupt clean sentences into (source, target) pairs.

    Each character with a nonempty candidate list is independently
    replaced with probability ``spec.rate``; pure function of
    (clean, spec, seed).
    """
    rng = np.random.default_rng(seed)
    out = []
    for sentence in clean:
        chars = list(sentence)
        for i, ch in enumerate(chars):
            cands = spec.candidates(ch)
            if cands and rng.random() < spec.rate:
                chars[i] = cands[int(rng.integers(len(cands)))]
        out.append(CscExample("".join(chars), sentence))
    return out


@dataclass
class Batch:
    """Padded id matrices for one batch of examples.

    ``attention_mask`` is 1 over CLS/chars/SEP; ``loss_mask`` is 1 only
    over real character positions, so specials and PAD never contribute
    to the loss or the metrics.
    """

    input_ids: np.ndarray     # (B, L) int
    target_ids: np.ndarray    # (B, L) int
    attention_mask: np.ndarray  # (B, L) float 0/1
    loss_mask: np.ndarray     # (B, L) int 0/1
    lengths: np.ndarray       # (B,) original char counts after truncation
    tokens: list              # (B, L) surface tokens aligned with input_ids


def batch(examples, vocab: Vocabulary, max_len: int) -> Batch:
    """Frame each sentence as [CLS] chars [SEP] PAD... of width max_len."""
    if max_len < 2:
        raise CorpusError(f"max_len {max_len} leaves no room for CLS/SEP framing")
    n = len(examples)
    input_ids = np.full((n, max_len), vocab.pad_id, dtype=np.int64)
    target_ids = np.full((n, max_len), vocab.pad_id, dtype=np.int64)
    attention_mask = np.zeros((n, max_len), dtype=np.float32)
    loss_mask = np.zeros((n, max_len), dtype=np.int64)
    lengths = np.zeros(n, dtype=np.int64)
    tokens: list[list[str]] = []
    budget = max_len - 2
    for r, ex in enumerate(examples):
        src, tgt = ex.source, ex.target
        if len(src) > budget:
            log.warning("sentence of %d chars truncated to %d", len(src), budget)
            src, tgt = src[:budget], tgt[:budget]
        row = [CLS] + list(src) + [SEP]
        input_ids[r, :len(row)] = [vocab.cls_id] + vocab.encode(src) + [vocab.sep_id]
        target_ids[r, :len(row)] = [vocab.cls_id] + vocab.encode(tgt) + [vocab.sep_id]
        attention_mask[r, :len(row)] = 1.0
        loss_mask[r, 1:1 + len(src)] = 1
        lengths[r] = len(src)
        tokens.append(row + [PAD] * (max_len - len(row)))
    return Batch(input_ids, target_ids, attention_mask, loss_mask, lengths, tokens)
