"""Pinyin decomposition: character -> letter sequence + tone digit.

A character's pronunciation string like ``zhong1`` becomes the symbol
sequence [z, h, o, n, g, 1]; the tone digit (1-4, 0 for neutral) is
always last. Characters without a table entry (specials, punctuation)
decompose to the singleton [NO_PINYIN].
"""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np

LETTERS = "abcdefghijklmnopqrstuvwxyz"
TONES = "01234"
NO_PINYIN = "[NOPY]"
PAD = "[PAD]"

_VALID = re.compile(r"^[a-z]+[0-4]$")


class PinyinError(ValueError):
    pass


class PinyinAlphabet:
    """Fixed 33-symbol inventory: PAD, NO_PINYIN, a-z, tone digits 0-4."""

    def __init__(self):
        self._symbols = [PAD, NO_PINYIN] + list(LETTERS) + list(TONES)
        self._ids = {s: i for i, s in enumerate(self._symbols)}

    def __len__(self):
        return len(self._symbols)

    def id(self, symbol: str) -> int:
        try:
            return self._ids[symbol]
        except KeyError:
            raise PinyinError(f"symbol {symbol!r} not in the pinyin alphabet") from None

    def symbol(self, idx: int) -> str:
        return self._symbols[idx]

    @property
    def pad_id(self) -> int:
        return 0


ALPHABET = PinyinAlphabet()


class PinyinTable:
    """char -> pinyin string; polyphones keep the first listed reading."""

    def __init__(self, entries: dict | None = None):
        self._entries: dict[str, str] = dict(entries or {})

    @classmethod
    def load(cls, path) -> "PinyinTable":
        entries: dict[str, str] = {}
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2 or len(parts[0]) != 1:
                raise PinyinError(f"{path}:{lineno}: expected 'char<TAB>pinyin', got {line!r}")
            ch, py = parts
            entries.setdefault(ch, py)
        return cls(entries)

    def save(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("".join(f"{ch}\t{py}\n" for ch, py in sorted(self._entries.items())),
                        encoding="utf-8")
        return path

    def get(self, ch: str):
        return self._entries.get(ch)

    def __contains__(self, ch):
        return ch in self._entries

    def __len__(self):
        return len(self._entries)

    def items(self):
        return self._entries.items()


def validate_table(table: PinyinTable) -> list:
    """Diagnostics for entries violating 'lowercase letters + one tone digit'."""
    problems = []
    for ch, py in table.items():
        if not _VALID.match(py):
            problems.append(f"{ch!r} -> {py!r}: must be lowercase letters followed by one digit 0-4")
    return problems


def decompose(ch: str, table: PinyinTable) -> list:
    """Letter-by-letter symbols ending in the tone digit; [NO_PINYIN] when
    the character has no entry."""
    py = table.get(ch)
    if py is None:
        return [NO_PINYIN]
    return list(py)


def encode_batch(seqs, alphabet: PinyinAlphabet = ALPHABET):
    """Right-pad symbol sequences into an id matrix; returns (ids, lengths).

    Unknown symbols raise: the table and alphabet are out of sync.
    """
    if not seqs:
        return np.zeros((0, 0), dtype=np.int64), np.zeros(0, dtype=np.int64)
    lengths = np.array([len(s) for s in seqs], dtype=np.int64)
    width = int(lengths.max())
    ids = np.full((len(seqs), width), alphabet.pad_id, dtype=np.int64)
    for r, seq in enumerate(seqs):
        for c, symbol in enumerate(seq):
            ids[r, c] = alphabet.id(symbol)
    return ids, lengths
