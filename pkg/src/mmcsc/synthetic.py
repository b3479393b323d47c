"""Deterministic toy-language fixtures for end-to-end runs.

The language has 300 characters: 100 "head" characters with unique
pronunciations and unrelated glyphs, and 200 "tail" characters organized
into 50 homophone groups of 4 (identical pinyin) and, orthogonally, 50
glyph families of 4 (high-overlap bitmaps). A sentence is a sequence of
two-character words; each head licenses exactly 2 tails, chosen so that
a tail set never contains two members of the same homophone group or
glyph family. Corruptions swap a tail for a group-mate (phonetic error)
or family-mate (graphic error); heads are never corrupted.

The constants below are brute-force verified (see tests) to make every
typo uniquely invertible: given the head and the typo's sound OR shape,
exactly one licensed tail explains it. Context alone leaves a 4-way
ambiguity, which is what the acoustic/visual channels must resolve.
The inventory is kept at 200 words so each one recurs enough times in a
500-sentence corpus for its licensing to be learnable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import ConfusionSpec, synthesize_corpus
from .glyph import GlyphAtlas, build_synthetic_atlas
from .pinyin import PinyinTable

HEAD_COUNT = 100
TAIL_COUNT = 200
GROUP_SIZE = 4          # homophone group width
FAMILY_SIZE = 4         # glyph family width
GROUPS = TAIL_COUNT // GROUP_SIZE
WORDS_PER_HEAD = 2
STRIDE = 51             # tail-set stride; odd => tail sets tile all 200 tails
FAMILY_MULT = 7         # family(t) = (group + 7*member) % 50; no ambiguous typos

_CODEPOINT_BASE = 0x4E00  # CJK unified ideographs

_INITIALS = ("b", "p", "m", "f", "d", "t", "n", "l", "g", "k", "h", "j", "q",
             "x", "zh", "ch", "sh", "r", "z", "c", "s", "w", "y")
_FINALS = ("a", "o", "e", "i", "u", "ai", "ei", "ao", "ou", "an", "en",
           "ang", "eng", "ong")


def _syllables(n: int) -> list:
    out = []
    for tone in "1234":
        for ini in _INITIALS:
            for fin in _FINALS:
                out.append(ini + fin + tone)
                if len(out) == n:
                    return out
    raise ValueError(f"syllable pool exhausted at {len(out)} < {n}")


@dataclass
class ToyLanguage:
    heads: list            # 100 anchor chars, unique pinyin, own glyphs
    tails: list            # 200 chars; index t -> group t//4, member t%4
    table: PinyinTable     # homophonic table (group members share pinyin)
    groups: list           # homophone groups, each a list of 4 tail chars
    families: list         # glyph families, each a list of 4 tail chars
    word_tails: dict       # head char -> the 4 licensed tail chars

    def chars(self) -> list:
        return self.heads + self.tails

    def confusion_spec(self, rate: float) -> ConfusionSpec:
        phonetic, graphic = {}, {}
        for group in self.groups:
            for ch in group:
                phonetic[ch] = [c for c in group if c != ch]
        for family in self.families:
            for ch in family:
                graphic[ch] = [c for c in family if c != ch]
        return ConfusionSpec(rate=rate, phonetic=phonetic, graphic=graphic)

    def atlas(self, seed: int = 0) -> GlyphAtlas:
        similar = {ch: [c for c in family if c != ch]
                   for family in self.families for ch in family}
        return build_synthetic_atlas(self.chars(), seed=seed, similar=similar)

    def injective_table(self) -> PinyinTable:
        """One unique syllable per character — pinyin determines the
        character exactly (acoustic-pretraining ceiling is 100%)."""
        sylls = _syllables(len(self.chars()))
        return PinyinTable({ch: sylls[i] for i, ch in enumerate(self.chars())})

    def sentences(self, n: int, seed, min_words: int = 3,
                  max_words: int = 6) -> list:
        rng = np.random.default_rng(seed)
        out = []
        for _ in range(n):
            k = int(rng.integers(min_words, max_words + 1))
            parts = []
            for _ in range(k):
                head = self.heads[int(rng.integers(HEAD_COUNT))]
                licensed = self.word_tails[head]
                tail = licensed[int(rng.integers(len(licensed)))]
                parts.append(head + tail)
            out.append("".join(parts))
        return out

    def coverage_sentences(self, seed, words_per_sentence: int = 6) -> list:
        """Every licensed word exactly once, packed into sentences in a
        shuffled order — guarantees all 300 characters appear."""
        rng = np.random.default_rng(seed)
        words = [h + t for h in self.heads for t in self.word_tails[h]]
        order = rng.permutation(len(words))
        shuffled = [words[i] for i in order]
        return ["".join(shuffled[i:i + words_per_sentence])
                for i in range(0, len(shuffled), words_per_sentence)]


def make_toy_language() -> ToyLanguage:
    heads = [chr(_CODEPOINT_BASE + k) for k in range(HEAD_COUNT)]
    tails = [chr(_CODEPOINT_BASE + HEAD_COUNT + k) for k in range(TAIL_COUNT)]

    sylls = _syllables(HEAD_COUNT + GROUPS)
    table = {}
    for m, ch in enumerate(heads):
        table[ch] = sylls[m]
    groups = []
    for i in range(GROUPS):
        group = tails[i * GROUP_SIZE:(i + 1) * GROUP_SIZE]
        groups.append(group)
        for ch in group:
            table[ch] = sylls[HEAD_COUNT + i]

    family_of = lambda t: (t // GROUP_SIZE + FAMILY_MULT * (t % GROUP_SIZE)) % GROUPS
    families = [[] for _ in range(GROUPS)]
    for t in range(TAIL_COUNT):
        families[family_of(t)].append(tails[t])

    word_tails = {}
    seen = {}
    for m, head in enumerate(heads):
        ts = [(2 * m + STRIDE * k) % TAIL_COUNT for k in range(WORDS_PER_HEAD)]
        if len({t // GROUP_SIZE for t in ts}) != WORDS_PER_HEAD:
            raise AssertionError(f"head {m}: licensed tails collide in a homophone group")
        if len({family_of(t) for t in ts}) != WORDS_PER_HEAD:
            raise AssertionError(f"head {m}: licensed tails collide in a glyph family")
        word_tails[head] = [tails[t] for t in ts]
        for t in ts:
            seen[t] = seen.get(t, 0) + 1
    if sorted(seen) != list(range(TAIL_COUNT)) or set(seen.values()) != {1}:
        raise AssertionError("tail coverage is not exactly 1 head per tail")

    return ToyLanguage(heads=heads, tails=tails, table=PinyinTable(table),
                       groups=groups, families=families, word_tails=word_tails)


def build_toy_corpus(lang: ToyLanguage, n_train: int = 500, n_test: int = 100,
                     rate: float = 0.15, seed: int = 0,
                     min_words: int = 1, max_words: int = 3):
    """(train, test) example lists. The train split opens with a coverage
    block so the corpus vocabulary always holds all 300 characters.

    Sentences are short (1-3 words by default): with 500 training pairs
    there are too few occurrences of any long word sequence to pin down
    long-range statistics, so short sentences keep the train and test
    distributions honestly alike. Two coverage blocks guarantee every
    word at least two clean occurrences.
    """
    coverage = (lang.coverage_sentences(seed=[seed, 0], words_per_sentence=2)
                + lang.coverage_sentences(seed=[seed, 5], words_per_sentence=2))
    if len(coverage) > n_train:
        raise ValueError(f"n_train={n_train} cannot fit the {len(coverage)}-sentence coverage blocks")
    train_clean = coverage + lang.sentences(n_train - len(coverage), seed=[seed, 1],
                                            min_words=min_words, max_words=max_words)
    test_clean = lang.sentences(n_test, seed=[seed, 2],
                                min_words=min_words, max_words=max_words)
    spec = lang.confusion_spec(rate)
    train = synthesize_corpus(train_clean, spec, seed=[seed, 3])
    test = synthesize_corpus(test_clean, spec, seed=[seed, 4])
    return train, test
