"""Pinyin decomposition and encoding contracts."""

import numpy as np
import pytest

from mmcsc.pinyin import (
    ALPHABET,
    NO_PINYIN,
    PinyinError,
    PinyinTable,
    decompose,
    encode_batch,
    validate_table,
)

TABLE = PinyinTable({"中": "zhong1", "棕": "zong1", "平": "ping2", "瓶": "ping2", "吗": "ma0"})


def test_decompose_letter_sequence_with_tone():
    assert decompose("中", TABLE) == ["z", "h", "o", "n", "g", "1"]
    assert decompose("棕", TABLE) == ["z", "o", "n", "g", "1"]


def test_decompose_neutral_tone():
    assert decompose("吗", TABLE) == ["m", "a", "0"]


def test_decompose_missing_char_and_specials():
    assert decompose("[CLS]", TABLE) == [NO_PINYIN]
    assert decompose("x", TABLE) == [NO_PINYIN]


def test_homophones_decompose_identically():
    assert decompose("平", TABLE) == decompose("瓶", TABLE) == ["p", "i", "n", "g", "2"]


def test_alphabet_size_and_round_trip():
    assert len(ALPHABET) == 33  # 26 letters + 5 tones + NO_PINYIN + PAD
    for sym in ["a", "z", "0", "4", NO_PINYIN]:
        assert ALPHABET.symbol(ALPHABET.id(sym)) == sym
    assert ALPHABET.pad_id == 0


def test_alphabet_rejects_unknown():
    with pytest.raises(PinyinError):
        ALPHABET.id("ß")


def test_validate_table():
    bad = PinyinTable({"中": "zhong1", "好": "hao", "大": "DA4", "天": "tian5"})
    problems = validate_table(bad)
    assert len(problems) == 3
    assert not validate_table(TABLE)


def test_encode_batch_shapes_and_padding():
    seqs = [decompose("中", TABLE), decompose("吗", TABLE)]
    ids, lengths = encode_batch(seqs)
    assert ids.shape == (2, 6)
    np.testing.assert_array_equal(lengths, [6, 3])
    assert (ids[1, 3:] == ALPHABET.pad_id).all()


def test_encode_batch_no_pinyin_singleton():
    ids, lengths = encode_batch([[NO_PINYIN]])
    assert ids.shape == (1, 1)
    assert lengths[0] == 1
    assert ids[0, 0] == ALPHABET.id(NO_PINYIN)


def test_encode_batch_empty():
    ids, lengths = encode_batch([])
    assert ids.shape == (0, 0) and lengths.shape == (0,)


def test_table_load_save_and_polyphone_first_wins(tmp_path):
    p = tmp_path / "t.tsv"
    p.write_text("# comment\n地\tde0\n地\tdi4\n中\tzhong1\n", encoding="utf-8")
    table = PinyinTable.load(p)
    assert table.get("地") == "de0"
    assert len(table) == 2
    table.save(tmp_path / "out.tsv")
    assert PinyinTable.load(tmp_path / "out.tsv").get("中") == "zhong1"


def test_table_load_rejects_malformed(tmp_path):
    p = tmp_path / "bad.tsv"
    p.write_text("中 zhong1\n", encoding="utf-8")  # space, not tab
    with pytest.raises(PinyinError, match=":1:"):
        PinyinTable.load(p)


def test_shipped_table_is_valid():
    from importlib import resources

    with resources.as_file(resources.files("mmcsc").joinpath("data/pinyin_small.tsv")) as p:
        table = PinyinTable.load(p)
    assert not validate_table(table)
    assert decompose("中", table) == ["z", "h", "o", "n", "g", "1"]
    assert decompose("平", table) == decompose("瓶", table)
    assert table.get("的") == table.get("地") == table.get("得") == "de0"
