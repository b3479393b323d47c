"""Corpus loading, synthesis, and batching contracts."""

import numpy as np
import pytest

from mmcsc.corpus import (
    Batch,
    ConfusionSpec,
    CorpusError,
    CscExample,
    Vocabulary,
    batch,
    load_corpus,
    save_corpus,
    synthesize_corpus,
)


def test_example_error_positions():
    ex = CscExample("我跟快去", "我很快去")
    assert ex.error_positions() == {1}
    assert CscExample("天气很好", "天气很好").error_positions() == set()


def test_example_rejects_length_mismatch():
    with pytest.raises(CorpusError):
        CscExample("你好", "你好吗")


def test_load_tsv_with_diagnostics(tmp_path):
    p = tmp_path / "c.tsv"
    p.write_text("我跟快去\t我很快去\n天气很好\t天气很好\n你好\t你好吗\nbad line\n",
                 encoding="utf-8")
    examples, diags = load_corpus(p, "tsv")
    assert [ex.source for ex in examples] == ["我跟快去", "天气很好"]
    assert len(diags) == 2
    assert ":3:" in diags[0] and ":4:" in diags[1]  # line numbers reported


def test_load_jsonl(tmp_path):
    p = tmp_path / "c.jsonl"
    p.write_text('{"source": "平水", "target": "瓶水"}\n{"source": "好"}\n', encoding="utf-8")
    examples, diags = load_corpus(p, "jsonl")
    assert examples == [CscExample("平水", "瓶水")]
    assert len(diags) == 1


def test_load_empty_corpus_is_error(tmp_path):
    p = tmp_path / "e.tsv"
    p.write_text("你好\t你好吗\n", encoding="utf-8")
    with pytest.raises(CorpusError):
        load_corpus(p, "tsv")


def test_round_trip_both_formats(tmp_path):
    examples = [CscExample("我跟快去", "我很快去"), CscExample("天气很好", "天气很好")]
    for fmt in ("tsv", "jsonl"):
        p = save_corpus(tmp_path / f"c.{fmt}", examples, fmt)
        back, diags = load_corpus(p, fmt)
        assert back == examples and not diags


def test_vocabulary_basics():
    v = Vocabulary(["好", "你"])
    assert len(v) == 7  # 5 specials + 2
    assert v.token(v.id("好")) == "好"
    assert v.id("没") == v.unk_id
    assert v.pad_id == 0
    assert v.encode("你好") == [v.id("你"), v.id("好")]


def test_vocabulary_from_corpus_sorted_deterministic():
    ex = [CscExample("ba", "bc"), CscExample("ad", "ad")]
    v1 = Vocabulary.from_corpus(ex)
    v2 = Vocabulary.from_corpus(list(reversed(ex)))
    assert v1.tokens() == v2.tokens()


def test_vocabulary_save_load(tmp_path):
    v = Vocabulary(["好", "你"])
    v.save(tmp_path / "v.txt")
    back = Vocabulary.load(tmp_path / "v.txt")
    assert back.tokens() == v.tokens()


def test_confusion_spec_validation_and_json(tmp_path):
    vocab = Vocabulary(["平", "瓶", "好"])
    spec = ConfusionSpec(rate=0.2, phonetic={"平": ["瓶"]}, graphic={"好": ["好", "外"]})
    problems = spec.validate(vocab)
    assert any("lists itself" in p for p in problems)
    assert any("not in vocabulary" in p for p in problems)
    spec.save(tmp_path / "s.json")
    back = ConfusionSpec.load(tmp_path / "s.json")
    assert back == spec


def test_synthesize_rate_zero_is_identity():
    spec = ConfusionSpec(rate=0.0, phonetic={"平": ["瓶"]})
    out = synthesize_corpus(["平平平"], spec, seed=1)
    assert out == [CscExample("平平平", "平平平")]


def test_synthesize_rate_one_forces_substitution():
    spec = ConfusionSpec(rate=1.0, phonetic={"平": ["瓶"]})
    out = synthesize_corpus(["平水平"], spec, seed=1)
    assert out[0].source == "瓶水瓶"  # 水 has no candidates, never corrupted
    assert out[0].target == "平水平"


def test_synthesize_rate_within_binomial_bound():
    spec = ConfusionSpec(rate=0.1, phonetic={"平": ["瓶", "评"]})
    sentences = ["平" * 100] * 100  # 10,000 corruptible chars
    out = synthesize_corpus(sentences, spec, seed=7)
    subs = sum(len(ex.error_positions()) for ex in out)
    assert 0.08 <= subs / 10_000 <= 0.12


def test_synthesize_deterministic():
    spec = ConfusionSpec(rate=0.5, phonetic={"平": ["瓶", "评"]})
    a = synthesize_corpus(["平平平平"] * 5, spec, seed=3)
    b = synthesize_corpus(["平平平平"] * 5, spec, seed=3)
    c = synthesize_corpus(["平平平平"] * 5, spec, seed=4)
    assert a == b
    assert a != c


def test_batch_framing_and_masks():
    vocab = Vocabulary(["好", "你", "天", "气", "很"])
    ex = [CscExample("你好好", "你好好"), CscExample("天气很好好", "天气很好好")]
    b = batch(ex, vocab, max_len=8)
    assert isinstance(b, Batch)
    assert b.input_ids.shape == (2, 8)
    assert b.attention_mask[0].sum() == 5 and b.attention_mask[1].sum() == 7
    assert b.input_ids[0, 0] == vocab.cls_id
    assert b.input_ids[0, 4] == vocab.sep_id
    assert b.input_ids[0, 5] == vocab.pad_id
    # loss mask covers exactly the character positions
    np.testing.assert_array_equal(b.loss_mask[0], [0, 1, 1, 1, 0, 0, 0, 0])
    np.testing.assert_array_equal(b.loss_mask[1], [0, 1, 1, 1, 1, 1, 0, 0])
    assert b.tokens[0] == ["[CLS]", "你", "好", "好", "[SEP]", "[PAD]", "[PAD]", "[PAD]"]


def test_batch_source_target_padded_identically():
    vocab = Vocabulary(["平", "瓶"])
    b = batch([CscExample("平", "瓶")], vocab, max_len=5)
    np.testing.assert_array_equal(b.input_ids != b.target_ids,
                                  [[False, True, False, False, False]])


def test_batch_truncates_overlong(caplog):
    vocab = Vocabulary(["好"])
    b = batch([CscExample("好" * 10, "好" * 10)], vocab, max_len=8)
    assert b.attention_mask[0].sum() == 8  # CLS + 6 chars + SEP
    assert b.lengths[0] == 6
    assert any("truncated" in r.message for r in caplog.records)


def test_batch_rejects_tiny_max_len():
    with pytest.raises(CorpusError):
        batch([CscExample("好", "好")], Vocabulary(["好"]), max_len=1)
