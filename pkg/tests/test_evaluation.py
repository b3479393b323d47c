"""Metric oracle, post-processing, and gate-trace reporting contracts."""

import json

import numpy as np
import pytest

from mmcsc.corpus import CscExample
from mmcsc.evaluation import (
    DEFAULT_REVERT_CHARS,
    PostProcessRule,
    emit_trace_report,
    evaluate,
    format_table,
    gate_stats,
    post_process,
)
from mmcsc.model import GateTrace


def brute_force_metrics(predictions, examples):
    """Hand enumeration over sentences, written as directly off the metric
    definitions as possible; the independent oracle for evaluate()."""
    rows = []
    for pred, ex in zip(predictions, examples):
        gold = {i for i in range(len(ex.source)) if ex.source[i] != ex.target[i]}
        edits = {i for i in range(len(ex.source)) if ex.source[i] != pred[i]}
        det = edits == gold
        cor = det and pred == ex.target
        rows.append((bool(gold), bool(edits), det, cor))

    def level(hit_col):
        tp = sum(1 for g, f, d, c in rows if (d, c)[hit_col] and g)
        flagged = sum(1 for g, f, d, c in rows if f)
        positive = sum(1 for g, f, d, c in rows if g)
        hits = sum(1 for g, f, d, c in rows if (d, c)[hit_col])
        p = tp / flagged if flagged else 0.0
        r = tp / positive if positive else 0.0
        f1 = 2 * p * r / (p + r) if p + r else 0.0
        return hits / len(rows) if rows else 0.0, p, r, f1

    return level(0), level(1)


def random_corpus(rng):
    alphabet = "甲乙丙丁"
    n = int(rng.integers(1, 6))
    examples, preds = [], []
    for _ in range(n):
        m = int(rng.integers(1, 5))
        target = "".join(rng.choice(list(alphabet), size=m))
        source = "".join(c if rng.random() < 0.7 else str(rng.choice(list(alphabet)))
                         for c in target)
        pred = "".join(c if rng.random() < 0.7 else str(rng.choice(list(alphabet)))
                       for c in source)
        examples.append(CscExample(source, target))
        preds.append(pred)
    return preds, examples


class TestEvaluate:
    def test_hand_case(self):
        # gold-positive {s1, s2}; model flags {s1, s3}; s1 exact.
        examples = [CscExample("甲乙", "甲丙"), CscExample("乙乙", "乙丁"),
                    CscExample("丙丙", "丙丙")]
        preds = ["甲丙", "乙乙", "丙甲"]
        r = evaluate(preds, examples)
        assert r.detection.precision == 0.5
        assert r.detection.recall == 0.5
        assert r.detection.f1 == 0.5
        assert r.counts["flagged"] == 2 and r.counts["gold_positive"] == 2

    def test_matches_brute_force_oracle(self):
        rng = np.random.default_rng(42)
        for _ in range(20):
            preds, examples = random_corpus(rng)
            r = evaluate(preds, examples)
            (d_acc, d_p, d_r, d_f1), (c_acc, c_p, c_r, c_f1) = \
                brute_force_metrics(preds, examples)
            assert r.detection.accuracy == d_acc and r.detection.precision == d_p
            assert r.detection.recall == d_r and r.detection.f1 == d_f1
            assert r.correction.accuracy == c_acc and r.correction.precision == c_p
            assert r.correction.recall == c_r and r.correction.f1 == c_f1
            assert r.correction.f1 <= r.detection.f1

    def test_all_clean_untouched_is_perfect_accuracy(self):
        examples = [CscExample("甲乙", "甲乙")]
        r = evaluate(["甲乙"], examples)
        assert r.detection.accuracy == 1.0
        assert r.detection.f1 == 0.0  # no positives to score

    def test_metrics_in_unit_interval(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            preds, examples = random_corpus(rng)
            r = evaluate(preds, examples)
            for lv in (r.detection, r.correction):
                for v in (lv.accuracy, lv.precision, lv.recall, lv.f1):
                    assert 0.0 <= v <= 1.0

    def test_length_mismatches_raise(self):
        with pytest.raises(ValueError):
            evaluate(["甲"], [])
        with pytest.raises(ValueError):
            evaluate(["甲乙丙"], [CscExample("甲乙", "甲乙")])

    def test_json_round_trip(self):
        r = evaluate(["甲丙"], [CscExample("甲乙", "甲丙")])
        blob = json.loads(json.dumps(r.to_json()))
        assert blob["correction"]["f1"] == 1.0
        assert blob["counts"]["correction_tp"] == 1

    def test_format_table_layout(self):
        r = evaluate(["甲丙"], [CscExample("甲乙", "甲丙")])
        table = format_table(r)
        lines = table.splitlines()
        assert lines[0].split() == ["level", "Acc", "Pre", "Rec", "F1"]
        assert lines[1].startswith("detection") and lines[2].startswith("correction")


class TestPostProcess:
    def cases(self):
        # 50 generated cases mixing particle edits, ordinary edits, and
        # untouched sentences.
        rng = np.random.default_rng(9)
        particles = list(DEFAULT_REVERT_CHARS)
        others = list("甲乙丙丁")
        out = []
        for _ in range(50):
            m = int(rng.integers(2, 7))
            src = [str(rng.choice(particles if rng.random() < 0.4 else others))
                   for _ in range(m)]
            pred = list(src)
            for i in range(m):
                if rng.random() < 0.4:
                    pred[i] = str(rng.choice(particles if rng.random() < 0.4 else others))
            out.append(("".join(src), "".join(pred)))
        return out

    def test_idempotent_and_only_edited_positions(self):
        rule = PostProcessRule()
        for src, pred in self.cases():
            once = post_process(src, pred, rule)
            assert post_process(src, once, rule) == once  # idempotent
            for i, (s, p, o) in enumerate(zip(src, pred, once)):
                if p == s:
                    assert o == s  # untouched positions never altered
                elif s in rule.chars or p in rule.chars:
                    assert o == s  # particle edits reverted
                else:
                    assert o == p  # ordinary edits kept

    def test_disabled_rule_is_identity(self):
        rule = PostProcessRule(enabled=False)
        assert post_process("的地", "得地", rule) == "得地"

    def test_custom_char_set(self):
        rule = PostProcessRule(chars=frozenset("甲"))
        assert post_process("甲乙", "丙丁", rule) == "甲丁"


class TestGateTraces:
    def traces(self):
        examples = [CscExample("甲乙", "甲丙"), CscExample("丁丁", "丁丁")]
        traces = [GateTrace("甲乙", [(0.5, 0.25, 0.25), (0.2, 0.4, 0.4)]),
                  GateTrace("丁丁", [(0.9, 0.05, 0.05), (0.7, 0.2, 0.1)])]
        return traces, examples

    def test_gate_stats_split_by_gold(self):
        traces, examples = self.traces()
        stats = gate_stats(traces, examples)
        assert stats["error"]["positions"] == 1
        assert stats["error"]["acoustic"] == pytest.approx(0.4)
        assert stats["clean"]["positions"] == 3
        assert stats["clean"]["text"] == pytest.approx((0.5 + 0.9 + 0.7) / 3)

    def test_gate_stats_empty_side_is_none(self):
        ex = [CscExample("甲乙", "甲乙")]
        tr = [GateTrace("甲乙", [(0.5, 0.3, 0.2), (0.5, 0.3, 0.2)])]
        stats = gate_stats(tr, ex)
        assert stats["error"] is None
        assert stats["clean"]["positions"] == 2

    def test_trace_report_format(self, tmp_path):
        traces, examples = self.traces()
        path = emit_trace_report(traces, examples, tmp_path / "t.jsonl")
        lines = path.read_text(encoding="utf-8").splitlines()
        assert len(lines) == 2
        rec = json.loads(lines[0])
        assert rec["sentence"] == "甲乙"
        assert rec["errors"] == [1]
        assert rec["gates"][0] == [0.5, 0.25, 0.25]

    def test_aligned_inputs_required(self):
        traces, examples = self.traces()
        with pytest.raises(ValueError):
            gate_stats(traces[:1], examples)
