"""Sentence-level detection/correction metrics, the particle revert rule,
and gate-trace analysis.

A sentence scores at the detection level iff the set of positions the
model edited equals the gold error set exactly; at the correction level
it must additionally put the right character at every gold position.
Precision counts over flagged sentences, recall over gold-positive
sentences, accuracy over all sentences (a clean sentence left untouched
counts as correct).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .corpus import CscExample
from .model import GateTrace

DEFAULT_REVERT_CHARS = frozenset("的地得")


@dataclass
class EvalLevel:
    accuracy: float
    precision: float
    recall: float
    f1: float

    def to_json(self) -> dict:
        return {"accuracy": self.accuracy, "precision": self.precision,
                "recall": self.recall, "f1": self.f1}


@dataclass
class EvalResult:
    detection: EvalLevel
    correction: EvalLevel
    counts: dict

    def to_json(self) -> dict:
        return {"detection": self.detection.to_json(),
                "correction": self.correction.to_json(),
                "counts": self.counts}


def _f1(p: float, r: float) -> float:
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)


def _ratio(num: int, den: int) -> float:
    return 0.0 if den == 0 else num / den


def evaluate(predictions, examples) -> EvalResult:
    """Sentence-level scores for aligned (prediction, example) lists."""
    if len(predictions) != len(examples):
        raise ValueError(f"{len(predictions)} predictions vs {len(examples)} examples")
    total = len(examples)
    flagged = gold_positive = flagged_and_gold = 0
    det_tp = det_acc_hits = cor_tp = cor_acc_hits = 0
    for pred, ex in zip(predictions, examples):
        if len(pred) != len(ex.source):
            raise ValueError(f"prediction length {len(pred)} != sentence length "
                             f"{len(ex.source)} for {ex.source!r}")
        pred_set = {i for i, (p, s) in enumerate(zip(pred, ex.source)) if p != s}
        gold_set = ex.error_positions()
        if pred_set:
            flagged += 1
        if gold_set:
            gold_positive += 1
        if pred_set and gold_set:
            flagged_and_gold += 1
        det_hit = pred_set == gold_set
        cor_hit = det_hit and all(pred[i] == ex.target[i] for i in gold_set)
        if det_hit:
            det_acc_hits += 1
            if gold_set:
                det_tp += 1
        if cor_hit:
            cor_acc_hits += 1
            if gold_set:
                cor_tp += 1
    det_p, det_r = _ratio(det_tp, flagged), _ratio(det_tp, gold_positive)
    cor_p, cor_r = _ratio(cor_tp, flagged), _ratio(cor_tp, gold_positive)
    counts = {
        "total": total,
        "flagged": flagged,
        "gold_positive": gold_positive,
        "flagged_and_gold": flagged_and_gold,
        "detection_tp": det_tp,
        "detection_fp": flagged - det_tp,
        "detection_fn": gold_positive - det_tp,
        "correction_tp": cor_tp,
        "correction_fp": flagged - cor_tp,
        "correction_fn": gold_positive - cor_tp,
    }
    return EvalResult(
        detection=EvalLevel(_ratio(det_acc_hits, total), det_p, det_r, _f1(det_p, det_r)),
        correction=EvalLevel(_ratio(cor_acc_hits, total), cor_p, cor_r, _f1(cor_p, cor_r)),
        counts=counts,
    )


def format_table(result: EvalResult) -> str:
    """Fixed-order Acc/Pre/Rec/F1 table over both levels."""
    rows = [("detection", result.detection), ("correction", result.correction)]
    lines = [f"{'level':<12}{'Acc':>8}{'Pre':>8}{'Rec':>8}{'F1':>8}"]
    for name, lv in rows:
        lines.append(f"{name:<12}{lv.accuracy:>8.4f}{lv.precision:>8.4f}"
                     f"{lv.recall:>8.4f}{lv.f1:>8.4f}")
    return "\n".join(lines)


@dataclass
class PostProcessRule:
    """Revert model edits that touch easily-confused particles."""

    chars: frozenset = field(default_factory=lambda: DEFAULT_REVERT_CHARS)
    enabled: bool = True


def post_process(source: str, prediction: str, rule: PostProcessRule) -> str:
    """Undo every edit where either side is in the rule's character set;
    untouched positions are never altered. Idempotent."""
    if not rule.enabled:
        return prediction
    if len(source) != len(prediction):
        raise ValueError("source and prediction must be aligned")
    out = list(prediction)
    for i, (s, p) in enumerate(zip(source, prediction)):
        if p != s and (s in rule.chars or p in rule.chars):
            out[i] = s
    return "".join(out)


def gate_stats(traces, examples) -> dict:
    """Mean (g^t, g^a, g^v) over gold-error positions and clean positions.

    A side with no positions at all reports None.
    """
    if len(traces) != len(examples):
        raise ValueError("traces and examples must be aligned")
    sums = {"error": [0.0, 0.0, 0.0], "clean": [0.0, 0.0, 0.0]}
    counts = {"error": 0, "clean": 0}
    for trace, ex in zip(traces, examples):
        gold = ex.error_positions()
        for i, triple in enumerate(trace.gates):
            side = "error" if i in gold else "clean"
            for k in range(3):
                sums[side][k] += triple[k]
            counts[side] += 1
    out = {}
    for side in ("error", "clean"):
        if counts[side] == 0:
            out[side] = None
        else:
            t, a, v = (s / counts[side] for s in sums[side])
            out[side] = {"text": t, "acoustic": a, "visual": v, "positions": counts[side]}
    return out


def emit_trace_report(traces, examples, path) -> Path:
    """JSON-lines gate dump: one record per sentence with per-character
    gate triples and gold error positions; deterministic order."""
    if len(traces) != len(examples):
        raise ValueError("traces and examples must be aligned")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for trace, ex in zip(traces, examples):
            record = {
                "sentence": trace.sentence,
                "gates": [[round(g, 6) for g in triple] for triple in trace.gates],
                "errors": sorted(ex.error_positions()),
            }
            f.write(json.dumps(record, ensure_ascii=False) + "\n")
    return path
