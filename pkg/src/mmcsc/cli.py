"""Command-line pipeline.

Subcommands cover the whole workflow: ``gen-data`` writes a synthetic
task to disk, ``pretrain-acoustic``/``pretrain-visual`` fit the modality
encoders, ``train`` fits the spell checker, ``correct`` fixes sentences,
``eval`` scores predictions, and ``trace-gates`` dumps per-character
fusion gates for inspection.

Exit codes: 0 success, 2 bad usage or bad config values, 3 unreadable or
malformed input files, 4 training divergence.
"""

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import nn
from .corpus import CorpusError, CscExample, load_corpus, save_corpus
from .evaluation import (
    PostProcessRule,
    emit_trace_report,
    evaluate,
    format_table,
    gate_stats,
    post_process,
)
from .glyph import AtlasError, save_atlas
from .pinyin import PinyinError
from .synthetic import build_toy_corpus, make_toy_language
from .train import (
    DivergenceError,
    TrainConfig,
    finetune,
    load_model,
    pretrain_acoustic,
    pretrain_visual,
)

EXIT_USAGE = 2
EXIT_IO = 3
EXIT_DIVERGED = 4

log = logging.getLogger(__name__)

# One help line per TrainConfig field; --help must document every flag.
_FIELD_HELP = {
    "corpus": "training corpus (TSV source<TAB>target, or JSON lines)",
    "pinyin_table": "char<TAB>pinyin table file",
    "atlas": "glyph atlas file",
    "checkpoint_dir": "directory for checkpoint files",
    "epochs": "training epochs",
    "batch_size": "sentences per optimizer step",
    "peak_lr": "peak learning rate of the warmup/decay schedule",
    "warmup_frac": "fraction of total steps spent warming up",
    "weight_decay": "decoupled weight decay",
    "seed": "seed for init, shuffling, dropout, masking and replay",
    "max_len": "max sentence frame incl. CLS/SEP; longer input truncated",
    "dev_frac": "fraction of the corpus held out for dev F1",
    "semantic_mask_rate": "rate of [MASK]-ing input chars in the text view",
    "typo_mask_rate": "extra [MASK] rate at corrupted positions",
    "error_weight": "loss multiplier at corrupted positions",
    "replay_frac": "fraction of examples re-corrupted each epoch",
    "replay_rate": "per-char corruption rate when replaying",
    "dim": "model width (all encoders and fusion)",
    "semantic_layers": "transformer layers in the semantic encoder",
    "heads": "attention heads",
    "ffn_dim": "feed-forward hidden width",
    "phonetic_layers": "transformer layers over pinyin vectors",
    "fusion_layers": "transformer layers after gated fusion",
    "dropout": "dropout rate during training",
    "use_phonetic": "include the phonetic encoder",
    "use_graphic": "include the graphic encoder",
    "selective_fusion": "learned gates (vs. plain sum) over modalities",
    "single_font": "render one font instead of three",
}


def _add_config_flags(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--config", metavar="FILE",
                    help="JSON file of config fields; explicit flags override it")
    for f in dataclasses.fields(TrainConfig):
        flag = "--" + f.name.replace("_", "-")
        if isinstance(f.default, bool):
            sp.add_argument(flag, dest=f.name, default=None,
                            action=argparse.BooleanOptionalAction,
                            help=_FIELD_HELP[f.name])
        else:
            sp.add_argument(flag, dest=f.name, type=type(f.default),
                            default=None, metavar=f.name.upper(),
                            help=_FIELD_HELP[f.name])


def _config_from_args(args: argparse.Namespace,
                      base: dict | None = None) -> TrainConfig:
    payload = dict(base or {})
    if args.config:
        with open(args.config, encoding="utf-8") as f:
            payload.update(json.load(f))
    for f in dataclasses.fields(TrainConfig):
        value = getattr(args, f.name)
        if value is not None:
            payload[f.name] = value
    return TrainConfig.from_json(payload)


def _sidecar_config(ckpt: str) -> dict:
    """Config recorded next to a checkpoint, so `correct --ckpt m.bin`
    works without repeating the corpus/table/atlas flags."""
    try:
        with open(nn.sidecar_path(ckpt), encoding="utf-8") as f:
            return json.load(f).get("config", {})
    except OSError:
        return {}


def _read_sentences(path: str | None) -> list:
    if path is None or path == "-":
        return [line.rstrip("\n") for line in sys.stdin]
    with open(path, encoding="utf-8") as f:
        return [line.rstrip("\n") for line in f]


def _report(report, path: str | None) -> None:
    if path:
        nn.write_json(path, report.to_json())
    summary = " ".join(f"{k}={v:.4f}" for k, v in report.metrics.items()
                       if isinstance(v, float))
    print(f"{report.procedure}: {len(report.losses)} epochs, "
          f"final loss {report.losses[-1]:.4f}, {summary}")
    print(f"checkpoint: {report.checkpoint}")


def _cmd_gen_data(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    lang = make_toy_language()
    train, test = build_toy_corpus(lang, n_train=args.n_train, n_test=args.n_test,
                                   rate=args.rate, seed=args.seed)
    coverage = (lang.coverage_sentences(seed=[args.clean_seed, 0], words_per_sentence=2)
                + lang.coverage_sentences(seed=[args.clean_seed, 5], words_per_sentence=2))
    if args.n_clean < len(coverage):
        raise ValueError(f"--n-clean must be >= {len(coverage)} "
                         f"to fit the coverage blocks, got {args.n_clean}")
    clean = coverage + lang.sentences(args.n_clean - len(coverage),
                                      seed=[args.clean_seed, 1],
                                      min_words=1, max_words=3)
    save_corpus(out / "train.tsv", train)
    save_corpus(out / "test.tsv", test)
    save_corpus(out / "clean.tsv", [CscExample(s, s) for s in clean])
    lang.table.save(out / "pinyin.tsv")
    lang.injective_table().save(out / "pinyin_injective.tsv")
    save_atlas(out / "atlas.glya", lang.atlas(seed=args.atlas_seed))
    n_err = sum(1 for ex in train if ex.source != ex.target)
    print(f"wrote {out}/: train.tsv ({len(train)} pairs, {n_err} with errors), "
          f"test.tsv ({len(test)}), clean.tsv ({len(clean)}), "
          f"pinyin.tsv, pinyin_injective.tsv, atlas.glya ({len(lang.chars())} chars)")
    return 0


def _cmd_pretrain_acoustic(args) -> int:
    _report(pretrain_acoustic(_config_from_args(args)), args.report)
    return 0


def _cmd_pretrain_visual(args) -> int:
    _report(pretrain_visual(_config_from_args(args)), args.report)
    return 0


def _cmd_train(args) -> int:
    report = finetune(_config_from_args(args), acoustic=args.acoustic,
                      visual=args.visual, resume=args.resume)
    _report(report, args.report)
    return 0


def _cmd_correct(args) -> int:
    model = load_model(args.ckpt, _config_from_args(args, _sidecar_config(args.ckpt)))
    sentences = _read_sentences(args.input)
    rule = PostProcessRule() if args.post_process else None
    fixed, _ = model.correct(sentences, post_rule=rule)
    text = "".join(s + "\n" for s in fixed)
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def _cmd_eval(args) -> int:
    predictions = _read_sentences(args.pred)
    examples, skipped = load_corpus(args.gold)
    if skipped:
        log.warning("%s: %d malformed lines skipped", args.gold, len(skipped))
    if args.post_process:
        rule = PostProcessRule()
        predictions = [post_process(ex.source, p, rule)
                       for ex, p in zip(examples, predictions)]
    result = evaluate(predictions, examples)
    print(format_table(result))
    if args.json:
        nn.write_json(args.json, result.to_json())
    return 0


def _cmd_trace_gates(args) -> int:
    model = load_model(args.ckpt, _config_from_args(args, _sidecar_config(args.ckpt)))
    examples, _ = load_corpus(args.input)
    _, traces = model.correct([ex.source for ex in examples])
    emit_trace_report(traces, examples, args.out)
    stats = gate_stats(traces, examples)
    for side in ("error", "clean"):
        s = stats[side]
        if s is None:
            print(f"{side:5s} chars: none in corpus")
        else:
            print(f"{side:5s} chars: text {s['text']:.3f} acoustic {s['acoustic']:.3f} "
                  f"visual {s['visual']:.3f} (n={s['positions']})")
    print(f"traces: {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mmcsc", description="Multimodal Chinese spell checking pipeline.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("gen-data", help="write a synthetic spell-checking task",
                       description="Generate the 300-character toy task: corrupted "
                                   "train/test corpora, a clean pretraining corpus, "
                                   "pinyin tables and a glyph atlas.")
    p.add_argument("--out", required=True, metavar="DIR", help="output directory")
    p.add_argument("--seed", type=int, default=0, help="corpus seed")
    p.add_argument("--n-train", type=int, default=500, help="training pairs")
    p.add_argument("--n-test", type=int, default=100, help="test pairs")
    p.add_argument("--rate", type=float, default=0.15,
                   help="per-char corruption probability")
    p.add_argument("--n-clean", type=int, default=500,
                   help="clean pretraining sentences (incl. coverage blocks)")
    p.add_argument("--clean-seed", type=int, default=9, help="clean-corpus seed")
    p.add_argument("--atlas-seed", type=int, default=7, help="glyph bitmap seed")
    p.set_defaults(fn=_cmd_gen_data)

    p = sub.add_parser("pretrain-acoustic",
                       help="fit the phonetic encoder (pinyin -> char)",
                       description="Pretrain the phonetic encoder to recover each "
                                   "character from its pinyin in context.")
    _add_config_flags(p)
    p.add_argument("--report", metavar="FILE", help="write the run report as JSON")
    p.set_defaults(fn=_cmd_pretrain_acoustic)

    p = sub.add_parser("pretrain-visual",
                       help="fit the graphic encoder (bitmap -> char)",
                       description="Pretrain the graphic encoder to classify every "
                                   "vocabulary character from its rendered bitmaps.")
    _add_config_flags(p)
    p.add_argument("--report", metavar="FILE", help="write the run report as JSON")
    p.set_defaults(fn=_cmd_pretrain_visual)

    p = sub.add_parser("train", help="fit the full spell checker",
                       description="Fine-tune the fused model on a corrupted corpus; "
                                   "writes last.bin each epoch and best.bin at the "
                                   "best dev correction F1.")
    _add_config_flags(p)
    p.add_argument("--acoustic", metavar="CKPT",
                   help="initialize the phonetic encoder from this checkpoint")
    p.add_argument("--visual", metavar="CKPT",
                   help="initialize the graphic encoder from this checkpoint")
    p.add_argument("--resume", metavar="CKPT",
                   help="continue from a last.bin written with the same config")
    p.add_argument("--report", metavar="FILE", help="write the run report as JSON")
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("correct", help="correct sentences with a trained model",
                       description="Read one sentence per line, write the corrected "
                                   "sentence per line.")
    p.add_argument("--ckpt", required=True, help="finetune checkpoint")
    _add_config_flags(p)
    p.add_argument("--input", metavar="FILE",
                   help="sentences, one per line (default: stdin)")
    p.add_argument("--output", metavar="FILE", help="default: stdout")
    p.add_argument("--post-process", action="store_true",
                   help="revert edits touching 的/地/得")
    p.set_defaults(fn=_cmd_correct)

    p = sub.add_parser("eval", help="score predictions against a gold corpus",
                       description="Sentence-level detection/correction metrics; "
                                   "prints the table and optionally writes JSON.")
    p.add_argument("--pred", required=True, metavar="FILE",
                   help="predicted sentences, one per line")
    p.add_argument("--gold", required=True, metavar="FILE", help="gold corpus")
    p.add_argument("--json", metavar="FILE", help="also write metrics as JSON")
    p.add_argument("--post-process", action="store_true",
                   help="revert edits touching 的/地/得 before scoring")
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("trace-gates", help="dump per-character fusion gates",
                       description="Run the model over a corpus and write one JSON "
                                   "line per sentence with (text, acoustic, visual) "
                                   "gates per character, plus a mean-gate summary "
                                   "split by error vs. clean characters.")
    p.add_argument("--ckpt", required=True, help="finetune checkpoint")
    _add_config_flags(p)
    p.add_argument("--input", required=True, metavar="FILE", help="corpus to trace")
    p.add_argument("--out", required=True, metavar="FILE", help="JSON-lines output")
    p.set_defaults(fn=_cmd_trace_gates)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:  # argparse exits 2 on usage errors on its own
        return int(e.code or 0)
    try:
        return args.fn(args)
    except DivergenceError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    except (CorpusError, AtlasError, PinyinError, nn.CheckpointError,
            json.JSONDecodeError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except ValueError as e:  # config field validation
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
