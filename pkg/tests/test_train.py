"""Training procedures: config handling, corruption replay, determinism,
resume, and divergence detection. Kept on a throwaway eight-character task
so the whole file runs in seconds."""

import json
import math

import numpy as np
import pytest

import mmcsc.nn as nn
from mmcsc.corpus import CscExample, save_corpus
from mmcsc.glyph import build_synthetic_atlas, save_atlas
from mmcsc.pinyin import PinyinTable
from mmcsc.train import (
    DivergenceError,
    TrainConfig,
    _check_finite,
    confusion_candidates,
    finetune,
    load_model,
    observed_confusions,
    pretrain_acoustic,
    pretrain_visual,
    replay_corrupt,
)

CHARS = "甲乙丙丁戊己庚辛"


def _examples():
    clean = ["甲乙丙", "丁戊己", "庚辛甲", "乙丙丁", "戊己庚", "辛甲乙",
             "丙丁戊", "己庚辛", "甲丙戊", "乙丁己", "庚甲辛", "丙戊庚"]
    out = [CscExample(s, s) for s in clean] * 2
    out += [CscExample("乙乙丙", "甲乙丙"),   # homophone swap
            CscExample("丁戊己", "丙戊己")]   # similar-glyph swap
    return out


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    root = tmp_path_factory.mktemp("train_data")
    save_corpus(root / "corpus.tsv", _examples())
    readings = ["jia1", "jia1", "bing3", "ding1", "wu4", "ji3", "geng1", "xin1"]
    PinyinTable(dict(zip(CHARS, readings))).save(root / "pinyin.tsv")
    atlas = build_synthetic_atlas(CHARS, seed=3, similar={"丙": ["丁"]})
    save_atlas(root / "atlas.glya", atlas)
    return root


def make_config(data, out_dir, **overrides):
    base = dict(corpus=str(data / "corpus.tsv"),
                pinyin_table=str(data / "pinyin.tsv"),
                atlas=str(data / "atlas.glya"),
                checkpoint_dir=str(out_dir),
                epochs=2, batch_size=8, max_len=8,
                dim=16, semantic_layers=1, heads=2, ffn_dim=32,
                phonetic_layers=1, fusion_layers=1)
    base.update(overrides)
    return TrainConfig(**base)


class TestConfig:
    def test_json_round_trip(self):
        cfg = TrainConfig(corpus="a.tsv", epochs=7, use_graphic=False)
        assert TrainConfig.from_json(cfg.to_json()) == cfg

    def test_unknown_fields_rejected(self):
        with pytest.raises(ValueError, match="unknown config fields"):
            TrainConfig.from_json({"epochs": 3, "leraning_rate": 0.1})

    @pytest.mark.parametrize("bad", [
        dict(epochs=0), dict(batch_size=0), dict(warmup_frac=1.5),
        dict(dev_frac=1.0), dict(semantic_mask_rate=1.0),
        dict(typo_mask_rate=1.5), dict(error_weight=0.0),
        dict(replay_rate=1.0), dict(replay_frac=-0.1),
    ])
    def test_validation(self, bad):
        with pytest.raises(ValueError):
            TrainConfig(**bad)


class TestConfusions:
    def test_observed_pairs_keyed_by_correct_char(self):
        examples = [CscExample("乙乙丙", "甲乙丙"), CscExample("乙丁", "甲丁"),
                    CscExample("戊己", "戊己")]
        assert observed_confusions(examples) == {"甲": ["乙"]}

    def test_candidates_from_resources(self, data):
        from mmcsc.glyph import load_atlas
        table = PinyinTable.load(data / "pinyin.tsv")
        cands = confusion_candidates(CHARS, table, load_atlas(data / "atlas.glya"))
        assert cands["甲"] == ["乙"] and cands["乙"] == ["甲"]  # shared reading
        assert "丁" in cands["丙"] and "丙" in cands["丁"]      # drawn similar
        assert "戊" not in cands                                # isolated char

    def test_replay_targets_stay_clean(self):
        pairs = {"甲": ["乙"], "丙": ["丁"]}
        rng = np.random.default_rng(0)
        ex = CscExample("乙乙丙", "甲乙丙")  # replay starts from the target
        hit = False
        for _ in range(50):
            new = replay_corrupt(ex, pairs, rate=0.5, rng=rng)
            assert new.target == ex.target and len(new.source) == 3
            for s, t in zip(new.source, new.target):
                assert s == t or s in pairs[t]
            hit = hit or new.source != new.target
        assert hit  # rate 0.5 over 50 draws corrupts at least once

    def test_replay_rate_zero_is_identity(self):
        rng = np.random.default_rng(0)
        ex = CscExample("乙乙丙", "甲乙丙")
        new = replay_corrupt(ex, {"甲": ["乙"]}, rate=0.0, rng=rng)
        assert new.source == ex.target and new.target == ex.target


class TestFinetune:
    def test_first_epoch_loss_near_uniform(self, data, tmp_path):
        report = finetune(make_config(data, tmp_path, epochs=1))
        assert report.losses[0] == pytest.approx(math.log(13), rel=0.10)

    def test_deterministic(self, data, tmp_path):
        a = finetune(make_config(data, tmp_path / "a", epochs=2))
        b = finetune(make_config(data, tmp_path / "b", epochs=2))
        assert a.losses == b.losses
        assert a.metrics["dev_f1_curve"] == b.metrics["dev_f1_curve"]
        assert ((tmp_path / "a" / "last.bin").read_bytes()
                == (tmp_path / "b" / "last.bin").read_bytes())

    def test_resume_continues_epoch_numbering(self, data, tmp_path):
        fresh = finetune(make_config(data, tmp_path / "full", epochs=2))
        resumed = finetune(make_config(data, tmp_path / "full", epochs=3),
                           resume=str(tmp_path / "full" / "last.bin"))
        assert len(resumed.losses) == 1
        with open(nn.sidecar_path(tmp_path / "full" / "last.bin")) as f:
            assert json.load(f)["epoch"] == 2
        # weights actually carried over: no re-warmup back to uniform loss
        assert resumed.losses[0] < fresh.losses[0]

    def test_divergence_raises(self, data, tmp_path):
        # A NaN anywhere in the weights must stop the loop on its next
        # step, not train through silently.
        cfg = make_config(data, tmp_path, epochs=1)
        finetune(cfg)
        path = tmp_path / "last.bin"
        state = nn.load_checkpoint(path)
        state["semantic.token_emb.weight"][0, 0] = np.nan
        nn.save_checkpoint(path, state, meta={"epoch": 0})
        with pytest.raises(DivergenceError, match="finetune"):
            finetune(make_config(data, tmp_path, epochs=2), resume=str(path))

    def test_check_finite(self):
        _check_finite(1.0, "x", 0, 0)
        for bad in (float("nan"), float("inf"), -float("inf")):
            with pytest.raises(DivergenceError, match="epoch 1 step 2"):
                _check_finite(bad, "x", 1, 2)

    def test_load_model_round_trip(self, data, tmp_path):
        cfg = make_config(data, tmp_path, epochs=1)
        finetune(cfg)
        model = load_model(str(tmp_path / "last.bin"), cfg)
        fixed, traces = model.correct(["乙乙丙"])
        assert len(fixed) == 1 and len(fixed[0]) == 3
        again = load_model(str(tmp_path / "last.bin"), cfg)
        fixed2, _ = again.correct(["乙乙丙"])
        assert fixed2 == fixed
        np.testing.assert_array_equal(np.asarray(traces[0].gates),
                                      np.asarray(again.correct(["乙乙丙"])[1][0].gates))


class TestPretraining:
    def test_acoustic_report_and_determinism(self, data, tmp_path):
        a = pretrain_acoustic(make_config(data, tmp_path / "a"))
        b = pretrain_acoustic(make_config(data, tmp_path / "b"))
        assert a.procedure == "acoustic" and len(a.losses) == 2
        assert 0.0 <= a.metrics["recovery_accuracy"] <= 1.0
        assert a.losses == b.losses
        assert ((tmp_path / "a" / "acoustic.bin").read_bytes()
                == (tmp_path / "b" / "acoustic.bin").read_bytes())
        with open(nn.sidecar_path(tmp_path / "a" / "acoustic.bin")) as f:
            assert json.load(f)["procedure"] == "acoustic"

    def test_visual_report_and_determinism(self, data, tmp_path):
        a = pretrain_visual(make_config(data, tmp_path / "a"))
        b = pretrain_visual(make_config(data, tmp_path / "b"))
        assert a.procedure == "visual" and len(a.losses) == 2
        assert 0.0 <= a.metrics["classification_accuracy"] <= 1.0
        assert a.losses == b.losses
        assert ((tmp_path / "a" / "visual.bin").read_bytes()
                == (tmp_path / "b" / "visual.bin").read_bytes())

    def test_finetune_accepts_pretrained_encoders(self, data, tmp_path):
        cfg = make_config(data, tmp_path / "pre")
        pretrain_acoustic(cfg)
        pretrain_visual(cfg)
        report = finetune(make_config(data, tmp_path / "ft", epochs=1),
                          acoustic=str(tmp_path / "pre" / "acoustic.bin"),
                          visual=str(tmp_path / "pre" / "visual.bin"))
        assert math.isfinite(report.losses[0])
