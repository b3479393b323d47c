"""Glyph atlas: binary format, lookup fallback, and synthetic bitmap
similarity structure."""

import numpy as np
import pytest

from mmcsc.glyph import (
    SHAPE,
    AtlasError,
    GlyphAtlas,
    build_synthetic_atlas,
    load_atlas,
    pixel_overlap,
    save_atlas,
)


@pytest.fixture
def atlas():
    return build_synthetic_atlas("平瓶水火土", seed=11)


def test_entries_have_fixed_shape(atlas):
    assert len(atlas) == 5
    for ch in "平瓶水火土":
        img = atlas.lookup(ch)
        assert img.shape == SHAPE and img.dtype == np.uint8
        assert set(np.unique(img)) <= {0, 255}


def test_lookup_missing_and_special_all_zero(atlas, caplog):
    assert (atlas.lookup("[SEP]") == 0).all()
    assert (atlas.lookup("missing-token") == 0).all()
    before = len(caplog.records)
    assert (atlas.lookup("好") == 0).all()
    assert (atlas.lookup("好") == 0).all()  # second miss: no second warning
    warnings = [r for r in caplog.records[before:] if "atlas" in r.message]
    assert len(warnings) == 1


def test_lookup_identity(atlas):
    np.testing.assert_array_equal(atlas.lookup("水"), atlas.lookup("水"))


def test_synthetic_deterministic_and_order_free():
    a = build_synthetic_atlas("水火土", seed=3)
    b = build_synthetic_atlas("土水火", seed=3)
    for ch in "水火土":
        np.testing.assert_array_equal(a.lookup(ch), b.lookup(ch))
    c = build_synthetic_atlas("水火土", seed=4)
    assert not np.array_equal(a.lookup("水"), c.lookup("水"))


def test_similar_pairs_share_pixels():
    similar = {"日": ["目", "白"], "王": ["玉"]}
    atlas = build_synthetic_atlas("日目白王玉平", seed=5, similar=similar)
    for a, b in [("日", "目"), ("日", "白"), ("目", "白"), ("王", "玉")]:
        assert pixel_overlap(atlas.lookup(a), atlas.lookup(b)) >= 0.75


def test_unrelated_pairs_near_chance():
    atlas = build_synthetic_atlas("水火土平瓶", seed=5)
    overlap = pixel_overlap(atlas.lookup("水"), atlas.lookup("火"))
    assert 0.4 <= overlap <= 0.6


def test_round_trip_bit_exact(tmp_path, atlas):
    path = save_atlas(tmp_path / "a.bin", atlas)
    back = load_atlas(path)
    assert back.chars() == atlas.chars()
    for ch in atlas.chars():
        np.testing.assert_array_equal(back.lookup(ch), atlas.lookup(ch))
    # deterministic bytes
    again = save_atlas(tmp_path / "b.bin", back)
    assert path.read_bytes() == again.read_bytes()


def test_load_bad_magic(tmp_path):
    p = tmp_path / "x.bin"
    p.write_bytes(b"WHAT" + b"\x00" * 20)
    with pytest.raises(AtlasError, match="magic"):
        load_atlas(p)


def test_load_truncated_names_offset(tmp_path, atlas):
    blob = save_atlas(tmp_path / "a.bin", atlas).read_bytes()
    cut = tmp_path / "cut.bin"
    cut.write_bytes(blob[:len(blob) - 100])
    with pytest.raises(AtlasError, match="byte"):
        load_atlas(cut)


def test_load_duplicate_entry(tmp_path, atlas):
    import struct

    one = GlyphAtlas({"水": atlas.lookup("水")})
    blob = bytearray(save_atlas(tmp_path / "one.bin", one).read_bytes())
    entry = blob[12:]
    blob[8:12] = struct.pack("<I", 2)
    dup = tmp_path / "dup.bin"
    dup.write_bytes(bytes(blob) + bytes(entry))
    with pytest.raises(AtlasError, match="duplicate"):
        load_atlas(dup)


def test_atlas_rejects_bad_shapes():
    with pytest.raises(AtlasError):
        GlyphAtlas({"水": np.zeros((3, 16, 16), dtype=np.uint8)})
    with pytest.raises(AtlasError):
        GlyphAtlas({"水": np.zeros(SHAPE, dtype=np.float32)})
