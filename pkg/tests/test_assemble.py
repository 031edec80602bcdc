from __future__ import annotations

import json

import numpy as np
import pytest

from conftest import down_camera, tile_world
from cfworld.assemble import (
    AssembleConfig,
    Manifest,
    build_multiview_dataset,
    build_removal_dataset,
    build_scene_removal_dataset,
    items_per_scene,
    split_by_room,
    stats,
    validate_manifest,
)
from cfworld.errors import DegenerateSplit
from cfworld.procgen import GenConfig, generate_corpus
from cfworld.render.imageio import read_pfm, read_pgm, write_mask
from cfworld.scene import load_world, save_world

SMALL = AssembleConfig(width=32, height=32, cameras_per_scene=1)


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    return generate_corpus(GenConfig(seed=5), 4, root / "scenes")


@pytest.fixture(scope="module")
def removal(corpus, tmp_path_factory):
    return build_removal_dataset(corpus, SMALL, 0, tmp_path_factory.mktemp("removal"))


def _tile_scene(tmp_path, cols):
    return str(save_world(tile_world(cols), tmp_path / f"tile{cols}.json"))


@pytest.mark.parametrize("cols, kept", [(2, False), (4, True)])
def test_mask_threshold_on_constructed_tile(tmp_path, cols, kept):
    scene = _tile_scene(tmp_path, cols)
    cfg = AssembleConfig(width=100, height=100)
    m = build_removal_dataset([scene], cfg, 0, tmp_path / "out", cameras={scene: [down_camera(2.0, 100, cid="cam0")]})
    assert bool(m.records) is kept
    if kept:
        assert m.records[0].mask_area_fraction == pytest.approx(0.004, abs=1e-12)


def test_removal_manifest_is_valid(removal):
    assert removal.records
    assert validate_manifest(removal.root) == []
    assert all(r.mask_area_fraction > 0.003 for r in removal.records)
    r = removal.records[0]
    assert set(r.paths) >= {"orig", "mask", "target", "depth", "after_scene", "edit"}
    orig = read_pfm(removal.root / r.paths["orig"])
    target = read_pfm(removal.root / r.paths["target"])
    mask = read_pgm(removal.root / r.paths["mask"]) > 0
    assert orig.shape == target.shape == (32, 32, 3)
    assert mask.mean() == pytest.approx(r.mask_area_fraction)
    assert removal.header["file_hashes"] and removal.header["created_at"] == "1970-01-01T00:00:00Z"


def test_validate_catches_tampering(corpus, tmp_path):
    m = build_removal_dataset(corpus[:1], SMALL, 0, tmp_path)
    r0, r1, r2 = m.records[:3]
    (tmp_path / r0.paths["target"]).unlink()
    write_mask(tmp_path / r1.paths["mask"], np.zeros((32, 32), dtype=bool))
    depth = tmp_path / r2.paths["depth"]
    depth.write_bytes(depth.read_bytes()[:-4] + b"\x00\x00\x80\x3f")
    codes = {(v.code, v.sample_id) for v in validate_manifest(tmp_path)}
    assert ("MissingFile", r0.sample_id) in codes
    assert ("MaskAreaMismatch", r1.sample_id) in codes
    assert ("HashMismatch", r1.sample_id) in codes
    assert ("HashMismatch", r2.sample_id) in codes


def test_validate_flags_low_mask_duplicates_and_bad_lines(removal, tmp_path):
    lines = removal.to_jsonl().splitlines()
    bad = json.loads(lines[0])
    bad["mask_area_fraction"] = 0.001
    text = "\n".join([json.dumps(bad), lines[0], "{not json"]) + "\n"
    (tmp_path / "manifest.jsonl").write_text(text)
    (tmp_path / "manifest_header.json").write_text(json.dumps({"min_mask": 0.003}))
    codes = [v.code for v in validate_manifest(tmp_path)]
    assert "BelowMinMask" in codes and "DuplicateSampleId" in codes and "ParseError" in codes
    assert validate_manifest(tmp_path / "nope")[0].code == "MissingFile"


def test_split_is_room_disjoint_and_deterministic(removal):
    a = split_by_room(removal, 0.3, 7)
    b = split_by_room(removal, 0.3, 7)
    assert a.to_jsonl() == b.to_jsonl()
    train = {r.room_uuid for r in a.records if r.split == "train"}
    test = {r.room_uuid for r in a.records if r.split == "test"}
    assert train and test and not train & test
    assert [v for v in validate_manifest(a) if v.code == "SplitOverlap"] == []


def test_split_overlap_detected(removal):
    recs = list(removal.records)
    recs[0] = type(recs[0])(**{**recs[0].to_dict(), "split": "test"})
    m = Manifest(recs, removal.header, removal.root)
    assert any(v.code == "SplitOverlap" for v in validate_manifest(m))


def test_single_room_split_degenerate(removal):
    one = Manifest([r for r in removal.records if r.room_uuid == removal.records[0].room_uuid],
                   removal.header, removal.root)
    with pytest.raises(DegenerateSplit):
        split_by_room(one, 0.5, 0)
    with pytest.raises(ValueError):
        split_by_room(removal, 1.0, 0)


def test_items_per_scene_rounding():
    assert items_per_scene(25688, 2369) == (10.84, False)
    assert items_per_scene(34865, 2772) == (12.58, False)
    assert items_per_scene(1, 8) == (0.13, False)  # 0.125 rounds half up
    assert items_per_scene(5, 0) == (0.0, True)


def test_stats_on_manifest(removal):
    s = stats(removal)
    assert s.images_or_layers == len(removal.records)
    assert s.unique_rooms == len({r.room_uuid for r in removal.records})
    assert s.unique_scenes == len({(r.scene_path, r.camera_id) for r in removal.records})
    assert s.to_dict()["items_per_scene"] == f"{len(removal.records) / s.unique_scenes:.2f}"
    empty = stats(Manifest([], {}))
    assert empty.items_per_scene_undefined and empty.unique_rooms == 0


def test_multiview_groups_share_after_state(corpus, tmp_path):
    cfg = AssembleConfig(width=32, height=32, n_similar=2, n_diff=2)
    m = build_multiview_dataset(corpus[:1], cfg, 0, tmp_path)
    assert validate_manifest(m) == []
    by_obj: dict[str, list] = {}
    for r in m.records:
        by_obj.setdefault(r.object_id, []).append(r)
    assert len({r.camera_id for r in m.records}) <= 5
    multi = [rs for rs in by_obj.values() if len(rs) > 1]
    assert multi
    for rs in multi:
        assert len({r.paths["after_scene"] for r in rs}) == 1
        assert len({r.camera_id for r in rs}) == len(rs)
    assert (tmp_path / "cameras").is_dir()


def test_scene_removal_target_is_empty_room(corpus, tmp_path):
    m = build_scene_removal_dataset(corpus[:2], SMALL, 0, tmp_path)
    assert m.records and all(r.object_id == "ALL" for r in m.records)
    for r in m.records:
        after = load_world(tmp_path / r.paths["after_scene"])
        assert after.dynamic_ids == []


def test_outputs_independent_of_jobs(corpus, tmp_path):
    one = build_removal_dataset(corpus[:3], SMALL, 1, tmp_path / "a", jobs=1)
    many = build_removal_dataset(corpus[:3], SMALL, 1, tmp_path / "b", jobs=3)
    assert one.to_jsonl() == many.to_jsonl()
    assert (tmp_path / "a/manifest_header.json").read_bytes() == (tmp_path / "b/manifest_header.json").read_bytes()


def test_config_round_trip_and_rejects_unknown():
    cfg = AssembleConfig(min_mask=0.01, n_similar=1)
    assert AssembleConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg
    with pytest.raises(ValueError):
        AssembleConfig.from_dict({"bogus": 1})
    with pytest.raises(ValueError):
        AssembleConfig(n_similar=5, n_diff=5)


def test_unwritable_output_names_path(corpus, tmp_path):
    blocker = tmp_path / "f"
    blocker.write_text("x")
    with pytest.raises(OSError) as info:
        build_removal_dataset(corpus[:1], SMALL, 0, blocker / "out")
    assert str(blocker / "out") in str(info.value)
