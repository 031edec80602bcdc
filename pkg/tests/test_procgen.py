from __future__ import annotations

import json

import pytest

from cfworld.errors import PlacementExhausted
from cfworld.procgen import GenConfig, generate_corpus, generate_room, room_uuid
from cfworld.scene import validate_world


def test_default_room_is_valid():
    assert validate_world(generate_room(GenConfig(), 0)) == []


def test_generation_is_deterministic():
    a = generate_room(GenConfig(seed=42), 7).to_json()
    b = generate_room(GenConfig(seed=42), 7).to_json()
    assert a == b
    assert a != generate_room(GenConfig(seed=43), 7).to_json()


def test_room_uuid_stable_and_distinct():
    assert room_uuid(1, 2) == room_uuid(1, 2)
    assert len({room_uuid(0, i) for i in range(50)}) == 50


def test_overcrowded_room_exhausts_placement():
    cfg = GenConfig(furniture_count_range=(50, 50), room_size_range=(2.0, 2.0))
    with pytest.raises(PlacementExhausted):
        generate_room(cfg, 0)


def test_bad_ranges_rejected():
    with pytest.raises(ValueError):
        GenConfig(furniture_count_range=(3, 2))
    with pytest.raises(ValueError):
        GenConfig(light_count_range=(0, 1))


def test_config_round_trip(tmp_path):
    cfg = GenConfig(seed=9, furniture_count_range=(1, 2))
    p = tmp_path / "gen.json"
    p.write_text(json.dumps(cfg.to_dict()))
    assert GenConfig.from_file(p) == cfg
    with pytest.raises(ValueError):
        GenConfig.from_dict({"bogus": 1})


def test_corpus_files_and_jobs_invariance(tmp_path):
    cfg = GenConfig(seed=7)
    one = generate_corpus(cfg, 6, tmp_path / "a", jobs=1)
    many = generate_corpus(cfg, 6, tmp_path / "b", jobs=3)
    assert [p.name for p in one] == [f"scene_{i:05d}.json" for i in range(6)]
    for p, q in zip(one, many):
        assert p.read_bytes() == q.read_bytes()


def test_corpus_unwritable_dir_names_path(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError) as info:
        generate_corpus(GenConfig(), 1, blocker / "sub")
    assert str(blocker / "sub") in str(info.value)


def test_rooms_contain_tables_and_lights():
    for i in range(20):
        w = generate_room(GenConfig(seed=3), i)
        classes = {w.entity(e).cls for e in w.dynamic_ids}
        assert "table" in classes
        assert 1 <= len(w.lights) <= 3
