from __future__ import annotations

import json
import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import GRAY, box, empty_room
from oracles import corner_aabb, reachable
from cfworld.errors import InvalidRoom, TargetNotFound, TargetStructural
from cfworld.geometry import Box, Sphere, aabb, penetration_depth
from cfworld.procgen import GenConfig, generate_room
from cfworld.scene import (
    Relation,
    WorldState,
    find_support_cycle,
    load_world,
    new_world,
    room_from_size,
    save_world,
    supported_subtree,
    text_label,
    validate_world,
    with_entities,
    world_aabb,
)


def test_new_world_is_shell_only():
    w = new_world(room_from_size("r", 4.0, 3.0, 2.5))
    assert len(w.structural_ids) == 6
    assert w.dynamic_ids == []
    assert w.relations == ()
    assert w.t == 0
    assert {"floor", "ceiling", "wall_north", "wall_south", "wall_east", "wall_west"} == set(w.ids)


def test_new_world_deterministic():
    a = new_world(room_from_size("r", 4.0, 3.0, 2.5)).to_json()
    b = new_world(room_from_size("r", 4.0, 3.0, 2.5)).to_json()
    assert a == b


def test_zero_height_room_rejected():
    with pytest.raises(InvalidRoom):
        new_world(room_from_size("r", 4.0, 3.0, 0.0))


def test_subtree_matches_reachability_oracle(tworld):
    edges = [(r.src, r.dst) for r in tworld.relations if r.kind == "supports"]
    assert supported_subtree(tworld, "table") == {"table", "cup", "plate"}
    assert supported_subtree(tworld, "table") == reachable(edges, "table")
    assert supported_subtree(tworld, "lamp") == {"lamp"}
    assert supported_subtree(tworld, "floor") == reachable(edges, "floor")
    assert supported_subtree(tworld, "floor") == {"floor", "table", "cup", "plate", "lamp"}


def test_subtree_unknown_id(tworld):
    with pytest.raises(TargetNotFound):
        supported_subtree(tworld, "nope")


def test_world_aabb_simple_cases():
    w = with_entities(empty_room(), [box("b", "box", (0, 0, 0), (0.5, 0.5, 0.5)),
                                     replace(box("s", "ball", (0, 0, 0), (1, 1, 1)), geometry=Sphere((1, 1, 1), 0.2))])
    lo, hi = world_aabb(w, "b")
    assert np.allclose(lo, -0.5) and np.allclose(hi, 0.5)
    lo, hi = world_aabb(w, "s")
    assert np.allclose(lo, 0.8) and np.allclose(hi, 1.2)


def test_yawed_box_aabb_grows_by_sqrt2():
    lo, hi = aabb(Box((0, 0, 0), (0.5, 0.5, 0.5), math.pi / 4))
    assert hi[0] == pytest.approx(0.5 * math.sqrt(2), abs=1e-12)
    assert hi[1] == pytest.approx(0.5 * math.sqrt(2), abs=1e-12)
    assert hi[2] == pytest.approx(0.5)


@given(
    st.tuples(*[st.floats(-3, 3)] * 3),
    st.tuples(*[st.floats(0.01, 2)] * 3),
    st.floats(-7, 7),
)
def test_aabb_matches_corner_oracle(center, half, yaw):
    lo, hi = aabb(Box(center, half, yaw))
    olo, ohi = corner_aabb(center, half, yaw)
    assert np.allclose(lo, olo, atol=1e-9) and np.allclose(hi, ohi, atol=1e-9)


def test_hand_world_is_valid(tworld):
    assert validate_world(tworld) == []


def test_floating_cup_violates_contact(tworld):
    cup = tworld.entity("cup")
    up = replace(cup, geometry=replace(cup.geometry, center=(0.2, 0.1, 1.35)))
    w = replace(tworld, entities=tuple(up if e.id == "cup" else e for e in tworld.entities))
    assert [v.code for v in validate_world(w)] == ["SupportContactViolated"]


def test_overlapping_boxes_interpenetrate():
    w = with_entities(empty_room(), [box("a", "box", (0, 0, 0.5), (0.5, 0.5, 0.5)),
                                     box("b", "box", (0.9, 0, 0.5), (0.5, 0.5, 0.5))],
                      [Relation("supports", "floor", "a"), Relation("supports", "floor", "b")])
    codes = [v.code for v in validate_world(w)]
    assert codes == ["Interpenetration"]
    assert penetration_depth(w.entity("a").geometry, w.entity("b").geometry) == pytest.approx(0.1)


def test_support_cycle_detected(tworld):
    w = replace(tworld, relations=tworld.relations + (Relation("supports", "cup", "table"),))
    assert find_support_cycle(w) is not None
    assert "SupportCycle" in [v.code for v in validate_world(w)]


def test_structural_cannot_be_supported(tworld):
    w = replace(tworld, relations=tworld.relations + (Relation("supports", "table", "wall_north"),))
    assert "StructuralSupported" in [v.code for v in validate_world(w)]


def test_dangling_relation(tworld):
    w = replace(tworld, relations=tworld.relations + (Relation("supports", "table", "ghost"),))
    assert "DanglingRelation" in [v.code for v in validate_world(w)]


def test_ungrounded_entity():
    w = with_entities(empty_room(), [box("a", "box", (0, 0, 0.5), (0.5, 0.5, 0.5))])
    assert [v.code for v in validate_world(w)] == ["Ungrounded"]


def test_outside_room():
    w = with_entities(empty_room(), [box("a", "box", (1.9, 0, 0.5), (0.5, 0.5, 0.5))],
                      [Relation("supports", "floor", "a")])
    assert "OutsideRoom" in [v.code for v in validate_world(w)]


def test_text_labels(tworld):
    assert text_label(tworld, "cup") == "a red cup on the table"
    w = with_entities(empty_room(), [box("b", "box", (0, 0, 0.5), (0.5, 0.5, 0.5), mat=GRAY)],
                      [Relation("supports", "floor", "b")])
    assert text_label(w, "b") == "a gray box on the floor"
    with pytest.raises(TargetStructural):
        text_label(w, "wall_north")
    with pytest.raises(TargetNotFound):
        text_label(w, "nope")


def test_json_round_trip_is_byte_stable(tmp_path):
    w = generate_room(GenConfig(seed=5), 3)
    text = w.to_json()
    again = WorldState.from_json(text).to_json()
    assert text == again
    path = save_world(w, tmp_path / "scene.json")
    assert load_world(path).to_json() == text
    d = json.loads(text)
    assert set(d) == {"room", "entities", "relations", "lights", "ambient", "t"}
    assert {"from", "to", "kind"} == set(d["relations"][0])
    assert "class" in d["entities"][0]


def test_nine_significant_digits():
    w = with_entities(empty_room(), [box("a", "box", (1 / 3, 0, 0.5), (0.5, 0.5, 0.5))],
                      [Relation("supports", "floor", "a")])
    d = json.loads(w.to_json())
    cx = [e for e in d["entities"] if e["id"] == "a"][0]["geometry"]["center"][0]
    assert cx == 0.333333333


@given(st.integers(0, 2**32 - 1), st.integers(0, 50))
def test_generated_worlds_invariants(seed, index):
    w = generate_room(GenConfig(seed=seed), index)
    assert validate_world(w) == []
    assert find_support_cycle(w) is None
    assert supported_subtree(w, "floor") | set(w.structural_ids) == set(w.ids)
    lo, hi = w.room.bounds()
    for eid in w.dynamic_ids:
        elo, ehi = world_aabb(w, eid)
        assert np.all(elo >= lo - 1e-9) and np.all(ehi <= hi + 1e-9)
    assert WorldState.from_json(w.to_json()).to_json() == w.to_json()
