from __future__ import annotations

import math
import os
import sys

import pytest
from hypothesis import HealthCheck, settings

from cfworld.geometry import Box, Sphere
from cfworld.procgen import GenConfig, generate_room
from cfworld.render import CameraConfig
from cfworld.scene import (
    DYNAMIC,
    Entity,
    Material,
    PointLight,
    Relation,
    new_world,
    room_from_size,
    with_entities,
)

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

GRAY = Material((0.5, 0.5, 0.5))
RED = Material((0.8, 0.1, 0.1))


def box(eid, cls, center, half, yaw=0.0, mat=GRAY):
    return Entity(eid, cls, DYNAMIC, Box(center, half, yaw), mat)


def ball(eid, center, r, mat=GRAY):
    return Entity(eid, "ball", DYNAMIC, Sphere(center, r), mat)


def empty_room(w=4.0, d=4.0, h=3.0, light=(0.0, 0.0, 2.0), intensity=(10.0, 10.0, 10.0), ambient=(0.0, 0.0, 0.0)):
    world = new_world(room_from_size("test-room", w, d, h), ambient)
    if light is not None:
        from dataclasses import replace

        world = replace(world, lights=(PointLight(light, intensity),))
    return world


def table_world():
    """Floor, a table holding a cup and a plate, and a free-standing lamp."""
    w = empty_room(light=(0.0, 0.0, 2.5))
    table = box("table", "table", (0.0, 0.0, 0.4), (0.5, 0.4, 0.4))
    cup = box("cup", "cup", (0.2, 0.1, 0.85), (0.05, 0.05, 0.05), mat=RED)
    plate = box("plate", "plate", (-0.2, -0.1, 0.81), (0.1, 0.1, 0.01))
    lamp = box("lamp", "lamp", (1.3, 1.3, 0.6), (0.1, 0.1, 0.6))
    rels = [Relation("supports", "floor", "table"), Relation("supports", "table", "cup"),
            Relation("supports", "table", "plate"), Relation("supports", "floor", "lamp")]
    return with_entities(w, [table, cup, plate, lamp], rels)


@pytest.fixture
def tworld():
    return table_world()


@pytest.fixture(scope="session")
def gen_worlds():
    cfg = GenConfig(seed=11)
    return [generate_room(cfg, i) for i in range(6)]


def down_camera(height=2.5, width=64, vfov_deg=60.0, cid="down"):
    return CameraConfig(cid, (0.0, 0.0, height), (0.0, 0.0, 0.0), (0.0, 1.0, 0.0),
                        math.radians(vfov_deg), width, width)


def tile_world(cols: int, rows: int = 10):
    """A thin floor tile that covers exactly ``cols x rows`` pixels of ``down_camera(2.0, 100)``."""
    pix = 2 * (2.0 - 0.01) * math.tan(math.radians(30.0)) / 100
    tile = box("tile", "tile", (0.0, 0.0, 0.005), (cols / 2 * pix, rows / 2 * pix, 0.005))
    return with_entities(empty_room(), [tile], [Relation("supports", "floor", "tile")])


def pytest_terminal_summary(terminalreporter):
    import acceptance_log

    if acceptance_log.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(acceptance_log.RESULTS, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
