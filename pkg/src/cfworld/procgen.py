"""Deterministic procedural generator of small furnished rooms.

Furniture is placed on the floor by rejection sampling; small objects are
placed on table tops. A room is a pure function of ``(GenConfig, index)``.
"""
from __future__ import annotations

import json
import logging
import math
import uuid
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .errors import PlacementExhausted
from .geometry import Box, Quad, Sphere, aabb
from .scene import (
    DYNAMIC,
    PALETTE,
    AreaLight,
    Entity,
    Material,
    PointLight,
    Relation,
    WorldState,
    new_world,
    room_from_size,
    validate_world,
)

log = logging.getLogger(__name__)

MAX_ATTEMPTS = 1000
ROOM_NAMESPACE = uuid.UUID("6f1c2a4e-3b7d-5e90-8a1f-2c4d6e8f0a1b")


@dataclass(frozen=True)
class GenConfig:
    seed: int = 0
    furniture_count_range: tuple[int, int] = (2, 4)
    small_object_range: tuple[int, int] = (1, 3)
    room_size_range: tuple[float, float] = (3.5, 6.0)
    wall_height_range: tuple[float, float] = (2.6, 3.2)
    light_count_range: tuple[int, int] = (1, 3)
    area_light_probability: float = 0.4
    mirror_probability: float = 0.2

    def __post_init__(self):
        for f in ("furniture_count_range", "small_object_range", "room_size_range",
                  "wall_height_range", "light_count_range"):
            lo, hi = getattr(self, f)
            if lo > hi or lo < 0:
                raise ValueError(f"{f} must satisfy 0 <= min <= max, got {(lo, hi)}")
            object.__setattr__(self, f, (lo, hi))
        if self.room_size_range[0] <= 0 or self.wall_height_range[0] <= 0:
            raise ValueError("room dimensions must be positive")
        if self.light_count_range[0] < 1:
            raise ValueError("at least one light is required")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    @classmethod
    def from_dict(cls, d: dict) -> "GenConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown GenConfig keys: {sorted(unknown)}")
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})

    @classmethod
    def from_file(cls, path) -> "GenConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


def room_uuid(seed: int, index: int) -> str:
    return str(uuid.uuid5(ROOM_NAMESPACE, f"{seed}:{index}"))


def _color(rng: np.random.Generator, names=None) -> tuple[float, float, float]:
    names = names or list(PALETTE)
    base = np.asarray(PALETTE[names[int(rng.integers(len(names)))]])
    jit = np.clip(base + rng.uniform(-0.04, 0.04, size=3), 0.02, 0.95)
    return tuple(float(c) for c in jit)


class _Floor:
    """Occupied floor footprints, as inflated xy bounds."""

    def __init__(self, lo, hi, margin=0.05):
        self.lo, self.hi, self.margin = lo, hi, margin
        self.rects: list[tuple[np.ndarray, np.ndarray]] = []

    def free(self, geoms) -> bool:
        m = self.margin
        for g in geoms:
            glo, ghi = aabb(g)
            if np.any(glo[:2] < self.lo[:2] + m) or np.any(ghi[:2] > self.hi[:2] - m):
                return False
            for rlo, rhi in self.rects:
                if np.all(np.minimum(ghi[:2], rhi[:2]) - np.maximum(glo[:2], rlo[:2]) > -m):
                    return False
        return True

    def occupy(self, geoms) -> None:
        for g in geoms:
            glo, ghi = aabb(g)
            self.rects.append((glo[:2], ghi[:2]))


def _place(rng, floor: _Floor, build, what: str):
    for _ in range(MAX_ATTEMPTS):
        x = rng.uniform(floor.lo[0], floor.hi[0])
        y = rng.uniform(floor.lo[1], floor.hi[1])
        yaw = float(rng.uniform(-0.6, 0.6))
        parts = build(x, y, yaw)
        if floor.free([g for g, *_ in parts]):
            floor.occupy([g for g, *_ in parts])
            return parts
    raise PlacementExhausted(f"could not place {what} after {MAX_ATTEMPTS} attempts")


def _table(rng):
    hx, hy = rng.uniform(0.4, 0.7), rng.uniform(0.3, 0.5)
    thick = 0.025
    height = rng.uniform(0.68, 0.78)
    leg = 0.03
    leg_h = height - 2 * thick

    def build(x, y, yaw):
        c, s = math.cos(yaw), math.sin(yaw)
        top = Box((x, y, height - thick), (hx, hy, thick), yaw)
        parts = [(top, "table", "top")]
        for k, (sx, sy) in enumerate(((-1, -1), (1, -1), (-1, 1), (1, 1))):
            lx, ly = sx * (hx - 2 * leg), sy * (hy - 2 * leg)
            cx, cy = x + c * lx - s * ly, y + s * lx + c * ly
            parts.append((Box((cx, cy, leg_h / 2), (leg, leg, leg_h / 2), yaw), "table_leg", f"leg_{k}"))
        return parts

    return build


def _cabinet(rng):
    hx, hy, hz = rng.uniform(0.2, 0.5), rng.uniform(0.15, 0.3), rng.uniform(0.3, 0.8)
    return lambda x, y, yaw: [(Box((x, y, hz), (hx, hy, hz), yaw), "cabinet", "")]


def _lamp(rng):
    r = rng.uniform(0.12, 0.25)
    return lambda x, y, yaw: [(Sphere((x, y, r), r), "lamp", "")]


SMALL_KINDS = ("cup", "book", "ball", "vase")


def _small_object(rng, kind: str):
    """(factory(x, y, z_top, yaw) -> geometry, footprint radius)."""
    if kind == "ball":
        r = rng.uniform(0.04, 0.08)
        return (lambda x, y, z, yaw: Sphere((x, y, z + r), r)), r
    if kind == "cup":
        hx = rng.uniform(0.03, 0.05)
        hx, hy, hz = hx, hx, rng.uniform(0.04, 0.07)
    elif kind == "book":
        hx, hy, hz = rng.uniform(0.08, 0.12), rng.uniform(0.06, 0.09), rng.uniform(0.015, 0.03)
    else:
        hx = rng.uniform(0.04, 0.06)
        hx, hy, hz = hx, hx, rng.uniform(0.08, 0.14)
    return (lambda x, y, z, yaw: Box((x, y, z + hz), (hx, hy, hz), yaw)), math.hypot(hx, hy)


def _populate_table(rng, top: Box, n: int, start: int):
    """Place ``n`` small objects on ``top``; returns [(id, class, geometry)]."""
    thx, thy, thz = top.half_extents
    z_top = top.center[2] + thz
    c, s = math.cos(top.yaw), math.sin(top.yaw)
    placed: list[tuple[float, float, float]] = []
    out = []
    for k in range(n):
        kind = SMALL_KINDS[int(rng.integers(len(SMALL_KINDS)))]
        make, rad = _small_object(rng, kind)
        for _ in range(MAX_ATTEMPTS):
            lx = rng.uniform(-(thx - rad - 0.02), thx - rad - 0.02) if thx > rad + 0.02 else None
            ly = rng.uniform(-(thy - rad - 0.02), thy - rad - 0.02) if thy > rad + 0.02 else None
            if lx is None or ly is None:
                break
            if all(math.hypot(lx - px, ly - py) >= rad + pr + 0.01 for px, py, pr in placed):
                placed.append((lx, ly, rad))
                x, y = top.center[0] + c * lx - s * ly, top.center[1] + s * lx + c * ly
                yaw = top.yaw + float(rng.uniform(-0.5, 0.5))
                out.append((f"{kind}_{start + k}", kind, make(x, y, z_top, yaw)))
                break
        else:
            raise PlacementExhausted(f"could not place {kind} on table after {MAX_ATTEMPTS} attempts")
    return out


def generate_room(cfg: GenConfig, index: int) -> WorldState:
    """Generate room ``index`` of the corpus defined by ``cfg``."""
    rng = np.random.default_rng([cfg.seed & 0xFFFFFFFF, cfg.seed >> 32, index])
    width = float(rng.uniform(*cfg.room_size_range))
    depth = float(rng.uniform(*cfg.room_size_range))
    height = float(rng.uniform(*cfg.wall_height_range))
    room = room_from_size(room_uuid(cfg.seed, index), width, depth, height)
    amb = float(rng.uniform(0.02, 0.06))
    shell = {
        "floor": Material(_color(rng, ["brown", "gray"])),
        "wall": Material(_color(rng, ["white", "gray", "yellow"])),
        "ceiling": Material((0.85, 0.85, 0.85)),
    }
    w = new_world(room, (amb, amb, amb), shell)
    lo, hi = room.bounds()
    floor = _Floor(lo, hi)

    n_furn = int(rng.integers(cfg.furniture_count_range[0], cfg.furniture_count_range[1] + 1))
    entities: list[Entity] = []
    relations: list[Relation] = []
    obj_counter = 0
    for k in range(n_furn):
        if k == 0:
            kind = "table"
        else:
            kind = ("table", "cabinet", "lamp")[int(rng.choice(3, p=[0.3, 0.4, 0.3]))]
        build = {"table": _table, "cabinet": _cabinet, "lamp": _lamp}[kind](rng)
        parts = _place(rng, floor, build, kind)
        base = f"{kind}_{k}"
        if kind == "table":
            top = parts[0][0]
            entities.append(Entity(base, "table", DYNAMIC, top, Material(_color(rng, ["brown", "white", "black"]))))
            leg_mat = Material(_color(rng, ["brown", "black", "gray"]))
            for g, cls, suffix in parts[1:]:
                lid = f"{base}_{suffix}"
                entities.append(Entity(lid, cls, DYNAMIC, g, leg_mat))
                relations += [Relation("supports", "floor", lid), Relation("supports", lid, base),
                              Relation("attached_to", lid, base)]
            lo_n, hi_n = cfg.small_object_range
            n_small = int(rng.integers(lo_n, hi_n + 1))
            for sid, cls, g in _populate_table(rng, top, n_small, obj_counter):
                entities.append(Entity(sid, cls, DYNAMIC, g, Material(_color(rng))))
                relations.append(Relation("supports", base, sid))
            obj_counter += n_small
        else:
            g = parts[0][0]
            mirror = 0.0
            if kind == "cabinet" and rng.uniform() < cfg.mirror_probability:
                mirror = 0.6
            entities.append(Entity(base, kind, DYNAMIC, g, Material(_color(rng), mirror)))
            relations.append(Relation("supports", "floor", base))

    lights = []
    n_lights = int(rng.integers(cfg.light_count_range[0], cfg.light_count_range[1] + 1))
    for _ in range(n_lights):
        x = float(rng.uniform(lo[0] + 0.4, hi[0] - 0.4))
        y = float(rng.uniform(lo[1] + 0.4, hi[1] - 0.4))
        tint = (1.0, float(rng.uniform(0.85, 1.0)), float(rng.uniform(0.7, 1.0)))
        if rng.uniform() < cfg.area_light_probability:
            size = float(rng.uniform(0.4, 0.8))
            quad = Quad((x - size / 2, y - size / 2, hi[2] - 0.01), (0.0, size, 0.0), (size, 0.0, 0.0))
            power = float(rng.uniform(4.0, 10.0))
            lights.append(AreaLight(quad, tuple(power * t for t in tint), 8))
        else:
            z = float(hi[2] - rng.uniform(0.3, 0.6))
            power = float(rng.uniform(3.0, 8.0))
            lights.append(PointLight((x, y, z), tuple(power * t for t in tint)))

    w = WorldState(
        room=w.room,
        entities=w.entities + tuple(entities),
        relations=tuple(relations),
        lights=tuple(lights),
        ambient=w.ambient,
        t=0,
    ).normalized()
    problems = validate_world(w)
    if problems:
        raise AssertionError(f"generator produced an invalid room: {problems}")
    return w


def _write_room(args) -> str:
    cfg, index, out_dir = args
    path = Path(out_dir) / f"scene_{index:05d}.json"
    text = generate_room(cfg, index).to_json()
    try:
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write scene file {path}: {exc.strerror}", str(path)) from exc
    return str(path)


def generate_corpus(cfg: GenConfig, n_rooms: int, out_dir, jobs: int = 1) -> list[Path]:
    """Write ``n_rooms`` scene files ``scene_{index:05d}.json`` into ``out_dir``."""
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(exc.errno, f"cannot create output directory {out_dir}: {exc.strerror}", str(out_dir)) from exc
    tasks = [(cfg, i, str(out_dir)) for i in range(n_rooms)]
    if jobs > 1 and n_rooms > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            paths = list(pool.map(_write_room, tasks))
    else:
        paths = [_write_room(t) for t in tasks]
    log.info("wrote %d scenes to %s", len(paths), out_dir)
    return [Path(p) for p in paths]
