"""Persistent world-state model.

A :class:`WorldState` holds a room shell, structural and dynamic entities,
their relation graph, lights, an ambient term and a time index. States are
immutable; edits build new states (see :mod:`cfworld.intervention`).
"""
from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, replace
from functools import cached_property
from pathlib import Path
from typing import Iterable, Literal, Union

import numpy as np

from .errors import InvalidRoom, TargetNotFound, TargetStructural
from .geometry import (
    Box,
    Geometry,
    Quad,
    Sphere,
    aabb,
    geometry_from_dict,
    geometry_to_dict,
    is_flat_top,
    penetration_depth,
    vec3,
)

EPS_PEN = 1e-4
EPS_SUP = 1e-3

STRUCTURAL = "structural"
DYNAMIC = "dynamic"
RELATION_KINDS = ("supports", "attached_to", "contains")

Kind = Literal["structural", "dynamic"]
RGB = tuple[float, float, float]


@dataclass(frozen=True)
class Material:
    albedo: RGB
    mirror_reflectance: float = 0.0


@dataclass(frozen=True)
class Entity:
    id: str
    cls: str
    kind: Kind
    geometry: Geometry
    material: Material

    @property
    def is_structural(self) -> bool:
        return self.kind == STRUCTURAL


@dataclass(frozen=True)
class Relation:
    kind: str
    src: str
    dst: str


@dataclass(frozen=True)
class PointLight:
    position: tuple[float, float, float]
    intensity: RGB


@dataclass(frozen=True)
class AreaLight:
    quad: Quad
    radiance: RGB
    sample_count: int = 8


Light = Union[PointLight, AreaLight]


@dataclass(frozen=True)
class RoomSpec:
    room_uuid: str
    floor_rect: Quad
    wall_height: float

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Axis-aligned (min, max) corners of the room volume."""
        lo, hi = aabb(self.floor_rect)
        hi = hi.copy()
        hi[2] = lo[2] + self.wall_height
        return lo, hi


@dataclass(frozen=True)
class WorldState:
    room: RoomSpec
    entities: tuple[Entity, ...]
    relations: tuple[Relation, ...] = ()
    lights: tuple[Light, ...] = ()
    ambient: RGB = (0.0, 0.0, 0.0)
    t: int = 0

    @cached_property
    def _by_id(self) -> dict[str, int]:
        return {e.id: i for i, e in enumerate(self.entities)}

    def __contains__(self, eid: str) -> bool:
        return eid in self._by_id

    def entity(self, eid: str) -> Entity:
        try:
            return self.entities[self._by_id[eid]]
        except KeyError:
            raise TargetNotFound(f"no entity with id {eid!r}") from None

    def index_of(self, eid: str) -> int:
        try:
            return self._by_id[eid]
        except KeyError:
            raise TargetNotFound(f"no entity with id {eid!r}") from None

    @property
    def ids(self) -> list[str]:
        return [e.id for e in self.entities]

    @property
    def structural_ids(self) -> list[str]:
        return [e.id for e in self.entities if e.kind == STRUCTURAL]

    @property
    def dynamic_ids(self) -> list[str]:
        return [e.id for e in self.entities if e.kind == DYNAMIC]

    def supporters_of(self, eid: str) -> list[str]:
        return [r.src for r in self.relations if r.kind == "supports" and r.dst == eid]

    def supportees_of(self, eid: str) -> list[str]:
        return [r.dst for r in self.relations if r.kind == "supports" and r.src == eid]

    # serialization -----------------------------------------------------

    def to_dict(self) -> dict:
        return _round9(
            {
                "room": {
                    "room_uuid": self.room.room_uuid,
                    "floor_rect": geometry_to_dict(self.room.floor_rect),
                    "wall_height": self.room.wall_height,
                },
                "entities": [_entity_to_dict(e) for e in self.entities],
                "relations": [{"kind": r.kind, "from": r.src, "to": r.dst} for r in self.relations],
                "lights": [_light_to_dict(lt) for lt in self.lights],
                "ambient": list(self.ambient),
                "t": self.t,
            }
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "WorldState":
        room = RoomSpec(
            room_uuid=str(d["room"]["room_uuid"]),
            floor_rect=geometry_from_dict(d["room"]["floor_rect"]),
            wall_height=float(d["room"]["wall_height"]),
        )
        return cls(
            room=room,
            entities=tuple(_entity_from_dict(e) for e in d["entities"]),
            relations=tuple(Relation(r["kind"], r["from"], r["to"]) for r in d["relations"]),
            lights=tuple(_light_from_dict(lt) for lt in d["lights"]),
            ambient=vec3(d["ambient"]),
            t=int(d["t"]),
        )

    @classmethod
    def from_json(cls, text: str) -> "WorldState":
        return cls.from_dict(json.loads(text))

    def normalized(self) -> "WorldState":
        """The state as it reads back from its own scene file."""
        return WorldState.from_dict(self.to_dict())


def _sig9(x: float) -> float:
    if not math.isfinite(x):
        raise ValueError(f"cannot serialize non-finite number {x}")
    return float(f"{x:.9g}")


def _round9(obj):
    if isinstance(obj, bool) or obj is None or isinstance(obj, (int, str)):
        return obj
    if isinstance(obj, float):
        return _sig9(obj)
    if isinstance(obj, dict):
        return {k: _round9(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round9(v) for v in obj]
    if isinstance(obj, np.generic):
        return _round9(obj.item())
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _entity_to_dict(e: Entity) -> dict:
    return {
        "id": e.id,
        "class": e.cls,
        "kind": e.kind,
        "geometry": geometry_to_dict(e.geometry),
        "material": {"albedo": list(e.material.albedo), "mirror_reflectance": e.material.mirror_reflectance},
    }


def _entity_from_dict(d: dict) -> Entity:
    m = d["material"]
    return Entity(
        id=str(d["id"]),
        cls=str(d["class"]),
        kind=d["kind"],
        geometry=geometry_from_dict(d["geometry"]),
        material=Material(vec3(m["albedo"]), float(m["mirror_reflectance"])),
    )


def _light_to_dict(lt: Light) -> dict:
    if isinstance(lt, PointLight):
        return {"type": "Point", "position": list(lt.position), "intensity": list(lt.intensity)}
    return {
        "type": "Area",
        "quad": geometry_to_dict(lt.quad),
        "radiance": list(lt.radiance),
        "sample_count": lt.sample_count,
    }


def _light_from_dict(d: dict) -> Light:
    if d["type"] == "Point":
        return PointLight(vec3(d["position"]), vec3(d["intensity"]))
    if d["type"] == "Area":
        return AreaLight(geometry_from_dict(d["quad"]), vec3(d["radiance"]), int(d["sample_count"]))
    raise ValueError(f"unknown light type {d['type']!r}")


def load_world(path: str | Path) -> WorldState:
    return WorldState.from_json(Path(path).read_text(encoding="utf-8"))


def save_world(w: WorldState, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(w.to_json(), encoding="utf-8")
    return path


# construction ----------------------------------------------------------

DEFAULT_SHELL = {
    "floor": Material((0.5, 0.5, 0.5)),
    "wall": Material((0.7, 0.7, 0.7)),
    "ceiling": Material((0.8, 0.8, 0.8)),
}


def room_from_size(room_uuid: str, width: float, depth: float, height: float) -> RoomSpec:
    """A room of the given size centered on the origin with its floor at z = 0."""
    floor = Quad((-width / 2, -depth / 2, 0.0), (width, 0.0, 0.0), (0.0, depth, 0.0))
    return RoomSpec(room_uuid, floor, height)


def new_world(room: RoomSpec, ambient=(0.0, 0.0, 0.0), shell: dict[str, Material] | None = None) -> WorldState:
    """Empty world: floor, ceiling and four walls around ``room``."""
    fr = room.floor_rect
    u, v = np.asarray(fr.edge_u, float), np.asarray(fr.edge_v, float)
    if (
        room.wall_height <= 0
        or abs(u[2]) > 0 or abs(v[2]) > 0
        or np.count_nonzero(u) != 1 or np.count_nonzero(v) != 1
        or np.argmax(np.abs(u)) == np.argmax(np.abs(v))
    ):
        raise InvalidRoom(f"room {room.room_uuid!r} needs an axis-aligned floor and positive wall height")
    mats = dict(DEFAULT_SHELL)
    mats.update(shell or {})
    lo, hi = room.bounds()
    x0, y0, z0 = lo
    x1, y1, z1 = hi
    W, D, H = x1 - x0, y1 - y0, z1 - z0
    quads = [
        ("floor", "floor", Quad((x0, y0, z0), (W, 0.0, 0.0), (0.0, D, 0.0))),
        ("ceiling", "ceiling", Quad((x0, y0, z1), (0.0, D, 0.0), (W, 0.0, 0.0))),
        ("wall_south", "wall", Quad((x0, y0, z0), (0.0, 0.0, H), (W, 0.0, 0.0))),
        ("wall_north", "wall", Quad((x0, y1, z0), (W, 0.0, 0.0), (0.0, 0.0, H))),
        ("wall_west", "wall", Quad((x0, y0, z0), (0.0, D, 0.0), (0.0, 0.0, H))),
        ("wall_east", "wall", Quad((x1, y0, z0), (0.0, 0.0, H), (0.0, D, 0.0))),
    ]
    entities = tuple(
        Entity(eid, cls, STRUCTURAL, Quad(vec3(q.origin), vec3(q.edge_u), vec3(q.edge_v)), mats[cls])
        for eid, cls, q in quads
    )
    return WorldState(room=room, entities=entities, ambient=vec3(ambient))


def with_entities(
    w: WorldState,
    add: Iterable[Entity] = (),
    relations: Iterable[Relation] = (),
) -> WorldState:
    return replace(w, entities=w.entities + tuple(add), relations=w.relations + tuple(relations))


# queries ---------------------------------------------------------------

def supported_subtree(w: WorldState, eid: str) -> set[str]:
    """``eid`` plus everything resting on it, transitively, through supports edges."""
    w.entity(eid)
    children: dict[str, list[str]] = {}
    for r in w.relations:
        if r.kind == "supports":
            children.setdefault(r.src, []).append(r.dst)
    seen = {eid}
    queue = deque([eid])
    while queue:
        cur = queue.popleft()
        for nxt in children.get(cur, ()):
            if nxt not in seen and nxt in w:
                seen.add(nxt)
                queue.append(nxt)
    return seen


def world_aabb(w: WorldState, eid: str) -> tuple[np.ndarray, np.ndarray]:
    return aabb(w.entity(eid).geometry)


def top_z(g: Geometry) -> float:
    return float(aabb(g)[1][2])


def bottom_z(g: Geometry) -> float:
    return float(aabb(g)[0][2])


def footprints_overlap(a: Geometry, b: Geometry, tol: float = EPS_SUP) -> bool:
    lo1, hi1 = aabb(a)
    lo2, hi2 = aabb(b)
    return bool(np.all(np.minimum(hi1[:2], hi2[:2]) - np.maximum(lo1[:2], lo2[:2]) > -tol))


def contact_ok(child: Geometry, supporter: Geometry) -> bool:
    return abs(bottom_z(child) - top_z(supporter)) <= EPS_SUP and footprints_overlap(child, supporter)


@dataclass(frozen=True)
class Violation:
    code: str
    ids: tuple[str, ...] = ()
    detail: str = ""

    def to_dict(self) -> dict:
        return {"code": self.code, "ids": list(self.ids), "detail": self.detail}


def _check_geometry(e: Entity) -> str | None:
    g = e.geometry
    try:
        g.validate()
    except Exception as exc:  # noqa: BLE001 - reported as data
        return str(exc)
    alb = e.material.albedo
    if not all(0.0 <= c <= 1.0 for c in alb) or not 0.0 <= e.material.mirror_reflectance <= 1.0:
        return "material out of range"
    return None


def find_support_cycle(w: WorldState) -> list[str] | None:
    children: dict[str, list[str]] = {}
    for r in w.relations:
        if r.kind == "supports":
            children.setdefault(r.src, []).append(r.dst)
    state: dict[str, int] = {}
    for root in children:
        if state.get(root):
            continue
        stack = [(root, iter(children.get(root, ())))]
        path = [root]
        state[root] = 1
        while stack:
            node, it = stack[-1]
            nxt = next(it, None)
            if nxt is None:
                state[node] = 2
                stack.pop()
                path.pop()
                continue
            if state.get(nxt) == 1:
                return path[path.index(nxt):] + [nxt]
            if not state.get(nxt):
                state[nxt] = 1
                stack.append((nxt, iter(children.get(nxt, ()))))
                path.append(nxt)
    return None


def validate_world(w: WorldState) -> list[Violation]:
    """All invariant violations of ``w``; an empty list means the world is consistent."""
    out: list[Violation] = []
    seen: set[str] = set()
    for e in w.entities:
        if e.id in seen:
            out.append(Violation("DuplicateId", (e.id,)))
        seen.add(e.id)
        if e.kind not in (STRUCTURAL, DYNAMIC):
            out.append(Violation("InvalidKind", (e.id,), str(e.kind)))
        msg = _check_geometry(e)
        if msg:
            out.append(Violation("InvalidEntity", (e.id,), msg))
    for i, lt in enumerate(w.lights):
        vals = lt.intensity if isinstance(lt, PointLight) else lt.radiance
        if min(vals) < 0 or (isinstance(lt, AreaLight) and lt.sample_count < 1):
            out.append(Violation("InvalidLight", (), f"light {i}"))

    for r in w.relations:
        if r.kind not in RELATION_KINDS:
            out.append(Violation("InvalidRelation", (r.src, r.dst), r.kind))
        if r.src not in w or r.dst not in w:
            out.append(Violation("DanglingRelation", (r.src, r.dst), r.kind))
        elif r.kind == "supports":
            if r.src == r.dst:
                out.append(Violation("SupportCycle", (r.src,)))
            elif w.entity(r.dst).is_structural:
                out.append(Violation("StructuralSupported", (r.src, r.dst)))
            elif not contact_ok(w.entity(r.dst).geometry, w.entity(r.src).geometry):
                out.append(Violation("SupportContactViolated", (r.src, r.dst)))

    cycle = find_support_cycle(w)
    if cycle:
        out.append(Violation("SupportCycle", tuple(cycle)))

    # grounding: walk supporters upward until a structural entity is reached
    grounded = set(w.structural_ids)
    changed = True
    while changed:
        changed = False
        for r in w.relations:
            if r.kind == "supports" and r.src in grounded and r.dst not in grounded and r.dst in w:
                grounded.add(r.dst)
                changed = True
    for eid in w.dynamic_ids:
        if eid not in grounded:
            out.append(Violation("Ungrounded", (eid,)))

    lo, hi = w.room.bounds()
    dyn = [e for e in w.entities if e.kind == DYNAMIC]
    boxes = []
    for e in dyn:
        elo, ehi = aabb(e.geometry)
        boxes.append((elo, ehi))
        if np.any(elo < lo - EPS_PEN) or np.any(ehi > hi + EPS_PEN):
            out.append(Violation("OutsideRoom", (e.id,)))
    for i in range(len(dyn)):
        for j in range(i + 1, len(dyn)):
            (lo1, hi1), (lo2, hi2) = boxes[i], boxes[j]
            if np.any(np.minimum(hi1, hi2) - np.maximum(lo1, lo2) <= EPS_PEN):
                continue
            depth = penetration_depth(dyn[i].geometry, dyn[j].geometry)
            if depth > EPS_PEN:
                out.append(Violation("Interpenetration", (dyn[i].id, dyn[j].id), f"depth {depth:.6g} m"))
    return out


# language labels ---------------------------------------------------------

PALETTE: dict[str, RGB] = {
    "red": (0.8, 0.1, 0.1),
    "green": (0.1, 0.6, 0.15),
    "blue": (0.1, 0.2, 0.8),
    "yellow": (0.85, 0.8, 0.1),
    "gray": (0.5, 0.5, 0.5),
    "white": (0.92, 0.92, 0.92),
    "black": (0.05, 0.05, 0.05),
    "brown": (0.42, 0.25, 0.1),
}


def color_name(albedo) -> str:
    a = np.asarray(albedo, dtype=float)
    return min(PALETTE, key=lambda k: float(np.sum((np.asarray(PALETTE[k]) - a) ** 2)))


def text_label(w: WorldState, eid: str) -> str:
    e = w.entity(eid)
    if e.is_structural:
        raise TargetStructural(f"{eid!r} is structural")
    sups = w.supporters_of(eid)
    where = w.entity(sups[0]).cls if sups and sups[0] in w else "floor"
    return f"a {color_name(e.material.albedo)} {e.cls.replace('_', ' ')} on the {where.replace('_', ' ')}"


__all__ = [
    "AreaLight", "Box", "DYNAMIC", "EPS_PEN", "EPS_SUP", "Entity", "Light", "Material", "PointLight",
    "Quad", "Relation", "RoomSpec", "STRUCTURAL", "Sphere", "Violation", "WorldState", "bottom_z",
    "color_name", "contact_ok", "is_flat_top", "load_world", "new_world", "room_from_size", "save_world",
    "supported_subtree", "text_label", "top_z", "validate_world", "with_entities", "world_aabb",
]
