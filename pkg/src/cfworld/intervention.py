"""World edits as explicit state transitions.

An edit goes through three steps: :func:`check_validity` decides whether it
is allowed, :func:`apply` performs only the direct change (leaving relations
stale), and :func:`propagate` repairs dependent state and advances ``t``.
:func:`intervene` chains them and returns the :class:`EditRecord`.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Union

import numpy as np

from .errors import InterventionRejected, UnsupportedAfterEdit
from .geometry import aabb, center_of, is_flat_top, penetration_depth, rotated_about_z, translated, vec3
from .scene import (
    DYNAMIC,
    EPS_PEN,
    STRUCTURAL,
    Entity,
    PointLight,
    Relation,
    WorldState,
    _entity_from_dict,
    _entity_to_dict,
    _round9,
    bottom_z,
    contact_ok,
    supported_subtree,
    top_z,
    validate_world,
)


@dataclass(frozen=True)
class Remove:
    target: str


@dataclass(frozen=True)
class Insert:
    entity: Entity
    supporter: str


@dataclass(frozen=True)
class Relocate:
    target: str
    new_center: tuple[float, float, float]
    new_yaw: float
    new_supporter: str


@dataclass(frozen=True)
class LightChange:
    light_index: int
    new_intensity: tuple[float, float, float]


@dataclass(frozen=True)
class RemoveAllDynamic:
    pass


Intervention = Union[Remove, Insert, Relocate, LightChange, RemoveAllDynamic]

CASCADE = "cascade"
RESEAT = "reseat"


@dataclass(frozen=True)
class Violation:
    code: str
    detail: str = ""


@dataclass(frozen=True)
class ValidityReport:
    violations: tuple[Violation, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    @property
    def codes(self) -> list[str]:
        return [v.code for v in self.violations]

    def to_dict(self) -> dict:
        return {"ok": self.ok, "violations": [{"code": v.code, "detail": v.detail} for v in self.violations]}


@dataclass(frozen=True)
class EditRecord:
    intervention: Intervention
    directly_edited: frozenset[str]
    propagated: frozenset[str]
    t_before: int
    t_after: int

    @property
    def touched(self) -> frozenset[str]:
        return self.directly_edited | self.propagated

    def to_dict(self) -> dict:
        return {
            "intervention": intervention_to_dict(self.intervention),
            "directly_edited": sorted(self.directly_edited),
            "propagated": sorted(self.propagated),
            "t_before": self.t_before,
            "t_after": self.t_after,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EditRecord":
        return cls(
            intervention_from_dict(d["intervention"]),
            frozenset(d["directly_edited"]),
            frozenset(d["propagated"]),
            int(d["t_before"]),
            int(d["t_after"]),
        )


@dataclass(frozen=True)
class Provisional:
    """Result of :func:`apply`: the directly edited world plus what was done to it."""

    world: WorldState
    intervention: Intervention
    directly_edited: frozenset[str]
    t_before: int
    extra: dict = field(default_factory=dict, compare=False)


# JSON commands ---------------------------------------------------------------

def intervention_to_dict(i: Intervention) -> dict:
    if isinstance(i, Remove):
        return {"op": "remove", "target": i.target}
    if isinstance(i, Insert):
        return {"op": "insert", "entity": _round9(_entity_to_dict(i.entity)), "supporter": i.supporter}
    if isinstance(i, Relocate):
        return _round9({"op": "relocate", "target": i.target, "new_center": list(i.new_center),
                        "new_yaw": i.new_yaw, "new_supporter": i.new_supporter})
    if isinstance(i, LightChange):
        return _round9({"op": "light", "light_index": i.light_index, "new_intensity": list(i.new_intensity)})
    if isinstance(i, RemoveAllDynamic):
        return {"op": "remove-all"}
    raise TypeError(f"not an intervention: {i!r}")


def intervention_from_dict(d: dict) -> Intervention:
    op = d.get("op")
    if op == "remove":
        return Remove(str(d["target"]))
    if op == "insert":
        return Insert(_entity_from_dict(d["entity"]), str(d["supporter"]))
    if op == "relocate":
        return Relocate(str(d["target"]), vec3(d["new_center"]), float(d.get("new_yaw", 0.0)), str(d["new_supporter"]))
    if op == "light":
        return LightChange(int(d["light_index"]), vec3(d["new_intensity"]))
    if op == "remove-all":
        return RemoveAllDynamic()
    raise ValueError(f"unknown intervention op {op!r}")


def parse_commands(text: str) -> list[Intervention]:
    """One JSON command per non-empty line."""
    return [intervention_from_dict(json.loads(line)) for line in text.splitlines() if line.strip()]


# validity --------------------------------------------------------------------

def _moved_geometries(w: WorldState, i: Relocate) -> dict[str, object]:
    """New geometry for the relocated target and everything resting on it."""
    target = w.entity(i.target)
    g = target.geometry
    old_c = center_of(g)
    old_yaw = getattr(g, "yaw", 0.0)
    dyaw = i.new_yaw - old_yaw if hasattr(g, "yaw") else 0.0
    offset = np.asarray(i.new_center, dtype=float) - old_c
    out = {}
    for eid in supported_subtree(w, i.target):
        eg = rotated_about_z(w.entity(eid).geometry, old_c, dyaw)
        out[eid] = translated(eg, offset)
    return out


def _placement_violations(w: WorldState, geoms: dict[str, object], supporter: str, anchor: str) -> list[Violation]:
    out = []
    if supporter not in w:
        return [Violation("TargetNotFound", f"supporter {supporter!r}")]
    if supporter in geoms:
        return [Violation("PlacementInfeasible", "supporter is part of the moved set")]
    sup = w.entity(supporter)
    if not is_flat_top(sup.geometry) or not contact_ok(geoms[anchor], sup.geometry):
        out.append(Violation("PlacementInfeasible", f"{anchor!r} does not rest on {supporter!r}"))
    lo, hi = w.room.bounds()
    for eid, g in geoms.items():
        glo, ghi = aabb(g)
        if np.any(glo < lo - EPS_PEN) or np.any(ghi > hi + EPS_PEN):
            out.append(Violation("PlacementInfeasible", f"{eid!r} leaves the room"))
            continue
        for other in w.entities:
            if other.kind != DYNAMIC or other.id in geoms:
                continue
            if penetration_depth(g, other.geometry) > EPS_PEN:
                out.append(Violation("CollisionDetected", f"{eid!r} intersects {other.id!r}"))
    return out


def check_validity(w: WorldState, i: Intervention) -> ValidityReport:
    v: list[Violation] = []
    if isinstance(i, (Remove, Relocate)):
        if i.target not in w:
            v.append(Violation("TargetNotFound", i.target))
        elif w.entity(i.target).kind == STRUCTURAL:
            v.append(Violation("TargetStructural", i.target))
        elif isinstance(i, Relocate):
            geoms = _moved_geometries(w, i)
            v += _placement_violations(w, geoms, i.new_supporter, i.target)
    elif isinstance(i, Insert):
        e = i.entity
        if e.id in w:
            v.append(Violation("PlacementInfeasible", f"id {e.id!r} already exists"))
        elif e.kind != DYNAMIC:
            v.append(Violation("TargetStructural", f"inserted entity {e.id!r} must be dynamic"))
        else:
            try:
                e.geometry.validate()
            except Exception as exc:  # noqa: BLE001
                v.append(Violation("PlacementInfeasible", str(exc)))
            else:
                v += _placement_violations(w, {e.id: e.geometry}, i.supporter, e.id)
    elif isinstance(i, LightChange):
        if not 0 <= i.light_index < len(w.lights):
            v.append(Violation("TargetNotFound", f"light {i.light_index}"))
        elif min(i.new_intensity) < 0:
            v.append(Violation("PlacementInfeasible", "negative light intensity"))
    elif not isinstance(i, RemoveAllDynamic):
        raise TypeError(f"not an intervention: {i!r}")
    return ValidityReport(tuple(v))


# direct edit -----------------------------------------------------------------

def apply(w: WorldState, i: Intervention) -> Provisional:
    """Perform the direct edit only; relations are left as they were."""
    report = check_validity(w, i)
    if not report.ok:
        raise InterventionRejected(report)
    if isinstance(i, Remove):
        ents = tuple(e for e in w.entities if e.id != i.target)
        return Provisional(replace(w, entities=ents), i, frozenset([i.target]), w.t)
    if isinstance(i, RemoveAllDynamic):
        gone = frozenset(w.dynamic_ids)
        ents = tuple(e for e in w.entities if e.id not in gone)
        return Provisional(replace(w, entities=ents), i, gone, w.t)
    if isinstance(i, Insert):
        return Provisional(replace(w, entities=w.entities + (i.entity,)), i, frozenset([i.entity.id]), w.t)
    if isinstance(i, Relocate):
        target = w.entity(i.target)
        g = translated(target.geometry, np.asarray(i.new_center) - center_of(target.geometry))
        if hasattr(g, "yaw"):
            g = replace(g, yaw=float(i.new_yaw))
        ents = tuple(replace(e, geometry=g) if e.id == i.target else e for e in w.entities)
        return Provisional(replace(w, entities=ents), i, frozenset([i.target]), w.t,
                           extra={"moved": _moved_geometries(w, i)})
    lights = list(w.lights)
    lt = lights[i.light_index]
    if isinstance(lt, PointLight):
        lights[i.light_index] = replace(lt, intensity=vec3(i.new_intensity))
    else:
        lights[i.light_index] = replace(lt, radiance=vec3(i.new_intensity))
    return Provisional(replace(w, lights=tuple(lights)), i, frozenset(), w.t)


# propagation -----------------------------------------------------------------

def _dangling_subtree(w: WorldState, root: str) -> set[str]:
    """Supported subtree of an entity that is no longer in ``w`` (edges still are)."""
    children: dict[str, list[str]] = {}
    for r in w.relations:
        if r.kind == "supports":
            children.setdefault(r.src, []).append(r.dst)
    seen, stack = {root}, [root]
    while stack:
        for nxt in children.get(stack.pop(), ()):
            if nxt not in seen:
                seen.add(nxt)
                stack.append(nxt)
    return seen


def _landing_surface(w: WorldState, g, exclude: set[str]) -> str | None:
    """Highest flat top below ``g`` whose footprint holds ``g``'s center."""
    c = center_of(g)
    bz = bottom_z(g)
    best, best_z = None, -np.inf
    for e in w.entities:
        if e.id in exclude or not is_flat_top(e.geometry):
            continue
        if e.kind == STRUCTURAL and e.cls != "floor":
            continue
        lo, hi = aabb(e.geometry)
        tz = hi[2]
        if tz > bz + 1e-9 or tz <= best_z:
            continue
        if lo[0] <= c[0] <= hi[0] and lo[1] <= c[1] <= hi[1]:
            best, best_z = e.id, tz
    return best


def propagate(prov: Provisional, policy: str = CASCADE) -> tuple[WorldState, frozenset[str]]:
    """Restore a consistent state after :func:`apply`.

    Returns the new world (``t`` advanced by one) and the ids changed as a
    consequence of the edit rather than by it.
    """
    if policy not in (CASCADE, RESEAT):
        raise ValueError(f"unknown propagation policy {policy!r}")
    w = prov.world
    i = prov.intervention
    propagated: set[str] = set()
    entities = list(w.entities)
    relations = list(w.relations)

    if isinstance(i, (Remove, RemoveAllDynamic)):
        removed = set(prov.directly_edited)
        if isinstance(i, Remove) and policy == CASCADE:
            sub = _dangling_subtree(w, i.target)
            propagated = sub - removed
            removed |= sub
        elif isinstance(i, Remove):
            children = [r.dst for r in relations if r.kind == "supports" and r.src == i.target]
            # other supporters keep a child in place; only orphans drop
            orphans = [c for c in children
                       if c in w and not any(r.kind == "supports" and r.dst == c and r.src != i.target
                                             and r.src in w for r in relations)]
            remaining = replace(w, entities=tuple(e for e in entities if e.id not in removed))
            relations = [r for r in relations if r.src not in removed and r.dst not in removed]
            by_id = {e.id: k for k, e in enumerate(entities)}
            for child in sorted(orphans):
                sub = _dangling_subtree(replace(w, relations=tuple(relations)), child)
                surface = _landing_surface(remaining, entities[by_id[child]].geometry, exclude=sub | removed)
                if surface is None:
                    raise UnsupportedAfterEdit(f"no surface below {child!r}")
                dz = top_z(remaining.entity(surface).geometry) - bottom_z(entities[by_id[child]].geometry)
                for eid in sub:
                    k = by_id[eid]
                    entities[k] = replace(entities[k], geometry=translated(entities[k].geometry, (0.0, 0.0, dz)))
                relations.append(Relation("supports", surface, child))
                propagated |= sub
        entities = [e for e in entities if e.id not in removed]
        relations = [r for r in relations if r.src not in removed and r.dst not in removed]
    elif isinstance(i, Relocate):
        moved = prov.extra["moved"]
        entities = [replace(e, geometry=moved[e.id]) if e.id in moved else e for e in entities]
        relations = [r for r in relations if not (r.kind == "supports" and r.dst == i.target)]
        relations = [r for r in relations if not (r.kind == "attached_to" and i.target in (r.src, r.dst))]
        relations.append(Relation("supports", i.new_supporter, i.target))
        propagated = set(moved) - {i.target}
    elif isinstance(i, Insert):
        relations.append(Relation("supports", i.supporter, i.entity.id))

    new = replace(w, entities=tuple(entities), relations=tuple(relations), t=prov.t_before + 1)
    problems = validate_world(new)
    if problems:
        raise UnsupportedAfterEdit(f"edit left the world inconsistent: {[p.code for p in problems]}")
    return new, frozenset(propagated)


def intervene(w: WorldState, i: Intervention, policy: str = CASCADE) -> tuple[WorldState, EditRecord]:
    prov = apply(w, i)
    new, propagated = propagate(prov, policy)
    rec = EditRecord(i, prov.directly_edited, propagated - prov.directly_edited, w.t, new.t)
    return new, rec
