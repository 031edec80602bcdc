"""Primitive geometry: boxes (yaw about +z), spheres and planar quads.

Coordinates are meters, +z is up. All primitives are immutable and
JSON-serializable through :func:`geometry_to_dict` / :func:`geometry_from_dict`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import InvalidGeometry

Vec3 = tuple[float, float, float]


def vec3(v) -> Vec3:
    x, y, z = (float(c) for c in v)
    return (x, y, z)


@dataclass(frozen=True)
class Box:
    center: Vec3
    half_extents: Vec3
    yaw: float = 0.0

    def validate(self) -> None:
        if min(self.half_extents) <= 0:
            raise InvalidGeometry(f"box half extents must be positive: {self.half_extents}")


@dataclass(frozen=True)
class Sphere:
    center: Vec3
    radius: float

    def validate(self) -> None:
        if self.radius <= 0:
            raise InvalidGeometry(f"sphere radius must be positive: {self.radius}")


@dataclass(frozen=True)
class Quad:
    origin: Vec3
    edge_u: Vec3
    edge_v: Vec3

    def validate(self) -> None:
        n = np.cross(self.edge_u, self.edge_v)
        if float(np.linalg.norm(n)) <= 1e-12:
            raise InvalidGeometry("quad edges are parallel or degenerate")

    @property
    def normal(self) -> np.ndarray:
        n = np.cross(self.edge_u, self.edge_v)
        return n / np.linalg.norm(n)

    @property
    def area(self) -> float:
        return float(np.linalg.norm(np.cross(self.edge_u, self.edge_v)))

    def corners(self) -> np.ndarray:
        o, u, v = (np.asarray(a, dtype=float) for a in (self.origin, self.edge_u, self.edge_v))
        return np.array([o, o + u, o + v, o + u + v])


Geometry = Union[Box, Sphere, Quad]


def geometry_to_dict(g: Geometry) -> dict:
    if isinstance(g, Box):
        return {"type": "Box", "center": list(g.center), "half_extents": list(g.half_extents), "yaw": g.yaw}
    if isinstance(g, Sphere):
        return {"type": "Sphere", "center": list(g.center), "radius": g.radius}
    if isinstance(g, Quad):
        return {"type": "Quad", "origin": list(g.origin), "edge_u": list(g.edge_u), "edge_v": list(g.edge_v)}
    raise TypeError(f"unknown geometry {g!r}")


def geometry_from_dict(d: dict) -> Geometry:
    kind = d["type"]
    if kind == "Box":
        return Box(vec3(d["center"]), vec3(d["half_extents"]), float(d["yaw"]))
    if kind == "Sphere":
        return Sphere(vec3(d["center"]), float(d["radius"]))
    if kind == "Quad":
        return Quad(vec3(d["origin"]), vec3(d["edge_u"]), vec3(d["edge_v"]))
    raise InvalidGeometry(f"unknown geometry type {kind!r}")


def box_axes(b: Box) -> tuple[np.ndarray, np.ndarray]:
    """Local x and y axes of a yawed box, in world coordinates."""
    c, s = math.cos(b.yaw), math.sin(b.yaw)
    return np.array([c, s, 0.0]), np.array([-s, c, 0.0])


def box_corners(b: Box) -> np.ndarray:
    ax, ay = box_axes(b)
    hx, hy, hz = b.half_extents
    ctr = np.asarray(b.center)
    out = []
    for sx in (-1, 1):
        for sy in (-1, 1):
            for sz in (-1, 1):
                out.append(ctr + sx * hx * ax + sy * hy * ay + np.array([0, 0, sz * hz]))
    return np.array(out)


def aabb(g: Geometry) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(g, Box):
        c, s = abs(math.cos(g.yaw)), abs(math.sin(g.yaw))
        hx, hy, hz = g.half_extents
        ext = np.array([c * hx + s * hy, s * hx + c * hy, hz])
        ctr = np.asarray(g.center, dtype=float)
        return ctr - ext, ctr + ext
    if isinstance(g, Sphere):
        ctr = np.asarray(g.center, dtype=float)
        return ctr - g.radius, ctr + g.radius
    pts = g.corners()
    return pts.min(axis=0), pts.max(axis=0)


def translated(g: Geometry, offset) -> Geometry:
    off = np.asarray(offset, dtype=float)
    if isinstance(g, Box):
        return Box(vec3(np.asarray(g.center) + off), g.half_extents, g.yaw)
    if isinstance(g, Sphere):
        return Sphere(vec3(np.asarray(g.center) + off), g.radius)
    return Quad(vec3(np.asarray(g.origin) + off), g.edge_u, g.edge_v)


def rotated_about_z(g: Geometry, pivot, angle: float) -> Geometry:
    """Rotate ``g`` by ``angle`` radians about the vertical axis through ``pivot``."""
    if angle == 0.0:
        return g
    c, s = math.cos(angle), math.sin(angle)
    p = np.asarray(pivot, dtype=float)

    def rot(v, about=True):
        v = np.asarray(v, dtype=float) - (p if about else 0.0)
        r = np.array([c * v[0] - s * v[1], s * v[0] + c * v[1], v[2]])
        return r + (p if about else 0.0)

    if isinstance(g, Box):
        return Box(vec3(rot(g.center)), g.half_extents, g.yaw + angle)
    if isinstance(g, Sphere):
        return Sphere(vec3(rot(g.center)), g.radius)
    return Quad(vec3(rot(g.origin)), vec3(rot(g.edge_u, False)), vec3(rot(g.edge_v, False)))


def center_of(g: Geometry) -> np.ndarray:
    if isinstance(g, (Box, Sphere)):
        return np.asarray(g.center, dtype=float)
    lo, hi = aabb(g)
    return (lo + hi) / 2


def _interval_overlap(a0: float, a1: float, b0: float, b1: float) -> float:
    return min(a1, b1) - max(a0, b0)


def _project_box(b: Box, axis: np.ndarray) -> tuple[float, float]:
    ax, ay = box_axes(b)
    hx, hy, hz = b.half_extents
    c = float(np.dot(b.center, axis))
    r = hx * abs(float(np.dot(ax, axis))) + hy * abs(float(np.dot(ay, axis))) + hz * abs(axis[2])
    return c - r, c + r


def _box_point_distance(b: Box, p: np.ndarray) -> tuple[float, bool]:
    """Distance from ``p`` to box ``b`` and whether ``p`` is inside it."""
    ax, ay = box_axes(b)
    d = p - np.asarray(b.center)
    local = np.array([np.dot(d, ax), np.dot(d, ay), d[2]])
    h = np.asarray(b.half_extents)
    q = np.abs(local) - h
    inside = bool(np.all(q < 0))
    if inside:
        return float(-np.max(q)), True
    return float(np.linalg.norm(np.maximum(q, 0.0))), False


def penetration_depth(g1: Geometry, g2: Geometry) -> float:
    """Depth of interpenetration between two solids; <= 0 means separated or touching.

    Box/box uses the separating axis test, which is exact for boxes that are
    only rotated about +z. Quads are thin and treated through their bounds.
    """
    if isinstance(g1, Sphere) and isinstance(g2, Box):
        g1, g2 = g2, g1
    if isinstance(g1, Box) and isinstance(g2, Box):
        a1x, a1y = box_axes(g1)
        a2x, a2y = box_axes(g2)
        depth = math.inf
        for axis in (a1x, a1y, a2x, a2y, np.array([0.0, 0.0, 1.0])):
            lo1, hi1 = _project_box(g1, axis)
            lo2, hi2 = _project_box(g2, axis)
            depth = min(depth, _interval_overlap(lo1, hi1, lo2, hi2))
        return depth
    if isinstance(g1, Box) and isinstance(g2, Sphere):
        dist, inside = _box_point_distance(g1, np.asarray(g2.center, dtype=float))
        if inside:
            return g2.radius + dist
        return g2.radius - dist
    if isinstance(g1, Sphere) and isinstance(g2, Sphere):
        d = float(np.linalg.norm(np.subtract(g1.center, g2.center)))
        return g1.radius + g2.radius - d
    lo1, hi1 = aabb(g1)
    lo2, hi2 = aabb(g2)
    return float(np.min(np.minimum(hi1, hi2) - np.maximum(lo1, lo2)))


def contains_point(g: Geometry, p, margin: float = 0.0) -> bool:
    p = np.asarray(p, dtype=float)
    if isinstance(g, Box):
        dist, inside = _box_point_distance(g, p)
        return inside or dist < margin
    if isinstance(g, Sphere):
        return float(np.linalg.norm(p - np.asarray(g.center))) < g.radius + margin
    return False


def is_flat_top(g: Geometry) -> bool:
    return isinstance(g, Box) or (isinstance(g, Quad) and abs(g.normal[2]) > 1 - 1e-9)
