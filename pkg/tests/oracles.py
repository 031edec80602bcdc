"""Independent brute-force reference implementations used by the tests.

Everything here is plain Python on floats and dicts, written without
reference to the package's vectorized code paths.
"""
from __future__ import annotations

import math

EPS = 1e-7


def reachable(edges: list[tuple[str, str]], root: str) -> set[str]:
    """Transitive closure by repeated relaxation (no stack, no visited order)."""
    out = {root}
    changed = True
    while changed:
        changed = False
        for a, b in edges:
            if a in out and b not in out:
                out.add(b)
                changed = True
    return out


def box_corners(center, half, yaw):
    c, s = math.cos(yaw), math.sin(yaw)
    pts = []
    for sx in (-1, 1):
        for sy in (-1, 1):
            for sz in (-1, 1):
                lx, ly, lz = sx * half[0], sy * half[1], sz * half[2]
                pts.append((center[0] + c * lx - s * ly, center[1] + s * lx + c * ly, center[2] + lz))
    return pts


def corner_aabb(center, half, yaw):
    pts = box_corners(center, half, yaw)
    lo = tuple(min(p[k] for p in pts) for k in range(3))
    hi = tuple(max(p[k] for p in pts) for k in range(3))
    return lo, hi


def _sub(a, b):
    return (a[0] - b[0], a[1] - b[1], a[2] - b[2])


def _dot(a, b):
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]


def _cross(a, b):
    return (a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0])


def seg_hits_box(p0, p1, center, half, yaw, eps=EPS) -> bool:
    """Open segment meets the solid box (Liang-Barsky in the box frame)."""
    c, s = math.cos(yaw), math.sin(yaw)

    def local(p):
        rx, ry, rz = p[0] - center[0], p[1] - center[1], p[2] - center[2]
        return (c * rx + s * ry, -s * rx + c * ry, rz)

    a, b = local(p0), local(p1)
    t0, t1 = eps, 1.0 - eps
    for k in range(3):
        d = b[k] - a[k]
        if d == 0.0:
            if abs(a[k]) > half[k]:
                return False
            continue
        ta, tb = (-half[k] - a[k]) / d, (half[k] - a[k]) / d
        t0 = max(t0, min(ta, tb))
        t1 = min(t1, max(ta, tb))
        if t0 >= t1:
            return False
    return t0 < t1


def seg_hits_sphere(p0, p1, center, radius, eps=EPS) -> bool:
    d = _sub(p1, p0)
    dd = _dot(d, d)
    t = max(eps, min(1.0 - eps, _dot(_sub(center, p0), d) / dd))
    q = (p0[0] + t * d[0], p0[1] + t * d[1], p0[2] + t * d[2])
    return math.dist(q, center) < radius


def seg_hits_quad(p0, p1, origin, eu, ev, eps=EPS) -> bool:
    n = _cross(eu, ev)
    d = _sub(p1, p0)
    den = _dot(d, n)
    if den == 0.0:
        return False
    t = _dot(_sub(origin, p0), n) / den
    if not eps < t < 1.0 - eps:
        return False
    q = _sub((p0[0] + t * d[0], p0[1] + t * d[1], p0[2] + t * d[2]), origin)
    # solve q = a*eu + b*ev via the normal equations
    uu, uv, vv = _dot(eu, eu), _dot(eu, ev), _dot(ev, ev)
    qu, qv = _dot(q, eu), _dot(q, ev)
    det = uu * vv - uv * uv
    a = (qu * vv - qv * uv) / det
    b = (qv * uu - qu * uv) / det
    return -1e-9 <= a <= 1 + 1e-9 and -1e-9 <= b <= 1 + 1e-9


def seg_hits_geometry(p0, p1, g: dict) -> bool:
    """``g`` is the serialized geometry dict (``type`` key) of an entity."""
    if g["type"].lower() == "box":
        return seg_hits_box(p0, p1, g["center"], g["half_extents"], g.get("yaw", 0.0))
    if g["type"].lower() == "sphere":
        return seg_hits_sphere(p0, p1, g["center"], g["radius"])
    return seg_hits_quad(p0, p1, g["origin"], g["edge_u"], g["edge_v"])


def los(p0, p1, entities: list[dict], skip=()) -> bool:
    """No entity (serialized form) other than ``skip`` cuts the open segment."""
    return not any(seg_hits_geometry(p0, p1, e["geometry"]) for e in entities if e["id"] not in skip)


def entity_aabb(e: dict):
    g = e["geometry"]
    if g["type"].lower() == "box":
        return corner_aabb(g["center"], g["half_extents"], g.get("yaw", 0.0))
    if g["type"].lower() == "sphere":
        r = g["radius"]
        return tuple(c - r for c in g["center"]), tuple(c + r for c in g["center"])
    o, u, v = g["origin"], g["edge_u"], g["edge_v"]
    pts = [o, [o[k] + u[k] for k in range(3)], [o[k] + v[k] for k in range(3)],
           [o[k] + u[k] + v[k] for k in range(3)]]
    return tuple(min(p[k] for p in pts) for k in range(3)), tuple(max(p[k] for p in pts) for k in range(3))


def in_view(cam: dict, p) -> bool:
    """Pinhole frustum test from the camera's serialized pose."""
    f = _sub(cam["look_at"], cam["position"])
    fn = math.sqrt(_dot(f, f))
    f = tuple(x / fn for x in f)
    r = _cross(f, cam["up"])
    rn = math.sqrt(_dot(r, r))
    r = tuple(x / rn for x in r)
    u = _cross(r, f)
    q = _sub(p, cam["position"])
    z = _dot(q, f)
    if z <= 1e-3:
        return False
    tv = math.tan(cam["vfov"] / 2)
    th = tv * cam["width"] / cam["height"]
    return abs(_dot(q, r) / z) <= th and abs(_dot(q, u) / z) <= tv


def seven_points(lo, hi):
    c = [(lo[k] + hi[k]) / 2 for k in range(3)]
    pts = [tuple(c)]
    for k in range(3):
        for v in (lo[k], hi[k]):
            p = list(c)
            p[k] = v
            pts.append(tuple(p))
    return pts


def clearance(cam_pos, room_lo, room_hi) -> float:
    return min(min(cam_pos[k] - room_lo[k], room_hi[k] - cam_pos[k]) for k in range(3))
