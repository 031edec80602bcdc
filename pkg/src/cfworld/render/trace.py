"""Vectorized ray and segment queries against a world's primitives.

Rays are passed as tuples of three 1-D component arrays. Only elementwise
IEEE operations (+, -, *, /, sqrt, min, max) touch per-ray data, so each
ray's result is independent of batch size, tiling and thread count.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from ..geometry import Box, Sphere
from ..scene import WorldState

HIT_EPS = 1e-9      # minimum ray parameter for primary and bounce hits (unit directions)
SEG_EPS = 1e-7      # open-segment trim, as a fraction of segment length
QUAD_TOL = 1e-9     # parametric slack so adjacent shell quads leave no cracks
_TINY = 1e-300


def _dot(a, b):
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]


@dataclass(frozen=True)
class _Prim:
    gidx: int
    kind: str
    data: tuple


def _compile(g, gidx: int) -> _Prim:
    if isinstance(g, Box):
        return _Prim(gidx, "box", (tuple(g.center), tuple(g.half_extents), math.cos(g.yaw), math.sin(g.yaw)))
    if isinstance(g, Sphere):
        return _Prim(gidx, "sphere", (tuple(g.center), g.radius))
    o = np.asarray(g.origin, float)
    u = np.asarray(g.edge_u, float)
    v = np.asarray(g.edge_v, float)
    n = np.cross(u, v)
    nn = float(n @ n)
    alpha = np.cross(v, n) / nn
    beta = np.cross(n, u) / nn
    nu = n / math.sqrt(nn)
    return _Prim(gidx, "quad", (tuple(o), tuple(n), tuple(alpha), tuple(beta), tuple(nu)))


def _interval(p: _Prim, o, d):
    """Entry and exit ray parameters; misses give t0 > t1 (or NaN)."""
    with np.errstate(all="ignore"):
        return _interval_raw(p, o, d)


def _interval_raw(p: _Prim, o, d):
    if p.kind == "box":
        (cx, cy, cz), (hx, hy, hz), c, s = p.data
        rx, ry, rz = o[0] - cx, o[1] - cy, o[2] - cz
        lo = (c * rx + s * ry, -s * rx + c * ry, rz)
        ld = (c * d[0] + s * d[1], -s * d[0] + c * d[1], d[2])
        t0 = t1 = None
        for ax, h in enumerate((hx, hy, hz)):
            dd = ld[ax]
            dd = np.where(dd == 0.0, _TINY, dd)
            a = (-h - lo[ax]) / dd
            b = (h - lo[ax]) / dd
            near = np.minimum(a, b)
            far = np.maximum(a, b)
            t0 = near if t0 is None else np.maximum(t0, near)
            t1 = far if t1 is None else np.minimum(t1, far)
        return t0, t1
    if p.kind == "sphere":
        (cx, cy, cz), r = p.data
        oc = (o[0] - cx, o[1] - cy, o[2] - cz)
        a = _dot(d, d)
        b = _dot(oc, d)
        cc = _dot(oc, oc) - r * r
        disc = b * b - a * cc
        miss = disc < 0.0
        sq = np.sqrt(np.where(miss, 0.0, disc))
        t0 = (-b - sq) / a
        t1 = (-b + sq) / a
        t0 = np.where(miss, np.inf, t0)
        t1 = np.where(miss, -np.inf, t1)
        return t0, t1
    (ox, oy, oz), n, alpha, beta, _ = p.data
    denom = _dot(d, n)
    par = denom == 0.0
    w0 = (ox - o[0], oy - o[1], oz - o[2])
    t = _dot(w0, n) / np.where(par, 1.0, denom)
    px = o[0] + t * d[0] - ox
    py = o[1] + t * d[1] - oy
    pz = o[2] + t * d[2] - oz
    a = px * alpha[0] + py * alpha[1] + pz * alpha[2]
    b = px * beta[0] + py * beta[1] + pz * beta[2]
    ok = (~par) & (a >= -QUAD_TOL) & (a <= 1 + QUAD_TOL) & (b >= -QUAD_TOL) & (b <= 1 + QUAD_TOL)
    t = np.where(ok, t, np.inf)
    return t, np.where(ok, t, -np.inf)


def _normal(p: _Prim, px, py, pz):
    """Outward (or quad) geometric normal at surface points."""
    if p.kind == "box":
        (cx, cy, cz), h, c, s = p.data
        rx, ry, rz = px - cx, py - cy, pz - cz
        loc = (c * rx + s * ry, -s * rx + c * ry, rz)
        rel = [np.abs(loc[k]) / h[k] for k in range(3)]
        ax = np.where(rel[0] >= rel[1], np.where(rel[0] >= rel[2], 0, 2), np.where(rel[1] >= rel[2], 1, 2))
        sgn = [np.where(loc[k] >= 0, 1.0, -1.0) for k in range(3)]
        lx = np.where(ax == 0, sgn[0], 0.0)
        ly = np.where(ax == 1, sgn[1], 0.0)
        lz = np.where(ax == 2, sgn[2], 0.0)
        return (c * lx - s * ly, s * lx + c * ly, lz)
    if p.kind == "sphere":
        (cx, cy, cz), r = p.data
        return ((px - cx) / r, (py - cy) / r, (pz - cz) / r)
    nu = p.data[4]
    return tuple(np.full(px.shape, nu[k]) for k in range(3))


class Tracer:
    """Compiled primitives of ``world`` (optionally a subset of its entities).

    Entity indices reported by queries are always indices into
    ``world.entities`` so results from subset tracers stay comparable.
    """

    def __init__(self, world: WorldState, include: Iterable[int] | None = None):
        keep = range(len(world.entities)) if include is None else sorted(set(include))
        self.world = world
        self.n_entities = len(world.entities)
        self.prims: list[_Prim] = [_compile(world.entities[i].geometry, i) for i in keep]
        self.nbytes = max(1, (self.n_entities + 7) // 8)

    def nearest(self, o, d, tmin: float = HIT_EPS):
        """Closest hit along unit rays. Returns ``(t, entity_index, normal)``.

        ``entity_index`` is -1 and ``t`` is inf for misses; normals face the
        incoming ray.
        """
        n = d[0].shape[0]
        best = np.full(n, np.inf)
        idx = np.full(n, -1, dtype=np.int32)
        which = np.full(n, -1, dtype=np.int32)
        for k, p in enumerate(self.prims):
            t0, t1 = _interval(p, o, d)
            valid = t0 <= t1
            t = np.where(valid & (t0 > tmin), t0, np.where(valid & (t1 > tmin), t1, np.inf))
            closer = t < best
            best = np.where(closer, t, best)
            idx = np.where(closer, p.gidx, idx)
            which = np.where(closer, k, which)
        px = o[0] + best * d[0]
        py = o[1] + best * d[1]
        pz = o[2] + best * d[2]
        nx, ny, nz = (np.zeros(n) for _ in range(3))
        for k, p in enumerate(self.prims):
            sel = np.nonzero(which == k)[0]
            if sel.size == 0:
                continue
            gx, gy, gz = _normal(p, px[sel], py[sel], pz[sel])
            nx[sel], ny[sel], nz[sel] = gx, gy, gz
        flip = _dot((nx, ny, nz), d) > 0.0
        sgn = np.where(flip, -1.0, 1.0)
        return best, idx, (nx * sgn, ny * sgn, nz * sgn), (px, py, pz)

    def segment_blockers(self, p0, p1, exclude: Sequence[int] = ()):
        """Which entities cut the open segments ``p0 -> p1``.

        Returns ``(any_blocked, packed)`` where ``packed`` is an ``(N, nbytes)``
        uint8 bitset over entity indices (big-endian bit order, as
        ``np.packbits``).
        """
        d = (p1[0] - p0[0], p1[1] - p0[1], p1[2] - p0[2])
        n = d[0].shape[0]
        packed = np.zeros((n, self.nbytes), dtype=np.uint8)
        anyb = np.zeros(n, dtype=bool)
        lo, hi = SEG_EPS, 1.0 - SEG_EPS
        for p in self.prims:
            if p.gidx in exclude:
                continue
            t0, t1 = _interval(p, p0, d)
            hit = np.maximum(t0, lo) < np.minimum(t1, hi)
            if p.kind == "quad":
                hit = (t0 > lo) & (t0 < hi)
            if hit.any():
                anyb |= hit
                packed[:, p.gidx >> 3] |= hit.astype(np.uint8) << np.uint8(7 - (p.gidx & 7))
        return anyb, packed


def has_bit(packed: np.ndarray, gidx: int) -> np.ndarray:
    return ((packed[..., gidx >> 3] >> np.uint8(7 - (gidx & 7))) & np.uint8(1)).astype(bool)


def without_bits(packed: np.ndarray, gidxs: Iterable[int]) -> np.ndarray:
    mask = np.full(packed.shape[-1], 0xFF, dtype=np.uint8)
    for g in gidxs:
        mask[g >> 3] &= np.uint8(~(1 << (7 - (g & 7))) & 0xFF)
    return packed & mask


def bits_for(n_entities: int, gidxs: Iterable[int]) -> np.ndarray:
    out = np.zeros(max(1, (n_entities + 7) // 8), dtype=np.uint8)
    for g in gidxs:
        out[g >> 3] |= np.uint8(1 << (7 - (g & 7)))
    return out
