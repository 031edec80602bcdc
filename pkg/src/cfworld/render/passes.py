"""Multi-pass direct-illumination renderer.

One primary ray per pixel center produces every pass (RGB, depth,
instance, normal, per-light, ambient, per-object layers), so all outputs
are aligned by construction. Shading is Lambertian direct lighting from
point and area lights plus an ambient term, with an optional single mirror
bounce.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from ..errors import CameraOutsideRoom, IncompleteLayerSet, NotARemoval
from ..geometry import Quad
from ..scene import AreaLight, PointLight, WorldState
from ..rng import pixel_keys, uniform01
from .camera import CameraConfig, pixel_rays
from .trace import Tracer, _dot, bits_for, has_bit, without_bits

OFFSET = 1e-7
SECONDARY_TAG = 1 << 16
INV_PI = 1.0 / math.pi


@dataclass(frozen=True)
class RenderSettings:
    area_light_samples: int | None = None
    mirror_bounces: int = 1
    seed: int = 0
    gamma: float = 2.2

    def __post_init__(self):
        if self.mirror_bounces not in (0, 1):
            raise ValueError("mirror_bounces must be 0 or 1")
        if self.area_light_samples is not None and self.area_light_samples < 1:
            raise ValueError("area_light_samples must be positive")

    def to_dict(self) -> dict:
        return {"area_light_samples": self.area_light_samples, "mirror_bounces": self.mirror_bounces,
                "seed": self.seed, "gamma": self.gamma}


@dataclass
class LayerBundle:
    object: str
    modal_cutout: np.ndarray   # (H, W, 4)
    amodal: np.ndarray         # (H, W, 4)
    shadow: np.ndarray         # (H, W, 3)
    layer_depth: np.ndarray    # (H, W), inf where the object is not visible


@dataclass
class PassSet:
    ids: tuple[str, ...]
    structural: tuple[bool, ...]
    rgb: np.ndarray
    depth: np.ndarray
    instance: np.ndarray
    normal: np.ndarray
    effects: np.ndarray = field(repr=False)
    per_light: list[np.ndarray] | None = None
    ambient_image: np.ndarray | None = None
    layers: tuple[LayerBundle, ...] = ()
    structure_layer: np.ndarray | None = None
    structure_depth: np.ndarray | None = None
    reflection: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.depth.shape

    def index_of(self, eid: str) -> int:
        return self.ids.index(eid)

    def mask_of(self, eids) -> np.ndarray:
        """Pixels whose primary hit is one of ``eids`` (an id or a collection of ids)."""
        eids = {eids} if isinstance(eids, str) else set(eids)
        idx = [i for i, e in enumerate(self.ids) if e in eids]
        return np.isin(self.instance, idx)

    def footprint(self, eids) -> np.ndarray:
        """Pixels whose shading involves ``eids`` through a shadow or reflection ray."""
        eids = {eids} if isinstance(eids, str) else set(eids)
        idx = [i for i, e in enumerate(self.ids) if e in eids]
        if not idx:
            return np.zeros(self.shape, dtype=bool)
        return (self.effects & bits_for(len(self.ids), idx)).any(axis=-1)

    def layer(self, eid: str) -> LayerBundle:
        for b in self.layers:
            if b.object == eid:
                return b
        raise KeyError(eid)


# shading ---------------------------------------------------------------------

def _sample_counts(world: WorldState, s: RenderSettings) -> list[int]:
    return [1 if isinstance(lt, PointLight) else (s.area_light_samples or lt.sample_count) for lt in world.lights]


def _grid(n: int) -> tuple[int, int]:
    nx = max(1, int(math.isqrt(n)))
    while n % nx:
        nx -= 1
    return nx, n // nx


def light_sample_points(light, keys: np.ndarray, tag: int, n_samples: int):
    """Per-ray sample positions on ``light``: list of (x, y, z) arrays, one per sample."""
    if isinstance(light, PointLight):
        return [tuple(np.full(keys.shape, c) for c in light.position)]
    q: Quad = light.quad
    nx, ny = _grid(n_samples)
    out = []
    for k in range(n_samples):
        i, j = k % nx, k // nx
        u = (i + uniform01(keys, tag, 2 * k)) / nx
        v = (j + uniform01(keys, tag, 2 * k + 1)) / ny
        out.append(tuple(q.origin[c] + u * q.edge_u[c] + v * q.edge_v[c] for c in range(3)))
    return out


def _light_slots(tracer: Tracer, world: WorldState, counts, p, n, keys, tag_base: int):
    """Unoccluded geometric factors and blocker sets for every light sample."""
    origin = (p[0] + OFFSET * n[0], p[1] + OFFSET * n[1], p[2] + OFFSET * n[2])
    slots = []
    for li, light in enumerate(world.lights):
        samples = []
        pts = light_sample_points(light, keys, tag_base + li, counts[li])
        if isinstance(light, AreaLight):
            ln = light.quad.normal
            area_w = light.quad.area / counts[li] * INV_PI
        for q in pts:
            lx, ly, lz = q[0] - p[0], q[1] - p[1], q[2] - p[2]
            d2 = lx * lx + ly * ly + lz * lz
            dist = np.sqrt(d2)
            cos_s = np.maximum((n[0] * lx + n[1] * ly + n[2] * lz) / dist, 0.0)
            if isinstance(light, PointLight):
                g = cos_s / d2 * INV_PI
            else:
                cos_l = np.maximum(-(ln[0] * lx + ln[1] * ly + ln[2] * lz) / dist, 0.0)
                g = cos_s * cos_l / d2 * area_w
            anyb, packed = tracer.segment_blockers(origin, q)
            samples.append((g, anyb, packed))
        slots.append(samples)
    return slots


def _compose(world: WorldState, alb, slots, exempt=None, lights=None, ambient=True):
    """Shade from precomputed slots; returns (total, per_light, ambient_term) per channel.

    ``exempt`` is a collection of entity indices that do not occlude light.
    ``lights`` restricts which lights contribute.
    """
    n = alb[0].shape[0]
    zero = np.zeros(n)
    amb_term = tuple(world.ambient[c] * alb[c] if ambient else zero for c in range(3))
    total = list(amb_term)
    per_light = []
    for li, samples in enumerate(slots):
        power = world.lights[li].intensity if isinstance(world.lights[li], PointLight) else world.lights[li].radiance
        acc = [zero, zero, zero]
        if lights is None or li in lights:
            for g, anyb, packed in samples:
                if exempt:
                    blocked = without_bits(packed, exempt).any(axis=1)
                else:
                    blocked = anyb
                gv = np.where(blocked, 0.0, g)
                acc = [acc[c] + power[c] * gv * alb[c] for c in range(3)]
        per_light.append(tuple(acc))
        total = [total[c] + acc[c] for c in range(3)]
    return tuple(total), per_light, amb_term


@dataclass
class _Frame:
    """Everything needed to shade one batch of primary rays, any number of ways."""

    world: WorldState
    t: np.ndarray
    idx: np.ndarray
    normal: tuple
    alb: tuple
    mirror: np.ndarray
    slots: list
    sel: np.ndarray
    sec_idx: np.ndarray | None = None
    sec_alb: tuple | None = None
    sec_slots: list | None = None

    def shade(self, exempt=None, lights=None, ambient=True, bounce=True):
        tot, per, amb = _compose(self.world, self.alb, self.slots, exempt, lights, ambient)
        tot, per, amb = _stack(tot), [_stack(x) for x in per], _stack(amb)
        if bounce and self.sec_slots is not None and self.sel.size:
            stot, sper, samb = _compose(self.world, self.sec_alb, self.sec_slots, exempt, lights, ambient)
            m = self.mirror[self.sel][:, None]
            tot[self.sel] = tot[self.sel] + m * _stack(stot)
            for k in range(len(per)):
                per[k][self.sel] = per[k][self.sel] + m * _stack(sper[k])
            amb[self.sel] = amb[self.sel] + m * _stack(samb)
        return tot, per, amb

    def take(self, rows: np.ndarray) -> "_Frame":
        """The same frame restricted to the (sorted) ray indices ``rows``."""
        keep = np.isin(self.sel, rows)
        sub = _Frame(
            self.world, self.t[rows], self.idx[rows], tuple(c[rows] for c in self.normal),
            tuple(c[rows] for c in self.alb), self.mirror[rows],
            [[(g[rows], a[rows], pk[rows]) for g, a, pk in samples] for samples in self.slots],
            np.searchsorted(rows, self.sel[keep]),
        )
        if self.sec_slots is not None:
            sub.sec_idx = self.sec_idx[keep]
            sub.sec_alb = tuple(c[keep] for c in self.sec_alb)
            sub.sec_slots = [[(g[keep], a[keep], pk[keep]) for g, a, pk in samples] for samples in self.sec_slots]
        return sub

    def effects(self, nbytes: int) -> np.ndarray:
        out = np.zeros((self.t.shape[0], nbytes), dtype=np.uint8)
        for samples in self.slots:
            for _, _, packed in samples:
                out |= packed
        if self.sec_slots is not None and self.sel.size:
            sec = bits_for_each(self.sec_idx, nbytes)
            for samples in self.sec_slots:
                for _, _, packed in samples:
                    sec |= packed
            out[self.sel] |= sec
        return out


def bits_for_each(idx: np.ndarray, nbytes: int) -> np.ndarray:
    out = np.zeros((idx.shape[0], nbytes), dtype=np.uint8)
    ok = idx >= 0
    rows = np.nonzero(ok)[0]
    out[rows, idx[ok] >> 3] = (np.uint8(1) << (7 - (idx[ok] & 7)).astype(np.uint8))
    return out


def _stack(ch) -> np.ndarray:
    return np.stack(ch, axis=-1)


def _material_tables(world: WorldState):
    alb = np.array([e.material.albedo for e in world.entities], dtype=float).reshape(-1, 3)
    mir = np.array([e.material.mirror_reflectance for e in world.entities], dtype=float)
    return alb, mir


def _frame(tracer: Tracer, world: WorldState, s: RenderSettings, o, d, keys, hit=None,
           primary: Tracer | None = None) -> _Frame:
    """Primary hits come from ``primary`` (default ``tracer``); light and mirror rays see ``tracer``."""
    if hit is None:
        t, idx, n, p = (primary or tracer).nearest(o, d)
        if np.any(idx < 0):
            raise RuntimeError("primary ray escaped the room; the shell must be closed")
    else:
        t, idx, n, p = hit
    alb_t, mir_t = _material_tables(world)
    mirror = mir_t[idx]
    scale = 1.0 - mirror
    alb = tuple(alb_t[idx, c] * scale for c in range(3))
    counts = _sample_counts(world, s)
    slots = _light_slots(tracer, world, counts, p, n, keys, 0)
    sel = np.nonzero(mirror > 0.0)[0] if s.mirror_bounces else np.zeros(0, dtype=np.int64)
    fr = _Frame(world, t, idx, n, alb, mirror, slots, sel)
    if sel.size:
        dn = _dot(tuple(c[sel] for c in d), tuple(c[sel] for c in n))
        rd = tuple(d[c][sel] - 2.0 * dn * n[c][sel] for c in range(3))
        ro = tuple(p[c][sel] + OFFSET * n[c][sel] for c in range(3))
        st, sidx, sn, sp = tracer.nearest(ro, rd)
        if np.any(sidx < 0):
            raise RuntimeError("mirror ray escaped the room; the shell must be closed")
        sscale = 1.0 - mir_t[sidx]
        fr.sec_idx = sidx
        fr.sec_alb = tuple(alb_t[sidx, c] * sscale for c in range(3))
        fr.sec_slots = _light_slots(tracer, world, counts, sp, sn, keys[sel], SECONDARY_TAG)
    return fr


# tiles -----------------------------------------------------------------------

def _check_camera(world: WorldState, cam: CameraConfig) -> None:
    lo, hi = world.room.bounds()
    pos = np.asarray(cam.position)
    if np.any(pos <= lo) or np.any(pos >= hi):
        raise CameraOutsideRoom(f"camera {cam.id!r} at {cam.position} is outside the room")


def _tiles(height: int, jobs: int) -> list[range]:
    if jobs <= 1:
        return [range(0, height)]
    n = min(height, 4 * jobs)
    edges = np.linspace(0, height, n + 1).astype(int)
    return [range(a, b) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def _default_jobs(jobs: int | None) -> int:
    if jobs is not None:
        return max(1, int(jobs))
    return max(1, int(os.environ.get("CFWORLD_THREADS", "1")))


def _render_rows(world: WorldState, cam: CameraConfig, s: RenderSettings, rows: range, layers: bool) -> dict:
    ys, xs = np.meshgrid(np.arange(rows.start, rows.stop, dtype=float), np.arange(cam.width, dtype=float),
                         indexing="ij")
    xs, ys = xs.ravel(), ys.ravel()
    keys = pixel_keys(s.seed, xs.astype(np.uint64), ys.astype(np.uint64))
    o, d = pixel_rays(cam, xs, ys)
    tracer = Tracer(world)
    fr = _frame(tracer, world, s, o, d, keys)
    rgb, per, amb = fr.shade()
    out = {
        "rgb": rgb,
        "depth": fr.t,
        "instance": fr.idx,
        "normal": _stack(fr.normal),
        "effects": fr.effects(tracer.nbytes),
    }
    if not layers:
        return out
    out["per_light"] = per
    out["ambient"] = amb
    if fr.sel.size:
        out["reflection"] = rgb - fr.shade(bounce=False)[0]
    structural = [i for i, e in enumerate(world.entities) if e.is_structural]
    for i, e in enumerate(world.entities):
        if e.is_structural:
            continue
        # per-ray results do not depend on the batch, so both layers are only
        # evaluated on the rays the object can change; elsewhere they are exact
        shadow = np.zeros_like(rgb)
        rows = np.nonzero(has_bit(out["effects"], i))[0]
        if rows.size:
            shadow[rows] = fr.take(rows).shade(exempt=(i,))[0] - rgb[rows]
        out[f"shadow:{i}"] = shadow
        vis = fr.idx == i
        amodal = np.where(vis[:, None], rgb, 0.0)
        amask = vis.copy()
        rows = np.nonzero((Tracer(world, [i]).nearest(o, d)[1] == i) & ~vis)[0]
        if rows.size:
            sub = Tracer(world, structural + [i])
            afr = _frame(tracer, world, s, tuple(c[rows] for c in o), tuple(c[rows] for c in d), keys[rows],
                         primary=sub)
            hit = afr.idx == i
            amodal[rows[hit]] = afr.shade()[0][hit]
            amask[rows[hit]] = True
        out[f"amodal:{i}"] = (amodal, amask)
    return out


def _assemble(world: WorldState, cam: CameraConfig, chunks: list[dict], layers: bool) -> PassSet:
    H, W = cam.height, cam.width

    def img(key, ch=None):
        arr = np.concatenate([c[key] for c in chunks], axis=0)
        return arr.reshape((H, W) if ch is None else (H, W, ch))

    rgb = img("rgb", 3).astype(np.float32)
    depth = img("depth").astype(np.float32)
    instance = img("instance").astype(np.int32)
    ps = PassSet(
        ids=tuple(world.ids),
        structural=tuple(e.is_structural for e in world.entities),
        rgb=rgb,
        depth=depth,
        instance=instance,
        normal=img("normal", 3).astype(np.float32),
        effects=np.concatenate([c["effects"] for c in chunks]).reshape(H, W, -1),
    )
    if not layers:
        return ps
    n_lights = len(world.lights)
    ps.per_light = [
        np.concatenate([c["per_light"][k] for c in chunks]).reshape(H, W, 3).astype(np.float32)
        for k in range(n_lights)
    ]
    ps.ambient_image = img("ambient", 3).astype(np.float32)
    if any("reflection" in c for c in chunks):
        ps.reflection = np.concatenate(
            [c.get("reflection", np.zeros((c["rgb"].shape[0], 3))) for c in chunks]
        ).reshape(H, W, 3).astype(np.float32)
    smask = np.isin(instance, [i for i, e in enumerate(world.entities) if e.is_structural])
    ps.structure_layer = _rgba(rgb, smask)
    ps.structure_depth = np.where(smask, depth, np.float32(np.inf)).astype(np.float32)
    bundles = []
    for i, e in enumerate(world.entities):
        if e.is_structural:
            continue
        vis = instance == i
        shadow = img(f"shadow:{i}", 3).astype(np.float32)
        argb = np.concatenate([c[f"amodal:{i}"][0] for c in chunks]).reshape(H, W, 3).astype(np.float32)
        amask = np.concatenate([c[f"amodal:{i}"][1] for c in chunks]).reshape(H, W)
        bundles.append(LayerBundle(
            object=e.id,
            modal_cutout=_rgba(rgb, vis),
            amodal=_rgba(argb, amask),
            shadow=shadow,
            layer_depth=np.where(vis, depth, np.float32(np.inf)).astype(np.float32),
        ))
    ps.layers = tuple(bundles)
    return ps


def _rgba(rgb: np.ndarray, mask: np.ndarray) -> np.ndarray:
    out = np.zeros(rgb.shape[:2] + (4,), dtype=np.float32)
    out[mask, :3] = rgb[mask]
    out[mask, 3] = 1.0
    return out


def _render(world, cam, s, layers, jobs):
    _check_camera(world, cam)
    tiles = _tiles(cam.height, _default_jobs(jobs))
    if len(tiles) == 1:
        chunks = [_render_rows(world, cam, s, tiles[0], layers)]
    else:
        with ThreadPoolExecutor(max_workers=_default_jobs(jobs)) as pool:
            chunks = list(pool.map(lambda r: _render_rows(world, cam, s, r, layers), tiles))
    return _assemble(world, cam, chunks, layers)


def render_full(world: WorldState, cam: CameraConfig, s: RenderSettings = RenderSettings(), jobs: int | None = None) -> PassSet:
    """RGB, depth, instance and normal passes (plus shadow/reflection involvement bits)."""
    return _render(world, cam, s, False, jobs)


def render_layers(world: WorldState, cam: CameraConfig, s: RenderSettings = RenderSettings(), jobs: int | None = None) -> PassSet:
    """Full pass set including per-object layers, per-light and ambient images."""
    return _render(world, cam, s, True, jobs)


# identities ------------------------------------------------------------------

def recompose(ps: PassSet) -> np.ndarray:
    """Front-to-back recomposition of the modal layers and the structure layer."""
    if ps.structure_layer is None:
        raise IncompleteLayerSet("pass set has no layers; use render_layers")
    dynamic = {e for e, st in zip(ps.ids, ps.structural) if not st}
    have = [b.object for b in ps.layers]
    if set(have) != dynamic or len(have) != len(set(have)):
        missing = sorted(dynamic - set(have))
        raise IncompleteLayerSet(f"layer bundles missing for {missing}" if missing else "duplicate layer bundles")
    layers = [(ps.structure_layer, ps.structure_depth)] + [(b.modal_cutout, b.layer_depth) for b in ps.layers]
    depth = np.stack([np.where(rgba[..., 3] == 1.0, dep, np.inf) for rgba, dep in layers])
    if not np.all(np.isfinite(depth.min(axis=0))):
        raise IncompleteLayerSet("layers do not cover every pixel")
    pick = depth.argmin(axis=0)
    colors = np.stack([rgba[..., :3] for rgba, _ in layers])
    return np.take_along_axis(colors, pick[None, ..., None], axis=0)[0]


def light_additivity_check(ps: PassSet) -> float:
    """``|ambient + sum(per_light) - rgb|_inf / (1 + |rgb|_inf)``."""
    if ps.per_light is None or ps.ambient_image is None:
        raise IncompleteLayerSet("per-light and ambient images are required")
    acc = ps.ambient_image.astype(np.float64)
    for img in ps.per_light:
        acc = acc + img
    rgb = ps.rgb.astype(np.float64)
    return float(np.max(np.abs(acc - rgb)) / (1.0 + np.max(np.abs(rgb))))


@dataclass
class CounterfactualPair:
    before: PassSet
    after: PassSet
    removal_mask: np.ndarray
    effect_footprint: np.ndarray

    @property
    def influence(self) -> np.ndarray:
        return self.removal_mask | self.effect_footprint


def render_counterfactual(w_before: WorldState, w_after: WorldState, edit, cam: CameraConfig,
                          s: RenderSettings = RenderSettings(), jobs: int | None = None,
                          before: PassSet | None = None) -> CounterfactualPair:
    """Before/after renders of a removal plus the removed entities' mask and effect footprint."""
    from ..intervention import Remove, RemoveAllDynamic

    if not isinstance(edit.intervention, (Remove, RemoveAllDynamic)):
        raise NotARemoval(f"edit is {type(edit.intervention).__name__}, not a removal")
    removed = edit.directly_edited | edit.propagated
    if before is None:
        before = render_full(w_before, cam, s, jobs)
    after = render_full(w_after, cam, s, jobs)
    return CounterfactualPair(before, after, before.mask_of(removed), before.footprint(removed))


def render_sequence(states: Sequence[WorldState], cams, s: RenderSettings = RenderSettings(),
                    jobs: int | None = None) -> dict[str, list[PassSet]]:
    """Render every state from every camera.

    ``cams`` is either a sequence of static cameras or a mapping from a rig
    name to one camera per frame.
    """
    if isinstance(cams, Mapping):
        rigs = {k: list(v) for k, v in cams.items()}
    else:
        rigs = {c.id: [c] * len(states) for c in cams}
    out: dict[str, list[PassSet]] = {}
    for name, per_frame in rigs.items():
        if len(per_frame) != len(states):
            raise ValueError(f"rig {name!r} has {len(per_frame)} cameras for {len(states)} frames")
        out[name] = [render_full(w, c, s, jobs) for w, c in zip(states, per_frame)]
    return out


def shade_points(world: WorldState, points, normals, entity_idx, s: RenderSettings, keys,
                 view_dirs=None) -> np.ndarray:
    """Outgoing radiance at given surface points (N, 3) with their normals.

    ``keys`` are the per-point random-stream keys used for area-light
    sampling. ``view_dirs`` only matters at mirror surfaces.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    normals = np.atleast_2d(np.asarray(normals, dtype=float))
    idx = np.asarray(entity_idx, dtype=np.int32)
    p = tuple(points[:, c].copy() for c in range(3))
    n = tuple(normals[:, c].copy() for c in range(3))
    if view_dirs is None:
        d = tuple(-c for c in n)
    else:
        vd = np.atleast_2d(np.asarray(view_dirs, dtype=float))
        d = tuple(vd[:, c].copy() for c in range(3))
    tracer = Tracer(world)
    fr = _frame(tracer, world, s, None, d, np.asarray(keys, dtype=np.uint64),
                hit=(np.zeros(len(idx)), idx, n, p))
    return fr.shade()[0]


def to_display(rgb: np.ndarray, gamma: float = 2.2) -> np.ndarray:
    """Clamp linear RGB to [0, 1] and gamma-encode to 8-bit."""
    x = np.clip(np.asarray(rgb, dtype=np.float64), 0.0, 1.0) ** (1.0 / gamma)
    return np.round(x * 255.0).astype(np.uint8)
