"""Tiered multi-view camera sampling with geometric acceptance checks.

Candidates must clear the room shell, see the target's bounding box
(center plus six face centers) and, for the ``camera_similar`` tier, share
most of the base camera's visible surface.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import BaseCameraNotFound, TargetStructural
from .geometry import aabb
from .render.camera import CameraConfig, in_frustum, pixel_rays
from .render.trace import Tracer
from .rng import stable_int
from .scene import WorldState, world_aabb

log = logging.getLogger(__name__)

D_MIN = 0.3
K_MIN = 3
OVERLAP_THRESHOLD = 0.70
MAX_CANDIDATES = 500
POS_JITTER = 0.4
ROT_JITTER = math.radians(15.0)
BIRDSEYE_PITCH = math.radians(45.0)

STRUCTURE_ONLY = "structure_only"
ALL_BUT_TARGET = "all_but_target"
ALL = "all"


class CameraTier(str, Enum):
    BASE = "base_camera"
    SIMILAR = "camera_similar"
    DIFF = "camera_diff"


@dataclass(frozen=True)
class ProtocolReport:
    los_ok: bool
    clearance_ok: bool
    seven_point_ok: bool
    visible_points: int
    overlap_with_base: float | None = None

    @property
    def passed(self) -> bool:
        return self.los_ok and self.clearance_ok and self.seven_point_ok

    def to_dict(self) -> dict:
        return {
            "los_ok": self.los_ok,
            "clearance_ok": self.clearance_ok,
            "seven_point_ok": self.seven_point_ok,
            "visible_points": self.visible_points,
            "overlap_with_base": self.overlap_with_base,
            "overlap_definition": "fraction of stride-sampled base-ray hit points inside the view frustum and unoccluded",
        }


@dataclass(frozen=True)
class SampledCamera:
    camera: CameraConfig
    tier: CameraTier
    report: ProtocolReport

    def to_dict(self) -> dict:
        d = self.camera.to_dict()
        d["tier"] = self.tier.value
        d["report"] = self.report.to_dict()
        return d


def _occluder_indices(w: WorldState, occluders: str, target: str | None) -> list[int]:
    if occluders == STRUCTURE_ONLY:
        keep = [i for i, e in enumerate(w.entities) if e.is_structural]
    elif occluders in (ALL_BUT_TARGET, ALL):
        keep = list(range(len(w.entities)))
    else:
        raise ValueError(f"unknown occluder set {occluders!r}")
    if target is not None and target in w:
        keep = [i for i in keep if w.entities[i].id != target]
    return keep


def los_visible(cam_pos, points: np.ndarray, w: WorldState, occluders: str = ALL_BUT_TARGET,
                target: str | None = None, tracer: Tracer | None = None) -> np.ndarray:
    """Vectorized line-of-sight test from ``cam_pos`` to each of ``points`` (N, 3)."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if tracer is None:
        tracer = Tracer(w, _occluder_indices(w, occluders, target))
    p0 = tuple(np.full(len(pts), float(c)) for c in cam_pos)
    p1 = tuple(pts[:, c].copy() for c in range(3))
    blocked, _ = tracer.segment_blockers(p0, p1)
    return ~blocked


def los_check(cam: CameraConfig, point, w: WorldState, occluders: str = ALL_BUT_TARGET,
              target: str | None = None) -> bool:
    """True iff the open segment from the camera to ``point`` meets no occluder."""
    return bool(los_visible(cam.position, np.asarray(point, dtype=float)[None], w, occluders, target)[0])


def wall_clearance(cam: CameraConfig, w: WorldState, d_min: float = D_MIN) -> bool:
    lo, hi = w.room.bounds()
    p = np.asarray(cam.position, dtype=float)
    return bool(np.all(p - lo >= d_min) and np.all(hi - p >= d_min))


def seven_points(w: WorldState, target: str) -> np.ndarray:
    """Bounding-box center followed by its six face centers."""
    lo, hi = world_aabb(w, target)
    c = (lo + hi) / 2
    pts = [c]
    for ax in range(3):
        for v in (lo[ax], hi[ax]):
            p = c.copy()
            p[ax] = v
            pts.append(p)
    return np.array(pts)


def seven_point_visibility(cam: CameraConfig, target: str, w: WorldState, k_min: int = K_MIN,
                           tracer: Tracer | None = None) -> tuple[bool, int]:
    pts = seven_points(w, target)
    inside = in_frustum(cam, pts)
    vis = los_visible(cam.position, pts, w, ALL_BUT_TARGET, target, tracer)
    n = int(np.count_nonzero(inside & vis))
    return n >= k_min, n


def overlap(cam_a: CameraConfig, cam_b: CameraConfig, w: WorldState, stride: int = 4,
            tracer: Tracer | None = None) -> float:
    """Share of ``cam_a``'s visible surface (stride-sampled) that ``cam_b`` also sees."""
    tracer = tracer or Tracer(w)
    ys, xs = np.meshgrid(np.arange(0, cam_a.height, stride, dtype=float),
                         np.arange(0, cam_a.width, stride, dtype=float), indexing="ij")
    o, d = pixel_rays(cam_a, xs.ravel(), ys.ravel())
    with np.errstate(all="ignore"):
        t, idx, _, p = tracer.nearest(o, d)
    hit = idx >= 0
    pts = np.stack(p, axis=-1)[hit]
    if len(pts) == 0:
        return 0.0
    covered = in_frustum(cam_b, pts) & los_visible(cam_b.position, pts, w, ALL, None, tracer)
    return float(np.count_nonzero(covered)) / float(len(pts))


def _inside_object(w: WorldState, pos, margin: float = 0.05) -> bool:
    for e in w.entities:
        if e.is_structural:
            continue
        lo, hi = aabb(e.geometry)
        if np.all(pos > lo - margin) and np.all(pos < hi + margin):
            return True
    return False


def evaluate(cam: CameraConfig, w: WorldState, target: str, *, d_min: float = D_MIN, k_min: int = K_MIN,
             tracers: dict | None = None) -> ProtocolReport:
    tracers = tracers if tracers is not None else {}
    if "but_target" not in tracers:
        tracers["but_target"] = Tracer(w, _occluder_indices(w, ALL_BUT_TARGET, target))
    clear = wall_clearance(cam, w, d_min) and not _inside_object(w, np.asarray(cam.position))
    lo, hi = world_aabb(w, target)
    center = (lo + hi) / 2
    los = bool(los_visible(cam.position, center[None], w, tracer=tracers["but_target"])[0])
    ok7, n7 = seven_point_visibility(cam, target, w, k_min, tracers["but_target"])
    return ProtocolReport(los, clear, ok7, n7)


def _aim(cam_id: str, pos, look_at, template: CameraConfig) -> CameraConfig | None:
    f = np.subtract(look_at, pos)
    norm = float(np.linalg.norm(f))
    if norm < 0.2 or abs(f[2]) / norm > 0.999:
        return None
    return CameraConfig(cam_id, tuple(float(c) for c in pos), tuple(float(c) for c in look_at),
                        template.up, template.vfov, template.width, template.height)


def _random_direction(rng) -> np.ndarray:
    v = rng.normal(size=3)
    return v / np.linalg.norm(v)


def _rotate(v: np.ndarray, axis: np.ndarray, angle: float) -> np.ndarray:
    axis = axis / np.linalg.norm(axis)
    return (v * math.cos(angle) + np.cross(axis, v) * math.sin(angle)
            + axis * float(axis @ v) * (1 - math.cos(angle)))


def sample_cameras(
    w: WorldState,
    target: str,
    n_similar: int = 3,
    n_diff: int = 4,
    seed: int = 0,
    *,
    template: CameraConfig | None = None,
    d_min: float = D_MIN,
    k_min: int = K_MIN,
    overlap_threshold: float = OVERLAP_THRESHOLD,
    stride: int = 4,
    max_candidates: int = MAX_CANDIDATES,
) -> list[SampledCamera]:
    """One base camera aimed at ``target``, then similar and diverse views around it."""
    if w.entity(target).is_structural:
        raise TargetStructural(f"{target!r} is structural")
    template = template or CameraConfig("template", (0.0, 0.0, 1.0), (1.0, 0.0, 1.0))
    rng = np.random.default_rng([seed & 0xFFFFFFFF, seed >> 32, stable_int(w.room.room_uuid, target) & 0xFFFFFFFF])
    lo, hi = w.room.bounds()
    lo_c, hi_c = lo + d_min, hi - d_min
    if np.any(lo_c >= hi_c):
        raise BaseCameraNotFound("room is too small for the wall clearance")
    tlo, thi = world_aabb(w, target)
    tc = (tlo + thi) / 2
    tracers = {"but_target": Tracer(w, _occluder_indices(w, ALL_BUT_TARGET, target)), "all": Tracer(w)}

    def random_pos():
        z_lo = max(lo_c[2], lo[2] + 0.6)
        return np.array([rng.uniform(lo_c[0], hi_c[0]), rng.uniform(lo_c[1], hi_c[1]),
                         rng.uniform(min(z_lo, hi_c[2]), hi_c[2])])

    def accept(cam):
        if cam is None:
            return None
        rep = evaluate(cam, w, target, d_min=d_min, k_min=k_min, tracers=tracers)
        return rep if rep.passed else None

    base = base_rep = None
    for _ in range(max_candidates):
        cam = _aim("base_camera_0", random_pos(), tc, template)
        rep = accept(cam)
        if rep:
            base, base_rep = cam, rep
            break
    if base is None:
        raise BaseCameraNotFound(f"no valid base camera for {target!r} after {max_candidates} candidates")
    out = [SampledCamera(base, CameraTier.BASE, base_rep)]

    fwd = np.subtract(base.look_at, base.position)
    dist = float(np.linalg.norm(fwd))
    fwd = fwd / dist
    for k in range(n_similar):
        for _ in range(max_candidates):
            pos = np.asarray(base.position) + _random_direction(rng) * rng.uniform(0.0, POS_JITTER)
            axis = np.cross(fwd, _random_direction(rng))
            if np.linalg.norm(axis) < 1e-6:
                continue
            f2 = _rotate(fwd, axis, rng.uniform(0.0, ROT_JITTER))
            cam = _aim(f"camera_similar_{k}", pos, pos + f2 * dist, template)
            rep = accept(cam)
            if not rep:
                continue
            ov = overlap(base, cam, w, stride, tracers["all"])
            if ov > overlap_threshold:
                out.append(SampledCamera(cam, CameraTier.SIMILAR,
                                         ProtocolReport(rep.los_ok, rep.clearance_ok, rep.seven_point_ok,
                                                        rep.visible_points, ov)))
                break
        else:
            log.info("camera_similar slot %d for %s unfilled after %d candidates", k, target, max_candidates)

    corners = [np.array([x, y]) for x in (lo_c[0], hi_c[0]) for y in (lo_c[1], hi_c[1])]
    for k in range(n_diff):
        for attempt in range(max_candidates):
            template_kind = (k + attempt) % 3
            if template_kind == 0:
                # bird's-eye: high up, pitched down at least 45 degrees
                pos = np.array([rng.uniform(lo_c[0], hi_c[0]), rng.uniform(lo_c[1], hi_c[1]),
                                hi_c[2] - rng.uniform(0.0, 0.3)])
                rel = tc - pos
                pitch = math.atan2(-rel[2], math.hypot(rel[0], rel[1]))
                if pitch < BIRDSEYE_PITCH:
                    continue
            elif template_kind == 1:
                c = corners[int(rng.integers(4))]
                inward = np.sign((lo_c[:2] + hi_c[:2]) / 2 - c)
                xy = c + inward * rng.uniform(0.0, 0.15, size=2)
                pos = np.array([xy[0], xy[1], rng.uniform(max(lo_c[2], 1.0), hi_c[2])])
            else:
                pos = random_pos()
            cam = _aim(f"camera_diff_{k}", pos, tc, template)
            rep = accept(cam)
            if rep:
                out.append(SampledCamera(cam, CameraTier.DIFF, rep))
                break
        else:
            log.info("camera_diff slot %d for %s unfilled after %d candidates", k, target, max_candidates)
    return out
