"""Dataset assembly: removal triplets, multi-view sets, scene-level removal,
room-disjoint splits, statistics and manifest validation.

A manifest is a JSONL file with one :class:`TripletRecord` per line and a
``manifest_header.json`` sidecar.  All paths inside records are relative to
the manifest's directory.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path

import numpy as np

from . import ENGINE_VERSION
from .cameras import CameraTier, SampledCamera, sample_cameras
from .errors import CfWorldError, DegenerateSplit, ImageFormatError
from .intervention import CASCADE, Remove, RemoveAllDynamic, intervene
from .render import CameraConfig, RenderSettings, render_counterfactual, render_layers
from .render.imageio import read_image, read_pgm, write_mask, write_pfm
from .rng import stable_int
from .scene import WorldState, load_world, text_label

log = logging.getLogger(__name__)

MIN_MASK = 0.003
MASK_TOL = 1e-6
MANIFEST_NAME = "manifest.jsonl"
HEADER_NAME = "manifest_header.json"
ALL = "ALL"


@dataclass(frozen=True)
class AssembleConfig:
    min_mask: float = MIN_MASK
    cameras_per_scene: int = 2
    policy: str = CASCADE
    width: int = 128
    height: int = 128
    vfov_deg: float = 60.0
    n_similar: int = 3
    n_diff: int = 4
    d_min: float = 0.3
    k_min: int = 3
    overlap_threshold: float = 0.70
    render: RenderSettings = field(default_factory=RenderSettings)

    def __post_init__(self):
        if not 0.0 <= self.min_mask < 1.0:
            raise ValueError("min_mask must lie in [0, 1)")
        if self.cameras_per_scene < 1:
            raise ValueError("cameras_per_scene must be at least 1")
        if self.n_similar < 0 or self.n_diff < 0 or 1 + self.n_similar + self.n_diff > 8:
            raise ValueError("camera rig must hold between 1 and 8 cameras")

    def template(self) -> CameraConfig:
        return CameraConfig("template", (0.0, 0.0, 1.0), (1.0, 0.0, 1.0), vfov=math.radians(self.vfov_deg),
                            width=self.width, height=self.height)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["render"] = self.render.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "AssembleConfig":
        d = dict(d)
        if "render" in d:
            d["render"] = RenderSettings(**d["render"])
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown assemble config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class TripletRecord:
    sample_id: str
    room_uuid: str
    scene_path: str
    camera_id: str
    camera_tier: str
    object_id: str
    object_class: str
    text_label: str
    mask_area_fraction: float
    paths: dict
    split: str = "train"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TripletRecord":
        return cls(**d)


@dataclass
class Manifest:
    records: list[TripletRecord]
    header: dict
    root: Path = Path(".")

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r.to_dict(), sort_keys=True) + "\n" for r in self.records)

    def write(self, out_dir=None) -> Path:
        root = Path(out_dir) if out_dir is not None else self.root
        root.mkdir(parents=True, exist_ok=True)
        (root / MANIFEST_NAME).write_text(self.to_jsonl(), encoding="utf-8")
        (root / HEADER_NAME).write_text(json.dumps(self.header, indent=1, sort_keys=True) + "\n", encoding="utf-8")
        self.root = root
        return root / MANIFEST_NAME

    @classmethod
    def read(cls, path) -> "Manifest":
        path = Path(path)
        if path.is_dir():
            path = path / MANIFEST_NAME
        records = [TripletRecord.from_dict(json.loads(line))
                   for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]
        head = path.parent / HEADER_NAME
        header = json.loads(head.read_text(encoding="utf-8")) if head.exists() else {}
        return cls(records, header, path.parent)


@dataclass(frozen=True)
class StatsReport:
    unique_rooms: int
    unique_scenes: int
    images_or_layers: int
    items_per_scene: float
    items_per_scene_undefined: bool = False
    per_tier: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["items_per_scene"] = f"{self.items_per_scene:.2f}"
        return d


# helpers ---------------------------------------------------------------------

def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _created_at() -> str:
    # reproducible builds: honour SOURCE_DATE_EPOCH, else the epoch itself
    import datetime as dt
    epoch = int(os.environ.get("SOURCE_DATE_EPOCH", "0"))
    return dt.datetime.fromtimestamp(epoch, tz=dt.timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def _load_scene(path: str) -> WorldState:
    try:
        return load_world(path)
    except OSError as exc:
        raise OSError(exc.errno, f"cannot read scene file {path}: {exc.strerror}", str(path)) from exc


def _anchors(w: WorldState, seed: int, k: int) -> list[str]:
    """Seeded choice of camera anchor objects, preferring whole objects over parts."""
    parts = {r.src for r in w.relations if r.kind == "attached_to"}
    pool = [e for e in w.dynamic_ids if e not in parts] or list(w.dynamic_ids)
    if not pool:
        return []
    rng = np.random.default_rng([seed & 0xFFFFFFFF, stable_int(w.room.room_uuid, "anchor") & 0xFFFFFFFF])
    order = rng.permutation(len(pool))
    return [pool[int(order[j % len(pool)])] for j in range(k)]


class _Writer:
    """Writes sample files below ``out_dir`` and remembers their hashes."""

    def __init__(self, out_dir: Path):
        self.out_dir = out_dir
        self.hashes: dict[str, str] = {}

    def path(self, *parts: str) -> Path:
        p = self.out_dir.joinpath(*parts)
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def done(self, p: Path) -> str:
        rel = p.relative_to(self.out_dir).as_posix()
        self.hashes[rel] = _sha256(p)
        return rel

    def pfm(self, img, *parts) -> str:
        return self.done(write_pfm(self.path(*parts), img))

    def mask(self, m, *parts) -> str:
        return self.done(write_mask(self.path(*parts), m))

    def text(self, s: str, *parts) -> str:
        p = self.path(*parts)
        p.write_text(s, encoding="utf-8")
        return self.done(p)


def _rel_scene(scene_path: str, out_dir: Path) -> str:
    return Path(os.path.relpath(Path(scene_path).resolve(), out_dir.resolve())).as_posix()


def _emit_removal(wr: _Writer, sample_dir: str, w, w_after, edit, pair, layers, cfg, rec_base: dict,
                  amodal_of: str | None) -> TripletRecord | None:
    mask = pair.removal_mask
    frac = float(np.count_nonzero(mask)) / float(mask.size)
    if frac <= cfg.min_mask:
        return None
    paths = {
        "orig": wr.pfm(pair.before.rgb, sample_dir, "orig.pfm"),
        "mask": wr.mask(mask, sample_dir, "mask.pgm"),
        "target": wr.pfm(pair.after.rgb, sample_dir, "target.pfm"),
        "depth": wr.pfm(pair.before.depth, sample_dir, "depth.pfm"),
    }
    if amodal_of is not None and layers is not None:
        bundle = layers.layer(amodal_of)
        paths["amodal"] = wr.pfm(bundle.amodal[..., :3], sample_dir, "amodal.pfm")
        paths["amodal_alpha"] = wr.mask(bundle.amodal[..., 3] > 0.5, sample_dir, "amodal_alpha.pgm")
    return TripletRecord(mask_area_fraction=frac, paths=paths, **rec_base)


def _intervention_files(wr: _Writer, group_dir: str, w_after: WorldState, edit) -> dict:
    return {
        "after_scene": wr.text(w_after.to_json(), group_dir, "after.json"),
        "edit": wr.text(json.dumps(edit.to_dict(), indent=1, sort_keys=True) + "\n", group_dir, "edit.json"),
    }


def _object_removals(w: WorldState, cfg: AssembleConfig):
    """Yield ``(object_id, after_world, edit)`` for every removable dynamic object."""
    for oid in w.dynamic_ids:
        try:
            w_after, edit = intervene(w, Remove(oid), cfg.policy)
        except CfWorldError as exc:
            log.warning("skipping removal of %s in %s: %s", oid, w.room.room_uuid, exc)
            continue
        yield oid, w_after, edit


# builders --------------------------------------------------------------------

def _removal_scene(args) -> tuple[list[dict], dict]:
    scene_path, cfg, seed, out_dir, cams = args
    out_dir = Path(out_dir)
    wr = _Writer(out_dir)
    w = _load_scene(scene_path)
    stem = Path(scene_path).stem
    rel_scene = _rel_scene(scene_path, out_dir)
    if cams is None:
        cams = []
        for k, anchor in enumerate(_anchors(w, seed, cfg.cameras_per_scene)):
            try:
                base = sample_cameras(w, anchor, 0, 0, seed + k, template=cfg.template(), d_min=cfg.d_min,
                                      k_min=cfg.k_min)[0].camera
            except CfWorldError as exc:
                log.warning("no camera %d for %s: %s", k, stem, exc)
                continue
            cams.append(replace(base, id=f"cam{k}"))
    records: list[dict] = []
    removals = list(_object_removals(w, cfg))
    for cam in cams:
        try:
            before = render_layers(w, cam, cfg.render, jobs=1)
        except CfWorldError as exc:
            log.warning("cannot render %s from %s: %s", stem, cam.id, exc)
            continue
        for oid, w_after, edit in removals:
            sample_id = f"{stem}__{cam.id}__{oid}"
            try:
                pair = render_counterfactual(w, w_after, edit, cam, cfg.render, jobs=1, before=before)
                base = dict(sample_id=sample_id, room_uuid=w.room.room_uuid, scene_path=rel_scene,
                            camera_id=cam.id, camera_tier=CameraTier.BASE.value, object_id=oid,
                            object_class=w.entity(oid).cls, text_label=text_label(w, oid))
                sample_dir = f"samples/{sample_id}"
                rec = _emit_removal(wr, sample_dir, w, w_after, edit, pair, before, cfg, base, oid)
                if rec is not None:
                    rec.paths.update(_intervention_files(wr, sample_dir, w_after, edit))
                    records.append(rec.to_dict())
            except CfWorldError as exc:
                log.warning("sample %s failed: %s", sample_id, exc)
    return records, wr.hashes


def _multiview_scene(args) -> tuple[list[dict], dict]:
    scene_path, cfg, seed, out_dir, _ = args
    out_dir = Path(out_dir)
    wr = _Writer(out_dir)
    w = _load_scene(scene_path)
    stem = Path(scene_path).stem
    rel_scene = _rel_scene(scene_path, out_dir)
    anchors = _anchors(w, seed, 1)
    if not anchors:
        return [], {}
    try:
        rig: list[SampledCamera] = sample_cameras(
            w, anchors[0], cfg.n_similar, cfg.n_diff, seed, template=cfg.template(), d_min=cfg.d_min,
            k_min=cfg.k_min, overlap_threshold=cfg.overlap_threshold)
    except CfWorldError as exc:
        log.warning("no camera rig for %s: %s", stem, exc)
        return [], {}
    wr.text(json.dumps({"anchor": anchors[0], "cameras": [c.to_dict() for c in rig]}, indent=1, sort_keys=True)
            + "\n", "cameras", f"{stem}.cameras.json")
    befores = {}
    for sc in rig:
        try:
            befores[sc.camera.id] = render_layers(w, sc.camera, cfg.render, jobs=1)
        except CfWorldError as exc:
            log.warning("cannot render %s from %s: %s", stem, sc.camera.id, exc)
    records: list[dict] = []
    for oid, w_after, edit in _object_removals(w, cfg):
        group_dir = f"groups/{stem}__{oid}"
        shared = None
        for sc in rig:
            cam = sc.camera
            if cam.id not in befores:
                continue
            sample_id = f"{stem}__{oid}__{cam.id}"
            try:
                pair = render_counterfactual(w, w_after, edit, cam, cfg.render, jobs=1, before=befores[cam.id])
                base = dict(sample_id=sample_id, room_uuid=w.room.room_uuid, scene_path=rel_scene,
                            camera_id=cam.id, camera_tier=sc.tier.value, object_id=oid,
                            object_class=w.entity(oid).cls, text_label=text_label(w, oid))
                rec = _emit_removal(wr, f"{group_dir}/{cam.id}", w, w_after, edit, pair, befores[cam.id],
                                    cfg, base, oid)
                if rec is None:
                    continue
                if shared is None:
                    # every view of the group points at the same after-state files
                    shared = _intervention_files(wr, group_dir, w_after, edit)
                rec.paths.update(shared)
                records.append(rec.to_dict())
            except CfWorldError as exc:
                log.warning("sample %s failed: %s", sample_id, exc)
    return records, wr.hashes


def _scene_removal_scene(args) -> tuple[list[dict], dict]:
    scene_path, cfg, seed, out_dir, cams = args
    out_dir = Path(out_dir)
    wr = _Writer(out_dir)
    w = _load_scene(scene_path)
    stem = Path(scene_path).stem
    anchors = _anchors(w, seed, 1)
    if not anchors:
        log.info("%s has no dynamic objects; nothing to remove", stem)
        return [], {}
    try:
        if cams:
            cam = cams[0]
        else:
            cam = replace(sample_cameras(w, anchors[0], 0, 0, seed, template=cfg.template(), d_min=cfg.d_min,
                                         k_min=cfg.k_min)[0].camera, id="cam0")
        w_after, edit = intervene(w, RemoveAllDynamic(), cfg.policy)
        before = render_layers(w, cam, cfg.render, jobs=1)
        pair = render_counterfactual(w, w_after, edit, cam, cfg.render, jobs=1, before=before)
    except CfWorldError as exc:
        log.warning("scene removal for %s failed: %s", stem, exc)
        return [], {}
    sample_id = f"{stem}__{cam.id}__{ALL}"
    base = dict(sample_id=sample_id, room_uuid=w.room.room_uuid, scene_path=_rel_scene(scene_path, out_dir),
                camera_id=cam.id, camera_tier=CameraTier.BASE.value, object_id=ALL, object_class=ALL,
                text_label="all movable objects")
    sample_dir = f"samples/{sample_id}"
    rec = _emit_removal(wr, sample_dir, w, w_after, edit, pair, None, cfg, base, None)
    if rec is None:
        return [], wr.hashes
    rec.paths.update(_intervention_files(wr, sample_dir, w_after, edit))
    return [rec.to_dict()], wr.hashes


def _build(worker, mode: str, scene_paths, cfg: AssembleConfig, seed: int, out_dir, jobs: int = 1,
           cameras: dict | None = None, extra_header: dict | None = None) -> Manifest:
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(exc.errno, f"cannot create output directory {out_dir}: {exc.strerror}", str(out_dir)) from exc
    scene_paths = [str(p) for p in scene_paths]
    tasks = [(p, cfg, seed, str(out_dir), (cameras or {}).get(p)) for p in scene_paths]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(worker, tasks))
    else:
        results = [worker(t) for t in tasks]
    records: list[TripletRecord] = []
    hashes: dict[str, str] = {}
    for recs, h in results:
        records.extend(TripletRecord.from_dict(r) for r in recs)
        hashes.update(h)
    header = {
        "engine_version": ENGINE_VERSION,
        "mode": mode,
        "seed": seed,
        "min_mask": cfg.min_mask,
        "created_at": _created_at(),
        "config": cfg.to_dict(),
        "file_hashes": dict(sorted(hashes.items())),
    }
    header.update(extra_header or {})
    m = Manifest(records, header, out_dir)
    m.write()
    log.info("%s: %d records from %d scenes", mode, len(records), len(scene_paths))
    return m


def build_removal_dataset(scene_paths, cfg: AssembleConfig, seed: int, out_dir, jobs: int = 1,
                          cameras: dict | None = None) -> Manifest:
    """Single-object removal triplets for every dynamic object and camera.

    ``cameras`` optionally maps a scene path to explicit cameras, bypassing
    camera sampling for that scene.
    """
    return _build(_removal_scene, "removal", scene_paths, cfg, seed, out_dir, jobs, cameras)


def build_multiview_dataset(scene_paths, cfg: AssembleConfig, seed: int, out_dir, jobs: int = 1) -> Manifest:
    """Registered multi-view removal sets: one camera rig per scene shared by all of its edits."""
    return _build(_multiview_scene, "multiview", scene_paths, cfg, seed, out_dir, jobs)


def build_scene_removal_dataset(scene_paths, cfg: AssembleConfig, seed: int, out_dir, jobs: int = 1,
                                cameras: dict | None = None) -> Manifest:
    """One full-scene removal pair per room (every dynamic object removed)."""
    return _build(_scene_removal_scene, "scene-removal", scene_paths, cfg, seed, out_dir, jobs, cameras)


# splitting and statistics ----------------------------------------------------

def split_by_room(m: Manifest, test_fraction: float, seed: int) -> Manifest:
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must lie strictly between 0 and 1")
    rooms = sorted({r.room_uuid for r in m.records})
    if len(rooms) < 2:
        raise DegenerateSplit(f"cannot split {len(rooms)} room(s) into non-empty train and test sets")
    per_room = {u: 0 for u in rooms}
    for r in m.records:
        per_room[r.room_uuid] += 1
    order = np.random.default_rng(seed & 0xFFFFFFFFFFFFFFFF).permutation(len(rooms))
    total = len(m.records)
    test: set[str] = set()
    count = 0
    for k in order:
        if count / total >= test_fraction:
            break
        test.add(rooms[int(k)])
        count += per_room[rooms[int(k)]]
    if len(test) == len(rooms):
        raise DegenerateSplit("test fraction leaves no training rooms")
    records = [replace(r, split="test" if r.room_uuid in test else "train") for r in m.records]
    header = dict(m.header, split={"test_fraction": test_fraction, "seed": seed,
                                   "test_rooms": len(test), "train_rooms": len(rooms) - len(test)})
    return Manifest(records, header, m.root)


def items_per_scene(items: int, scenes: int) -> tuple[float, bool]:
    """``items / scenes`` rounded half-up to 2 decimals; ``(0.0, True)`` when undefined."""
    if scenes == 0:
        return 0.0, True
    q = (Decimal(items) / Decimal(scenes)).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP)
    return float(q), False


def stats(m: Manifest) -> StatsReport:
    rooms = {r.room_uuid for r in m.records}
    scenes = {(r.scene_path, r.camera_id) for r in m.records}
    tiers: dict[str, int] = {}
    for r in m.records:
        tiers[r.camera_tier] = tiers.get(r.camera_tier, 0) + 1
    ips, undefined = items_per_scene(len(m.records), len(scenes))
    return StatsReport(len(rooms), len(scenes), len(m.records), ips, undefined, dict(sorted(tiers.items())))


# validation ------------------------------------------------------------------

@dataclass(frozen=True)
class ManifestViolation:
    code: str
    sample_id: str | None
    detail: str

    def to_dict(self) -> dict:
        return {"code": self.code, "sample_id": self.sample_id, "detail": self.detail}


def validate_manifest(m) -> list[ManifestViolation]:
    """Re-check a manifest against its files.  Accepts a Manifest or a path."""
    out: list[ManifestViolation] = []
    if not isinstance(m, Manifest):
        path = Path(m)
        if path.is_dir():
            path = path / MANIFEST_NAME
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            return [ManifestViolation("MissingFile", None, f"{path}: {exc.strerror}")]
        records = []
        for n, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            try:
                records.append(TripletRecord.from_dict(json.loads(line)))
            except (ValueError, TypeError) as exc:
                out.append(ManifestViolation("ParseError", None, f"{path}:{n}: {exc}"))
        head = path.parent / HEADER_NAME
        try:
            header = json.loads(head.read_text(encoding="utf-8")) if head.exists() else {}
        except ValueError as exc:
            out.append(ManifestViolation("ParseError", None, f"{head}: {exc}"))
            header = {}
        m = Manifest(records, header, path.parent)

    root = Path(m.root)
    min_mask = float(m.header.get("min_mask", MIN_MASK))
    hashes = m.header.get("file_hashes", {})
    seen: set[str] = set()
    for r in m.records:
        if r.sample_id in seen:
            out.append(ManifestViolation("DuplicateSampleId", r.sample_id, "sample_id repeated"))
        seen.add(r.sample_id)
        if r.mask_area_fraction <= min_mask:
            out.append(ManifestViolation("BelowMinMask", r.sample_id,
                                         f"mask_area_fraction {r.mask_area_fraction} <= {min_mask}"))
        for key, rel in sorted(r.paths.items()):
            p = root / rel
            if not p.exists():
                out.append(ManifestViolation("MissingFile", r.sample_id, f"{key}: {rel}"))
                continue
            if rel in hashes and _sha256(p) != hashes[rel]:
                out.append(ManifestViolation("HashMismatch", r.sample_id, f"{key}: {rel}"))
            try:
                if rel.endswith(".json"):
                    json.loads(p.read_text(encoding="utf-8"))
                else:
                    read_image(p)
            except (ImageFormatError, ValueError, OSError) as exc:
                out.append(ManifestViolation("ParseError", r.sample_id, f"{key}: {exc}"))
                continue
            if key == "mask":
                mask = read_pgm(p)
                frac = float(np.count_nonzero(mask)) / float(mask.size)
                if abs(frac - r.mask_area_fraction) > MASK_TOL:
                    out.append(ManifestViolation("MaskAreaMismatch", r.sample_id,
                                                 f"recorded {r.mask_area_fraction}, file has {frac}"))
    train = {r.room_uuid for r in m.records if r.split == "train"}
    test = {r.room_uuid for r in m.records if r.split == "test"}
    for u in sorted(train & test):
        out.append(ManifestViolation("SplitOverlap", None, f"room {u} appears in train and test"))
    return out
