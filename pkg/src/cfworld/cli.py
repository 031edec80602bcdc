"""Command-line driver: ``cfworld <subcommand> ...``.

Exit codes: 0 success, 2 validation failure (rejected edit, manifest
violations), 3 file IO, 4 invalid arguments, 5 other domain errors.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import ENGINE_VERSION
from .errors import CfWorldError, InterventionRejected

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_IO = 3
EXIT_ARGS = 4
EXIT_DOMAIN = 5

ALL_PASSES = ("rgb", "depth", "seg", "normal", "layers", "lights")

log = logging.getLogger("cfworld")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ARGS, f"{self.prog}: error: {message}\n")


# configuration ---------------------------------------------------------------

def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        cfg = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError:
        raise
    except ValueError as exc:
        raise UsageError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise UsageError(f"config file {path} must hold a JSON object")
    return cfg


def _pick(flag, cfg: dict, key: str, default):
    """Flag beats config file beats built-in default."""
    if flag is not None:
        return flag
    return cfg.get(key, default)


def _seed(args, cfg) -> int:
    return int(_pick(args.seed, cfg, "seed", 0))


def _floats(text: str, n: int = 3) -> tuple[float, ...]:
    try:
        vals = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise UsageError(f"expected {n} comma-separated numbers, got {text!r}") from None
    if len(vals) != n:
        raise UsageError(f"expected {n} comma-separated numbers, got {text!r}")
    return vals


def _write_json(obj, path) -> None:
    text = json.dumps(obj, indent=1, sort_keys=True) + "\n"
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text, encoding="utf-8")


def _scene_list(items) -> list[str]:
    out: list[str] = []
    for it in items:
        p = Path(it)
        if p.is_dir():
            out.extend(str(q) for q in sorted(p.glob("*.json")) if not q.name.endswith(".cameras.json"))
        elif p.exists():
            out.append(str(p))
        else:
            raise FileNotFoundError(2, f"scene path does not exist: {p}", str(p))
    if not out:
        raise UsageError("no scene files given")
    return out


# subcommands -----------------------------------------------------------------

def cmd_gen(args, cfg) -> int:
    from .procgen import GenConfig, generate_corpus

    gen = dict(cfg.get("gen", {}))
    gen["seed"] = _seed(args, cfg)
    gcfg = GenConfig.from_dict(gen)
    rooms = int(_pick(args.rooms, cfg, "rooms", 10))
    paths = generate_corpus(gcfg, rooms, args.out, jobs=args.jobs)
    print(json.dumps({"scenes": len(paths), "out": str(args.out), "seed": gcfg.seed}))
    return EXIT_OK


def _intervention_from_args(args):
    from .intervention import LightChange, Relocate, Remove, RemoveAllDynamic, intervention_from_dict

    if args.command_json:
        return intervention_from_dict(json.loads(args.command_json))
    if args.op == "remove":
        if not args.target:
            raise UsageError("--op remove needs --target")
        return Remove(args.target)
    if args.op == "remove-all":
        return RemoveAllDynamic()
    if args.op == "relocate":
        if not (args.target and args.center and args.supporter):
            raise UsageError("--op relocate needs --target, --center and --supporter")
        return Relocate(args.target, _floats(args.center), float(args.yaw or 0.0), args.supporter)
    if args.op == "light":
        if args.light_index is None or not args.intensity:
            raise UsageError("--op light needs --light-index and --intensity")
        return LightChange(args.light_index, _floats(args.intensity))
    if args.op == "insert":
        if not (args.entity and args.supporter):
            raise UsageError("--op insert needs --entity (JSON) and --supporter")
        return intervention_from_dict({"op": "insert", "entity": json.loads(args.entity), "supporter": args.supporter})
    raise UsageError("give --op or --command")


def cmd_edit(args, cfg) -> int:
    from .intervention import intervene
    from .scene import load_world, save_world

    w = load_world(args.scene)
    policy = _pick(args.policy, cfg, "policy", "cascade")
    i = _intervention_from_args(args)
    new, rec = intervene(w, i, policy)
    scene = Path(args.scene)
    out = Path(args.out) if args.out else scene.with_name(f"{scene.stem}_t{new.t}.json")
    save_world(new, out)
    record_path = Path(args.record) if args.record else out.with_suffix(".edit.json")
    _write_json(rec.to_dict(), record_path)
    print(json.dumps({"scene": str(out), "edit": str(record_path), "t": new.t,
                      "directly_edited": sorted(rec.directly_edited), "propagated": sorted(rec.propagated)}))
    return EXIT_OK


def _camera_from_args(args, cfg):
    from .render import CameraConfig

    width = int(_pick(args.width, cfg, "width", 128))
    height = int(_pick(args.height, cfg, "height", width))
    vfov = math.radians(float(_pick(args.vfov, cfg, "vfov_deg", 60.0)))
    if args.camera_file:
        data = json.loads(Path(args.camera_file).read_text(encoding="utf-8"))
        if "cameras" in data:
            pool = data["cameras"]
            want = args.camera_id or pool[0]["id"]
            found = [c for c in pool if c["id"] == want]
            if not found:
                raise UsageError(f"camera {want!r} not in {args.camera_file}")
            data = found[0]
        data = {k: data[k] for k in ("id", "position", "look_at", "up", "vfov", "width", "height") if k in data}
        return CameraConfig.from_dict(data)
    if not (args.position and args.look_at):
        raise UsageError("give --camera-file, or --position and --look-at")
    up = _floats(args.up) if args.up else (0.0, 0.0, 1.0)
    return CameraConfig(args.camera_id or "cam", _floats(args.position), _floats(args.look_at), up, vfov, width, height)


def _render_settings(args, cfg):
    from .render import RenderSettings

    rs = dict(cfg.get("render", {}))
    if getattr(args, "samples", None) is not None:
        rs["area_light_samples"] = args.samples
    if getattr(args, "seed", None) is not None:
        rs["seed"] = args.seed
    return RenderSettings(**rs)


def cmd_render(args, cfg) -> int:
    from .render import render_full, render_layers, to_display
    from .render.imageio import write_instance_map, write_mask, write_pfm, write_ppm
    from .scene import load_world

    passes = [p.strip() for p in args.passes.split(",") if p.strip()]
    bad = sorted(set(passes) - set(ALL_PASSES))
    if bad:
        raise UsageError(f"unknown passes {bad}; choose from {', '.join(ALL_PASSES)}")
    w = load_world(args.scene)
    cam = _camera_from_args(args, cfg)
    s = _render_settings(args, cfg)
    need_layers = "layers" in passes or "lights" in passes
    ps = (render_layers if need_layers else render_full)(w, cam, s, jobs=args.jobs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    written: list[str] = []
    if "rgb" in passes:
        written.append(str(write_pfm(out / "rgb.pfm", ps.rgb)))
        written.append(str(write_ppm(out / "rgb.ppm", to_display(ps.rgb, s.gamma))))
    if "depth" in passes:
        written.append(str(write_pfm(out / "depth.pfm", np.where(np.isfinite(ps.depth), ps.depth, 0.0))))
    if "seg" in passes:
        written.extend(str(p) for p in write_instance_map(out / "instance.pfm", ps.instance, ps.ids))
    if "normal" in passes:
        written.append(str(write_pfm(out / "normal.pfm", ps.normal)))
    if "lights" in passes:
        written.append(str(write_pfm(out / "ambient.pfm", ps.ambient_image)))
        for k, img in enumerate(ps.per_light):
            written.append(str(write_pfm(out / f"light_{k}.pfm", img)))
    if "layers" in passes:
        written.append(str(write_pfm(out / "structure.pfm", ps.structure_layer[..., :3])))
        for b in ps.layers:
            d = out / "layers" / b.object
            d.mkdir(parents=True, exist_ok=True)
            written += [
                str(write_pfm(d / "modal.pfm", b.modal_cutout[..., :3])),
                str(write_mask(d / "modal_alpha.pgm", b.modal_cutout[..., 3] > 0.5)),
                str(write_pfm(d / "amodal.pfm", b.amodal[..., :3])),
                str(write_mask(d / "amodal_alpha.pgm", b.amodal[..., 3] > 0.5)),
                str(write_pfm(d / "shadow.pfm", b.shadow)),
                str(write_pfm(d / "depth.pfm", np.where(np.isfinite(b.layer_depth), b.layer_depth, 0.0))),
            ]
    _write_json({"camera": cam.to_dict(), "settings": s.to_dict(), "ids": list(ps.ids)}, out / "render.json")
    print(json.dumps({"out": str(out), "files": len(written) + 1}))
    return EXIT_OK


def cmd_cameras(args, cfg) -> int:
    from .cameras import sample_cameras
    from .render import CameraConfig
    from .scene import load_world

    w = load_world(args.scene)
    cc = dict(cfg.get("cameras", {}))
    width = int(_pick(args.width, cfg, "width", 128))
    height = int(_pick(args.height, cfg, "height", width))
    vfov = math.radians(float(_pick(args.vfov, cfg, "vfov_deg", 60.0)))
    template = CameraConfig("template", (0.0, 0.0, 1.0), (1.0, 0.0, 1.0), vfov=vfov, width=width, height=height)
    cams = sample_cameras(
        w, args.target,
        n_similar=int(_pick(args.n_similar, cc, "n_similar", 3)),
        n_diff=int(_pick(args.n_diff, cc, "n_diff", 4)),
        seed=_seed(args, cfg),
        template=template,
        d_min=float(_pick(args.d_min, cc, "d_min", 0.3)),
        k_min=int(_pick(args.k_min, cc, "k_min", 3)),
        overlap_threshold=float(cc.get("overlap_threshold", 0.70)),
    )
    out = args.out or str(Path(args.scene).with_suffix(".cameras.json"))
    _write_json({"scene": str(args.scene), "target": args.target, "cameras": [c.to_dict() for c in cams]}, out)
    print(json.dumps({"cameras": len(cams), "out": out,
                      "tiers": [c.tier.value for c in cams]}))
    return EXIT_OK


def _assemble_config(args, cfg):
    from .assemble import AssembleConfig

    ac = dict(cfg.get("assemble", {}))
    for key, flag in (("min_mask", args.min_mask), ("cameras_per_scene", args.cameras_per_scene),
                      ("policy", args.policy), ("width", args.width), ("height", args.height),
                      ("n_similar", args.n_similar), ("n_diff", args.n_diff)):
        if flag is not None:
            ac[key] = flag
    if args.width is not None and args.height is None:
        ac["height"] = args.width
    if "render" in cfg and "render" not in ac:
        ac["render"] = cfg["render"]
    if args.samples is not None:
        ac["render"] = dict(ac.get("render", {}), area_light_samples=args.samples)
    return AssembleConfig.from_dict(ac)


def cmd_assemble(args, cfg) -> int:
    from .assemble import build_multiview_dataset, build_removal_dataset, build_scene_removal_dataset

    builder = {"removal": build_removal_dataset, "multiview": build_multiview_dataset,
               "scene-removal": build_scene_removal_dataset}[args.mode]
    acfg = _assemble_config(args, cfg)
    m = builder(_scene_list(args.scenes), acfg, _seed(args, cfg), args.out, jobs=args.jobs)
    print(json.dumps({"mode": args.mode, "records": len(m.records), "manifest": str(Path(args.out) / "manifest.jsonl")}))
    return EXIT_OK


def cmd_split(args, cfg) -> int:
    from .assemble import Manifest, split_by_room

    m = Manifest.read(args.manifest)
    frac = float(_pick(args.test_fraction, cfg, "test_fraction", 0.05))
    s = split_by_room(m, frac, _seed(args, cfg))
    out = s.write(args.out) if args.out else s.write()
    n_test = sum(r.split == "test" for r in s.records)
    print(json.dumps({"manifest": str(out), "train": len(s.records) - n_test, "test": n_test}))
    return EXIT_OK


def cmd_stats(args, cfg) -> int:
    from .assemble import Manifest, items_per_scene, stats

    if args.items is not None or args.scenes is not None:
        if args.items is None or args.scenes is None:
            raise UsageError("--items and --scenes go together")
        v, undefined = items_per_scene(args.items, args.scenes)
        print(json.dumps({"images_or_layers": args.items, "unique_scenes": args.scenes,
                          "items_per_scene": f"{v:.2f}", "items_per_scene_undefined": undefined}))
        return EXIT_OK
    if not args.manifest:
        raise UsageError("give --manifest, or --items and --scenes")
    m = Manifest.read(args.manifest)
    rep = stats(m)
    if args.report:
        from .report import write_report

        files = write_report(m, args.report, figures=not args.no_figures)
        log.info("report files: %s", ", ".join(str(p) for p in files.values()))
    print(json.dumps(rep.to_dict(), sort_keys=True))
    return EXIT_OK


def cmd_validate(args, cfg) -> int:
    from .assemble import validate_manifest

    problems = validate_manifest(args.manifest)
    for v in problems:
        print(json.dumps(v.to_dict(), sort_keys=True))
    print(json.dumps({"violations": len(problems)}), file=sys.stderr)
    return EXIT_VALIDATION if problems else EXIT_OK


def cmd_metrics(args, cfg) -> int:
    from .metrics import compare
    from .render.imageio import read_image

    a, b = read_image(args.a), read_image(args.b)
    gamma = None
    if args.gamma is not None:
        gamma = args.gamma
    elif Path(args.a).read_bytes()[:2] in (b"PF", b"Pf"):
        # linear radiance: encode before SSIM so it sees display values
        gamma = 2.2
    rep = compare(a, b, max_val=args.max_val, gamma=gamma)
    print(json.dumps(rep.to_dict(), sort_keys=True))
    return EXIT_OK


# parser ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON config file; flags override its values")
    common.add_argument("--seed", type=int, help="master seed (default 0)")
    common.add_argument("--jobs", type=int, default=1, help="worker count; never changes output bytes")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="cfworld", description="Structured world-state engine for counterfactual scene data.")
    p.add_argument("--version", action="version", version=ENGINE_VERSION)
    sub = p.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", parents=[common], help="generate procedural rooms")
    g.add_argument("--rooms", type=int)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    e = sub.add_parser("edit", parents=[common], help="apply one intervention to a scene")
    e.add_argument("--scene", required=True)
    e.add_argument("--op", choices=["remove", "insert", "relocate", "light", "remove-all"])
    e.add_argument("--command", dest="command_json", help="intervention as a JSON object")
    e.add_argument("--target")
    e.add_argument("--policy", choices=["cascade", "reseat"])
    e.add_argument("--supporter")
    e.add_argument("--center", help="x,y,z for relocate")
    e.add_argument("--yaw", type=float)
    e.add_argument("--entity", help="entity JSON for insert")
    e.add_argument("--light-index", type=int)
    e.add_argument("--intensity", help="r,g,b for a light change")
    e.add_argument("--out")
    e.add_argument("--record", help="where to write the edit record (default: next to --out)")
    e.set_defaults(func=cmd_edit)

    def camera_flags(q):
        q.add_argument("--width", type=int)
        q.add_argument("--height", type=int)
        q.add_argument("--vfov", type=float, help="vertical field of view in degrees")

    r = sub.add_parser("render", parents=[common], help="render passes for one camera")
    r.add_argument("--scene", required=True)
    r.add_argument("--camera-file", "--camera", dest="camera_file", help="camera JSON or a cameras sidecar")
    r.add_argument("--camera-id")
    r.add_argument("--position")
    r.add_argument("--look-at")
    r.add_argument("--up")
    camera_flags(r)
    r.add_argument("--passes", default="rgb,depth,seg")
    r.add_argument("--samples", type=int, help="area-light samples per light")
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_render)

    c = sub.add_parser("cameras", parents=[common], help="sample a tiered camera set for a target")
    c.add_argument("--scene", required=True)
    c.add_argument("--target", required=True)
    c.add_argument("--n-similar", type=int)
    c.add_argument("--n-diff", type=int)
    c.add_argument("--d-min", type=float)
    c.add_argument("--k-min", type=int)
    camera_flags(c)
    c.add_argument("--out")
    c.set_defaults(func=cmd_cameras)

    a = sub.add_parser("assemble", parents=[common], help="build a dataset manifest")
    a.add_argument("mode", choices=["removal", "multiview", "scene-removal"])
    a.add_argument("--scenes", nargs="+", required=True, help="scene files or directories")
    a.add_argument("--out", required=True)
    a.add_argument("--min-mask", type=float)
    a.add_argument("--cameras-per-scene", type=int)
    a.add_argument("--policy", choices=["cascade", "reseat"])
    a.add_argument("--n-similar", type=int)
    a.add_argument("--n-diff", type=int)
    a.add_argument("--width", type=int)
    a.add_argument("--height", type=int)
    a.add_argument("--samples", type=int)
    a.set_defaults(func=cmd_assemble)

    s = sub.add_parser("split", parents=[common], help="assign room-disjoint train/test splits")
    s.add_argument("--manifest", required=True)
    s.add_argument("--test-fraction", type=float)
    s.add_argument("--out", help="output directory (default: rewrite in place)")
    s.set_defaults(func=cmd_split)

    st = sub.add_parser("stats", parents=[common], help="manifest statistics and report figures")
    st.add_argument("--manifest")
    st.add_argument("--items", type=int)
    st.add_argument("--scenes", type=int)
    st.add_argument("--report", help="directory for stats.json, records.csv and figures")
    st.add_argument("--no-figures", action="store_true")
    st.set_defaults(func=cmd_stats)

    v = sub.add_parser("validate", parents=[common], help="re-check a manifest against its files")
    v.add_argument("--manifest", required=True)
    v.set_defaults(func=cmd_validate)

    mt = sub.add_parser("metrics", parents=[common], help="PSNR/SSIM between two images")
    mt.add_argument("a")
    mt.add_argument("b")
    mt.add_argument("--max-val", type=float, default=1.0)
    mt.add_argument("--gamma", type=float, help="gamma-encode before SSIM (default 2.2 for PFM input)")
    mt.set_defaults(func=cmd_metrics)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.jobs is not None and args.jobs < 1:
        print("cfworld: error: --jobs must be at least 1", file=sys.stderr)
        return EXIT_ARGS
    try:
        cfg = _load_config(args.config)
        return args.func(args, cfg)
    except InterventionRejected as exc:
        print(f"cfworld: {exc.code}: {', '.join(exc.report.codes)}", file=sys.stderr)
        for v in exc.report.violations:
            print(f"  {v.code}: {v.detail}", file=sys.stderr)
        return EXIT_VALIDATION
    except CfWorldError as exc:
        print(f"cfworld: {exc.code}: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except OSError as exc:
        where = f" ({exc.filename})" if exc.filename and str(exc.filename) not in str(exc) else ""
        print(f"cfworld: IOError: {exc}{where}", file=sys.stderr)
        return EXIT_IO
    except (UsageError, ValueError, KeyError, TypeError) as exc:
        print(f"cfworld: error: {exc}", file=sys.stderr)
        return EXIT_ARGS


if __name__ == "__main__":
    sys.exit(main())
