from __future__ import annotations

import json

import numpy as np
import pytest

from conftest import table_world
from cfworld import ENGINE_VERSION
from cfworld.cli import main
from cfworld.render.imageio import read_instance_map, read_pfm, write_pfm
from cfworld.scene import load_world, save_world


def _out(capsys) -> dict:
    return json.loads(capsys.readouterr().out.strip().splitlines()[-1])


@pytest.fixture
def scene(tmp_path):
    return str(save_world(table_world(), tmp_path / "table.json"))


def test_version(capsys):
    with pytest.raises(SystemExit) as info:
        main(["--version"])
    assert info.value.code == 0
    assert ENGINE_VERSION in capsys.readouterr().out


def test_bad_arguments_exit_4(capsys):
    with pytest.raises(SystemExit) as info:
        main(["gen"])
    assert info.value.code == 4
    with pytest.raises(SystemExit) as info:
        main(["nonsense"])
    assert info.value.code == 4
    assert main(["gen", "--out", "x", "--jobs", "0"]) == 4


def test_gen_then_assemble_split_stats_validate(tmp_path, capsys):
    scenes = tmp_path / "scenes"
    assert main(["gen", "--rooms", "3", "--seed", "4", "--out", str(scenes)]) == 0
    assert _out(capsys)["scenes"] == 3
    ds = tmp_path / "ds"
    assert main(["assemble", "removal", "--scenes", str(scenes), "--out", str(ds), "--width", "32",
                 "--cameras-per-scene", "1"]) == 0
    n = _out(capsys)["records"]
    assert n > 0
    assert main(["split", "--manifest", str(ds), "--test-fraction", "0.3", "--seed", "1"]) == 0
    split = _out(capsys)
    assert split["train"] + split["test"] == n and split["test"] > 0
    assert main(["validate", "--manifest", str(ds)]) == 0
    report = tmp_path / "report"
    assert main(["stats", "--manifest", str(ds), "--report", str(report)]) == 0
    st = _out(capsys)
    assert st["images_or_layers"] == n and st["unique_rooms"] == 3
    for name in ("stats.json", "records.csv", "mask_area_hist.png", "tier_counts.png", "samples.png"):
        assert (report / name).stat().st_size > 0


def test_validate_reports_violation_exit_2(tmp_path, capsys):
    scenes = tmp_path / "scenes"
    main(["gen", "--rooms", "1", "--out", str(scenes)])
    ds = tmp_path / "ds"
    main(["assemble", "removal", "--scenes", str(scenes), "--out", str(ds), "--width", "32",
          "--cameras-per-scene", "1"])
    capsys.readouterr()
    first = json.loads((ds / "manifest.jsonl").read_text().splitlines()[0])
    (ds / first["paths"]["orig"]).unlink()
    assert main(["validate", "--manifest", str(ds)]) == 2
    assert json.loads(capsys.readouterr().out.splitlines()[0])["code"] == "MissingFile"


def test_stats_from_counts(capsys):
    assert main(["stats", "--items", "25688", "--scenes", "2369"]) == 0
    assert _out(capsys)["items_per_scene"] == "10.84"
    assert main(["stats", "--items", "34865", "--scenes", "2772"]) == 0
    assert _out(capsys)["items_per_scene"] == "12.58"
    assert main(["stats", "--items", "3", "--scenes", "0"]) == 0
    assert _out(capsys)["items_per_scene_undefined"] is True
    assert main(["stats", "--items", "3"]) == 4


def test_edit_remove_and_rejections(scene, tmp_path, capsys):
    out = tmp_path / "after.json"
    assert main(["edit", "--scene", scene, "--op", "remove", "--target", "table", "--out", str(out)]) == 0
    res = _out(capsys)
    assert res["propagated"] == ["cup", "plate"]
    assert "table" not in load_world(out)
    assert json.loads((tmp_path / "after.edit.json").read_text())["t_after"] == 1
    assert main(["edit", "--scene", scene, "--op", "remove", "--target", "wall_north"]) == 2
    assert "TargetStructural" in capsys.readouterr().err
    assert main(["edit", "--scene", scene, "--op", "remove", "--target", "ghost"]) == 2
    assert main(["edit", "--scene", scene, "--op", "remove"]) == 4
    cmd = json.dumps({"op": "light", "light_index": 0, "new_intensity": [0, 0, 0]})
    assert main(["edit", "--scene", scene, "--command", cmd, "--out", str(tmp_path / "dark.json")]) == 0


def test_render_passes(scene, tmp_path, capsys):
    out = tmp_path / "r"
    assert main(["render", "--scene", scene, "--position=-1.5,-1.5,1.6", "--look-at", "0,0,0.5",
                 "--width", "24", "--passes", "rgb,depth,seg,normal,lights,layers", "--out", str(out)]) == 0
    rgb = read_pfm(out / "rgb.pfm")
    assert rgb.shape == (24, 24, 3)
    inst, table = read_instance_map(out / "instance.pfm")
    assert "table" in table.values()
    summed = read_pfm(out / "ambient.pfm") + read_pfm(out / "light_0.pfm")
    assert np.max(np.abs(summed - rgb)) <= 1e-4 * (1 + np.max(np.abs(rgb)))
    assert (out / "layers" / "cup" / "amodal.pfm").exists()
    meta = json.loads((out / "render.json").read_text())
    assert meta["camera"]["width"] == 24


def test_render_errors(scene, tmp_path, capsys):
    outside = ["render", "--scene", scene, "--position", "9,0,1", "--look-at", "0,0,1", "--width", "16",
               "--out", str(tmp_path / "r")]
    assert main(outside) == 5
    assert "CameraOutsideRoom" in capsys.readouterr().err
    assert main(["render", "--scene", scene, "--out", str(tmp_path / "r")]) == 4
    assert main(["render", "--scene", scene, "--position", "0,0,1", "--look-at", "1,0,1", "--passes", "x",
                 "--out", str(tmp_path / "r")]) == 4
    assert main(["render", "--scene", str(tmp_path / "missing.json"), "--position", "0,0,1",
                 "--look-at", "1,0,1", "--out", str(tmp_path / "r")]) == 3


def test_cameras_then_render_by_id(scene, tmp_path, capsys):
    cams = tmp_path / "cams.json"
    assert main(["cameras", "--scene", scene, "--target", "cup", "--width", "32", "--out", str(cams)]) == 0
    res = _out(capsys)
    assert 1 <= res["cameras"] <= 8 and res["tiers"][0] == "base_camera"
    assert main(["render", "--scene", scene, "--camera-file", str(cams), "--camera-id", "base_camera_0",
                 "--out", str(tmp_path / "r")]) == 0
    assert read_pfm(tmp_path / "r" / "rgb.pfm").shape == (32, 32, 3)
    # a structural target is a domain error here, not a rejected edit
    assert main(["cameras", "--scene", scene, "--target", "floor"]) == 5


def test_metrics_command(tmp_path, capsys):
    a = np.full((16, 16, 3), 0.5, dtype=np.float32)
    write_pfm(tmp_path / "a.pfm", a)
    write_pfm(tmp_path / "b.pfm", a)
    assert main(["metrics", str(tmp_path / "a.pfm"), str(tmp_path / "b.pfm")]) == 0
    res = _out(capsys)
    assert res["psnr_db"] == 99.0 and res["ssim"] == pytest.approx(1.0)
    write_pfm(tmp_path / "c.pfm", np.zeros((8, 8, 3), dtype=np.float32))
    assert main(["metrics", str(tmp_path / "a.pfm"), str(tmp_path / "c.pfm")]) == 5


def test_config_file_and_flag_precedence(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"seed": 3, "rooms": 2}))
    assert main(["gen", "--config", str(cfg), "--out", str(tmp_path / "a")]) == 0
    res = _out(capsys)
    assert res["scenes"] == 2 and res["seed"] == 3
    assert main(["gen", "--config", str(cfg), "--seed", "9", "--rooms", "1", "--out", str(tmp_path / "b")]) == 0
    res = _out(capsys)
    assert res["scenes"] == 1 and res["seed"] == 9
    (tmp_path / "bad.json").write_text("{")
    assert main(["gen", "--config", str(tmp_path / "bad.json"), "--out", str(tmp_path / "c")]) == 4
