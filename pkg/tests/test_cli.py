import hashlib
import os
import shutil
from pathlib import Path

import numpy as np
import pytest

from pica.cli import main, parse_args, set_threads
from pica.cloth import read_trajectory
from pica.render.images import psnr, read_image
from pica.skinning import Pose, write_animation


def tree_digest(root: Path) -> dict:
    return {str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob("*")) if p.is_file()}


def run(scene, command, *extra, output=None):
    args = [command, "--config", str(scene["config"]), "--paths.avatar", str(scene["root"] / "out")]
    if output is not None:
        args += ["--paths.output", str(output)]
    return main(args + [str(a) for a in extra])


def static_animation(path, n):
    write_animation(path, [Pose(t, np.eye(4)[None]) for t in range(n)])
    return path


# ------------------------------------------------------------- arguments and exit codes


def test_help_and_usage_errors(capsys):
    assert main(["--help"]) == 0
    assert main([]) == 1
    assert main(["dance"]) == 1
    assert main(["fit"]) == 1
    assert "--config is required" in capsys.readouterr().err


def test_override_parsing():
    ns, ov = parse_args(["fit", "--config", "c.yaml", "--schedule.iterations", "3", "--render.channel=label"])
    assert ns.command == "fit" and ov == [("schedule.iterations", "3"), ("render.channel", "label")]


def test_invalid_config_value(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("seed: -4\n")
    assert main(["fit", "--config", str(cfg)]) == 1
    assert "seed" in capsys.readouterr().err


def test_threads(monkeypatch):
    import numba

    assert set_threads(1) == 1 and numba.get_num_threads() == 1
    monkeypatch.setenv("PICA_THREADS", "2")
    assert set_threads(None) == min(2, numba.config.NUMBA_NUM_THREADS)


# ------------------------------------------------------------- fit outputs


def test_fit_outputs(demo_scene):
    out = demo_scene["root"] / "out"
    for rel in ("gaussians/body.txt", "gaussians/clothing.txt", "meshes/body.obj", "meshes/clothing.obj",
                "meshes/body_rig.txt", "meshes/clothing_rig.txt", "logs/fit_log.csv", "effective_config.yaml"):
        assert (out / rel).is_file(), rel
    log = (out / "logs" / "fit_log.csv").read_text().splitlines()
    assert len(log) == 1 + 3 + 1


def test_missing_mask_fails_before_compute(demo_scene, tmp_path, capsys):
    scene = tmp_path / "scene"
    shutil.copytree(demo_scene["root"], scene, ignore=shutil.ignore_patterns("out*"))
    victim = next((scene / "data" / "views").glob("*_mask.png"))
    victim.unlink()
    assert main(["fit", "--config", str(scene / "config.yaml")]) == 1
    assert victim.name in capsys.readouterr().err
    assert not (scene / "out" / "gaussians" / "body.txt").exists()


def test_missing_gaussian_file(demo_scene, tmp_path, capsys):
    avatar = tmp_path / "avatar"
    shutil.copytree(demo_scene["root"] / "out", avatar)
    (avatar / "gaussians" / "clothing.txt").unlink()
    code = main(["animate", "--config", str(demo_scene["config"]), "--paths.avatar", str(avatar),
                 "--paths.output", str(tmp_path / "o")])
    assert code == 1
    assert "clothing.txt" in capsys.readouterr().err


# ------------------------------------------------------------- animate


def test_ten_frame_animation(demo_scene, tmp_path):
    anim = static_animation(tmp_path / "anim.txt", 10)
    assert run(demo_scene, "animate", "--paths.animation", anim, output=tmp_path / "o") == 0
    names = sorted(p.name for p in (tmp_path / "o" / "frames").iterdir())
    assert names == [f"frame_{i:04d}.png" for i in range(10)]
    assert read_trajectory(tmp_path / "o" / "meshes" / "clothing_trajectory.bin").shape[0] == 10


def test_label_channel_writes_pgm(demo_scene, tmp_path):
    anim = static_animation(tmp_path / "anim.txt", 2)
    assert run(demo_scene, "animate", "--paths.animation", anim, "--render.channel", "label",
               output=tmp_path / "o") == 0
    frames = sorted((tmp_path / "o" / "frames").iterdir())
    assert [p.suffix for p in frames] == [".pgm", ".pgm"]
    img = read_image(frames[0])
    assert img.ndim == 2 and 0 < img.max() <= 1


def test_multi_camera_subdirectories(demo_scene, tmp_path):
    anim = static_animation(tmp_path / "anim.txt", 2)
    cams = sorted((demo_scene["root"] / "data" / "cameras").glob("*.txt"))[:2]
    assert run(demo_scene, "animate", "--paths.animation", anim, "--paths.cameras",
               "[" + ", ".join(str(c) for c in cams) + "]", "--render.width", 32, "--render.height", 24,
               output=tmp_path / "o") == 0
    for c in cams:
        img = read_image(tmp_path / "o" / "frames" / c.stem / "frame_0001.png")
        assert img.shape == (24, 32, 3)


def test_same_seed_bitwise_and_inputs_untouched(demo_scene, tmp_path):
    before = tree_digest(demo_scene["root"] / "data")
    assets = tree_digest(demo_scene["root"] / "assets")
    avatar = tree_digest(demo_scene["root"] / "out" / "gaussians")
    assert run(demo_scene, "animate", output=tmp_path / "a") == 0
    assert run(demo_scene, "animate", output=tmp_path / "b") == 0
    da, db = tree_digest(tmp_path / "a"), tree_digest(tmp_path / "b")
    da.pop("effective_config.yaml"), db.pop("effective_config.yaml")
    assert da == db
    assert tree_digest(demo_scene["root"] / "data") == before
    assert tree_digest(demo_scene["root"] / "assets") == assets
    assert tree_digest(demo_scene["root"] / "out" / "gaussians") == avatar


def test_equilibrium_scene_is_static(demo_scene, tmp_path):
    settle = static_animation(tmp_path / "settle.txt", 60)
    assert run(demo_scene, "animate", "--paths.animation", settle, output=tmp_path / "settle") == 0
    anim = static_animation(tmp_path / "anim.txt", 6)
    start = tmp_path / "settle" / "meshes" / "clothing_trajectory.bin"
    assert run(demo_scene, "animate", "--paths.animation", anim, "--paths.initial_clothing", start,
               output=tmp_path / "eq") == 0
    frames = [read_image(tmp_path / "eq" / "frames" / f"frame_{i:04d}.png") for i in range(6)]
    assert min(psnr(a, b) for a, b in zip(frames, frames[1:])) >= 50.0


def test_initial_clothing_shape_checked(demo_scene, tmp_path, capsys):
    body = demo_scene["root"] / "assets" / "body.obj"
    assert run(demo_scene, "animate", "--paths.initial_clothing", body, output=tmp_path / "o") == 1
    assert "initial_clothing" in capsys.readouterr().err


# ------------------------------------------------------------- try-on and graph


def test_identity_tryon_matches_animate(demo_scene, tmp_path):
    out = demo_scene["root"] / "out"
    assert run(demo_scene, "animate", output=tmp_path / "anim") == 0
    assert run(demo_scene, "tryon", "--paths.tryon_mesh", out / "meshes" / "clothing.obj",
               "--paths.tryon_gaussians", out / "gaussians" / "clothing.txt",
               "--paths.tryon_weights", out / "meshes" / "clothing_rig.txt", output=tmp_path / "swap") == 0
    a = tree_digest(tmp_path / "anim" / "frames")
    b = tree_digest(tmp_path / "swap" / "frames")
    assert a and a == b
    assert np.array_equal(read_trajectory(tmp_path / "anim" / "meshes" / "clothing_trajectory.bin"),
                          read_trajectory(tmp_path / "swap" / "meshes" / "clothing_trajectory.bin"))


def test_tryon_bad_face_reference(demo_scene, tmp_path, capsys):
    tiny = tmp_path / "tiny.obj"
    tiny.write_text("v 0 0 1\nv 1 0 1\nv 0 1 1\nf 1 2 3\n")
    assert run(demo_scene, "tryon", "--paths.tryon_mesh", tiny, output=tmp_path / "o") == 1
    assert "faces beyond" in capsys.readouterr().err


def test_graph_command(demo_scene, tmp_path):
    assert run(demo_scene, "graph", "--sim.threshold", 0.1, output=tmp_path / "g") == 0
    text = (tmp_path / "g" / "meshes" / "graph_clothing_edges.txt").read_text()
    assert text.strip()
    assert (tmp_path / "g" / "meshes" / "graph_body_edges.txt").is_file()


def test_check_failure_exit_code(monkeypatch):
    import pica.checks as checks

    monkeypatch.setattr(checks, "run_checks",
                        lambda seed=0, trials=20: [checks.CheckResult("gradient:seg", False, "bug", 0.0)])
    assert main(["check"]) == 2
    monkeypatch.setattr(checks, "run_checks",
                        lambda seed=0, trials=20: [checks.CheckResult("gradient:seg", True, "", 0.0)])
    assert main(["check"]) == 0
