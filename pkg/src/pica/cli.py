"""``pica fit|animate|tryon|graph|check --config PATH [--section.key value ...]``.

Exit codes: 0 success, 1 invalid input or configuration, 2 numerical
failure (including a failing ``check`` report).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from .cloth import (
    AnalyticPredictor, DivergenceError, PhysicalParams, build_graph, fit_physical_params, read_params,
    read_trajectory, resolve_collisions, simulate, write_params, write_trajectory,
)
from .config import ConfigError, RunConfig, load_config
from .fitting import Avatar, NumericalError, Schedule, fit, load_avatar, load_dataset, save_avatar, write_log
from .gaussians import read_gaussians
from .mesh import EdgeSet, Layer, load_mesh, save_obj, write_edge_sets
from .render import read_camera, render_all
from .render.images import write_image
from .skinning import deform, init_blend_weights, read_animation, read_rig

log = logging.getLogger("pica")

COMMANDS = ("fit", "animate", "tryon", "graph", "check")
EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 1, 2


# ---------------------------------------------------------------- argument handling


def parse_args(argv: list[str]) -> tuple[argparse.Namespace, list[tuple[str, str]]]:
    p = argparse.ArgumentParser(prog="pica", description="Two-layer Gaussian avatars: fit, animate, try on.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="YAML run configuration")
    p.add_argument("--threads", type=int, help="cap on worker threads (also PICA_THREADS)")
    p.add_argument("-v", "--verbose", action="store_true")
    ns, rest = p.parse_known_args(argv)
    overrides = []
    i = 0
    while i < len(rest):
        tok = rest[i]
        if not tok.startswith("--") or len(tok) == 2:
            raise ConfigError(f"unexpected argument {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, val = key.split("=", 1)
            i += 1
        elif i + 1 < len(rest):
            val = rest[i + 1]
            i += 2
        else:
            raise ConfigError(f"override {tok} needs a value")
        overrides.append((key.replace("-", "_"), val))
    return ns, overrides


def set_threads(requested: int | None) -> int:
    import numba

    n = requested
    if n is None and os.environ.get("PICA_THREADS"):
        try:
            n = int(os.environ["PICA_THREADS"])
        except ValueError:
            raise ConfigError("PICA_THREADS must be an integer") from None
    if n is None:
        return numba.get_num_threads()
    if n < 1:
        raise ConfigError("thread count must be >= 1")
    n = min(n, numba.config.NUMBA_NUM_THREADS)
    numba.set_num_threads(n)
    return n


def _prepare_output(cfg: RunConfig) -> Path:
    out = cfg.output
    for sub in ("gaussians", "meshes", "frames", "logs"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    (out / "effective_config.yaml").write_text(cfg.dump(), encoding="utf-8")
    return out


# ---------------------------------------------------------------- commands


def cmd_fit(cfg: RunConfig) -> int:
    cfg.require("body_mesh", "clothing_mesh", "rig", "dataset")
    body = load_mesh(cfg.path(cfg.paths.body_mesh), Layer.BODY)
    clothing = load_mesh(cfg.path(cfg.paths.clothing_mesh), Layer.CLOTHING)
    rig = read_rig(cfg.path(cfg.paths.rig), body.n_vertices)
    frames = load_dataset(cfg.path(cfg.paths.dataset), rig.n_bones)
    out = _prepare_output(cfg)
    pose_dim = 6 * rig.n_bones if cfg.fit.pose_matrix else None
    avatar = Avatar.initial(body, clothing, rig, len(frames), cfg.fit.per_face, pose_dim)
    sched = Schedule(cfg.schedule.iterations, dict(cfg.schedule.lr), cfg.schedule.decay,
                     cfg.schedule.min_factor, cfg.seed)
    t0 = time.perf_counter()

    def progress(it, rep):
        if it % 10 == 0:
            log.info("iter %d total %.6g", it, rep.total)

    state, history = fit(avatar, frames, cfg.weights, sched, progress)
    save_avatar(out, state)
    write_log(out / "logs" / "fit_log.csv", history)
    final = history[-1].total if history else float("nan")
    print(f"fit: {len(history)} reports, final total {final:.6g}, {time.perf_counter() - t0:.1f}s -> {out}")
    return EXIT_OK


def _physical_params(cfg: RunConfig, avatar: Avatar, animation, predictor, out: Path) -> PhysicalParams:
    mode = cfg.physics.mode
    if mode == "default":
        return PhysicalParams()
    if mode == "inline":
        return cfg.physics.params()
    if mode == "file":
        cfg.require("rho")
        return read_params(cfg.path(cfg.paths.rho))
    # mode == "fit": reconstructed trajectory = fitted clothing over the captured frames
    n = min(len(animation), len(avatar.clothing_offsets))
    if n < 2:
        raise ConfigError("physics.mode fit needs an avatar fitted on at least two frames")
    recon = np.stack([avatar.posed(animation[t], t)[1] for t in range(n)])
    body = np.stack([avatar.posed(animation[t], t)[0] for t in range(n)])
    graph = build_graph(avatar.clothing, avatar.body, cfg.sim.levels, cfg.sim.threshold,
                        clothing_positions=recon[0], body_positions=body[0],
                        rest_positions=avatar.clothing_positions, pinned=cfg.sim.pinned or None)
    res = fit_physical_params(recon, graph, predictor, cfg.sim.dt, body_trajectory=body,
                              init=cfg.physics.params())
    write_params(out / "logs" / "rho.txt", res.rho)
    log.info("fitted rho %s (objective %.3g, %d evaluations)", res.rho.as_array(), res.objective, res.evaluations)
    return res.rho


def _render_sequence(cfg: RunConfig, avatar: Avatar, animation, clothing_frames, out: Path) -> int:
    cams = [read_camera(cfg.path(c)) for c in cfg.paths.cameras]
    r = cfg.render
    if r.width or r.height:
        cams = [c.scaled(r.width or c.width, r.height or c.height) for c in cams]
    ext = (".png" if r.format == "png" else ".ppm") if r.channel == "color" else ".pgm"
    dirs = [out / "frames"] if len(cams) == 1 else [out / "frames" / Path(c).stem for c in cfg.paths.cameras]
    for d in dirs:
        d.mkdir(parents=True, exist_ok=True)
    for t, pose in enumerate(animation):
        body_p = deform(avatar.body_positions, avatar.rig, pose)
        layers = avatar.layers(body_p, clothing_frames[t])
        desc = pose.descriptor() if avatar.body_pose_matrix is not None else None
        for cam, d in zip(cams, dirs):
            img = render_all(layers, cam, desc).channel(r.channel)
            write_image(d / f"frame_{t:04d}{ext}", img)
    return len(animation) * len(cams)


def _initial_clothing(cfg: RunConfig, avatar: Avatar) -> np.ndarray | None:
    """Optional start state: an OBJ, or the last frame of a trajectory blob."""
    if not cfg.paths.initial_clothing:
        return None
    cfg.require("initial_clothing")
    p = cfg.path(cfg.paths.initial_clothing)
    x = read_trajectory(p)[-1] if p.suffix == ".bin" else load_mesh(p, Layer.CLOTHING).vertices
    if x.shape != avatar.clothing_positions.shape:
        raise ConfigError(f"paths.initial_clothing has {len(x)} vertices, the clothing mesh has "
                          f"{len(avatar.clothing_positions)}")
    return x


def _animate(cfg: RunConfig, avatar: Avatar, out: Path) -> int:
    cfg.require("animation", "cameras")
    animation = read_animation(cfg.path(cfg.paths.animation), avatar.rig.n_bones)
    sim = cfg.sim
    predictor = AnalyticPredictor(contact_margin=cfg.weights.collision_eps, contact_stiffness=sim.contact_stiffness,
                                  damping_time=sim.damping_time, drag=sim.drag)
    start = _initial_clothing(cfg, avatar)
    rho = _physical_params(cfg, avatar, animation, predictor, out)
    t0 = time.perf_counter()
    try:
        traj = simulate(avatar, animation, rho, cfg.sim.dt, predictor=predictor, substeps=cfg.sim.substeps,
                        levels=cfg.sim.levels, threshold=cfg.sim.threshold, pinned=cfg.sim.pinned or None,
                        initial_positions=start)
    except DivergenceError as exc:
        raise DivergenceError(f"simulation diverged: {exc}") from exc
    write_trajectory(out / "meshes" / "clothing_trajectory.bin", traj)
    n = _render_sequence(cfg, avatar, animation, traj, out)
    print(f"animate: {len(animation)} frames, {n} images, {time.perf_counter() - t0:.1f}s -> {out / 'frames'}")
    return EXIT_OK


def _avatar(cfg: RunConfig) -> Avatar:
    root = cfg.avatar_dir
    needed = [root / "meshes" / n for n in ("body.obj", "clothing.obj", "body_rig.txt", "clothing_rig.txt",
                                             "body_offsets.npy", "clothing_offsets.npy")]
    needed += [root / "gaussians" / n for n in ("body.txt", "clothing.txt")]
    missing = [str(p) for p in needed if not p.exists()]
    if missing:
        raise ConfigError("fitted avatar incomplete, missing: " + ", ".join(missing))
    return load_avatar(root)


def cmd_animate(cfg: RunConfig) -> int:
    avatar = _avatar(cfg)
    return _animate(cfg, avatar, _prepare_output(cfg))


def cmd_tryon(cfg: RunConfig) -> int:
    avatar = _avatar(cfg)
    cfg.require("tryon_mesh", "tryon_gaussians")
    if cfg.paths.tryon_weights:
        cfg.require("tryon_weights")
    clothing = load_mesh(cfg.path(cfg.paths.tryon_mesh), Layer.CLOTHING)
    gs = read_gaussians(cfg.path(cfg.paths.tryon_gaussians))
    if len(gs) and gs.face.max() >= clothing.n_faces:
        raise ConfigError("try-on Gaussians reference faces beyond the new clothing mesh")
    if cfg.paths.tryon_weights:
        w = read_rig(cfg.path(cfg.paths.tryon_weights), clothing.n_vertices).weights
        if w.shape[1] != avatar.rig.n_bones:
            raise ConfigError("try-on weights do not match the avatar's bone count")
    else:
        w = init_blend_weights(clothing, avatar.body, avatar.rig)
    x = resolve_collisions(clothing.vertices, avatar.body, avatar.body_positions, cfg.weights.collision_eps,
                           clothing)
    avatar.clothing = clothing.with_vertices(x)
    avatar.clothing_positions = x
    avatar.clothing_gaussians = gs
    avatar.clothing_weights = w
    avatar.clothing_offsets = np.zeros((len(avatar.body_offsets), clothing.n_vertices, 3))
    out = _prepare_output(cfg)
    save_obj(out / "meshes" / "tryon_clothing.obj", avatar.clothing)
    return _animate(cfg, avatar, out)


def cmd_graph(cfg: RunConfig) -> int:
    """Write the simulation graph at the rest state (or animation frame 0)."""
    root = cfg.avatar_dir
    if (root / "meshes" / "clothing.obj").exists() and (root / "meshes" / "body.obj").exists():
        avatar = _avatar(cfg)
        body, clothing = avatar.body, avatar.clothing
        bp, cp = avatar.body_positions, avatar.clothing_positions
        if cfg.paths.animation:
            cfg.require("animation")
            pose = read_animation(cfg.path(cfg.paths.animation), avatar.rig.n_bones)[0]
            bp, cp = avatar.posed(pose)
    else:
        cfg.require("body_mesh", "clothing_mesh")
        body = load_mesh(cfg.path(cfg.paths.body_mesh), Layer.BODY)
        clothing = load_mesh(cfg.path(cfg.paths.clothing_mesh), Layer.CLOTHING)
        bp, cp = body.vertices, clothing.vertices
    g = build_graph(clothing, body, cfg.sim.levels, cfg.sim.threshold, clothing_positions=cp,
                    body_positions=bp, pinned=cfg.sim.pinned or None)
    out = _prepare_output(cfg)
    write_edge_sets(out / "meshes" / "graph_clothing_edges.txt", [EdgeSet(g.clothing_edges, 0), *g.coarse])
    write_edge_sets(out / "meshes" / "graph_body_edges.txt", [EdgeSet(g.body_edges, 0)])
    print(f"graph: {len(g.clothing_edges)} clothing edges, {sum(len(c.edges) for c in g.coarse)} coarse edges "
          f"over {len(g.coarse)} levels, {len(g.body_edges)} clothing-to-body edges")
    return EXIT_OK


def cmd_check(cfg: RunConfig) -> int:
    from .checks import format_report, run_checks

    results = run_checks(cfg.seed)
    print(format_report(results))
    failed = [r.name for r in results if not r.passed]
    if failed:
        print("failed: " + ", ".join(failed))
        return EXIT_NUMERICAL
    return EXIT_OK


HANDLERS = {"fit": cmd_fit, "animate": cmd_animate, "tryon": cmd_tryon, "graph": cmd_graph, "check": cmd_check}


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        ns, overrides = parse_args(argv)
    except ConfigError as exc:
        print(f"pica: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except SystemExit as exc:  # argparse usage errors and --help
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if ns.config is None and ns.command != "check":
            raise ConfigError("--config is required")
        cfg = load_config(ns.config, overrides)
        set_threads(ns.threads if ns.threads is not None else (None if os.environ.get("PICA_THREADS")
                                                                else cfg.threads))
        return HANDLERS[ns.command](cfg)
    except (ConfigError, FileNotFoundError, ValueError, KeyError) as exc:
        print(f"pica {ns.command}: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (NumericalError, DivergenceError, FloatingPointError) as exc:
        print(f"pica {ns.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
