"""Command-line entry points: run, eval-ate, eval-seg, plane-sparsity, synth."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from dirslam.config import RunConfig

log = logging.getLogger("dirslam")


def _cmd_run(args) -> int:
    from dirslam.pipeline import run_slam

    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    for item in args.set or []:
        key, _, value = item.partition("=")
        cfg.set(key.strip(), value.strip())
    if args.seed is not None:
        cfg.run.seed = args.seed
    if args.single_thread:
        cfg.run.single_thread = True
    if args.out:
        cfg.run.out = args.out
    if args.dump_config:
        sys.stdout.write(cfg.to_text())
        return 0
    result = run_slam(cfg)
    n = len(result.poses)
    print(f"frames {n}  surfels {len(result.snapshot)}  clusters {len(result.model)}  "
          f"out {result.out_dir}")
    if result.gt_poses and n >= 2 and all(g is not None for g in result.gt_poses):
        from dirslam.evaluation import evaluate_ate

        rep = evaluate_ate((result.timestamps, result.poses), (result.timestamps, result.gt_poses))
        print(rep.summary())
    return 2 if result.aborted else 0


def _cmd_eval_ate(args) -> int:
    from dirslam.evaluation import evaluate_ate

    rep = evaluate_ate(args.est, args.gt, args.max_dt)
    print(rep.summary())
    if args.errors:
        np.savetxt(args.errors, np.column_stack([rep.timestamps, rep.errors]), fmt="%.9f",
                   header="timestamp error_m")
    return 0


def _cmd_eval_seg(args) -> int:
    from dirslam.evaluation import evaluate_segmentation, read_segments
    from dirslam.surfel_map import read_ply

    labels = np.asarray(read_ply(args.map)["label"])
    rep = evaluate_segmentation(labels, read_segments(args.gt))
    print(rep.summary())
    return 0


def _cmd_plane_sparsity(args) -> int:
    from dirslam.frontend.plane_sparsity import plane_sparsity_experiment
    from dirslam.surfel_map import read_ply

    d = read_ply(args.cloud)
    pts = np.column_stack([d["x"], d["y"], d["z"]])
    nrm = np.column_stack([d["nx"], d["ny"], d["nz"]])
    counts = np.arange(1, args.max_planes + 1)
    rng = np.random.default_rng(args.seed)
    frac = plane_sparsity_experiment(pts, nrm, counts, args.threshold, args.trials, rng=rng)
    print("planes,inlier_fraction")
    for c, f in zip(counts.tolist(), frac.tolist()):
        print(f"{c},{f:.6f}")
    return 0


def _cmd_synth(args) -> int:
    from dirslam.frontend.synthetic import load_scene, three_plane_scene
    from dirslam.frontend.tum import write_tum_sequence

    scene = load_scene(args.scene) if args.scene else three_plane_scene()
    rng = np.random.default_rng(args.seed)
    noise = None if args.noise is None else args.noise == "on"
    frames, poses = [], []
    for k in range(args.frames):
        f, pose = scene.render(k, rng, noise=noise)
        frames.append(f)
        poses.append(pose)
    out = Path(args.out)
    write_tum_sequence(out, frames, poses)
    (out / "scene.txt").write_text(scene.to_text())
    print(f"wrote {len(frames)} frames to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dirslam", description=__doc__)
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run SLAM on a synthetic scene or TUM sequence")
    r.add_argument("--config", help="flat 'section.key = value' config file")
    r.add_argument("--seed", type=int)
    r.add_argument("--single-thread", action="store_true",
                   help="deterministic mode: sampler sweeps interleaved with frames")
    r.add_argument("--out", help="output directory")
    r.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config entry, e.g. input.frames=50")
    r.add_argument("--dump-config", action="store_true", help="print the effective config")
    r.set_defaults(func=_cmd_run)

    a = sub.add_parser("eval-ate", help="absolute trajectory error of TUM trajectory files")
    a.add_argument("--est", required=True)
    a.add_argument("--gt", required=True)
    a.add_argument("--max-dt", type=float, default=0.02)
    a.add_argument("--errors", help="write per-pose errors as CSV-like text")
    a.set_defaults(func=_cmd_eval_ate)

    s = sub.add_parser("eval-seg", help="segmentation accuracy of a labelled PLY map")
    s.add_argument("--map", required=True)
    s.add_argument("--gt", required=True, help="one true segment id per map vertex")
    s.set_defaults(func=_cmd_eval_seg)

    ps = sub.add_parser("plane-sparsity", help="inlier fraction against random plane count")
    ps.add_argument("--cloud", required=True, help="PLY with positions and normals")
    ps.add_argument("--max-planes", type=int, required=True)
    ps.add_argument("--threshold", type=float, default=0.02)
    ps.add_argument("--trials", type=int, default=20)
    ps.add_argument("--seed", type=int, default=0)
    ps.set_defaults(func=_cmd_plane_sparsity)

    y = sub.add_parser("synth", help="render a synthetic scene to a TUM-format directory")
    y.add_argument("--scene", help="scene file; default is the three-plane orbit")
    y.add_argument("--frames", type=int, required=True)
    y.add_argument("--out", required=True)
    y.add_argument("--seed", type=int, default=0)
    y.add_argument("--noise", choices=("on", "off"), help="override the scene's noise setting")
    y.set_defaults(func=_cmd_synth)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (FileNotFoundError, ValueError) as exc:
        log.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
