"""
Frame loop tying the frontend, tracker and sampler together.

Deterministic mode interleaves a fixed number of Gibbs sweeps between
frames on the calling thread. Parallel mode runs the sampler groups on
background threads and publishes a fresh snapshot for every frame.
Outputs are written to temporary names and renamed at the end.
"""

from __future__ import annotations

import csv
import json
import logging
import os
import threading
from dataclasses import dataclass, field
from pathlib import Path
from queue import Queue

import numpy as np

from dirslam.config import RunConfig
from dirslam.frontend.associate import associate
from dirslam.frontend.extract import extract_new_surfels
from dirslam.frontend.synthetic import load_scene, three_plane_scene
from dirslam.frontend.tum import format_trajectory, parse_tum_sequence
from dirslam.gibbs import GibbsConfig, SamplerWorkers, SweepLog, publish_estimates, run_sweep
from dirslam.lie import Pose
from dirslam.segmentation import BasePrior, DirectionalModel, initialize_labels
from dirslam.surfel_map import (MapSnapshot, NeighborGraph, SurfelMap, add_surfels, knn_update,
                                visibility, write_ply)
from dirslam.tracking import TrackResult, incremental_icp

log = logging.getLogger(__name__)


class TrackingLost(RuntimeError):
    pass


@dataclass
class RunResult:
    timestamps: list = field(default_factory=list)
    poses: list = field(default_factory=list)
    gt_poses: list = field(default_factory=list)
    track_rows: list = field(default_factory=list)
    aborted: bool = False
    smap: SurfelMap | None = None
    model: DirectionalModel | None = None
    snapshot: MapSnapshot | None = None
    out_dir: Path | None = None


def frame_source(cfg: RunConfig):
    """Iterator of (frame, gt_pose or None) for the configured input."""
    inp = cfg.input
    limit = inp.frames if inp.frames > 0 else None
    if inp.source == "tum":
        it = parse_tum_sequence(inp.path)
        for k, item in enumerate(it):
            if limit is not None and k >= limit:
                return
            yield item
        return
    if inp.source != "synthetic":
        raise ValueError(f"unknown input source {inp.source!r}")
    scene = load_scene(inp.path) if inp.path else three_plane_scene(noise=inp.noise)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.run.seed, 1]))
    n = limit if limit is not None else 0
    for k in range(n):
        yield scene.render(k, rng, noise=inp.noise)


def _prefetch(it, depth: int = 1):
    """Run ``it`` one item ahead on a helper thread."""
    q: Queue = Queue(maxsize=depth)
    done = object()
    err: list = []

    def work():
        try:
            for item in it:
                q.put(item)
        except BaseException as exc:  # re-raised on the consumer side
            err.append(exc)
        finally:
            q.put(done)

    threading.Thread(target=work, name="prefetch", daemon=True).start()
    while True:
        item = q.get()
        if item is done:
            if err:
                raise err[0]
            return
        yield item


class Slam:
    """Incremental state of one run; ``step`` consumes a frame."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        m = cfg.model
        self.model = DirectionalModel(m.alpha, BasePrior(np.asarray(m.mu0, dtype=float), m.a, m.b),
                                      m.lam)
        self.gibbs = GibbsConfig(m.tau_obs, m.sigma_pl, cfg.sampler.burn_in,
                                 cfg.sampler.min_samples, cfg.sampler.literal_bingham)
        self.tcfg = cfg.tracker_config()
        self.smap = SurfelMap()
        self.graph = NeighborGraph(cfg.map.k, cfg.map.radius, m.sigma_pl)
        ss = np.random.SeedSequence(cfg.run.seed)
        s_map, s_sampler, s_track, s_workers = ss.spawn(4)
        self.rng_map = np.random.default_rng(s_map)
        self.rng_sampler = np.random.default_rng(s_sampler)
        self.rng_track = np.random.default_rng(s_track)
        self.workers: SamplerWorkers | None = None
        self.graph_worker: GraphWorker | None = None
        self.worker_seed = int(s_workers.generate_state(1)[0])
        self.sweep_log = SweepLog()
        self.sweeps = 0
        self.frame_index = 0
        self.poses: list[Pose] = []
        self.lost_run = 0
        self.refresh_cursor = 0

    # -- map maintenance ---------------------------------------------------------

    def _update_graph(self, new_ids: np.ndarray):
        from scipy.spatial import cKDTree

        alive = self.smap.alive_ids()
        if len(alive) == 0:
            return
        tree = cKDTree(self.smap.position[alive])
        old = np.setdiff1d(alive, new_ids, assume_unique=True)
        chunk = np.zeros(0, dtype=int)
        # in parallel mode the graph thread revisits old surfels instead
        if len(old) and self.cfg.map.graph_refresh > 0 and self.graph_worker is None:
            start = self.refresh_cursor % len(old)
            idx = (start + np.arange(min(self.cfg.map.graph_refresh, len(old)))) % len(old)
            chunk = old[idx]
            self.refresh_cursor = start + len(idx)
        # existing surfels next to new ones should see them as neighbours
        near = np.zeros(0, dtype=int)
        if len(new_ids):
            hits = tree.query_ball_point(self.smap.position[new_ids], r=self.graph.radius)
            near = alive[np.unique(np.concatenate([np.asarray(h, dtype=int) for h in hits]))]
            near = np.setdiff1d(near, new_ids)
            cap = max(self.cfg.map.graph_refresh, 0)
            if len(near) > cap:
                near = self.rng_map.choice(near, size=cap, replace=False)
                near.sort()
        ids = np.unique(np.concatenate([new_ids, chunk, near]))
        knn_update(self.smap, self.graph, ids, tree, alive)

    def _integrate(self, frame, pose: Pose, snapshot: MapSnapshot):
        smap = self.smap
        if len(snapshot):
            batch = associate(snapshot, frame, pose)
            if len(batch):
                grad = frame.gradient_magnitude[batch.pixel[:, 1], batch.pixel[:, 0]]
                rgb = frame.rgb[batch.pixel[:, 1], batch.pixel[:, 0]] if frame.rgb is not None else None
                smap.add_observations(batch.ids, batch.x_cam, batch.n_cam, batch.cov, pose,
                                      batch.intensity, rgb, grad, batch.pixel)
            vis = visibility(snapshot.position, snapshot.normal, snapshot.cov, frame, pose)
            bad = snapshot.ids[vis["free_space"]]
            bad = bad[smap.alive[bad]]
            smap.violations[bad] += 1
            dead = bad[smap.violations[bad] >= self.cfg.map.violation_limit]
            if len(dead):
                smap.remove(dead)
                self.graph.purge(smap.alive[:smap.size])
        pix, normals = extract_new_surfels(frame, pose, snapshot, self.rng_map, self.cfg.map.budget,
                                           self.cfg.map.gradient_floor, self.cfg.map.cover_radius_px)
        new_ids = add_surfels(smap, frame, pix, pose, normals, self.frame_index)
        self._update_graph(new_ids)
        if len(new_ids):
            initialize_labels(smap, self.graph, self.model, self.rng_sampler, new_ids)
        return new_ids

    def snapshot(self) -> MapSnapshot:
        return publish_estimates(self.smap, self.gibbs)

    # -- frames -------------------------------------------------------------------

    def predict(self) -> Pose:
        if not self.poses:
            return Pose.identity()
        if len(self.poses) == 1:
            return self.poses[-1].copy()
        a, b = self.poses[-2], self.poses[-1]
        # constant velocity: apply the last inter-frame motion once more
        return b @ (a.inverse() @ b)

    def step(self, frame) -> TrackResult:
        init = self.predict()
        snap = self.snapshot()
        if self.frame_index == 0 or len(snap) == 0:
            res = TrackResult(init, None, False, False, 0, 0, 0, float("inf"), 0.0, 0.0,
                              frame.timestamp)
        else:
            res = incremental_icp(frame, snap, init, self.tcfg, self.rng_track)
        pose = res.pose
        if res.lost:
            self.lost_run += 1
        else:
            self.lost_run = 0
        self.poses.append(pose)
        with self.smap.lock:
            if not res.lost:
                self._integrate(frame, pose, snap)
            if self.workers is None:
                for _ in range(self.cfg.sampler.sweeps_per_frame):
                    rep = run_sweep(self.smap, self.graph, self.model, self.rng_sampler,
                                    self.gibbs, self.sweeps)
                    self.sweep_log.append(rep)
                    self.sweeps += 1
        self.frame_index += 1
        if self.lost_run > self.cfg.run.max_lost:
            raise TrackingLost(f"tracking lost for {self.lost_run} consecutive frames")
        return res

    def start_workers(self):
        self.workers = SamplerWorkers(self.smap, self.graph, self.model, self.gibbs,
                                      self.worker_seed, self.sweep_log)
        self.graph_worker = GraphWorker(self.smap, self.graph, self.cfg.map.graph_refresh,
                                        self.worker_seed + 1)
        self.workers.start()
        self.graph_worker.start()

    def stop_workers(self):
        if self.graph_worker is not None:
            self.graph_worker.stop()
        if self.workers is not None:
            self.workers.stop()


class GraphWorker:
    """Background thread revisiting random surfels' neighbourhoods."""

    def __init__(self, smap: SurfelMap, graph: NeighborGraph, chunk: int, seed: int = 0):
        self.smap, self.graph, self.chunk = smap, graph, chunk
        self.rng = np.random.default_rng(seed)
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None
        self.passes = 0

    def _loop(self):
        from scipy.spatial import cKDTree

        while not self._stop.is_set():
            with self.smap.lock:
                alive = self.smap.alive_ids()
                if len(alive) and self.chunk > 0:
                    ids = self.rng.choice(alive, size=min(self.chunk, len(alive)), replace=False)
                    knn_update(self.smap, self.graph, np.sort(ids), cKDTree(self.smap.position[alive]),
                               alive)
                    self.passes += 1
            self._stop.wait(0.01)

    def start(self):
        self._thread = threading.Thread(target=self._loop, name="graph-builder", daemon=True)
        self._thread.start()

    def stop(self):
        self._stop.set()
        if self._thread is not None:
            self._thread.join()


# -- outputs ----------------------------------------------------------------------------


def _atomic_write(path: Path, text: str):
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def write_outputs(out: Path, result: RunResult, slam: Slam):
    out.mkdir(parents=True, exist_ok=True)
    _atomic_write(out / "trajectory.txt", format_trajectory(result.timestamps, result.poses))
    if result.gt_poses and all(p is not None for p in result.gt_poses):
        _atomic_write(out / "groundtruth.txt", format_trajectory(result.timestamps, result.gt_poses))
    snap = result.snapshot if result.snapshot is not None else MapSnapshot.empty()
    smap = slam.smap
    rgb = smap.rgb_sum[snap.ids] / np.maximum(smap.n_obs[snap.ids], 1)[:, None]
    labels = np.maximum(snap.label, 0)
    tmp = out / "map.ply.tmp"
    write_ply(tmp, snap.position, snap.normal, rgb, labels, snap.radius)
    os.replace(tmp, out / "map.ply")
    _atomic_write(out / "gt_segments.txt",
                  "".join(f"{int(g)}\n" for g in smap.gt_segment[snap.ids]))
    _atomic_write(out / "tracker.jsonl",
                  "".join(json.dumps(r, sort_keys=True) + "\n" for r in result.track_rows))
    _atomic_write(out / "sweeps.jsonl",
                  "".join(r.to_json() + "\n" for r in slam.sweep_log.reports))
    tmp = out / "surfels.csv.tmp"
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "x", "y", "z", "nx", "ny", "nz", "label", "gt_segment", "n_obs",
                    "n_samples", "entropy"])
        for j, i in enumerate(snap.ids.tolist()):
            w.writerow([i, *map(repr, snap.position[j].tolist()), *map(repr, snap.normal[j].tolist()),
                        int(snap.label[j]), int(smap.gt_segment[i]), int(smap.n_obs[i]),
                        int(snap.n_samples[j]), repr(float(snap.entropy[j]))])
    os.replace(tmp, out / "surfels.csv")


def run_slam(cfg: RunConfig, frames=None, out_dir=None) -> RunResult:
    """Stream frames through tracker and map; write outputs to ``out_dir``.

    ``frames`` overrides the configured input with any iterable of
    ``(frame, gt_pose or None)``.
    """
    slam = Slam(cfg)
    result = RunResult(smap=slam.smap, model=slam.model)
    source = frames if frames is not None else frame_source(cfg)
    if not cfg.run.single_thread:
        source = _prefetch(iter(source))
        slam.start_workers()
    try:
        for frame, gt in source:
            try:
                res = slam.step(frame)
            except TrackingLost as exc:
                log.error("%s; aborting with partial outputs", exc)
                result.aborted = True
                res = None
            if res is not None or result.aborted:
                pose = slam.poses[-1]
                result.timestamps.append(frame.timestamp)
                result.poses.append(pose)
                result.gt_poses.append(gt)
                row = (res.row() if res is not None
                       else {"timestamp": frame.timestamp, "lost": True})
                result.track_rows.append(row)
            if result.aborted:
                break
    finally:
        slam.stop_workers()
    result.snapshot = slam.snapshot()
    out = out_dir if out_dir is not None else cfg.run.out
    if out:
        result.out_dir = Path(out)
        write_outputs(result.out_dir, result, slam)
    return result
