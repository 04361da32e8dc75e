"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Thresholds are the stated ones. Run with ``pytest tests/test_acceptance.py``;
the lines are repeated in the terminal summary.
"""

import math
import time

import numpy as np
import pytest
from scipy.optimize import linear_sum_assignment

from dirslam.config import RunConfig
from dirslam.directional import (bingham_to_vmf, fibonacci_sphere, normalize, sample_vmf)
from dirslam.evaluation import evaluate_ate
from dirslam.fixtures import planar_patch_cloud
from dirslam.frontend.associate import associate
from dirslam.frontend.extract import extract_new_surfels
from dirslam.frontend.plane_sparsity import plane_sparsity_experiment, surface_cloud
from dirslam.frontend.synthetic import (Trajectory, render_synthetic, room_scene,
                                        three_plane_scene)
from dirslam.gibbs import GibbsConfig, location_posterior, publish_estimates, run_sweep
from dirslam.lie import se3_exp
from dirslam.pipeline import Slam, run_slam
from dirslam.segmentation import DirectionalModel, base_marginal, initialize_labels, label_conditional
from dirslam.surfel_map import MapSnapshot, NeighborGraph, SurfelMap, add_surfels
from dirslam.tracking import H_MAX, LAMBDA_MIN, Correspondences, residuals_and_jacobians


# -- C1 -----------------------------------------------------------------------------


def test_c1_vmf_concentration(report):
    t0 = time.perf_counter()
    mode = normalize(np.array([0.3, -0.5, 0.8]))
    x = sample_vmf(mode, 100.0, np.random.default_rng(0), size=100_000)
    ang = np.degrees(np.arccos(np.clip(x @ mode, -1.0, 1.0)))
    frac = float(np.mean(ang <= 18.0))
    dt = time.perf_counter() - t0
    ok = report("C1 vMF concentration", frac >= 0.985 and dt < 5.0,
                f"{frac:.4f} of draws within 18 deg (>= 0.985), {dt:.2f}s (< 5s)")
    assert ok


# -- C2 -----------------------------------------------------------------------------


def _hemisphere_tv(S, grid):
    v = bingham_to_vmf(S)
    x = grid[grid @ v.mode >= 0]
    b = np.exp(-0.5 * np.einsum("ni,ij,nj->n", x, S, x))
    q = np.exp(v.tau * (x @ v.mode - 1.0))
    return 0.5 * np.abs(b / b.sum() - q / q.sum()).sum()


def test_c2_bingham_fidelity(report):
    t0 = time.perf_counter()
    grid = fibonacci_sphere(200_000)
    profiles = {"diag(0,5,20)": [0.0, 5.0, 20.0], "diag(0,10,10)": [0.0, 10.0, 10.0],
                "diag(0,1,100)": [0.0, 1.0, 100.0]}
    tv = {k: _hemisphere_tv(np.diag(v), grid) for k, v in profiles.items()}
    dt = time.perf_counter() - t0
    ok = all(v < 0.15 for v in tv.values()) and dt < 10.0
    detail = ", ".join(f"{k} TV={v:.3f}" for k, v in tv.items())
    assert report("C2 Bingham->vMF fidelity", ok, f"{detail} (< 0.15 each), {dt:.2f}s")


# -- C3 -----------------------------------------------------------------------------


def _location_fixture(rng, n=5):
    smap = SurfelMap()
    pts = rng.normal(scale=0.05, size=(n, 3))
    nrm = normalize(rng.normal(size=(n, 3)))
    A = rng.normal(size=(n, 3, 3)) * 0.003
    cov = A @ np.swapaxes(A, 1, 2) + np.eye(3) * 1e-6
    pose = se3_exp(rng.normal(size=6))
    smap.add(pose.apply(pts), nrm, 0.01, cov, pts, nrm @ pose.R, pose, np.full(n, 0.5))
    smap.label[:n] = rng.integers(0, 2, size=n)
    graph = NeighborGraph(k=n - 1, capacity=n)
    for i in range(n):
        nb = [j for j in range(n) if j != i and rng.random() < 0.7]
        graph.nbr[i, :len(nb)] = nb
    return smap, graph, pose, pts, cov


def _location_oracle(smap, graph, i, pose, pts, cov, sigma_pl):
    info = pose.R @ np.linalg.inv(cov[i]) @ pose.R.T
    eta = info @ pose.apply(pts[i])
    for j in graph.neighbors(i):
        if smap.label[j] == smap.label[i]:
            I = (np.outer(smap.normal[i], smap.normal[i])
                 + np.outer(smap.normal[j], smap.normal[j])) / sigma_pl ** 2
            info = info + I
            eta = eta + I @ smap.position[j]
    C = np.linalg.inv(info)
    return C @ eta, C


def _label_oracle(n, nbrs, m):
    w = []
    for key, c in m.clusters.items():
        agree = sum(1 for z in nbrs if z == key)
        vmf = c.tau / (4 * math.pi * math.sinh(c.tau)) * math.exp(c.tau * float(c.mu @ n))
        w.append(math.exp(m.lam * (agree - len(nbrs))) * c.count * vmf)
    w.append(math.exp(-m.lam * len(nbrs)) * m.alpha * float(base_marginal(n, m.prior)))
    return np.array(w) / sum(w)


def test_c3_gibbs_conditionals(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    cfg = GibbsConfig()
    loc_err = 0.0
    for _ in range(100):
        smap, graph, pose, pts, cov = _location_fixture(rng)
        mean, C, _ = location_posterior(smap, graph, np.arange(5), cfg)
        for i in range(5):
            m_ref, c_ref = _location_oracle(smap, graph, i, pose, pts, cov, cfg.sigma_pl)
            loc_err = max(loc_err, np.abs(mean[i] - m_ref).max(), np.abs(C[i] - c_ref).max())
    lab_err = 0.0
    for _ in range(100):
        m = DirectionalModel(alpha=rng.uniform(0.1, 3.0), lam=rng.uniform(0.0, 2.0))
        k = int(rng.integers(1, 5))
        for _ in range(k):
            m.new_cluster(normalize(rng.normal(size=3)), rng.uniform(1.0, 100.0),
                          count=int(rng.integers(1, 50)))
        n = normalize(rng.normal(size=3))
        nbrs = rng.choice(list(m.clusters), size=int(rng.integers(0, 12))).tolist()
        _, p = label_conditional(n, nbrs, m)
        lab_err = max(lab_err, np.abs(p - _label_oracle(n, nbrs, m)).max())
    dt = time.perf_counter() - t0
    ok = loc_err <= 1e-10 and lab_err <= 1e-12 and dt < 30.0
    assert report("C3 Gibbs conditionals", ok,
                  f"location max err {loc_err:.1e} (<= 1e-10), label max err {lab_err:.1e} "
                  f"(<= 1e-12), {dt:.1f}s")


# -- C4 -----------------------------------------------------------------------------


def test_c4_segmentation_recovery(report):
    t0 = time.perf_counter()
    good = []
    for seed in range(10):
        smap, graph, truth = planar_patch_cloud(per_patch=500, tau_true=200.0, seed=seed)
        rng = np.random.default_rng(seed)
        model = DirectionalModel()
        ids = smap.alive_ids()
        initialize_labels(smap, graph, model, rng, ids)
        for s in range(50):
            run_sweep(smap, graph, model, rng, GibbsConfig(), s)
        keys, lab = np.unique(smap.label[ids], return_inverse=True)
        sizes = np.bincount(lab)
        dominant = int(np.sum(sizes >= 0.05 * len(ids)))
        C = np.zeros((3, len(keys)))
        np.add.at(C, (truth, lab), 1)
        r, c = linear_sum_assignment(-C)
        acc = C[r, c].sum() / len(ids)
        good.append(dominant == 3 and acc >= 0.95)
    dt = time.perf_counter() - t0
    n_good = int(sum(good))
    assert report("C4 segmentation recovery", n_good >= 9 and dt < 120.0,
                  f"{n_good}/10 seeds with 3 dominant clusters and accuracy >= 0.95 "
                  f"(>= 9), {dt:.1f}s (< 120s)")


# -- C5 -----------------------------------------------------------------------------


def _cells(c, pose, frame):
    K = frame.intrinsics
    y = (c.position - pose.t) @ pose.R
    return (np.floor(K.fx * y[:, 0] / y[:, 2] + K.cx), np.floor(K.fy * y[:, 1] / y[:, 2] + K.cy))


def test_c5_jacobians(report):
    t0 = time.perf_counter()
    scene = three_plane_scene(noise=False)
    p0 = scene.pose(0)
    f0 = render_synthetic(scene, p0)
    smap = SurfelMap()
    pix, n = extract_new_surfels(f0, p0, MapSnapshot.empty(), np.random.default_rng(0),
                                 budget=3000, radius_px=0)
    ids = add_surfels(smap, f0, pix, p0, n)
    smap.label[ids] = smap.gt_segment[ids]
    snap = publish_estimates(smap)
    corr = Correspondences.from_batch(snap, associate(snap, f0, p0))
    rng = np.random.default_rng(1)
    h = 1e-6
    worst, done, skipped = 0.0, 0, 0
    # a configuration is one random pose and one random correspondence
    while done < 1000:
        pose = p0.retract(np.r_[rng.normal(scale=0.01, size=3), rng.normal(scale=0.01, size=3)])
        c = corr.take(rng.integers(len(corr), size=100))
        e, J, valid = residuals_and_jacobians(c, pose, f0)
        num = np.zeros_like(J)
        keep = valid[:, 1].copy()
        cu, cv = _cells(c, pose, f0)
        for k in range(6):
            d = np.zeros(6)
            d[k] = h
            ep, _, vp = residuals_and_jacobians(c, pose.retract(d), f0)
            em, _, vm = residuals_and_jacobians(c, pose.retract(-d), f0)
            num[:, :, k] = (ep - em) / (2 * h)
            keep &= vp[:, 1] & vm[:, 1]
            for p in (pose.retract(d), pose.retract(-d)):
                pu, pv = _cells(c, p, f0)
                # the bilinear interpolant is only C0 across cell edges
                keep &= (pu == cu) & (pv == cv)
        idx = np.flatnonzero(keep)[:1000 - done]
        skipped += int(np.sum(~keep))
        rel = (np.linalg.norm(J[idx] - num[idx], axis=2)
               / np.maximum(np.linalg.norm(J[idx], axis=2), 1e-12))
        if len(idx):
            worst = max(worst, float(rel.max()))
        done += len(idx)
    dt = time.perf_counter() - t0
    assert report("C5 Jacobians vs finite differences", worst <= 1e-5 and dt < 10.0,
                  f"max relative error {worst:.1e} over {done} configs (<= 1e-5), "
                  f"{skipped} stencils crossing a pixel cell resampled, {dt:.1f}s (< 10s)")


# -- C6, C7, C9 ---------------------------------------------------------------------


@pytest.fixture(scope="module")
def orbit_run(tmp_path_factory):
    cfg = RunConfig()
    cfg.input.frames = 200
    cfg.run.single_thread = True
    t0 = time.perf_counter()
    res = run_slam(cfg, out_dir=tmp_path_factory.mktemp("orbit"))
    return res, time.perf_counter() - t0


@pytest.mark.slow
def test_c6_tracking_accuracy(orbit_run, report):
    res, dt = orbit_run
    scene = three_plane_scene()
    steps = [scene.pose(k).inverse() @ scene.pose(k + 1) for k in range(199)]
    step_cm = max(100 * np.linalg.norm(s.t) for s in steps)
    step_deg = max(np.degrees(np.arccos(np.clip((np.trace(s.R) - 1) / 2, -1, 1))) for s in steps)
    rep = evaluate_ate(res.out_dir / "trajectory.txt", res.out_dir / "groundtruth.txt")
    ok = not res.aborted and rep.rmse <= 5e-3 and dt < 300.0 and step_cm <= 1.0 and step_deg <= 1.0
    assert report("C6 tracking accuracy", ok,
                  f"ATE RMSE {1000 * rep.rmse:.2f} mm (<= 5 mm) over {len(res.poses)} frames, "
                  f"max step {step_cm:.2f} cm / {step_deg:.2f} deg, {dt:.0f}s (< 300s)")


@pytest.mark.slow
def test_c7_selection_efficiency(report):
    # dense first frame so that later frames see >= 5000 mapped surfels
    cfg = RunConfig()
    cfg.run.single_thread = True
    cfg.map.budget = 6000
    cfg.map.cover_radius_px = 2
    scene = three_plane_scene()
    rng = np.random.default_rng(0)
    slam = Slam(cfg)
    rows = []
    for k in range(5):
        frame, _ = scene.render(k, rng, noise=True)
        res = slam.step(frame)
        if k == 0:
            slam.cfg.map.budget = RunConfig().map.budget
            slam.cfg.map.cover_radius_px = RunConfig().map.cover_radius_px
        elif res.candidates >= 5000:
            rows.append(res)
    ok = bool(rows) and all(r.selected <= 1000 and not r.degenerate and not r.lost
                            and r.entropy <= H_MAX and r.lambda_min >= LAMBDA_MIN for r in rows)
    detail = ", ".join(f"{r.selected}/{r.candidates}" for r in rows)
    assert report("C7 selection efficiency", ok,
                  f"selected/visible per frame: {detail} (<= 1000 with >= 5000 visible, "
                  f"thresholds met)")


@pytest.mark.slow
def test_c9_tracking_time(orbit_run, report):
    res, _ = orbit_run
    med = float(np.median([r["ms"] for r in res.track_rows]))
    ok = report("C9 tracking time (soft)", med <= 50.0,
                f"median {med:.0f} ms/frame at 640x480 (<= 50 ms), reported only")
    if not ok:
        pytest.skip("timing criterion is soft; failure is reported, not blocking")


# -- C8 -----------------------------------------------------------------------------


def ablation_scene():
    """Stripe-textured corner seen from above, so the floor dominates the view."""
    scene = three_plane_scene(texture="stripes")
    scene.trajectory = Trajectory("orbit", (0.8, 0.8, 0.0, 1.2, 1.8, 0.3, 45.0))
    return scene


@pytest.mark.slow
def test_c8_selection_ablation(tmp_path, report):
    path = tmp_path / "ablation.txt"
    path.write_text(ablation_scene().to_text())
    wins, pairs = 0, []
    for seed in range(10):
        ate = {}
        for mode in ("direction", "random"):
            cfg = RunConfig()
            cfg.input.path = str(path)
            cfg.input.frames = 15
            cfg.run.single_thread = True
            cfg.run.seed = seed
            cfg.run.out = ""
            cfg.tracker.selection = mode
            # identical budgets: the stopping thresholds are unreachable
            cfg.tracker.budget = 150
            cfg.tracker.h_max = -1e9
            cfg.tracker.lambda_min = 1e12
            res = run_slam(cfg)
            ate[mode] = evaluate_ate((res.timestamps, res.poses),
                                     (res.timestamps, res.gt_poses)).rmse
        wins += ate["direction"] <= ate["random"]
        pairs.append(f"{1000 * ate['direction']:.1f}/{1000 * ate['random']:.1f}")
    assert report("C8 selection ablation", wins >= 8,
                  f"direction ATE <= random ATE in {wins}/10 seeds (>= 8); "
                  f"mm direction/random: {' '.join(pairs)}")


# -- C10 ----------------------------------------------------------------------------


def test_c10_plane_sparsity(report):
    monotone = True
    for seed in range(3):
        scene = room_scene(10, seed=seed)
        pts, nrm, _ = surface_cloud(scene.surfaces, density=100, rng=np.random.default_rng(seed))
        curve = plane_sparsity_experiment(pts, nrm, [1, 2, 5, 10, 20, 50], trials=20,
                                          rng=np.random.default_rng(seed))
        monotone &= bool(np.all(np.diff(curve) >= 0))
    scene = room_scene(10, seed=0)
    pts, nrm, _ = surface_cloud(scene.surfaces, density=100, rng=np.random.default_rng(1))
    frac = plane_sparsity_experiment(pts, nrm, [10], threshold=0.02, trials=20,
                                     rng=np.random.default_rng(0))[0]
    assert report("C10 plane sparsity", monotone and frac >= 0.9,
                  f"curves monotone: {monotone}; 10 planes explain {frac:.3f} of a "
                  f"10-plane room at 2 cm (>= 0.9)")


# -- C11 ----------------------------------------------------------------------------


def test_c11_determinism(tmp_path, report):
    for name in ("a", "b"):
        cfg = RunConfig()
        cfg.input.frames = 6
        cfg.run.single_thread = True
        cfg.run.seed = 11
        run_slam(cfg, out_dir=tmp_path / name)
    same = {f: (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
            for f in ("trajectory.txt", "map.ply")}
    assert report("C11 determinism", all(same.values()),
                  ", ".join(f"{k} identical: {v}" for k, v in same.items()))
