import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dirslam.frontend.associate import associate
from dirslam.frontend.extract import extract_new_surfels
from dirslam.frontend.synthetic import Surface, SyntheticScene, render_synthetic, three_plane_scene
from dirslam.gibbs import publish_estimates
from dirslam.lie import Pose, rotation_error_deg, se3_exp, se3_log
from dirslam.surfel_map import MapSnapshot, SurfelMap, add_surfels
from dirslam.tracking import (
    Correspondences,
    IcpWorkspace,
    TrackerConfig,
    _first_satisfying,
    entropy_bound,
    icp_residual_jacobian,
    incremental_icp,
    residuals_and_jacobians,
    selection_order,
)

LOG_2PIE = np.log(2 * np.pi * np.e)


def dense_snapshot(scene, pose, budget=6000, seed=0):
    """Noise-free map built from one rendered view, labelled by surface."""
    f0 = render_synthetic(scene, pose)
    smap = SurfelMap()
    pix, n = extract_new_surfels(f0, pose, MapSnapshot.empty(), np.random.default_rng(seed),
                                 budget=budget, radius_px=0)
    ids = add_surfels(smap, f0, pix, pose, n)
    smap.label[ids] = smap.gt_segment[ids]
    return f0, smap, publish_estimates(smap)


@pytest.fixture(scope="module")
def corner():
    scene = three_plane_scene(noise=False)
    p0 = scene.pose(0)
    f0, smap, snap = dense_snapshot(scene, p0)
    return scene, p0, f0, snap


def _corr(snap, frame, pose):
    b = associate(snap, frame, pose)
    return b, Correspondences.from_batch(snap, b)


def test_zero_residuals_at_ground_truth(corner):
    scene, p0, f0, snap = corner
    _, c = _corr(snap, f0, p0)
    e, _, valid = residuals_and_jacobians(c, p0, f0)
    assert valid[:, 1].mean() > 0.9
    np.testing.assert_allclose(e[valid], 0.0, atol=1e-9)
    # another view: the planes are still exact
    f1 = render_synthetic(scene, scene.pose(3))
    _, c1 = _corr(snap, f1, scene.pose(3))
    e1, _, _ = residuals_and_jacobians(c1, scene.pose(3), f1)
    np.testing.assert_allclose(e1[:, 0], 0.0, atol=1e-9)


def test_jacobian_matches_finite_differences(corner):
    scene, p0, _, snap = corner
    pose = scene.pose(2)
    f = render_synthetic(scene, pose)
    _, c = _corr(snap, f, pose)
    c = c.take(np.arange(0, len(c), 7))
    e, J, valid = residuals_and_jacobians(c, pose, f)
    h = 1e-6
    num = np.zeros_like(J)
    both = valid.copy()
    for k in range(6):
        d = np.zeros(6)
        d[k] = h
        ep, _, vp = residuals_and_jacobians(c, pose.retract(d), f)
        em, _, vm = residuals_and_jacobians(c, pose.retract(-d), f)
        num[:, :, k] = (ep - em) / (2 * h)
        both &= vp & vm
    err = np.linalg.norm(J - num, axis=2)
    scale = np.maximum(np.linalg.norm(J, axis=2), 1e-12)
    rel = (err / scale)[both]
    # rows whose stencil crosses a bilinear cell edge have a kinked derivative
    assert np.mean(rel < 1e-5) > 0.99
    assert np.all((err / scale)[both[:, 0], 0] < 1e-5)


def test_single_row_helper_omits_photo_outside_image(corner):
    _, p0, f0, snap = corner
    _, c = _corr(snap, f0, p0)
    e, J = icp_residual_jacobian(c.take([0]), p0, f0)
    assert e.shape == (2,) and J.shape == (2, 6)
    far = Pose(p0.R, p0.t + p0.R @ np.array([100.0, 0.0, 0.0]))
    e, J = icp_residual_jacobian(c.take([0]), far, f0)
    assert e.shape == (1,)


def test_single_plane_is_rank_deficient():
    scene = SyntheticScene([Surface([0, 0, 2.0], [0, 0, -1], [1, 0, 0], 3.0, 3.0)])
    f, _, snap = dense_snapshot(scene, Pose.identity(), budget=2000)
    _, c = _corr(snap, f, Pose.identity())
    _, J, valid = residuals_and_jacobians(c, Pose.identity(), f, TrackerConfig(photometric=False))
    A = np.einsum("ni,nj->ij", J[:, 0], J[:, 0])
    assert np.linalg.matrix_rank(A, tol=1e-9 * np.abs(A).max()) < 6


def test_zero_motion_identity_update(corner):
    _, p0, f0, snap = corner
    r = incremental_icp(f0, snap, p0)
    assert not r.lost
    assert np.linalg.norm(se3_log(p0.inverse() @ r.pose)) < 1e-8


def test_recovers_small_motion(corner):
    scene, p0, _, snap = corner
    delta = se3_exp(np.r_[np.deg2rad(0.5) * np.array([0.6, 0.0, 0.8]),
                          0.005 * np.array([0.0, 0.6, 0.8])])
    truth = p0 @ delta
    f = render_synthetic(scene, truth)
    r = incremental_icp(f, snap, p0)
    assert not r.lost
    assert np.linalg.norm(r.pose.t - truth.t) < 1e-4
    assert rotation_error_deg(r.pose.R, truth.R) < 0.01
    np.testing.assert_allclose(r.cov, r.cov.T)
    assert np.linalg.eigvalsh(r.cov)[0] > 0


def test_single_segment_lost_or_degenerate():
    scene = SyntheticScene([Surface([0, 0, 2.0], [0, 0, -1], [1, 0, 0], 3.0, 3.0, "checker")])
    f, _, snap = dense_snapshot(scene, Pose.identity(), budget=2000)
    r = incremental_icp(f, snap, Pose.identity())
    assert r.lost or r.degenerate


def test_empty_snapshot_is_lost(corner):
    _, p0, f0, _ = corner
    r = incremental_icp(f0, MapSnapshot.empty(), p0)
    assert r.lost and r.pose.t.tolist() == p0.t.tolist()


def test_cost_does_not_increase(corner):
    scene, p0, _, snap = corner
    truth = p0 @ se3_exp(np.array([0.004, -0.003, 0.002, 0.01, -0.008, 0.006]))
    f = render_synthetic(scene, truth)
    cfg = TrackerConfig(levels=1, photometric=False)
    b, c = _corr(snap, f, p0)
    r = incremental_icp(f, snap, p0, cfg)
    e0, _, _ = residuals_and_jacobians(c, p0, f, cfg)
    e1, _, _ = residuals_and_jacobians(c, r.pose, f, cfg)
    assert (e1[:, 0] ** 2).sum() < (e0[:, 0] ** 2).sum()


# -- entropy bound ------------------------------------------------------------------


def test_entropy_bound_identity():
    assert entropy_bound(np.eye(6)) == pytest.approx(3 * LOG_2PIE, abs=1e-12)
    assert entropy_bound(np.eye(6)) == pytest.approx(8.5136312, abs=1e-6)


def test_entropy_bound_scaled():
    # |4 I_6| = 4^6, so half its log is 3 log 4
    assert entropy_bound(4 * np.eye(6)) == pytest.approx(3 * LOG_2PIE - 3 * np.log(4), abs=1e-12)


def test_entropy_bound_singular_is_inf():
    v = np.arange(6.0)
    assert entropy_bound(np.outer(v, v)) == np.inf
    assert entropy_bound(np.zeros((6, 6))) == np.inf


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_entropy_non_increasing_under_rank_one_updates(seed):
    rng = np.random.default_rng(seed)
    ws = IcpWorkspace()
    ws.add(np.eye(6), np.zeros(6))
    last = ws.entropy
    for _ in range(20):
        ws.add(rng.normal(size=(1, 6)), rng.normal(size=1))
        assert ws.entropy <= last + 1e-12
        last = ws.entropy
    np.testing.assert_allclose(ws.JTJ, ws.JTJ.T)
    assert ws.lambda_min >= 0


# -- selection ----------------------------------------------------------------------


def test_round_robin_order():
    labels = np.array([0, 0, 0, 1, 1, 2])
    grad = np.array([0.1, 0.9, 0.5, 0.2, 0.7, 0.3])
    order = selection_order(labels, grad)
    assert order.tolist() == [1, 4, 5, 2, 3, 0]


def test_random_order_is_permutation():
    order = selection_order(np.zeros(50, int), np.zeros(50), "random", np.random.default_rng(0))
    assert sorted(order.tolist()) == list(range(50))
    with pytest.raises(ValueError):
        selection_order(np.zeros(3, int), np.zeros(3), "greedy")


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(-40.0, -20.0), st.floats(1.0, 1e4))
def test_first_satisfying_prefix_is_minimal(seed, h_max, lam):
    rng = np.random.default_rng(seed)
    J = rng.normal(scale=30.0, size=(300, 6))
    cum = np.cumsum(J[:, :, None] * J[:, None, :], axis=0)
    cfg = TrackerConfig(h_max=h_max, lambda_min=lam)

    def ok(A):
        return entropy_bound(A) <= h_max and np.linalg.eigvalsh(A)[0] >= lam

    scan = next((k + 1 for k in range(300) if ok(cum[k])), None)
    assert _first_satisfying(cum, cfg) == scan
