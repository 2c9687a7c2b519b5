import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sganvo.evalkit import (
    DepthMetrics,
    MetricReport,
    OdomMetrics,
    align_scale_translation,
    ate_snippets,
    depth_metrics,
    eigen_crop_mask,
    kitti_drift,
    odometry_report,
    read_kitti_poses,
    relative_from_trajectory,
    snippet_ate,
    trajectory_from_poses,
    trajectory_xz_csv,
    write_kitti_poses,
    write_reports_csv,
)
from sganvo.geometry import pose_matrix

# -- depth ------------------------------------------------------------------

def test_perfect_depth():
    gt = np.random.default_rng(0).uniform(1, 70, size=(20, 30))
    assert depth_metrics(gt, gt).as_tuple() == (0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0)


def test_doubled_depth():
    gt = np.random.default_rng(1).uniform(1, 30, size=(10, 10))
    m = depth_metrics(2 * gt, gt)
    assert m.abs_rel == pytest.approx(1.0)
    assert m.delta1 == m.delta2 == m.delta3 == 0.0
    assert m.rmse_log == pytest.approx(np.log(2))


def test_two_pixel_example():
    m = depth_metrics(np.array([10.0, 10.0]), np.array([10.0, 20.0]))
    assert m.abs_rel == 0.25
    assert m.sq_rel == 2.5
    assert m.rmse == pytest.approx(np.sqrt(50.0))
    assert (m.delta1, m.delta2, m.delta3) == (0.5, 0.5, 0.5)  # ratio 2 > 1.25**3


def test_median_scaling_removes_global_scale():
    rng = np.random.default_rng(2)
    gt = rng.uniform(1, 50, size=(15, 15))
    pred = gt * rng.uniform(0.9, 1.1, size=gt.shape)
    a = depth_metrics(pred, gt, median_scaling=True)
    b = depth_metrics(pred * 7.3, gt, median_scaling=True)
    np.testing.assert_allclose(a.as_tuple(), b.as_tuple(), rtol=1e-12)


def test_gt_mask_and_cap():
    gt = np.array([0.0, 5.0, 100.0])
    m = depth_metrics(np.array([3.0, 5.0, 1.0]), gt)
    assert m.abs_rel == 0.0  # only the 5 m pixel is valid under the 80 m cap
    with pytest.raises(ValueError, match="empty mask"):
        depth_metrics(np.ones(3), np.zeros(3))
    with pytest.raises(ValueError, match="shape mismatch"):
        depth_metrics(np.ones(3), np.ones(4))


def test_eigen_crop():
    m = eigen_crop_mask(375, 1242)
    assert m.shape == (375, 1242)
    assert not m[0].any() and m[200, 600]


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_delta_thresholds_are_monotone(seed):
    rng = np.random.default_rng(seed)
    gt = rng.uniform(0.5, 79, size=rng.integers(1, 50))
    pred = gt * np.exp(rng.normal(0, 0.5, size=gt.shape))
    m = depth_metrics(pred, gt)
    assert 0.0 <= m.delta1 <= m.delta2 <= m.delta3 <= 1.0
    assert min(m.abs_rel, m.sq_rel, m.rmse, m.rmse_log) >= 0.0


# -- trajectories -----------------------------------------------------------

def test_trajectory_accumulation():
    traj = trajectory_from_poses([[1, 0, 0, 0, 0, 0]] * 5)
    assert len(traj) == 6
    np.testing.assert_array_equal(traj[0], np.eye(4))
    np.testing.assert_allclose(traj[-1][:3, 3], [5, 0, 0])


def test_relative_roundtrip():
    rng = np.random.default_rng(3)
    rels = [pose_matrix(np.r_[rng.normal(size=3), 0.1 * rng.normal(size=3)]) for _ in range(6)]
    back = relative_from_trajectory(trajectory_from_poses(rels))
    for a, b in zip(rels, back):
        np.testing.assert_allclose(a, b, atol=1e-12)


def straight(n, step=1.0, yaw=0.0):
    return trajectory_from_poses([[0, 0, step, 0, yaw, 0]] * (n - 1))


def test_rotation_angle_near_zero_and_large():
    from sganvo.evalkit import _rotation_angle

    for a in (1e-9, 0.3, 3.0):
        assert _rotation_angle(pose_matrix([0, 0, 0, 0, a, 0])) == pytest.approx(a, rel=1e-7)


def test_drift_of_self_is_zero():
    traj = straight(300, 1.0, 0.002)
    assert kitti_drift(traj, traj) == (0.0, 0.0)


def test_drift_of_inflated_trajectory():
    # steps a hair over 1 m make every segment end exactly at its nominal length
    step = 1.0000001
    gt = straight(900, step)
    pred = straight(900, step * 1.01)
    t_rel, r_rel = kitti_drift(pred, gt)
    assert t_rel == pytest.approx(1.0, abs=1e-4)
    assert r_rel == pytest.approx(0.0, abs=1e-9)


def test_drift_uses_every_segment_length(monkeypatch):
    import sganvo.evalkit as ek

    seen = []
    real = ek.invert_transform
    monkeypatch.setattr(ek, "invert_transform", lambda T: (seen.append(1), real(T))[1])
    traj = straight(900, 1.0000001)
    kitti_drift(traj, traj, step=10000)  # only the first frame starts segments
    assert len(seen) == 2 * 8  # two segment deltas per admitted length


def test_drift_undefined_for_short_paths():
    traj = straight(50, 1.0)
    assert kitti_drift(traj, traj) == (None, None)
    with pytest.raises(ValueError, match="predicted vs"):
        kitti_drift(traj, traj[:-1])


def brute_force_ate(p, g):
    # independent least-squares fit of [s, c] via a stacked linear system
    n = len(p)
    A = np.zeros((3 * n, 4))
    A[:, 0] = p.reshape(-1)
    for k in range(3):
        A[k::3, 1 + k] = 1.0
    sol, *_ = np.linalg.lstsq(A, g.reshape(-1), rcond=None)
    resid = A @ sol - g.reshape(-1)
    return np.sqrt(np.mean(np.sum(resid.reshape(n, 3) ** 2, axis=1)))


def random_trajectory(n, seed):
    rng = np.random.default_rng(seed)
    return trajectory_from_poses([np.r_[rng.normal(0, 0.3, 2), rng.uniform(0.5, 1.5), rng.normal(0, 0.05, 3)]
                                  for _ in range(n - 1)])


def test_ate_of_self_and_scaled_self():
    traj = random_trajectory(12, 0)
    assert ate_snippets(traj, traj) == (0.0, 0.0)
    scaled = [T.copy() for T in traj]
    for T in scaled:
        T[:3, 3] *= 2.0
    mean, std = ate_snippets(scaled, traj, 5)
    assert mean < 1e-12 and std < 1e-12


def test_ate_matches_brute_force_alignment():
    gt = random_trajectory(6, 1)
    pred = random_trajectory(6, 2)
    p = np.array([(np.linalg.inv(pred[0]) @ T)[:3, 3] for T in pred[:5]])
    g = np.array([(np.linalg.inv(gt[0]) @ T)[:3, 3] for T in gt[:5]])
    assert snippet_ate(pred[:5], gt[:5]) == pytest.approx(brute_force_ate(p, g), rel=1e-10)
    off = ate_snippets(gt[1:], gt[:-1], 3)[0]
    assert off > 0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.1, 10.0))
def test_ate_invariant_to_similarity_of_prediction(seed, s):
    gt = random_trajectory(7, seed)
    pred = random_trajectory(7, seed + 1)
    G = pose_matrix([1.0, -2.0, 0.5, 0.1, 0.2, -0.3])
    moved = []
    for T in pred:
        M = G @ T
        M[:3, 3] *= s
        moved.append(M)
    a = ate_snippets(pred, gt, 5)
    b = ate_snippets(moved, gt, 5)
    np.testing.assert_allclose(a, b, rtol=1e-7, atol=1e-9)


def test_align_scale_translation_closed_form():
    p = np.random.default_rng(4).normal(size=(5, 3))
    s, c = align_scale_translation(p, 3.0 * p + [1, 2, 3])
    assert s == pytest.approx(3.0) and np.allclose(c, [1, 2, 3])


def test_snippet_longer_than_trajectory():
    traj = straight(3)
    with pytest.raises(ValueError, match="exceeds"):
        ate_snippets(traj, traj, 5)
    assert [m.snippet for m in odometry_report(traj, traj)] == [3]


# -- outputs ----------------------------------------------------------------

def test_report_outputs(tmp_path):
    r = MetricReport("run", DepthMetrics(0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7),
                     [OdomMetrics(None, None, 0.01, 0.002, 5)], ["short"])
    text = r.to_table()
    assert "Abs Rel" in text and "t_rel n/a" in text and "note: short" in text
    path = write_reports_csv([r, MetricReport("other")], tmp_path / "m.csv")
    lines = path.read_text().splitlines()
    assert lines[0].startswith("label,abs_rel") and len(lines) == 3


def test_kitti_pose_file_roundtrip(tmp_path):
    traj = random_trajectory(5, 7)
    write_kitti_poses(traj, tmp_path / "p.txt")
    back = read_kitti_poses(tmp_path / "p.txt")
    for a, b in zip(traj, back):
        np.testing.assert_allclose(a, b, rtol=1e-11, atol=1e-13)
    (tmp_path / "bad.txt").write_text("1 2 3\n")
    with pytest.raises(ValueError, match="12 values"):
        read_kitti_poses(tmp_path / "bad.txt")


def test_xz_csv():
    text = trajectory_xz_csv(straight(3))
    assert text.splitlines() == ["frame,x,z", "0,0.0,0.0", "1,0.0,1.0", "2,0.0,2.0"]
