import math

import numpy as np
import pytest

from posebench import geometry as geo
from posebench import synth as sy
from posebench.curation import AmbiguousMotion
from posebench.geometry import Intrinsics, Pose, PoseVector, rotation_from_euler
from posebench.solver import (
    CheiralityAmbiguous,
    Correspondence,
    DegenerateConfiguration,
    EssentialMatrix,
    InsufficientPoints,
    NoConsensus,
    RansacConfig,
    SolverError,
    classify_pair,
    decompose_essential,
    eight_point_essential,
    epipolar_residuals,
    estimate_relative_motion,
    ransac_essential,
    read_correspondences,
    write_correspondences,
)

K = Intrinsics(fx=525.0, fy=525.0, cx=320.0, cy=240.0, width=640, height=480)


def make_rig(angle_deg=30.0, seed=7, n_points=200, scale=1.0):
    """Two orbit cameras plus exact correspondences; returns rig pieces."""
    spec = sy.TrajectorySpec(
        kind="orbit",
        frame_count=2,
        step_deg=angle_deg,
        radius=2.0 * scale,
        center=(0.0, 0.0, 0.0),
        render_depth=False,
    )
    seq = sy.generate_orbit(spec)
    fi, fj = seq.frames
    scene = sy.random_scene(
        n_points=n_points,
        extent=(6.0 * scale, 4.0 * scale, 6.0 * scale),
        avoid=[f.pose.translation for f in seq.frames],
        seed=seed,
    )
    return seq, scene, fi, fj


def rig_matches(angle_deg=30.0, seed=7, noise=0.0, outliers=0.0, n_points=200, scale=1.0):
    seq, scene, fi, fj = make_rig(angle_deg, seed, n_points, scale)
    pts, mask = sy.project_correspondences(scene, fi, fj, noise_sigma=noise,
                                           outlier_fraction=outliers, seed=seed + 1)
    return pts, mask, fi, fj


def gt_essential(fi, fj):
    rel = geo.relative_pose(fi.pose, fj.pose)
    t, r = rel.translation, rel.rotation
    tx = np.array([[0, -t[2], t[1]], [t[2], 0, -t[0]], [-t[1], t[0], 0]])
    e = tx @ r
    return e / np.linalg.norm(e)


def geodesic_deg(r_a, r_b):
    cos = (np.trace(r_a.T @ r_b) - 1.0) / 2.0
    return math.degrees(math.acos(min(1.0, max(-1.0, cos))))


def normalized(pts, which):
    arr = np.asarray([(p.u1, p.v1) if which == "src" else (p.u2, p.v2) for p in pts])
    return (arr - [K.cx, K.cy]) / [K.fx, K.fy]


class TestEightPoint:
    def test_exact_rig_recovers_gt(self):
        pts, _, fi, fj = rig_matches()
        e = eight_point_essential(pts, K, K).matrix
        e_hat = e / np.linalg.norm(e)
        e_gt = gt_essential(fi, fj)
        err = min(np.abs(e_hat - e_gt).max(), np.abs(e_hat + e_gt).max())
        assert err < 1e-9
        res = epipolar_residuals(e, normalized(pts, "src"), normalized(pts, "tgt"))
        assert res.max() < 1e-9

    def test_insufficient_points(self):
        pts, _, _, _ = rig_matches()
        with pytest.raises(InsufficientPoints):
            eight_point_essential(pts[:7], K, K)

    def test_pure_rotation_degenerate(self):
        # Zero-baseline pair: every candidate translation fits, the design
        # matrix loses rank beyond the expected one-dimensional null space.
        pose_a = Pose.identity()
        pose_b = Pose(rotation_from_euler(0.0, math.radians(10.0), 0.0), np.zeros(3))
        scene = sy.random_scene(n_points=100, center=(0, 0, 4), seed=3)
        fa = sy.fr.Frame(index=0, pose=pose_a, intrinsics=K)
        fb = sy.fr.Frame(index=1, pose=pose_b, intrinsics=K)
        pts, _ = sy.project_correspondences(scene, fa, fb, seed=4)
        with pytest.raises(DegenerateConfiguration):
            eight_point_essential(pts, K, K)

    def test_projected_matrix_satisfies_invariants(self):
        pts, _, _, _ = rig_matches()
        e = eight_point_essential(pts, K, K)
        s = np.linalg.svd(e.matrix, compute_uv=False)
        assert s[2] < 1e-6 * s[0]
        assert (s[0] - s[1]) < 1e-6 * s[0]

    def test_essential_type_rejects_full_rank(self):
        with pytest.raises(SolverError):
            EssentialMatrix(np.eye(3))


class TestEpipolarIdentity:
    def test_exact_correspondences_satisfy_constraint(self):
        pts, _, fi, fj = rig_matches()
        e_gt = gt_essential(fi, fj)
        hs = np.column_stack([normalized(pts, "src"), np.ones(len(pts))])
        ht = np.column_stack([normalized(pts, "tgt"), np.ones(len(pts))])
        vals = np.einsum("ni,ij,nj->n", hs, e_gt, ht)
        assert np.abs(vals).max() < 1e-12


class TestRansac:
    def test_noiseless_all_inliers(self):
        pts, _, _, _ = rig_matches()
        _, mask = ransac_essential(pts, K, K, RansacConfig(rng_seed=0))
        assert mask.all()

    def test_planted_outliers_excluded(self):
        pts, outlier_mask, fi, fj = rig_matches(outliers=0.3, seed=12)
        e, mask = ransac_essential(pts, K, K, RansacConfig(rng_seed=1))
        assert not mask[outlier_mask].any(), "a planted outlier survived"
        inliers = [p for p, keep in zip(pts, mask) if keep]
        r, _ = decompose_essential(e, inliers, K, K)
        rel = geo.relative_pose(fi.pose, fj.pose)
        assert geodesic_deg(r, rel.rotation) < 0.5

    def test_all_outliers_no_consensus(self):
        rng = np.random.default_rng(5)
        pts = [
            Correspondence(*rng.uniform(0, 640, size=2), *rng.uniform(0, 480, size=2))
            for _ in range(60)
        ]
        with pytest.raises(NoConsensus):
            ransac_essential(pts, K, K, RansacConfig(rng_seed=2, max_iterations=200))

    def test_deterministic_given_seed(self):
        pts, _, _, _ = rig_matches(noise=1.0, outliers=0.2, seed=9)
        cfg = RansacConfig(rng_seed=42, threshold=0.01)
        e1, m1 = ransac_essential(pts, K, K, cfg)
        e2, m2 = ransac_essential(pts, K, K, cfg)
        np.testing.assert_array_equal(m1, m2)
        np.testing.assert_array_equal(e1.matrix, e2.matrix)

    def test_insufficient(self):
        pts, _, _, _ = rig_matches()
        with pytest.raises(InsufficientPoints):
            ransac_essential(pts[:5], K, K)


class TestDecompose:
    def test_exact_rig(self):
        pts, _, fi, fj = rig_matches()
        e, mask = ransac_essential(pts, K, K, RansacConfig(rng_seed=0))
        r, t = decompose_essential(e, pts, K, K)
        rel = geo.relative_pose(fi.pose, fj.pose)
        assert geodesic_deg(r, rel.rotation) < math.degrees(1e-6)
        t_gt = rel.translation / np.linalg.norm(rel.translation)
        assert float(t @ t_gt) > 1.0 - 1e-9

    def test_negated_translation_fails_cheirality(self):
        # Re-testing all four candidates shows the winner is unique; its
        # mirrored twin leaves points behind the cameras.
        pts, _, fi, fj = rig_matches()
        e, _ = ransac_essential(pts, K, K, RansacConfig(rng_seed=0))
        r, t = decompose_essential(e, pts, K, K)
        from posebench.solver import _triangulate_depths

        xs = normalized(pts, "src")
        xt = normalized(pts, "tgt")
        good = _triangulate_depths(r, t, xs, xt)
        flipped = _triangulate_depths(r, -t, xs, xt)
        n_good = int(np.sum((good[:, 0] > 0) & (good[:, 1] > 0)))
        n_flipped = int(np.sum((flipped[:, 0] > 0) & (flipped[:, 1] > 0)))
        assert n_good > len(pts) / 2
        assert n_flipped < n_good

    def test_single_point_at_infinity_ambiguous(self):
        # Identical normalized points under a sideways translation
        # triangulate at infinity: no candidate gets a strict majority.
        e = EssentialMatrix(
            np.array([[0.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]])
        )  # [t]x R for R = I, t = (1, 0, 0), normalized
        pts = [Correspondence(K.cx, K.cy, K.cx, K.cy)]
        with pytest.raises(CheiralityAmbiguous):
            decompose_essential(e, pts, K, K)

    def test_needs_at_least_one_point(self):
        pts, _, _, _ = rig_matches()
        e, _ = ransac_essential(pts, K, K, RansacConfig(rng_seed=0))
        with pytest.raises(InsufficientPoints):
            decompose_essential(e, [], K, K)


class TestScaleInvariance:
    def test_rescaled_world_same_estimate(self):
        v1, _ = estimate_relative_motion(rig_matches(scale=1.0)[0], K, K, RansacConfig(rng_seed=0))
        v2, _ = estimate_relative_motion(rig_matches(scale=7.0)[0], K, K, RansacConfig(rng_seed=0))
        np.testing.assert_allclose(v1.as_array(), v2.as_array(), atol=1e-9)


class TestClassify:
    def test_yaw_rule_signs(self):
        assert classify_pair(PoseVector(0, 0.2, 0, 0, 0, 0), rule="yaw") == 0
        assert classify_pair(PoseVector(0, -0.2, 0, 0, 0, 0), rule="yaw") == 1

    def test_lateral_rule_signs(self):
        assert classify_pair(PoseVector(0, 0, 0, -0.5, 0, 0), rule="lateral") == 0
        assert classify_pair(PoseVector(0, 0, 0, 0.5, 0, 0), rule="lateral") == 1

    def test_zero_governing_component(self):
        with pytest.raises(AmbiguousMotion):
            classify_pair(PoseVector(0, 0, 0, 0, 0, 1), rule="yaw")
        with pytest.raises(AmbiguousMotion):
            classify_pair(PoseVector(0, 1, 0, 0, 0, 0), rule="lateral")

    def test_unknown_rule(self):
        with pytest.raises(SolverError):
            classify_pair(PoseVector(0, 1, 0, 0, 0, 0), rule="vertical")

    def test_end_to_end_matches_ground_truth(self):
        pts, _, fi, fj = rig_matches()
        v, _ = estimate_relative_motion(pts, K, K, RansacConfig(rng_seed=0))
        gt = geo.pose_vector(fi.pose, fj.pose)
        assert classify_pair(v, "yaw") == classify_pair(gt, "yaw")
        assert classify_pair(v, "lateral") == classify_pair(gt, "lateral")


class TestCorrespondenceIO:
    def test_round_trip(self, tmp_path):
        pts, _, _, _ = rig_matches(n_points=80)
        path = tmp_path / "matches.csv"
        write_correspondences(pts, path)
        back = read_correspondences(path)
        assert back == pts

    def test_header_required(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b,c,d\n1,2,3,4\n")
        with pytest.raises(SolverError):
            read_correspondences(path)
