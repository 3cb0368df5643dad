import numpy as np
import pytest
from django.test import SimpleTestCase
from scipy.spatial.transform import Rotation

from evaluation.services import pose_error
from geometry.lie import compose_right, hat, rotation_angle_deg, se3_exp, so3_exp, so3_log
from geometry.models import DltSolution
from geometry.serializers import read_pose, read_poses, write_pose, write_poses
from geometry.services import (
    assemble_normal_matrix,
    build_rows,
    build_system,
    make_correspondences,
    normalize_pixel,
    procrustes_regularize,
    ransac_consensus,
    ransac_dlt,
    scene_correspondences,
    solve_smallest_eigvec,
    wdlt_solve,
    weighted_dlt,
)
from sclocalize.exceptions import (
    AsymmetricMatrixError,
    ConsensusError,
    DegenerateConfigurationError,
    DimensionMismatchError,
    InsufficientCorrespondencesError,
    ProcrustesError,
)
from simulator.models import CameraIntrinsics, Pose, SceneParams
from simulator.services import make_rng, scene_from_params


def unit_vec(pose: Pose):
    vec = pose.vec()
    return vec / np.linalg.norm(vec)


class NormalizePixelTests(SimpleTestCase):
    def setUp(self):
        self.intr = CameraIntrinsics(525.0, 525.0, 320.0, 240.0, 640, 480)

    def test_principal_point_maps_to_origin(self):
        np.testing.assert_array_equal(normalize_pixel([320.0, 240.0], self.intr), [0.0, 0.0])

    def test_unit_focal_offset(self):
        np.testing.assert_allclose(normalize_pixel([845.0, 240.0], self.intr), [1.0, 0.0])

    def test_batch(self):
        out = normalize_pixel(np.array([[320.0, 240.0], [320.0, 765.0]]), self.intr)
        np.testing.assert_allclose(out, [[0.0, 0.0], [0.0, 1.0]])


class BuildRowsTests(SimpleTestCase):
    def test_origin_correspondence(self):
        rows = build_rows([0.0, 0.0, 0.0, 0.0, 0.0])
        expected = np.zeros((2, 12))
        expected[0, 3] = 1.0
        expected[1, 7] = 1.0
        np.testing.assert_array_equal(rows, expected)

    def test_hand_expansion(self):
        rows = build_rows([1.0, 2.0, 3.0, 0.5, -0.25])
        np.testing.assert_allclose(rows[0], [1, 2, 3, 1, 0, 0, 0, 0, -0.5, -1.0, -1.5, -0.5])
        np.testing.assert_allclose(rows[1], [0, 0, 0, 0, 1, 2, 3, 1, 0.25, 0.5, 0.75, 0.25])

    def test_system_stacks_row_pairs(self):
        rng = make_rng(0)
        data = rng.normal(size=(9, 5))
        system = build_system(make_correspondences(data[:, :3], data[:, 3:], CameraIntrinsics(1, 1, 0, 0, 1, 1)))
        expected = np.vstack([build_rows(c) for c in data])
        np.testing.assert_allclose(system.X, expected, atol=1e-15)
        self.assertEqual(system.n, 9)

    def test_true_pose_is_null_vector(self):
        scene = scene_from_params(SceneParams(n_points=100), seed=1)
        system = build_system(scene_correspondences(scene))
        self.assertLess(np.abs(system.X @ unit_vec(scene.gt_pose)).max(), 1e-10)


class NormalMatrixTests(SimpleTestCase):
    def setUp(self):
        rng = make_rng(3)
        self.system = build_system(make_correspondences(
            rng.normal(size=(8, 3)), rng.normal(size=(8, 2)), CameraIntrinsics(1, 1, 0, 0, 1, 1)
        ))
        self.w = rng.uniform(0.0, 1.0, 8)

    def test_uniform_weights_give_gram_matrix(self):
        np.testing.assert_allclose(assemble_normal_matrix(self.system, np.ones(8)), self.system.X.T @ self.system.X)

    def test_matches_triple_loop(self):
        X = self.system.X
        expected = np.zeros((12, 12))
        for r in range(X.shape[0]):
            for a in range(12):
                for b in range(12):
                    expected[a, b] += self.w[r // 2] * X[r, a] * X[r, b]
        np.testing.assert_allclose(assemble_normal_matrix(self.system, self.w), expected, atol=1e-12)

    def test_zero_weights_mask_points(self):
        w = np.ones(8)
        w[[1, 4]] = 0.0
        keep = [i for i in range(8) if i not in (1, 4)]
        rows = self.system.row_pairs()[keep].reshape(-1, 12)
        np.testing.assert_allclose(assemble_normal_matrix(self.system, w), rows.T @ rows, atol=1e-12)

    def test_weight_length_mismatch(self):
        with self.assertRaises(DimensionMismatchError):
            assemble_normal_matrix(self.system, np.ones(7))


class SmallestEigvecTests(SimpleTestCase):
    def test_random_symmetric_matrix(self):
        rng = make_rng(11)
        A = rng.normal(size=(30, 12))
        M = A.T @ A
        sol = solve_smallest_eigvec(M)
        self.assertAlmostEqual(np.linalg.norm(sol.vec_t), 1.0, places=12)
        residual = np.linalg.norm(M @ sol.vec_t - sol.smallest_eigenvalue * sol.vec_t)
        self.assertLessEqual(residual, 1e-8 * np.linalg.norm(M))
        self.assertGreater(sol.vec_t[np.argmax(np.abs(sol.vec_t))], 0.0)

    def test_zero_noise_scene_recovers_pose_vector(self):
        scene = scene_from_params(SceneParams(n_points=100), seed=1)
        M = assemble_normal_matrix(build_system(scene_correspondences(scene)), np.ones(len(scene)))
        sol = solve_smallest_eigvec(M)
        self.assertLessEqual(sol.smallest_eigenvalue, 1e-10 * np.trace(M))
        t = unit_vec(scene.gt_pose)
        self.assertLess(min(np.linalg.norm(sol.vec_t - t), np.linalg.norm(sol.vec_t + t)), 1e-6)

    def test_duplicate_smallest_eigenvalue_is_degenerate(self):
        with self.assertRaises(DegenerateConfigurationError):
            solve_smallest_eigvec(np.eye(12))

    def test_rejects_asymmetric_matrix(self):
        M = np.diag(np.arange(1.0, 13.0))
        M[0, 1] = 1.0
        with self.assertRaises(AsymmetricMatrixError):
            solve_smallest_eigvec(M)


class ProcrustesTests(SimpleTestCase):
    def setUp(self):
        self.scene = scene_from_params(SceneParams(n_points=30), seed=2)
        self.corrs = scene_correspondences(self.scene)
        self.w = np.ones(len(self.scene))

    def solution(self, vec):
        return DltSolution(vec_t=vec, smallest_eigenvalue=0.0, eigenvalues=np.zeros(12), eigenvectors=np.eye(12))

    def test_scale_invariance(self):
        for scale in (0.37, -0.37, 12.0):
            pose = procrustes_regularize(self.solution(scale * self.scene.gt_pose.vec()), self.w, self.corrs)
            np.testing.assert_allclose(pose.rotation, self.scene.gt_pose.rotation, atol=1e-9)
            np.testing.assert_allclose(pose.translation, self.scene.gt_pose.translation, atol=1e-9)

    def test_degenerate_rotation_block(self):
        with self.assertRaises(ProcrustesError):
            procrustes_regularize(self.solution(np.zeros(12)), self.w, self.corrs)

    def test_tied_weights_vote_on_the_sign(self):
        gt = self.scene.gt_pose
        coords = self.scene.predicted_coords.copy()
        # First correspondence sits three metres behind the true camera
        coords[0] = gt.rotation.T @ (np.array([0.1, 0.2, -3.0]) - gt.translation)
        corrs = make_correspondences(coords, self.scene.pixel_obs, self.scene.intrinsics)
        for scale in (1.0, -1.0):
            pose = procrustes_regularize(self.solution(scale * gt.vec()), self.w, corrs)
            np.testing.assert_allclose(pose.rotation, gt.rotation, atol=1e-9)
            np.testing.assert_allclose(pose.translation, gt.translation, atol=1e-9)


class WeightedDltTests(SimpleTestCase):
    """Weighted DLT end to end"""

    def setUp(self):
        self.clean = scene_from_params(SceneParams(n_points=100), seed=1)
        self.outliers = scene_from_params(SceneParams(n_points=100, outlier_fraction=0.3), seed=1)
        self.noisy = scene_from_params(
            SceneParams(n_points=100, outlier_fraction=0.3, pixel_noise_sigma=1.0), seed=1
        )

    def solve(self, scene, w):
        return wdlt_solve(scene.predicted_coords, scene.pixel_obs, w, scene.intrinsics)

    def test_exact_recovery(self):
        error = pose_error(self.solve(self.clean, np.ones(100)), self.clean.gt_pose)
        self.assertLess(error.translation_error, 1e-6)
        self.assertLess(error.rotation_error, 1e-6)

    def test_masking_equivalence(self):
        inliers = ~self.outliers.outlier_mask
        oracle = self.solve(self.outliers, inliers.astype(float))
        subset = wdlt_solve(
            self.outliers.predicted_coords[inliers], self.outliers.pixel_obs[inliers],
            np.ones(inliers.sum()), self.outliers.intrinsics,
        )
        error = pose_error(oracle, subset)
        self.assertLess(error.translation_error, 1e-8)
        self.assertLess(error.rotation_error, 1e-6)

    def test_uniform_weights_break_under_outliers(self):
        oracle = pose_error(self.solve(self.noisy, (~self.noisy.outlier_mask).astype(float)), self.noisy.gt_pose)
        uniform = pose_error(self.solve(self.noisy, np.ones(100)), self.noisy.gt_pose)
        self.assertGreaterEqual(uniform.translation_error, 10.0 * oracle.translation_error)

    def test_weight_scaling_invariance(self):
        w = make_rng(5).uniform(0.1, 1.0, 100)
        base = self.solve(self.noisy, w)
        scaled = self.solve(self.noisy, 7.3 * w)
        np.testing.assert_allclose(scaled.rotation, base.rotation, atol=1e-8)
        np.testing.assert_allclose(scaled.translation, base.translation, atol=1e-8)

    def test_output_pose_is_valid(self):
        w = make_rng(6).uniform(0.05, 1.0, 100)
        result = weighted_dlt(scene_correspondences(self.noisy), w)
        R = result.pose.rotation
        self.assertLess(np.linalg.norm(R.T @ R - np.eye(3)), 1e-9)
        self.assertAlmostEqual(np.linalg.det(R), 1.0, delta=1e-9)
        anchor = self.noisy.predicted_coords[np.argmax(w)]
        self.assertGreater(result.pose.transform(anchor)[0, 2], 0.0)

    def test_six_correspondences_rejected(self):
        with self.assertRaisesRegex(InsufficientCorrespondencesError, 'N > 6'):
            wdlt_solve(self.clean.predicted_coords[:6], self.clean.pixel_obs[:6], np.ones(6), self.clean.intrinsics)

    def test_too_few_active_weights_rejected(self):
        w = np.zeros(100)
        w[:6] = 1.0
        with self.assertRaises(InsufficientCorrespondencesError):
            self.solve(self.clean, w)

    def test_mismatched_inputs(self):
        with self.assertRaises(DimensionMismatchError):
            wdlt_solve(self.clean.predicted_coords, self.clean.pixel_obs[:50], np.ones(100), self.clean.intrinsics)


class RansacTests(SimpleTestCase):
    def setUp(self):
        self.scene = scene_from_params(
            SceneParams(n_points=100, outlier_fraction=0.3, pixel_noise_sigma=0.5), seed=1
        )

    def run_ransac(self, seed=1, iterations=200, threshold=5.0):
        s = self.scene
        return ransac_consensus(s.predicted_coords, s.pixel_obs, s.intrinsics, iterations, threshold, seed)

    def test_consensus_excludes_outliers(self):
        result = self.run_ransac()
        self.assertFalse(np.any(result.inliers & self.scene.outlier_mask))
        self.assertGreater(result.n_inliers, 60)
        self.assertLess(pose_error(result.pose, self.scene.gt_pose).translation_error, 0.05)

    def test_deterministic_for_seed(self):
        s = self.scene
        first = ransac_dlt(s.predicted_coords, s.pixel_obs, s.intrinsics, 100, 5.0, seed=4)
        second = ransac_dlt(s.predicted_coords, s.pixel_obs, s.intrinsics, 100, 5.0, seed=4)
        self.assertEqual(first, second)

    def test_no_consensus(self):
        with self.assertRaises(ConsensusError):
            self.run_ransac(iterations=20, threshold=1e-9)


class LieTests(SimpleTestCase):
    def test_hat_is_cross_product(self):
        a, b = np.array([0.3, -1.2, 2.0]), np.array([1.0, 0.5, -0.7])
        np.testing.assert_allclose(hat(a) @ b, np.cross(a, b))

    def test_so3_round_trip(self):
        omega = np.array([0.2, -0.4, 0.1])
        np.testing.assert_allclose(so3_log(so3_exp(omega)), omega, atol=1e-12)

    def test_se3_pure_translation(self):
        T = se3_exp(np.array([0.0, 0.0, 0.0, 1.0, 2.0, 3.0]))
        np.testing.assert_allclose(T[:3, 3], [1.0, 2.0, 3.0])
        np.testing.assert_allclose(T[:3, :3], np.eye(3))

    def test_compose_right_zero_is_identity(self):
        pose = Pose(Rotation.from_rotvec([0.1, 0.2, 0.3]).as_matrix(), [1.0, 2.0, 3.0])
        np.testing.assert_allclose(compose_right(pose, np.zeros(6)).matrix, pose.matrix, atol=1e-14)

    def test_rotation_angle(self):
        self.assertAlmostEqual(rotation_angle_deg(Rotation.from_euler('z', 10, degrees=True).as_matrix()), 10.0, delta=1e-9)
        self.assertAlmostEqual(rotation_angle_deg(np.diag([1.0, -1.0, -1.0])), 180.0, delta=1e-9)


def test_pose_file_round_trip(tmp_path):
    pose = Pose(Rotation.from_rotvec([0.1, -0.2, 0.3]).as_matrix(), [0.5, -1.0, 4.0])
    write_pose(pose, tmp_path / 'pose.json')
    assert read_pose(tmp_path / 'pose.json') == pose
    assert read_poses(tmp_path / 'pose.json') == [pose]


def test_pose_list_round_trip(tmp_path):
    poses = [Pose.identity(), Pose(Rotation.from_rotvec([0.0, 0.0, 1.0]).as_matrix(), [1.0, 0.0, 0.0])]
    write_poses(poses, tmp_path / 'poses.json')
    assert read_poses(tmp_path / 'poses.json') == poses


@pytest.mark.parametrize('seed', range(5))
def test_oracle_weights_never_worse_than_uniform(seed):
    scene = scene_from_params(SceneParams(n_points=80, outlier_fraction=0.2, pixel_noise_sigma=1.0), seed=seed)
    solve = lambda w: wdlt_solve(scene.predicted_coords, scene.pixel_obs, w, scene.intrinsics)
    oracle = pose_error(solve((~scene.outlier_mask).astype(float)), scene.gt_pose)
    uniform = pose_error(solve(np.ones(len(scene))), scene.gt_pose)
    assert oracle.translation_error <= uniform.translation_error
