import json
from io import StringIO

import numpy as np
import pytest
from django.core.management import call_command
from django.test import SimpleTestCase
from scipy.spatial.transform import Rotation

from evaluation.services import pose_error
from geometry.serializers import read_pose, write_pose
from geometry.services import wdlt_solve
from refinement.models import PoseDelta, RefineConfig
from refinement.services import apply_delta, find_inliers, lm_refine, reprojection_cost, reprojection_jacobian
from sclocalize.exceptions import ConfigurationError, InsufficientInliersError
from simulator.models import CameraIntrinsics, Pose, SceneParams
from simulator.serializers import write_scene
from simulator.services import make_rng, scene_from_params


class FindInliersTests(SimpleTestCase):
    def setUp(self):
        self.intr = CameraIntrinsics(500.0, 500.0, 320.0, 240.0, 640, 480)
        self.coords = np.array([[0.0, 0.0, 2.0], [0.01, 0.0, 1.0], [0.0, 0.0, -2.0], [0.1, 0.0, 1.0]])
        self.pixels = np.array([[320.0, 240.0], [320.0, 240.0], [320.0, 240.0], [320.0, 240.0]])

    def test_threshold_is_inclusive(self):
        # Errors 0, 5, behind, 50 px
        inliers = find_inliers(Pose.identity(), self.coords, self.pixels, self.intr, 5.0)
        np.testing.assert_array_equal(inliers, [0, 1])

    def test_infinite_threshold_keeps_points_in_front(self):
        inliers = find_inliers(Pose.identity(), self.coords, self.pixels, self.intr, np.inf)
        np.testing.assert_array_equal(inliers, [0, 1, 3])

    def test_empty_selection_is_valid(self):
        self.assertEqual(len(find_inliers(Pose.identity(), self.coords[2:3], self.pixels[2:3], self.intr, 1.0)), 0)

    def test_gt_pose_excludes_outliers(self):
        scene = scene_from_params(SceneParams(n_points=100, outlier_fraction=0.3), seed=1)
        inliers = find_inliers(scene.gt_pose, scene.predicted_coords, scene.pixel_obs, scene.intrinsics, 10.0)
        self.assertFalse(scene.outlier_mask[inliers].any())
        self.assertEqual(len(inliers), 70)


class PoseDeltaTests(SimpleTestCase):
    def test_zero_delta_is_identity(self):
        pose = Pose(Rotation.from_rotvec([0.2, 0.1, -0.3]).as_matrix(), [1.0, 2.0, 3.0])
        moved = apply_delta(pose, np.zeros(6))
        np.testing.assert_allclose(moved.matrix, pose.matrix, atol=1e-12)

    def test_translation_part_moves_camera_frame(self):
        moved = apply_delta(Pose.identity(), [0.0, 0.0, 0.0, 0.5, 0.0, 0.0])
        np.testing.assert_allclose(moved.translation, [0.5, 0.0, 0.0], atol=1e-12)

    def test_non_finite_delta_rejected(self):
        with self.assertRaises(ConfigurationError):
            PoseDelta([0.0, np.inf, 0.0, 0.0, 0.0, 0.0])


def test_jacobian_matches_finite_differences():
    rng = make_rng(3)
    intr = CameraIntrinsics(525.0, 525.0, 320.0, 240.0, 640, 480)
    for _ in range(10):
        pose = Pose(Rotation.from_rotvec(rng.normal(0.0, 0.3, 3)).as_matrix(), rng.normal(0.0, 0.5, 3))
        camera = np.column_stack([rng.uniform(-1, 1, 12), rng.uniform(-1, 1, 12), rng.uniform(2, 6, 12)])
        coords = (camera - pose.translation) @ pose.rotation

        def pixels(xi):
            return intr.project(apply_delta(pose, xi).transform(coords))[0].reshape(-1)

        h = 1e-6
        numeric = np.column_stack([
            (pixels(h * e) - pixels(-h * e)) / (2 * h) for e in np.eye(6)
        ])
        analytic = reprojection_jacobian(pose, intr, coords)
        np.testing.assert_allclose(analytic, numeric, rtol=1e-5, atol=1e-5 * np.abs(numeric).max())


class LevenbergMarquardtTests(SimpleTestCase):
    """Inlier re-selection plus damped Gauss-Newton"""

    def setUp(self):
        self.scene = scene_from_params(SceneParams(n_points=100), seed=1)

    def refine(self, pose, scene=None, cfg=None):
        scene = scene or self.scene
        return lm_refine(pose, scene.predicted_coords, scene.pixel_obs, scene.intrinsics, cfg or RefineConfig())

    def test_ground_truth_is_a_fixed_point(self):
        result = self.refine(self.scene.gt_pose)
        self.assertEqual(result.iterations_used, 1)
        self.assertTrue(result.converged)
        np.testing.assert_allclose(result.pose.matrix, self.scene.gt_pose.matrix, atol=1e-10)

    def test_recovers_from_five_degrees(self):
        axis = np.array([1.0, 2.0, -1.0]) / np.sqrt(6.0)
        start = apply_delta(self.scene.gt_pose, np.hstack([np.radians(5.0) * axis, np.zeros(3)]))
        result = self.refine(start, cfg=RefineConfig(threshold_px=1000.0))
        error = pose_error(result.pose, self.scene.gt_pose)
        self.assertLess(error.rotation_error, 1e-4)
        self.assertLess(error.translation_error, 1e-5)
        self.assertEqual(len(result.final_inliers), len(self.scene))

    def test_accepted_costs_strictly_decrease(self):
        scene = scene_from_params(SceneParams(n_points=100, pixel_noise_sigma=1.0, outlier_fraction=0.2), seed=2)
        start = apply_delta(scene.gt_pose, [0.01, -0.01, 0.005, 0.02, 0.0, -0.02])
        result = self.refine(start, scene=scene)
        self.assertTrue(result.cost_history)
        for costs in result.cost_history:
            self.assertTrue(all(b < a for a, b in zip(costs, costs[1:])))
        self.assertLessEqual(result.final_cost, result.cost_history[0][0])

    def test_insufficient_inliers(self):
        far = apply_delta(self.scene.gt_pose, [0.0, 0.0, 0.0, 1.0, 1.0, 0.0])
        with self.assertRaises(InsufficientInliersError):
            self.refine(far, cfg=RefineConfig(threshold_px=1e-3))

    def test_result_pose_is_orthonormal(self):
        start = apply_delta(self.scene.gt_pose, [0.05, 0.0, 0.0, 0.0, 0.1, 0.0])
        rotation = self.refine(start, cfg=RefineConfig(threshold_px=1000.0)).pose.rotation
        self.assertLess(np.linalg.norm(rotation.T @ rotation - np.eye(3)), 1e-9)

    def test_cost_is_infinite_behind_the_camera(self):
        gt = self.scene.gt_pose
        coords = self.scene.predicted_coords[:10].copy()
        pixels = self.scene.pixel_obs[:10]
        self.assertLess(reprojection_cost(gt, self.scene.intrinsics, coords, pixels), 1e-12)
        coords[3] = gt.rotation.T @ (np.array([0.0, 0.0, -1.0]) - gt.translation)
        self.assertEqual(reprojection_cost(gt, self.scene.intrinsics, coords, pixels), np.inf)

    def test_final_inliers_lie_in_front(self):
        scene = scene_from_params(SceneParams(n_points=100, pixel_noise_sigma=1.0, outlier_fraction=0.3), seed=4)
        start = apply_delta(scene.gt_pose, [0.02, 0.0, -0.02, 0.1, 0.05, 0.0])
        result = self.refine(start, scene=scene, cfg=RefineConfig(threshold_px=50.0))
        depth = result.pose.transform(scene.predicted_coords[result.final_inliers])[:, 2]
        self.assertTrue(np.all(depth > 0))

    def test_unconverged_exit_reports_the_optimized_set(self):
        scene = scene_from_params(SceneParams(n_points=100, pixel_noise_sigma=1.0, outlier_fraction=0.3), seed=5)
        start = apply_delta(scene.gt_pose, [0.005, -0.005, 0.0, 0.02, 0.0, 0.01])
        cfg = RefineConfig(max_iterations=1)
        result = self.refine(start, scene=scene, cfg=cfg)
        initial = find_inliers(start, scene.predicted_coords, scene.pixel_obs, scene.intrinsics, cfg.threshold_px)
        self.assertEqual(result.iterations_used, 1)
        np.testing.assert_array_equal(result.final_inliers, initial)


@pytest.mark.slow
def test_refinement_beats_linear_solution_on_noisy_pixels():
    improved = 0
    for seed in range(10):
        scene = scene_from_params(SceneParams(n_points=100, pixel_noise_sigma=1.0), seed=seed)
        initial = wdlt_solve(scene.predicted_coords, scene.pixel_obs, np.ones(len(scene)), scene.intrinsics)
        refined = lm_refine(initial, scene.predicted_coords, scene.pixel_obs, scene.intrinsics, RefineConfig()).pose
        before = pose_error(initial, scene.gt_pose).translation_error
        after = pose_error(refined, scene.gt_pose).translation_error
        improved += after <= before
    assert improved >= 8


def test_refine_command(tmp_path):
    scene = scene_from_params(SceneParams(n_points=60, pixel_noise_sigma=0.5, outlier_fraction=0.2), seed=4)
    scene_path, pose_path = tmp_path / 'scene.json', tmp_path / 'pose.json'
    write_scene(scene, scene_path)

    out = StringIO()
    call_command('refine', str(scene_path), '--out', str(pose_path), stdout=out)
    assert 'Wrote' in out.getvalue()

    payload = json.loads(pose_path.read_text())
    assert set(payload) >= {'R', 't', 'convention', 'iterations_used', 'converged', 'inliers', 'final_cost'}
    assert pose_error(read_pose(pose_path), scene.gt_pose).translation_error < 0.05


def test_refine_command_from_given_pose(tmp_path):
    scene = scene_from_params(SceneParams(n_points=60), seed=5)
    scene_path, pose_path = tmp_path / 'scene.json', tmp_path / 'start.json'
    write_scene(scene, scene_path)
    write_pose(scene.gt_pose, pose_path)

    out = StringIO()
    call_command('refine', str(scene_path), '--pose', str(pose_path), '--threshold', '2', stdout=out)
    payload = json.loads(out.getvalue())
    assert payload['converged'] is True
    assert payload['inliers'] == list(range(len(scene)))
