import math

import numpy as np
import pytest
from django.test import SimpleTestCase
from scipy.spatial.transform import Rotation

from geometry.models import Correspondences
from geometry.services import build_system, scene_correspondences
from losses.models import GroundTruthVector, LossConfig
from losses.photometric import photometric_loss, ssim
from losses.services import (
    calibrate_beta,
    classification_loss,
    grad_classification_loss_wrt_w,
    grad_regression_loss_wrt_coords,
    grad_regression_loss_wrt_w,
    grad_reprojection_loss_wrt_coords,
    ground_truth_vector,
    heuristic_points,
    inlier_labels,
    regression_loss,
    reproj_error,
    reprojection_loss,
)
from refinement.services import apply_delta
from sclocalize.exceptions import ConfigurationError, NoOverlapError
from simulator.models import CameraIntrinsics, Pose, SceneParams
from simulator.services import generate_image_pair, look_at, make_rng, scene_from_params


def central_difference(f, x, h=1e-6):
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for index in np.ndindex(x.shape):
        step = np.zeros_like(x)
        step[index] = h
        grad[index] = (f(x + step) - f(x - step)) / (2.0 * h)
    return grad


def random_problem(seed, n=20):
    rng = make_rng(seed)
    corrs = Correspondences(np.hstack([rng.normal(0.0, 1.0, (n, 3)), rng.normal(0.0, 0.5, (n, 2))]))
    t = rng.normal(size=12)
    w = rng.uniform(0.2, 1.0, n)
    return corrs, GroundTruthVector(t / np.linalg.norm(t)), w


class LossConfigTests(SimpleTestCase):
    def test_defaults(self):
        cfg = LossConfig()
        self.assertEqual((cfg.tau, cfg.alpha, cfg.beta, cfg.gamma, cfg.depth_heuristic), (1.0, 5.0, 1e-4, 5.0, 10.0))

    def test_presets(self):
        self.assertEqual(LossConfig.indoor().beta, 1e-4)
        self.assertEqual(LossConfig.outdoor().beta, 1e-6)

    def test_from_mapping(self):
        cfg = LossConfig.from_mapping({'loss.tau': 2.0, 'loss.gamma': 1.0})
        self.assertEqual(cfg.tau, 2.0)
        self.assertEqual(cfg.gamma, 1.0)
        self.assertEqual(cfg.alpha, 5.0)

    def test_rejects_non_positive(self):
        with self.assertRaises(ConfigurationError):
            LossConfig(tau=0.0)

    def test_ground_truth_vector_must_be_unit(self):
        with self.assertRaises(ConfigurationError):
            GroundTruthVector(np.ones(12))


class ReprojectionTests(SimpleTestCase):
    def setUp(self):
        self.intr = CameraIntrinsics(500.0, 500.0, 320.0, 240.0, 640, 480)
        self.pose = Pose.identity()
        self.cfg = LossConfig()

    def test_exact_projection(self):
        self.assertEqual(reproj_error(self.pose, self.intr, [0.2, -0.1, 2.0], [370.0, 215.0]).value, 0.0)

    def test_similar_triangles(self):
        error = reproj_error(self.pose, self.intr, [0.01, 0.0, 1.0], [320.0, 240.0])
        self.assertAlmostEqual(error.value, 5.0, places=9)
        self.assertFalse(error.behind_camera)

    def test_behind_camera_is_tagged(self):
        error = reproj_error(self.pose, self.intr, [0.0, 0.0, -1.0], [320.0, 240.0])
        self.assertTrue(error.behind_camera)
        self.assertTrue(math.isinf(error.value))

    def test_clean_scene_has_zero_loss(self):
        scene = scene_from_params(SceneParams(n_points=50), seed=1)
        loss = reprojection_loss(scene.predicted_coords, scene.pixel_obs, scene.gt_pose, scene.intrinsics, self.cfg)
        self.assertLess(loss.value, 1e-9)
        self.assertTrue(loss.valid.all())

    def test_behind_point_uses_heuristic_depth(self):
        coords = np.array([[0.0, 0.0, -1.0]])
        pixels = np.array([[320.0, 240.0]])
        loss = reprojection_loss(coords, pixels, self.pose, self.intr, self.cfg)
        # Ray point is (0, 0, 10)
        self.assertAlmostEqual(loss.value, 11.0)
        self.assertFalse(loss.valid[0])

    def test_mixed_batch_matches_per_point_terms(self):
        coords = np.array([[0.01, 0.0, 1.0], [0.0, 0.0, -2.0], [0.5, 0.5, 0.05], [0.3, -0.2, 3.0]])
        pixels = np.array([[320.0, 240.0], [330.0, 250.0], [300.0, 200.0], [370.0, 207.0]])
        expected = []
        for s, p in zip(coords, pixels):
            r = reproj_error(self.pose, self.intr, s, p)
            if not r.behind_camera and self.cfg.depth_min <= s[2] <= self.cfg.depth_max and r.value < 1000.0:
                expected.append(r.value)
            else:
                ray_point = heuristic_points(p[None, :], self.pose, self.intr, 10.0)[0]
                expected.append(np.abs(ray_point - s).sum())
        loss = reprojection_loss(coords, pixels, self.pose, self.intr, self.cfg)
        np.testing.assert_allclose(loss.terms, expected)
        self.assertAlmostEqual(loss.value, float(np.mean(expected)))

    def test_gradient_matches_finite_differences(self):
        rng = make_rng(2)
        pose = Pose(Rotation.from_rotvec([0.1, -0.05, 0.2]).as_matrix(), [0.1, 0.2, 0.3])
        camera = np.column_stack([rng.uniform(-1, 1, 15), rng.uniform(-1, 1, 15), rng.uniform(3, 5, 15)])
        coords = (camera - pose.translation) @ pose.rotation
        pixels = self.intr.project(camera)[0] + rng.normal(0.0, 3.0, (15, 2))
        # Two fallback points: behind the camera and beyond the pixel cap
        coords[0] = (np.array([0.0, 0.0, -1.0]) - pose.translation) @ pose.rotation
        pixels[1] += 2000.0

        f = lambda x: reprojection_loss(x, pixels, pose, self.intr, self.cfg).value
        analytic = grad_reprojection_loss_wrt_coords(coords, pixels, pose, self.intr, self.cfg)
        np.testing.assert_allclose(analytic, central_difference(f, coords), rtol=1e-5, atol=1e-7)


class ClassificationTests(SimpleTestCase):
    def test_perfect_prediction(self):
        labels = inlier_labels(np.array([0.1, 5.0, 0.5, np.inf]), tau=1.0)
        self.assertLess(classification_loss(labels.as_float(), labels), 1e-6)

    def test_maximal_uncertainty(self):
        labels = inlier_labels(np.array([0.1, 5.0, 0.5, 2.0]), tau=1.0)
        self.assertAlmostEqual(classification_loss(np.full(4, 0.5), labels), math.log(2.0), places=12)

    def test_matches_scalar_loop(self):
        rng = make_rng(4)
        w = rng.uniform(0.0, 1.0, 50)
        labels = inlier_labels(rng.uniform(0.0, 2.0, 50), tau=1.0)
        total = 0.0
        for wi, li in zip(w, labels.l):
            wi = min(max(wi, 1e-7), 1.0 - 1e-7)
            total += -math.log(wi) if li else -math.log(1.0 - wi)
        self.assertAlmostEqual(classification_loss(w, labels), total / 50, delta=1e-12)

    def test_gradient(self):
        rng = make_rng(5)
        w = rng.uniform(0.05, 0.95, 30)
        labels = inlier_labels(rng.uniform(0.0, 2.0, 30), tau=1.0)
        numeric = central_difference(lambda x: classification_loss(x, labels), w)
        np.testing.assert_allclose(grad_classification_loss_wrt_w(w, labels), numeric, rtol=1e-5, atol=1e-9)

    def test_gradient_zero_where_clamped(self):
        labels = inlier_labels(np.array([0.0, 5.0]), tau=1.0)
        np.testing.assert_array_equal(grad_classification_loss_wrt_w(np.array([1.0, 0.0]), labels), [0.0, 0.0])


class RegressionLossTests(SimpleTestCase):
    """Eigen-decomposition free regression loss and its gradients"""

    def setUp(self):
        self.cfg = LossConfig(beta=1e-2)

    def test_zero_noise_residual_vanishes(self):
        scene = scene_from_params(SceneParams(n_points=60), seed=1)
        system = build_system(scene_correspondences(scene))
        loss = regression_loss(system, np.ones(60), ground_truth_vector(scene.gt_pose), LossConfig())
        self.assertLess(loss.residual, 1e-12)
        self.assertAlmostEqual(loss.value, 5.0 * math.exp(-1e-4 * loss.trace_term), delta=1e-12)

    def test_zero_weights_expose_trivial_solution(self):
        corrs, t, _ = random_problem(0)
        loss = regression_loss(build_system(corrs), np.zeros(len(corrs)), t, self.cfg)
        self.assertEqual(loss.value, self.cfg.alpha)

    def test_matches_dense_evaluation(self):
        corrs, t, w = random_problem(1)
        X = build_system(corrs).X
        D = np.diag(np.repeat(w, 2))
        X_bar = X @ (np.eye(12) - np.outer(t.t, t.t))
        expected = t.t @ X.T @ D @ X @ t.t + self.cfg.alpha * math.exp(-self.cfg.beta * np.trace(X_bar.T @ D @ X_bar))
        self.assertAlmostEqual(regression_loss(build_system(corrs), w, t, self.cfg).value, expected, delta=1e-10)

    def test_invariant_to_correspondence_order(self):
        corrs, t, w = random_problem(2, n=30)
        order = make_rng(3).permutation(len(corrs))
        shuffled = Correspondences(corrs.data[order])
        original = regression_loss(build_system(corrs), w, t, self.cfg)
        permuted = regression_loss(build_system(shuffled), w[order], t, self.cfg)
        self.assertAlmostEqual(permuted.value, original.value, delta=1e-12 * abs(original.value))
        self.assertAlmostEqual(permuted.trace_term, original.trace_term, delta=1e-12 * abs(original.trace_term))

    def test_weight_gradient_matches_finite_differences(self):
        for seed in range(100):
            corrs, t, w = random_problem(seed)
            system = build_system(corrs)
            numeric = central_difference(lambda x: regression_loss(system, x, t, self.cfg).value, w)
            analytic = grad_regression_loss_wrt_w(system, w, t, self.cfg)
            np.testing.assert_allclose(analytic, numeric, rtol=1e-5, atol=1e-7)

    def test_weight_gradient_negative_at_true_pose(self):
        scene = scene_from_params(SceneParams(n_points=60), seed=1)
        system = build_system(scene_correspondences(scene))
        grad = grad_regression_loss_wrt_w(system, np.ones(60), ground_truth_vector(scene.gt_pose), LossConfig())
        self.assertTrue(np.all(grad < 0))

    def test_small_beta_limit(self):
        corrs, t, w = random_problem(2)
        system = build_system(corrs)
        cfg = LossConfig(beta=1e-12)
        rows = system.X @ t.t
        projected = (system.X @ t.projector) ** 2
        expected = (rows**2).reshape(-1, 2).sum(axis=1) - cfg.alpha * cfg.beta * projected.sum(axis=1).reshape(-1, 2).sum(axis=1)
        np.testing.assert_allclose(grad_regression_loss_wrt_w(system, w, t, cfg), expected, rtol=1e-9)

    def coordinate_loss(self, corrs, w, t, cfg):
        def f(coords):
            moved = Correspondences(np.hstack([coords, corrs.uv]))
            return regression_loss(build_system(moved), w, t, cfg).value
        return f

    def test_coordinate_gradient_matches_finite_differences(self):
        for seed in range(100):
            corrs, t, w = random_problem(seed, n=50)
            numeric = central_difference(self.coordinate_loss(corrs, w, t, self.cfg), corrs.coords)
            analytic = grad_regression_loss_wrt_coords(corrs, w, t, self.cfg)
            np.testing.assert_allclose(analytic, numeric, rtol=1e-4, atol=1e-6 * np.abs(numeric).max())

    def test_residual_only_coordinate_gradient(self):
        corrs, t, w = random_problem(3, n=30)
        cfg = LossConfig(alpha=1e-300)
        numeric = central_difference(self.coordinate_loss(corrs, w, t, cfg), corrs.coords)
        analytic = grad_regression_loss_wrt_coords(corrs, w, t, self.cfg, include_trace_term=False)
        np.testing.assert_allclose(analytic, numeric, rtol=1e-4, atol=1e-8)

    def test_masked_point_has_zero_coordinate_gradient(self):
        corrs, t, w = random_problem(4, n=30)
        w[[2, 7]] = 0.0
        grad = grad_regression_loss_wrt_coords(corrs, w, t, self.cfg)
        np.testing.assert_array_equal(grad[[2, 7]], 0.0)

    def test_rotating_the_world_rotates_the_gradient(self):
        corrs, t, w = random_problem(5, n=30)
        Q = Rotation.from_rotvec([0.3, -0.2, 0.5]).as_matrix()
        block = t.t.reshape(3, 4)
        rotated_t = GroundTruthVector(np.hstack([block[:, :3] @ Q.T, block[:, 3:]]).reshape(12))
        rotated = Correspondences(np.hstack([corrs.coords @ Q.T, corrs.uv]))

        before = regression_loss(build_system(corrs), w, t, self.cfg).value
        after = regression_loss(build_system(rotated), w, rotated_t, self.cfg).value
        self.assertAlmostEqual(before, after, delta=1e-10)

        grad = grad_regression_loss_wrt_coords(corrs, w, t, self.cfg)
        rotated_grad = grad_regression_loss_wrt_coords(rotated, w, rotated_t, self.cfg)
        np.testing.assert_allclose(rotated_grad, grad @ Q.T, atol=1e-8)


def test_calibrate_beta():
    assert calibrate_beta(2000.0) == pytest.approx(5e-4)
    with pytest.raises(ConfigurationError):
        calibrate_beta(0.0)


class PhotometricLossTests(SimpleTestCase):
    def setUp(self):
        self.pair = generate_image_pair(SceneParams(n_points=20), 0.05, seed=1)

    def test_exact_warp_has_zero_loss(self):
        loss = photometric_loss(self.pair, self.pair.target_pose)
        self.assertLess(loss.l1, 1e-6)
        self.assertLess(loss.ssim, 1e-6)
        self.assertGreater(loss.valid_pixel_count, 0.5 * self.pair.source_image.size)

    def test_ssim_of_identical_images(self):
        self.assertAlmostEqual(ssim(self.pair.target_image, self.pair.target_image), 1.0, places=12)

    def test_perturbed_pose_costs_more(self):
        exact = photometric_loss(self.pair, self.pair.target_pose).value
        shifted = photometric_loss(self.pair, apply_delta(self.pair.target_pose, [0, 0, 0, 0.01, 0, 0])).value
        self.assertGreater(shifted, exact)

    def test_true_pose_is_a_minimum_along_every_axis(self):
        exact = photometric_loss(self.pair, self.pair.target_pose).value
        steps = [math.radians(0.5)] * 3 + [0.01] * 3
        for axis, size in enumerate(steps):
            for sign in (1.0, -1.0):
                delta = np.zeros(6)
                delta[axis] = sign * size
                moved = photometric_loss(self.pair, apply_delta(self.pair.target_pose, delta)).value
                self.assertGreater(moved, exact, msg=f"axis {axis}, sign {sign:+.0f}")

    def test_uniform_mask_matches_unweighted(self):
        pose = apply_delta(self.pair.target_pose, [0.01, 0, 0, 0, 0.02, 0])
        plain = photometric_loss(self.pair, pose)
        masked = photometric_loss(self.pair, pose, weights_mask=np.ones_like(self.pair.source_image))
        self.assertAlmostEqual(plain.value, masked.value, places=12)

    def test_no_overlap(self):
        center = self.pair.target_pose.camera_center
        away = look_at(center, 2.0 * center)
        with self.assertRaises(NoOverlapError):
            photometric_loss(self.pair, away)
