import json

import numpy as np
import pytest
from django.test import SimpleTestCase

from sclocalize.exceptions import ConfigurationError, ImagePairError, InvalidPoseError, SceneFormatError, SceneGenerationError
from simulator.models import CAMERA_TO_WORLD, CameraIntrinsics, Pose, SceneParams
from simulator.serializers import (
    SceneSerializer,
    read_pair,
    read_scene,
    read_scenes,
    write_pair,
    write_scene,
)
from simulator.services import (
    generate_image_pair,
    generate_scene,
    generate_sequence,
    look_at,
    reprojection_errors,
    scene_from_params,
)


class PoseModelTests(SimpleTestCase):
    """Pose invariants and conventions"""

    def test_rejects_non_orthonormal_rotation(self):
        with self.assertRaises(InvalidPoseError):
            Pose(np.diag([1.0, 1.0, 1.1]), np.zeros(3))

    def test_rejects_reflection(self):
        with self.assertRaises(InvalidPoseError):
            Pose(np.diag([1.0, 1.0, -1.0]), np.zeros(3))

    def test_inverse_flips_convention_and_round_trips(self):
        pose = look_at(np.array([4.0, 1.0, 0.5]), np.zeros(3))
        inverse = pose.inverse()
        self.assertEqual(inverse.convention, CAMERA_TO_WORLD)
        np.testing.assert_allclose(inverse.to_w2c().matrix, pose.matrix, atol=1e-12)

    def test_camera_center_matches_eye(self):
        eye = np.array([3.0, -2.0, 1.0])
        pose = look_at(eye, np.zeros(3))
        np.testing.assert_allclose(pose.camera_center, eye, atol=1e-12)
        np.testing.assert_allclose(pose.inverse().camera_center, eye, atol=1e-12)

    def test_look_at_puts_target_on_optical_axis(self):
        pose = look_at(np.array([4.0, 0.0, 0.0]), np.zeros(3))
        camera = pose.transform(np.zeros(3))[0]
        np.testing.assert_allclose(camera, [0.0, 0.0, 4.0], atol=1e-12)


class SceneGenerationTests(SimpleTestCase):
    """Synthetic scene generation"""

    def setUp(self):
        self.intr = CameraIntrinsics(525.0, 525.0, 320.0, 240.0, 640, 480)
        self.pose = look_at(np.array([4.0, 0.0, 0.5]), np.zeros(3))

    def test_zero_noise_predictions_reproject_exactly(self):
        scene = generate_scene(100, self.pose, self.intr, seed=1)
        errors = reprojection_errors(scene.gt_pose, scene.intrinsics, scene.predicted_coords, scene.pixel_obs)
        self.assertLess(errors.max(), 1e-9)
        self.assertEqual(len(scene), 100)
        self.assertEqual(scene.n_outliers, 0)

    def test_outlier_count_is_exact(self):
        scene = generate_scene(100, self.pose, self.intr, outlier_fraction=0.3, seed=1)
        self.assertEqual(scene.n_outliers, 30)

    def test_outliers_are_gross(self):
        scene = generate_scene(100, self.pose, self.intr, outlier_fraction=0.3, seed=1, outlier_min_error_px=20.0)
        errors = reprojection_errors(scene.gt_pose, scene.intrinsics, scene.predicted_coords, scene.pixel_obs)
        self.assertTrue(np.all(errors[scene.outlier_mask] >= 20.0))
        self.assertLess(errors[~scene.outlier_mask].max(), 1e-9)

    def test_outliers_dwarf_pixel_noise(self):
        scene = generate_scene(100, self.pose, self.intr, pixel_noise_sigma=1.0, outlier_fraction=0.3, seed=2)
        errors = reprojection_errors(scene.gt_pose, scene.intrinsics, scene.predicted_coords, scene.pixel_obs)
        self.assertGreaterEqual(np.median(errors[scene.outlier_mask]), 10.0 * np.median(errors[~scene.outlier_mask]))

    def test_same_seed_is_bit_identical(self):
        first = generate_scene(200, self.pose, self.intr, coord_noise_sigma=0.01, seed=7)
        second = generate_scene(200, self.pose, self.intr, coord_noise_sigma=0.01, seed=7)
        self.assertEqual(first, second)
        self.assertEqual(json.dumps(SceneSerializer(first).data), json.dumps(SceneSerializer(second).data))

    def test_different_seeds_differ(self):
        first = generate_scene(50, self.pose, self.intr, seed=1)
        second = generate_scene(50, self.pose, self.intr, seed=2)
        self.assertNotEqual(first, second)

    def test_coordinate_noise_only_moves_predictions(self):
        scene = generate_scene(100, self.pose, self.intr, coord_noise_sigma=0.01, seed=3)
        offsets = np.linalg.norm(scene.predicted_coords - scene.gt_points, axis=1)
        self.assertGreater(offsets.mean(), 0.0)
        self.assertLess(offsets.max(), 0.1)

    def test_requires_more_than_six_points(self):
        with self.assertRaises(ConfigurationError):
            generate_scene(6, self.pose, self.intr)

    def test_rejects_outlier_fraction_of_one(self):
        with self.assertRaises(ConfigurationError):
            generate_scene(50, self.pose, self.intr, outlier_fraction=1.0)

    def test_fails_when_points_cannot_be_seen(self):
        pinhole = CameraIntrinsics(525.0, 525.0, 0.5, 0.5, 1, 1)
        with self.assertRaises(SceneGenerationError):
            generate_scene(10, self.pose, pinhole, seed=1)

    def test_scene_params_validation(self):
        with self.assertRaises(ConfigurationError):
            SceneParams(n_points=5)
        with self.assertRaises(ConfigurationError):
            SceneParams(pixel_noise_sigma=-1.0)

    def test_scene_from_params_uses_random_camera(self):
        scene = scene_from_params(SceneParams(n_points=40), seed=4)
        distance = np.linalg.norm(scene.gt_pose.camera_center)
        self.assertAlmostEqual(distance, 4.0, places=9)


class ImagePairTests(SimpleTestCase):
    """Textured-plane image pairs"""

    def setUp(self):
        self.params = SceneParams(n_points=30)

    def test_zero_baseline_gives_identical_images(self):
        pair = generate_image_pair(self.params, 0.0, seed=1)
        np.testing.assert_allclose(pair.source_image, pair.target_image, atol=1e-8)

    def test_intensities_in_unit_range(self):
        pair = generate_image_pair(self.params, 0.05, seed=2)
        for image in (pair.source_image, pair.target_image):
            self.assertGreaterEqual(image.min(), 0.0)
            self.assertLessEqual(image.max(), 1.0)
            self.assertEqual(image.shape, (pair.intrinsics.height, pair.intrinsics.width))

    def test_same_seed_gives_identical_pairs(self):
        self.assertEqual(
            generate_image_pair(self.params, 0.05, seed=3),
            generate_image_pair(self.params, 0.05, seed=3),
        )

    def test_pair_carries_target_correspondences(self):
        pair = generate_image_pair(self.params, 0.05, seed=3)
        self.assertIsNotNone(pair.target_scene)
        self.assertEqual(pair.target_scene.gt_pose, pair.target_pose)

    def test_source_coords_lie_on_source_rays(self):
        pair = generate_image_pair(self.params, 0.05, seed=4)
        intr = pair.intrinsics
        coords = pair.source_coords.reshape(-1, 3)
        pixels, depth = intr.project(pair.source_pose.transform(coords))
        v, u = np.mgrid[0:intr.height, 0:intr.width]
        np.testing.assert_allclose(pixels, np.column_stack([u.ravel(), v.ravel()]), atol=1e-8)
        self.assertTrue(np.all(depth > 0))

    def test_huge_baseline_fails(self):
        with self.assertRaises(ImagePairError):
            generate_image_pair(self.params, 100.0, seed=1)

    def test_negative_baseline_rejected(self):
        with self.assertRaises(ConfigurationError):
            generate_image_pair(self.params, -0.1, seed=1)


class SequenceTests(SimpleTestCase):
    """Frame sequences sharing one landmark set"""

    def setUp(self):
        self.params = SceneParams(n_points=30, outlier_fraction=0.2)
        self.sequence = generate_sequence(self.params, 4, 0.05, seed=2, frame_interval=1)

    def test_frame_and_pair_counts(self):
        self.assertEqual(len(self.sequence.scenes), 4)
        self.assertEqual(len(self.sequence.pairs), 3)

    def test_landmarks_are_shared(self):
        first = self.sequence.scenes[0]
        for scene in self.sequence.scenes[1:]:
            np.testing.assert_array_equal(scene.predicted_coords, first.predicted_coords)
            np.testing.assert_array_equal(scene.outlier_mask, first.outlier_mask)
        self.assertEqual(first.n_outliers, 6)

    def test_pairs_target_the_later_frame(self):
        for k, pair in enumerate(self.sequence.pairs):
            self.assertEqual(pair.source_pose, self.sequence.poses[k])
            self.assertIs(pair.target_scene, self.sequence.scenes[k + 1])

    def test_frame_interval_bounds(self):
        with self.assertRaises(ConfigurationError):
            generate_sequence(self.params, 3, 0.05, seed=2, frame_interval=3)
        with self.assertRaises(ConfigurationError):
            generate_sequence(self.params, 1, 0.05, seed=2)


# Pytest-style tests for the file formats


@pytest.fixture
def scene():
    return scene_from_params(SceneParams(n_points=20, outlier_fraction=0.2, pixel_noise_sigma=0.5), seed=5)


def test_scene_round_trip(scene, tmp_path):
    path = tmp_path / 'scene.json'
    write_scene(scene, path)
    assert read_scene(path) == scene


def test_pair_round_trip(tmp_path):
    pair = generate_image_pair(SceneParams(n_points=12), 0.05, seed=6)
    path = tmp_path / 'pair.json'
    write_pair(pair, path)
    assert read_pair(path) == pair


def test_truncated_scene_names_position(scene, tmp_path):
    path = tmp_path / 'scene.json'
    write_scene(scene, path)
    path.write_text(path.read_text()[:200])
    with pytest.raises(SceneFormatError, match='line'):
        read_scene(path)


def test_scene_with_five_points_rejected(scene, tmp_path):
    path = tmp_path / 'scene.json'
    data = SceneSerializer(scene).data
    data['points'] = data['points'][:5]
    path.write_text(json.dumps(data))
    with pytest.raises(SceneFormatError, match='N > 6'):
        read_scene(path)


def test_malformed_field_is_named(scene, tmp_path):
    path = tmp_path / 'scene.json'
    data = SceneSerializer(scene).data
    data['points'][3]['px'] = [1.0, 2.0, 3.0]
    path.write_text(json.dumps(data))
    with pytest.raises(SceneFormatError, match='points.3.px'):
        read_scene(path)


def test_camera_to_world_pose_is_converted(scene, tmp_path):
    path = tmp_path / 'scene.json'
    data = SceneSerializer(scene).data
    inverse = scene.gt_pose.inverse()
    data['gt_pose'] = {'R': inverse.rotation.reshape(9).tolist(), 't': inverse.translation.tolist(), 'convention': 'c2w'}
    path.write_text(json.dumps(data))
    loaded = read_scene(path)
    np.testing.assert_allclose(loaded.gt_pose.matrix, scene.gt_pose.matrix, atol=1e-12)


def test_read_scenes_expands_directories(scene, tmp_path):
    write_scene(scene, tmp_path / 'b.json')
    write_scene(scene, tmp_path / 'a.json')
    assert len(read_scenes([tmp_path])) == 2
