import dataclasses
import json
from io import StringIO

import numpy as np
import pytest
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase
from scipy.spatial.transform import Rotation

from evaluation.cli import main
from evaluation.models import PoseError
from evaluation.serializers import EvalSummarySerializer, points_csv
from evaluation.services import (
    evaluate,
    filter_confident_points,
    pose_error,
    recall,
    weight_interpretability,
)
from geometry.serializers import read_pose
from adaptation.models import AdaptConfig
from adaptation.services import adapt_weights
from geometry.services import wdlt_solve
from refinement.models import RefineConfig
from refinement.services import apply_delta, lm_refine
from sclocalize.exceptions import (
    ConfigurationError,
    DimensionMismatchError,
    EmptyInputError,
    UndefinedCorrelationError,
)
from simulator.models import Pose, SceneParams
from simulator.serializers import SceneSerializer, read_scene, write_pair, write_scene
from simulator.services import generate_sequence, make_rng, scene_from_params
from training.models import WeightParams
from training.serializers import read_theta, write_theta


class PoseErrorTests(SimpleTestCase):
    def setUp(self):
        self.pose = Pose(Rotation.from_rotvec([0.1, 0.2, -0.1]).as_matrix(), [0.5, -1.0, 4.0])

    def test_identical_poses(self):
        error = pose_error(self.pose, self.pose)
        self.assertEqual(error.translation_error, 0.0)
        self.assertLess(error.rotation_error, 1e-6)

    def test_rotation_about_camera_centre(self):
        turned = Pose(Rotation.from_euler('z', 90, degrees=True).as_matrix(), np.zeros(3))
        error = pose_error(turned, Pose.identity())
        self.assertAlmostEqual(error.translation_error, 0.0)
        self.assertAlmostEqual(error.rotation_error, 90.0, places=9)

    def test_translation_is_measured_between_camera_centres(self):
        moved = apply_delta(self.pose, [0.0, 0.0, 0.0, 0.03, 0.04, 0.0])
        self.assertAlmostEqual(pose_error(moved, self.pose).translation_error, 0.05, places=12)

    def test_conventions_are_unified(self):
        error = pose_error(self.pose.inverse(), self.pose)
        self.assertLess(error.translation_error, 1e-12)
        self.assertLess(error.rotation_error, 1e-6)

    def test_symmetric_and_triangle_inequality(self):
        rng = make_rng(7)
        poses = [
            Pose(Rotation.from_rotvec(rng.normal(0.0, 0.5, 3)).as_matrix(), rng.normal(0.0, 1.0, 3))
            for _ in range(3)
        ]
        a, b, c = poses
        ab, ba = pose_error(a, b), pose_error(b, a)
        self.assertAlmostEqual(ab.translation_error, ba.translation_error, places=12)
        self.assertAlmostEqual(ab.rotation_error, ba.rotation_error, places=9)
        bc, ac = pose_error(b, c), pose_error(a, c)
        self.assertLessEqual(ac.translation_error, ab.translation_error + bc.translation_error + 1e-12)
        self.assertLessEqual(ac.rotation_error, ab.rotation_error + bc.rotation_error + 1e-9)

    def test_negative_error_rejected(self):
        with self.assertRaises(ConfigurationError):
            PoseError(-1.0, 0.0)


class RecallTests(SimpleTestCase):
    def test_one_of_three(self):
        errors = [PoseError(0.01, 1.0), PoseError(0.1, 1.0), PoseError(0.01, 10.0)]
        self.assertAlmostEqual(recall(errors), 1.0 / 3.0)

    def test_thresholds_are_strict(self):
        self.assertEqual(recall([PoseError(0.05, 1.0)]), 0.0)
        self.assertEqual(recall([PoseError(0.01, 5.0)]), 0.0)

    def test_empty(self):
        with self.assertRaises(EmptyInputError):
            recall([])


class InterpretabilityTests(SimpleTestCase):
    def test_weights_equal_to_inverse_errors(self):
        errors = np.array([0.0, 0.5, 2.0, 10.0, np.inf])
        self.assertAlmostEqual(weight_interpretability(1.0 / (1.0 + errors), errors), 1.0, places=12)

    def test_opposite_ordering_is_negative(self):
        errors = np.array([0.0, 1.0, 4.0, 20.0])
        self.assertLess(weight_interpretability([0.1, 0.3, 0.6, 0.9], errors), 0.0)

    def test_constant_weights_are_undefined(self):
        with self.assertRaises(UndefinedCorrelationError):
            weight_interpretability(np.ones(5), np.arange(5.0))

    def test_length_mismatch(self):
        with self.assertRaises(DimensionMismatchError):
            weight_interpretability(np.ones(4), np.arange(5.0))

    def test_filter_confident_points(self):
        coords = np.arange(12.0).reshape(4, 3)
        kept, indices = filter_confident_points(coords, [0.95, 0.2, 0.9, 0.89], threshold=0.9)
        np.testing.assert_array_equal(indices, [0, 2])
        np.testing.assert_array_equal(kept, coords[[0, 2]])


class EvaluateTests(SimpleTestCase):
    def setUp(self):
        self.scenes = [
            scene_from_params(SceneParams(n_points=30, outlier_fraction=0.2), seed=seed) for seed in (1, 2, 3)
        ]
        self.poses = [
            self.scenes[0].gt_pose,
            apply_delta(self.scenes[1].gt_pose, [0.0, 0.0, 0.0, 0.2, 0.0, 0.0]),
            apply_delta(self.scenes[2].gt_pose, [0.0, 0.0, 0.0, 0.01, 0.0, 0.0]),
        ]

    def test_summary(self):
        summary = evaluate(self.poses, self.scenes)
        self.assertAlmostEqual(summary.recall, 2.0 / 3.0)
        self.assertAlmostEqual(summary.median_translation_error, 0.01, places=9)
        self.assertIsNone(summary.pearson)
        self.assertEqual([f.passed for f in summary.frames], [True, False, True])

    def test_weights_add_pearson(self):
        thetas = [WeightParams(np.where(s.outlier_mask, -1.0, 2.0)) for s in self.scenes]
        summary = evaluate(self.poses, self.scenes, thetas=thetas)
        self.assertGreater(summary.pearson, 0.5)
        self.assertEqual(summary.frames[0].n_confident, 24)

    def test_undefined_pearson_is_reported_as_none(self):
        thetas = [WeightParams.uniform(30)] * 3
        with self.assertLogs('evaluation.services', level='WARNING'):
            summary = evaluate(self.poses, self.scenes, thetas=thetas)
        self.assertIsNone(summary.pearson)

    def test_parallel_matches_serial(self):
        self.assertEqual(evaluate(self.poses, self.scenes, workers=3), evaluate(self.poses, self.scenes))

    def test_pose_count_must_match(self):
        with self.assertRaises(DimensionMismatchError):
            evaluate(self.poses[:2], self.scenes)
        with self.assertRaises(EmptyInputError):
            evaluate([], [])

    def test_document(self):
        data = EvalSummarySerializer(evaluate(self.poses, self.scenes)).data
        self.assertEqual(set(data), {
            'median_translation_error_m', 'median_rotation_error_deg', 'recall',
            't_thresh_m', 'r_thresh_deg', 'pearson', 'frames',
        })
        self.assertEqual(data['frames'][1]['frame'], 1)
        self.assertFalse(data['frames'][1]['passed'])


def test_points_csv():
    text = points_csv([(0, 3, [1.0, 2.0, 3.0], 0.95)])
    assert text == 'frame,index,x,y,z,weight\n0,3,1.0,2.0,3.0,0.95\n'


# Command-line surface


def run(*args):
    out = StringIO()
    call_command(*[str(a) for a in args], stdout=out)
    return out.getvalue()


def test_main_rejects_unknown_subcommand(capsys):
    assert main(['localize']) == 2
    assert 'usage' in capsys.readouterr().err


def test_main_without_arguments_prints_usage(capsys):
    assert main([]) == 2
    assert main(['--help']) == 0


def test_main_maps_failures_to_non_zero_exit(tmp_path):
    assert main(['solve', str(tmp_path / 'missing.json')]) != 0


def test_simulate_needs_seed():
    with pytest.raises(CommandError, match='--seed'):
        run('simulate', '--n', 20)


def test_simulate_is_byte_identical():
    assert run('simulate', '--seed', 4, '--n', 30) == run('simulate', '--seed', 4, '--n', 30)


def test_simulate_solve_eval_pipeline(tmp_path):
    scene_path, pose_path = tmp_path / 'scene.json', tmp_path / 'pose.json'
    run('simulate', '--seed', 1, '--n', 60, '--outliers', 0.2, '--out', scene_path)
    run('solve', scene_path, '--out', pose_path)

    scene = read_scene(scene_path)
    expected = wdlt_solve(scene.predicted_coords, scene.pixel_obs, np.ones(len(scene)), scene.intrinsics)
    assert read_pose(pose_path) == expected

    summary = json.loads(run('eval', '--poses', pose_path, '--gt', scene_path))
    assert 0.0 <= summary['recall'] <= 1.0
    assert len(summary['frames']) == 1
    assert summary['pearson'] is None


def test_solve_several_scenes_with_weights(tmp_path):
    for seed in (1, 2):
        write_scene(scene_from_params(SceneParams(n_points=40, outlier_fraction=0.2), seed=seed), tmp_path / f's{seed}.json')
    theta_path = tmp_path / 'theta.json'
    write_theta(WeightParams.uniform(40), theta_path)

    poses = json.loads(run('solve', tmp_path / 's1.json', tmp_path / 's2.json', '--theta', theta_path, '--workers', 2))
    assert len(poses['poses']) == 2

    pose_path, points_path = tmp_path / 'poses.json', tmp_path / 'points.csv'
    pose_path.write_text(json.dumps(poses))
    summary = json.loads(run(
        'eval', '--poses', pose_path, '--gt', tmp_path / 's1.json', tmp_path / 's2.json',
        '--theta', theta_path, '--points-out', points_path,
    ))
    assert [f['n_confident'] for f in summary['frames']] == [40, 40]
    assert len(points_path.read_text().splitlines()) == 81


def test_solve_rejects_six_point_scene(tmp_path):
    scene = scene_from_params(SceneParams(n_points=20), seed=1)
    data = SceneSerializer(scene).data
    data['points'] = data['points'][:5]
    path = tmp_path / 'tiny.json'
    path.write_text(json.dumps(data))
    with pytest.raises(CommandError, match='N > 6'):
        run('solve', path)


def test_ransac_needs_seed(tmp_path):
    path = tmp_path / 'scene.json'
    write_scene(scene_from_params(SceneParams(n_points=30), seed=1), path)
    with pytest.raises(CommandError, match='--seed'):
        run('solve', path, '--ransac')
    assert 'R' in json.loads(run('solve', path, '--ransac', '--seed', 3))


def test_points_out_needs_theta(tmp_path):
    scene_path, pose_path = tmp_path / 'scene.json', tmp_path / 'pose.json'
    run('simulate', '--seed', 2, '--n', 30, '--out', scene_path)
    run('solve', scene_path, '--out', pose_path)
    with pytest.raises(CommandError, match='--theta'):
        run('eval', '--poses', pose_path, '--gt', scene_path, '--points-out', tmp_path / 'points.csv')


@pytest.fixture
def scene_and_pose(tmp_path):
    scene = scene_from_params(SceneParams(n_points=40, pixel_noise_sigma=0.5, outlier_fraction=0.2), seed=3)
    scene_path, pose_path = tmp_path / 'scene.json', tmp_path / 'pose.json'
    write_scene(scene, scene_path)
    run('solve', scene_path, '--out', pose_path)
    return read_scene(scene_path), scene_path, pose_path


@pytest.fixture
def pair_dir(tmp_path):
    sequence = generate_sequence(SceneParams(n_points=30, outlier_fraction=0.2), 3, 0.05, seed=9)
    directory = tmp_path / 'pairs'
    directory.mkdir()
    for k, pair in enumerate(sequence.pairs):
        write_pair(pair, directory / f'pair_{k}.json')
    theta_path = tmp_path / 'theta.json'
    write_theta(WeightParams.uniform(30), theta_path)
    return sequence, directory, theta_path


def test_solve_refine_eval_are_byte_identical(scene_and_pose):
    _, scene_path, pose_path = scene_and_pose
    assert run('solve', scene_path) == run('solve', scene_path)
    assert run('refine', scene_path) == run('refine', scene_path)
    assert run('eval', '--poses', pose_path, '--gt', scene_path) == run('eval', '--poses', pose_path, '--gt', scene_path)


def test_adapt_is_byte_identical(pair_dir):
    _, directory, theta_path = pair_dir
    first = run('adapt', directory, '--theta', theta_path, '--iters', 2)
    assert first == run('adapt', directory, '--theta', theta_path, '--iters', 2)


def test_refine_command_matches_library(scene_and_pose):
    scene, scene_path, _ = scene_and_pose
    payload = json.loads(run('refine', scene_path))
    initial = wdlt_solve(scene.predicted_coords, scene.pixel_obs, np.ones(len(scene)), scene.intrinsics)
    result = lm_refine(initial, scene.predicted_coords, scene.pixel_obs, scene.intrinsics, RefineConfig.from_mapping({}))
    np.testing.assert_allclose(payload['R'], result.pose.rotation, rtol=0, atol=1e-12)
    np.testing.assert_allclose(payload['t'], result.pose.translation, rtol=0, atol=1e-12)
    assert payload['inliers'] == [int(i) for i in result.final_inliers]
    assert payload['iterations_used'] == result.iterations_used


def test_eval_command_matches_library(scene_and_pose):
    scene, scene_path, pose_path = scene_and_pose
    summary = json.loads(run('eval', '--poses', pose_path, '--gt', scene_path))
    expected = evaluate([read_pose(pose_path)], [scene])
    assert summary['recall'] == pytest.approx(expected.recall)
    assert summary['median_translation_error_m'] == pytest.approx(expected.median_translation_error, rel=1e-12)
    assert summary['median_rotation_error_deg'] == pytest.approx(expected.median_rotation_error, rel=1e-12)


def test_adapt_command_matches_library(pair_dir, tmp_path):
    sequence, directory, theta_path = pair_dir
    out_path = tmp_path / 'adapted.json'
    run('adapt', directory, '--theta', theta_path, '--iters', 2, '--out', out_path)
    cfg = dataclasses.replace(AdaptConfig.from_mapping({}), iterations=2)
    expected = adapt_weights(sequence.pairs, WeightParams.uniform(30), cfg)
    np.testing.assert_allclose(read_theta(out_path).theta, expected.theta.theta, rtol=0, atol=1e-12)
