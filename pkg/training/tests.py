import json
from io import StringIO

import numpy as np
import pytest
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase

from evaluation.services import scene_reprojection_errors, weight_interpretability
from losses.models import LossConfig
from losses.services import inlier_labels
from sclocalize.exceptions import ConfigurationError, DimensionMismatchError, DivergenceError, EmptyInputError
from simulator.models import SceneParams
from simulator.serializers import write_scene
from simulator.services import reprojection_errors, scene_from_params
from training.models import (
    MODE_JOINT,
    MODE_REGRESSION,
    SCHEDULE_ALTERNATE,
    FitReport,
    OptimizerSettings,
    WeightParams,
)
from training.optim import Adam
from training.serializers import (
    CURVE_HEADER,
    FitReportSerializer,
    WeightParamsSerializer,
    curve_csv,
    read_theta,
    read_thetas,
    write_theta,
)
from training.services import _Tracker, e2e_refine, fit_weights, init_scene_coordinates, ranking_auc


class WeightParamsTests(SimpleTestCase):
    def test_activation(self):
        theta = WeightParams([-1.0, 0.0, 1.0])
        np.testing.assert_allclose(theta.activate(), [0.0, 0.0, np.tanh(1.0)])

    def test_activation_grad(self):
        theta = WeightParams([-0.5, 0.3, 2.0])
        h = 1e-6
        numeric = (WeightParams(theta.theta + h).activate() - WeightParams(theta.theta - h).activate()) / (2 * h)
        np.testing.assert_allclose(theta.activation_grad(), numeric, rtol=1e-6, atol=1e-10)

    def test_optimistic_start(self):
        self.assertAlmostEqual(WeightParams.uniform(4).activate()[0], np.tanh(1.5))

    def test_rejects_non_finite(self):
        with self.assertRaises(ConfigurationError):
            WeightParams([1.0, np.nan])


class AdamTests(SimpleTestCase):
    def test_first_step_moves_by_learning_rate(self):
        adam = Adam(OptimizerSettings(learning_rate=0.01))
        params = adam.step(np.array([1.0, -1.0]), np.array([2.0, -3.0]))
        np.testing.assert_allclose(params, [0.99, -0.99], atol=1e-9)

    def test_zero_gradient_leaves_params(self):
        adam = Adam(OptimizerSettings())
        params = np.array([0.5, 0.25])
        np.testing.assert_array_equal(adam.step(params, np.zeros(2)), params)

    def test_settings_validation(self):
        with self.assertRaises(ConfigurationError):
            OptimizerSettings(learning_rate=0.0)
        with self.assertRaises(ConfigurationError):
            OptimizerSettings(beta1=1.0)


class RankingAucTests(SimpleTestCase):
    def setUp(self):
        self.mask = np.array([False, False, True, True])

    def test_perfect_separation(self):
        self.assertEqual(ranking_auc([0.9, 0.8, 0.1, 0.2], self.mask), 1.0)

    def test_reversed(self):
        self.assertEqual(ranking_auc([0.1, 0.2, 0.9, 0.8], self.mask), 0.0)

    def test_ties_count_half(self):
        self.assertEqual(ranking_auc([0.5, 0.5, 0.5, 0.5], self.mask), 0.5)

    def test_needs_both_classes(self):
        with self.assertRaises(EmptyInputError):
            ranking_auc([0.5, 0.5], [False, False])


class FitWeightsTests(SimpleTestCase):
    """Weight initialization stage"""

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.scene = scene_from_params(SceneParams(n_points=100, outlier_fraction=0.3), seed=1)
        cls.report = fit_weights(cls.scene, LossConfig(), OptimizerSettings(), mode=MODE_JOINT, iters=500, seed=1)

    def test_separates_outliers(self):
        w = self.report.weights
        self.assertLess(w[self.scene.outlier_mask].mean(), 0.1)
        self.assertGreater(w[~self.scene.outlier_mask].mean(), 0.6)

    def test_pose_error_shrinks(self):
        self.assertLess(self.report.translation_error[-1], self.report.translation_error[0])
        self.assertLess(self.report.translation_error[-1], 0.01)

    def test_curves_cover_every_iteration(self):
        self.assertEqual(self.report.iterations, 500)
        self.assertEqual(len(self.report.classification), 500)
        self.assertLessEqual(self.report.best_loss[-1], self.report.loss[0])
        self.assertIsNone(self.report.coords)

    def test_weights_explain_reprojection_errors(self):
        r = weight_interpretability(self.report.weights, scene_reprojection_errors(self.scene))
        self.assertGreater(r, 0.3)

    def test_rerun_is_identical(self):
        again = fit_weights(self.scene, LossConfig(), OptimizerSettings(), mode=MODE_JOINT, iters=500, seed=1)
        self.assertEqual(again, self.report)

    def test_theta_length_must_match(self):
        with self.assertRaises(ConfigurationError):
            fit_weights(self.scene, LossConfig(), OptimizerSettings(), iters=5, theta=WeightParams.uniform(10))

    def test_unknown_mode(self):
        with self.assertRaises(ConfigurationError):
            fit_weights(self.scene, LossConfig(), OptimizerSettings(), mode='classification-only', iters=5)


@pytest.mark.slow
@pytest.mark.parametrize('outlier_fraction', [0.1, 0.3, 0.5])
def test_pose_supervision_alone_ranks_outliers(outlier_fraction):
    for seed in range(10):
        scene = scene_from_params(SceneParams(n_points=200, outlier_fraction=outlier_fraction), seed=seed)
        report = fit_weights(scene, LossConfig(), OptimizerSettings(), mode=MODE_REGRESSION, iters=1000, seed=seed)
        assert report.classification.max() == 0.0
        assert ranking_auc(report.weights, scene.outlier_mask) > 0.9, f"seed {seed}"


@pytest.mark.slow
def test_classification_warm_start_beats_cold_regression():
    scene = scene_from_params(SceneParams(n_points=100, outlier_fraction=0.5), seed=2)
    cold = fit_weights(scene, LossConfig(), OptimizerSettings(), mode=MODE_REGRESSION, iters=500, theta_init=0.0)
    warm = fit_weights(scene, LossConfig(), OptimizerSettings(), mode=MODE_JOINT, iters=250)
    warm = fit_weights(scene, LossConfig(), OptimizerSettings(), mode=MODE_REGRESSION, iters=250, theta=warm.theta)
    assert ranking_auc(warm.weights, scene.outlier_mask) > ranking_auc(cold.weights, scene.outlier_mask)


@pytest.mark.slow
def test_step_size_of_1e4_also_separates_outliers(outlier_scene):
    report = fit_weights(
        outlier_scene, LossConfig(), OptimizerSettings(learning_rate=1e-4), mode=MODE_JOINT, iters=20000, seed=1
    )
    w = report.weights
    assert w[outlier_scene.outlier_mask].mean() < 0.1
    assert w[~outlier_scene.outlier_mask].mean() > 0.6


def test_clean_scene_pose_stays_exact(clean_scene):
    report = fit_weights(clean_scene, LossConfig(), OptimizerSettings(), iters=50)
    assert report.translation_error.max() < 1e-6
    assert report.rotation_error.max() < 1e-4


def test_divergence_guard(clean_scene):
    labels = inlier_labels(scene_reprojection_errors(clean_scene), 1.0)
    tracker = _Tracker(clean_scene, labels, divergence_factor=1e6)
    w = np.ones(len(clean_scene))
    tracker.record(0, 1.0, 0.0, 1.0, w, clean_scene.predicted_coords)
    with pytest.raises(DivergenceError):
        tracker.record(1, 2e6, 0.0, 2e6, w, clean_scene.predicted_coords)
    with pytest.raises(DivergenceError):
        tracker.record(1, float('nan'), 0.0, 0.0, w, clean_scene.predicted_coords)


class EndToEndTests(SimpleTestCase):
    """Joint refinement of scene coordinates and weights"""

    def setUp(self):
        self.cfg = LossConfig()
        self.opt = OptimizerSettings(learning_rate=1e-3)

    def test_exact_coordinates_barely_move(self):
        scene = scene_from_params(SceneParams(n_points=60), seed=2)
        report = e2e_refine(scene, self.cfg, self.opt, iters=50, seed=0, theta=WeightParams.uniform(60))
        self.assertLess(np.abs(report.coords - scene.predicted_coords).max(), 1e-6)

    def test_reprojection_error_of_inliers_drops(self):
        scene = scene_from_params(SceneParams(n_points=80, coord_noise_sigma=0.005), seed=3)
        report = e2e_refine(scene, self.cfg, self.opt, iters=200, seed=0, theta=WeightParams.uniform(80))
        self.assertEqual(report.stage, 'e2e')
        self.assertLess(report.reprojection_error[-1], report.reprojection_error[0])

    def test_alternate_schedule_updates_weights_first(self):
        scene = scene_from_params(SceneParams(n_points=40, coord_noise_sigma=0.005), seed=4)
        theta = WeightParams.uniform(40)
        report = e2e_refine(scene, self.cfg, self.opt, iters=1, seed=0, theta=theta, schedule=SCHEDULE_ALTERNATE)
        np.testing.assert_array_equal(report.coords, scene.predicted_coords)
        self.assertNotEqual(report.theta, theta)

        report = e2e_refine(scene, self.cfg, self.opt, iters=2, seed=0, theta=theta, schedule=SCHEDULE_ALTERNATE)
        self.assertFalse(np.array_equal(report.coords, scene.predicted_coords))

    def test_unknown_schedule(self):
        scene = scene_from_params(SceneParams(n_points=20), seed=4)
        with self.assertRaises(ConfigurationError):
            e2e_refine(scene, self.cfg, self.opt, iters=1, seed=0, theta=WeightParams.uniform(20), schedule='sometimes')


@pytest.mark.slow
class StagedTrainingTests(SimpleTestCase):
    """Weight initialization followed by end-to-end refinement on noisy coordinates"""

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.scene = scene_from_params(SceneParams(n_points=100, coord_noise_sigma=0.02, outlier_fraction=0.3), seed=1)
        cls.fit = fit_weights(cls.scene, LossConfig(), OptimizerSettings(), mode=MODE_JOINT, iters=500, seed=1)

    def inlier_median(self, coords):
        scene = self.scene
        errors = reprojection_errors(scene.gt_pose, scene.intrinsics, coords, scene.pixel_obs)
        return np.median(errors[~scene.outlier_mask])

    def refine(self, learning_rate, iters):
        return e2e_refine(
            self.scene, LossConfig(), OptimizerSettings(learning_rate=learning_rate), iters=iters, seed=1,
            theta=self.fit.theta,
        )

    def test_median_reprojection_error_drops_by_a_fifth(self):
        report = self.refine(1e-3, 500)
        self.assertLessEqual(self.inlier_median(report.coords), 0.8 * self.inlier_median(self.scene.predicted_coords))

    def test_final_pose_no_worse_than_weight_initialization(self):
        report = self.refine(1e-3, 500)
        self.assertLessEqual(report.translation_error[-1], self.fit.translation_error[-1])
        self.assertLessEqual(report.rotation_error[-1], self.fit.rotation_error[-1])

    def test_step_size_of_1e5_also_reduces_reprojection_error(self):
        report = self.refine(1e-5, 5000)
        self.assertLessEqual(self.inlier_median(report.coords), 0.8 * self.inlier_median(self.scene.predicted_coords))


def test_coordinate_initialization_reduces_reprojection_loss():
    scene = scene_from_params(SceneParams(n_points=50, coord_noise_sigma=0.05), seed=5)
    init = init_scene_coordinates(scene, LossConfig(), OptimizerSettings(learning_rate=1e-3), iters=200)
    assert len(init.loss) == 200
    assert init.loss[-1] < 0.5 * init.loss[0]


# Documents


def small_report():
    curve = np.array([3.0, 2.0, 1.0])
    return FitReport(
        stage='fit',
        mode=MODE_JOINT,
        seed=3,
        loss=curve,
        classification=curve / 2,
        regression=curve / 4,
        translation_error=np.array([0.1, np.nan, 0.01]),
        rotation_error=np.array([1.0, np.nan, 0.1]),
        reprojection_error=np.zeros(3),
        theta=WeightParams([1.0, -1.0]),
        wall_clock=12.5,
    )


def test_weight_params_document():
    assert WeightParamsSerializer(WeightParams([0.5, -0.5])).data == {'activation': 'tanh_relu', 'theta': [0.5, -0.5]}


def test_theta_file_round_trip(tmp_path):
    path = tmp_path / 'theta.json'
    write_theta(WeightParams([0.5, 1.25, -3.0]), path)
    assert read_theta(path) == WeightParams([0.5, 1.25, -3.0])


def test_read_thetas_shares_a_single_file(tmp_path):
    path = tmp_path / 'theta.json'
    write_theta(WeightParams([0.5, 1.0]), path)
    assert len(read_thetas([path], 3)) == 3
    with pytest.raises(DimensionMismatchError):
        read_thetas([path, path], 3)


def test_report_document_has_no_wall_clock():
    data = FitReportSerializer(small_report()).data
    assert 'wall_clock' not in json.dumps(data)
    assert data['final_loss'] == 1.0
    assert data['curve']['trans_err_m'][1] is None
    assert data['weights'] == [pytest.approx(np.tanh(1.0)), 0.0]


def test_curve_csv():
    lines = curve_csv(small_report()).splitlines()
    assert lines[0] == ','.join(CURVE_HEADER)
    assert len(lines) == 4
    assert lines[2].split(',')[4] == ''


# fit subcommand


@pytest.fixture
def scene_file(tmp_path):
    path = tmp_path / 'scene.json'
    write_scene(scene_from_params(SceneParams(n_points=40, outlier_fraction=0.2), seed=6), path)
    return path


def run_fit(*args):
    out = StringIO()
    call_command('fit', *[str(a) for a in args], stdout=out)
    return out.getvalue()


def test_fit_command_writes_theta_and_curve(scene_file, tmp_path):
    theta_path, curve_path = tmp_path / 'theta.json', tmp_path / 'curve.csv'
    data = json.loads(run_fit(scene_file, '--iters', 30, '--theta-out', theta_path, '--curve-out', curve_path))
    assert data['iterations'] == 30
    assert data['mode'] == MODE_JOINT
    assert len(read_theta(theta_path)) == 40
    assert len(curve_path.read_text().splitlines()) == 31


def test_fit_command_is_byte_identical(scene_file):
    assert run_fit(scene_file, '--iters', 20, '--seed', 1) == run_fit(scene_file, '--iters', 20, '--seed', 1)


def test_fit_command_regression_then_e2e(scene_file):
    data = json.loads(run_fit(scene_file, '--mode', 'regression', '--iters', 10, '--e2e-iters', 5))
    assert data['stage'] == 'e2e'
    assert data['mode'] == MODE_REGRESSION
    assert data['iterations'] == 5


def test_fit_command_rejects_empty_run(scene_file):
    with pytest.raises(CommandError, match='Nothing to do'):
        run_fit(scene_file, '--iters', 0)


def test_fit_command_e2e_needs_weights(scene_file):
    with pytest.raises(CommandError, match='fitted weights'):
        run_fit(scene_file, '--iters', 0, '--e2e-iters', 5)
