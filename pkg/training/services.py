import logging
from typing import Optional

import numpy as np
from django.utils import timezone
from numpy.typing import NDArray
from scipy.stats import rankdata

from evaluation.services import pose_error
from geometry.services import build_system, make_correspondences, weighted_dlt
from losses.models import LossConfig
from losses.services import (
    classification_loss,
    grad_classification_loss_wrt_w,
    grad_regression_loss_wrt_coords,
    grad_regression_loss_wrt_w,
    grad_reprojection_loss_wrt_coords,
    ground_truth_vector,
    inlier_labels,
    regression_loss,
    reprojection_loss,
)
from sclocalize.exceptions import (
    ConfigurationError,
    DivergenceError,
    EmptyInputError,
    PipelineError,
)
from simulator.models import SyntheticScene
from simulator.services import reprojection_errors
from training.models import (
    COORD_GRADIENT_FULL,
    COORD_GRADIENT_RESIDUAL,
    MODE_JOINT,
    MODE_REGRESSION,
    MODES,
    SCHEDULE_ALTERNATE,
    SCHEDULE_JOINT,
    CoordinateInit,
    FitReport,
    OptimizerSettings,
    WeightParams,
)
from training.optim import Adam

logger = logging.getLogger(__name__)


def ranking_auc(weights: NDArray, outlier_mask: NDArray) -> float:
    """Mann-Whitney AUC: probability an inlier outweighs an outlier, ties count one half."""
    weights = np.asarray(weights, dtype=np.float64).reshape(-1)
    outlier_mask = np.asarray(outlier_mask, dtype=bool).reshape(-1)
    n_out = int(outlier_mask.sum())
    n_in = len(weights) - n_out
    if n_in == 0 or n_out == 0:
        raise EmptyInputError("Ranking AUC needs both inliers and outliers")
    ranks = rankdata(weights)
    return float((ranks[~outlier_mask].sum() - n_in * (n_in + 1) / 2.0) / (n_in * n_out))


class _Tracker:
    """Per-iteration curves of one fit, plus the divergence guard."""

    def __init__(self, scene: SyntheticScene, labels, divergence_factor: float):
        self.scene = scene
        self.inliers = labels.l
        self.divergence_factor = divergence_factor
        self.initial = None
        self.rows = []

    def record(self, iteration: int, loss: float, l_c: float, l_r: float, w: NDArray, coords: NDArray):
        if self.initial is None:
            self.initial = loss
        if not np.isfinite(loss) or loss > self.divergence_factor * self.initial:
            raise DivergenceError(
                f"Loss {loss:.3e} at iteration {iteration} exceeds {self.divergence_factor:g}x "
                f"the initial {self.initial:.3e}"
            )
        trans, rot = self._pose_error(w, coords)
        errors = reprojection_errors(self.scene.gt_pose, self.scene.intrinsics, coords, self.scene.pixel_obs)
        reproj = float(errors[self.inliers].mean()) if self.inliers.any() else float('nan')
        self.rows.append((loss, l_c, l_r, trans, rot, reproj))
        logger.debug(f"iter {iteration}: loss={loss:.6e} L_c={l_c:.4e} L_r={l_r:.4e} t_err={trans:.4e}")

    def _pose_error(self, w, coords):
        try:
            corrs = make_correspondences(coords, self.scene.pixel_obs, self.scene.intrinsics)
            error = pose_error(weighted_dlt(corrs, w).pose, self.scene.gt_pose)
        except PipelineError:
            return float('nan'), float('nan')
        return error.translation_error, error.rotation_error

    def report(self, stage, mode, seed, theta, coords, started) -> FitReport:
        curves = np.array(self.rows, dtype=np.float64).reshape(-1, 6).T
        elapsed = (timezone.now() - started).total_seconds()
        logger.info(f"{stage} finished {len(self.rows)} iterations in {elapsed:.2f}s (final loss {curves[0][-1]:.6e})")
        return FitReport(
            stage=stage,
            mode=mode,
            seed=seed,
            loss=curves[0],
            classification=curves[1],
            regression=curves[2],
            translation_error=curves[3],
            rotation_error=curves[4],
            reprojection_error=curves[5],
            theta=theta,
            coords=coords,
            wall_clock=elapsed,
        )


def _scene_problem(scene: SyntheticScene, coords: NDArray, cfg: LossConfig):
    errors = reprojection_errors(scene.gt_pose, scene.intrinsics, coords, scene.pixel_obs)
    labels = inlier_labels(errors, cfg.tau)
    return labels, ground_truth_vector(scene.gt_pose)


def _objective(mode, system, w, labels, t_gt, cfg: LossConfig):
    """(total, L_c, L_r, dL/dw) of L = L_c + gamma * L_r (L_c dropped for regression-only)."""
    reg = regression_loss(system, w, t_gt, cfg)
    grad_w = cfg.gamma * grad_regression_loss_wrt_w(system, w, t_gt, cfg)
    l_c = 0.0
    if mode == MODE_JOINT:
        l_c = classification_loss(w, labels, cfg.bce_eps)
        grad_w = grad_w + grad_classification_loss_wrt_w(w, labels, cfg.bce_eps)
    return l_c + cfg.gamma * reg.value, l_c, reg.value, grad_w


def fit_weights(
    scene: SyntheticScene,
    cfg: LossConfig,
    opt: OptimizerSettings,
    mode: str = MODE_JOINT,
    iters: int = 5000,
    seed: int = 0,
    theta: Optional[WeightParams] = None,
    coords: Optional[NDArray] = None,
    theta_init: float = 1.5,
) -> FitReport:
    """
    Weight initialization stage: Adam on theta with scene coordinates fixed.

    Inlier labels come from the ground-truth reprojection errors, computed
    once at the start. The run is deterministic; `seed` is recorded in the
    report.
    """
    if mode not in MODES:
        raise ConfigurationError(f"Unknown fit mode '{mode}', expected one of {MODES}")
    if iters < 1:
        raise ConfigurationError(f"iters must be at least 1, got {iters}")
    coords = scene.predicted_coords if coords is None else np.asarray(coords, dtype=np.float64)
    theta = WeightParams.uniform(len(scene), theta_init) if theta is None else theta
    if len(theta) != len(scene):
        raise ConfigurationError(f"{len(theta)} weight parameters for {len(scene)} points")

    started = timezone.now()
    logger.info(f"Fitting weights ({mode}, {iters} iterations, seed={seed}) at {started}")
    labels, t_gt = _scene_problem(scene, coords, cfg)
    system = build_system(make_correspondences(coords, scene.pixel_obs, scene.intrinsics))
    tracker = _Tracker(scene, labels, opt.divergence_factor)
    adam = Adam(opt)

    for iteration in range(iters):
        w = theta.activate()
        loss, l_c, l_r, grad_w = _objective(mode, system, w, labels, t_gt, cfg)
        tracker.record(iteration, loss, l_c, l_r, w, coords)
        theta = WeightParams(adam.step(theta.theta, grad_w * theta.activation_grad()))

    return tracker.report('fit', mode, seed, theta, None, started)


def e2e_refine(
    scene: SyntheticScene,
    cfg: LossConfig,
    opt: OptimizerSettings,
    iters: int,
    seed: int,
    theta: WeightParams,
    coords: Optional[NDArray] = None,
    schedule: str = SCHEDULE_JOINT,
    coord_gradient: str = COORD_GRADIENT_RESIDUAL,
    mode: str = MODE_JOINT,
) -> FitReport:
    """
    End-to-end stage: update scene coordinates and theta together.

    Needs a theta from `fit_weights`. Coordinates move along the gradient of
    gamma * L_r; with the default `residual` setting only the pose-consistency
    term is differentiated. `alternate` updates theta on even and coordinates
    on odd iterations.
    """
    if schedule not in (SCHEDULE_JOINT, SCHEDULE_ALTERNATE):
        raise ConfigurationError(f"Unknown schedule '{schedule}'")
    if coord_gradient not in (COORD_GRADIENT_RESIDUAL, COORD_GRADIENT_FULL):
        raise ConfigurationError(f"Unknown coordinate gradient '{coord_gradient}'")
    if mode not in MODES:
        raise ConfigurationError(f"Unknown fit mode '{mode}', expected one of {MODES}")
    if iters < 1:
        raise ConfigurationError(f"iters must be at least 1, got {iters}")
    coords = np.array(scene.predicted_coords if coords is None else coords, dtype=np.float64)
    if len(theta) != len(scene):
        raise ConfigurationError(f"{len(theta)} weight parameters for {len(scene)} points")

    started = timezone.now()
    logger.info(f"End-to-end refinement ({schedule}, {iters} iterations, seed={seed}) at {started}")
    labels, t_gt = _scene_problem(scene, coords, cfg)
    tracker = _Tracker(scene, labels, opt.divergence_factor)
    theta_opt, coord_opt = Adam(opt), Adam(opt)
    full = coord_gradient == COORD_GRADIENT_FULL

    for iteration in range(iters):
        w = theta.activate()
        corrs = make_correspondences(coords, scene.pixel_obs, scene.intrinsics)
        loss, l_c, l_r, grad_w = _objective(mode, build_system(corrs), w, labels, t_gt, cfg)
        tracker.record(iteration, loss, l_c, l_r, w, coords)

        update_theta = schedule == SCHEDULE_JOINT or iteration % 2 == 0
        update_coords = schedule == SCHEDULE_JOINT or iteration % 2 == 1
        if update_coords:
            grad_s = cfg.gamma * grad_regression_loss_wrt_coords(corrs, w, t_gt, cfg, include_trace_term=full)
            coords = coord_opt.step(coords, grad_s)
        if update_theta:
            theta = WeightParams(theta_opt.step(theta.theta, grad_w * theta.activation_grad()))

    return tracker.report('e2e', mode, seed, theta, coords, started)


def init_scene_coordinates(
    scene: SyntheticScene,
    cfg: LossConfig,
    opt: OptimizerSettings,
    iters: int,
    coords: Optional[NDArray] = None,
) -> CoordinateInit:
    """Scene coordinate initialization: Adam on the coordinates against L_p at the true pose."""
    if iters < 1:
        raise ConfigurationError(f"iters must be at least 1, got {iters}")
    coords = np.array(scene.predicted_coords if coords is None else coords, dtype=np.float64)
    adam = Adam(opt)
    curve = []
    for _ in range(iters):
        curve.append(reprojection_loss(coords, scene.pixel_obs, scene.gt_pose, scene.intrinsics, cfg).value)
        grad = grad_reprojection_loss_wrt_coords(coords, scene.pixel_obs, scene.gt_pose, scene.intrinsics, cfg)
        coords = adam.step(coords, grad)
    logger.info(f"Coordinate initialization: L_p {curve[0]:.4f} -> {curve[-1]:.4f} over {iters} iterations")
    return CoordinateInit(coords=coords, loss=np.array(curve))
