import logging
from typing import List, Sequence

import numpy as np
from django.utils import timezone
from numpy.typing import NDArray

from adaptation.models import AdaptConfig, AdaptResult
from evaluation.models import PoseError
from evaluation.services import pose_error
from geometry.models import DltSolution, DltSystem
from geometry.services import procrustes_regularize, scene_correspondences, weighted_dlt, wdlt_solve
from losses.photometric import photometric_loss
from refinement.services import apply_delta
from sclocalize.exceptions import (
    ConfigurationError,
    DivergenceError,
    EDGradientUnstableError,
    ProcrustesError,
)
from simulator.models import Pose, SyntheticImagePair, SyntheticScene
from training.models import OptimizerSettings, WeightParams
from training.optim import Adam

logger = logging.getLogger(__name__)

EIGENGAP_TOL = 1e-10


def grad_pose_wrt_w(system: DltSystem, w: NDArray, solution: DltSolution) -> NDArray[np.float64]:
    """
    Row i is dv/dw_i for the smallest eigenvector v of M = X^T diag(w) X:
    -(M - lambda_0 I)^+ (X_i^T X_i) v, with the pseudo-inverse taken over
    the remaining eigenpairs.
    """
    eigenvalues, eigenvectors = solution.eigenvalues, solution.eigenvectors
    trace = float(np.sum(eigenvalues))
    gap = eigenvalues[1] - eigenvalues[0]
    if not gap > EIGENGAP_TOL * trace:
        raise EDGradientUnstableError(
            f"Eigenvalue gap {gap:.3e} is below {EIGENGAP_TOL:g} x trace ({trace:.3e})"
        )
    if len(w) != system.n:
        raise ConfigurationError(f"{len(w)} weights for {system.n} correspondences")

    v = solution.vec_t
    others = eigenvectors[:, 1:]
    pinv = (others / (eigenvalues[1:] - eigenvalues[0])) @ others.T

    rows = system.row_pairs()  # (N, 2, 12)
    residuals = rows @ v  # (N, 2)
    pulled = np.einsum('nrk,nr->nk', rows, residuals)  # X_i^T X_i v
    return -pulled @ pinv


def photometric_pose_gradient(pair: SyntheticImagePair, pose: Pose, h: float = 1e-5) -> NDArray[np.float64]:
    """Central differences of L_ph over the 6-DoF right-multiplied increment."""
    grad = np.zeros(6)
    for k in range(6):
        step = np.zeros(6)
        step[k] = h
        plus = photometric_loss(pair, apply_delta(pose, step)).value
        minus = photometric_loss(pair, apply_delta(pose, -step)).value
        grad[k] = (plus - minus) / (2.0 * h)
    return grad


def _loss_through_vector(pair, vec, w, corrs) -> float:
    solution = DltSolution(vec_t=vec, smallest_eigenvalue=0.0, eigenvalues=np.zeros(12), eigenvectors=np.eye(12))
    return photometric_loss(pair, procrustes_regularize(solution, w, corrs)).value


def _pair_gradient(pair: SyntheticImagePair, theta: WeightParams, cfg: AdaptConfig):
    """(L_ph, dL_ph/dtheta) for one pair; scene coordinates enter as constants."""
    if pair.target_scene is None:
        raise ConfigurationError("Image pair has no target correspondences")
    w = theta.activate()
    result = weighted_dlt(scene_correspondences(pair.target_scene), w)
    loss = photometric_loss(pair, result.pose).value

    sensitivity = grad_pose_wrt_w(result.system, w, result.solution)
    grad_v = np.zeros(12)
    for k in range(12):
        step = np.zeros(12)
        step[k] = cfg.fd_step
        plus = _loss_through_vector(pair, result.solution.vec_t + step, w, result.correspondences)
        minus = _loss_through_vector(pair, result.solution.vec_t - step, w, result.correspondences)
        grad_v[k] = (plus - minus) / (2.0 * cfg.fd_step)
    return loss, (sensitivity @ grad_v) * theta.activation_grad()


def adapt_weights(pairs: Sequence[SyntheticImagePair], theta: WeightParams, cfg: AdaptConfig) -> AdaptResult:
    """
    Self-supervised fine-tuning of theta from photometric consistency.

    Each target pose comes from the weighted DLT on the pair's target
    correspondences; the loss reaches theta only through that pose. Pairs
    whose eigenvector derivative is unstable, or whose pose sign cannot be
    resolved, are skipped for the iteration.
    """
    if not pairs:
        raise ConfigurationError("No image pairs to adapt on")
    started = timezone.now()
    logger.info(f"Adapting {len(theta)} weights on {len(pairs)} pairs for {cfg.iterations} iterations at {started}")

    adam = Adam(OptimizerSettings(learning_rate=cfg.learning_rate, divergence_factor=cfg.divergence_factor))
    curve: List[float] = []
    skipped = 0
    initial = None
    for iteration in range(cfg.iterations):
        losses, grads = [], []
        for index, pair in enumerate(pairs):
            try:
                loss, grad = _pair_gradient(pair, theta, cfg)
            except (EDGradientUnstableError, ProcrustesError) as e:
                skipped += 1
                logger.warning(f"Skipping pair {index} at iteration {iteration}: {e}")
                continue
            losses.append(loss)
            grads.append(grad)
        if not losses:
            raise EDGradientUnstableError(f"Every pair was skipped at iteration {iteration}")

        loss = float(np.mean(losses))
        if initial is None:
            initial = loss
        if not np.isfinite(loss) or loss > cfg.divergence_factor * max(initial, 1e-12):
            raise DivergenceError(f"Photometric loss {loss:.3e} diverged at iteration {iteration}")
        curve.append(loss)
        theta = WeightParams(adam.step(theta.theta, np.mean(grads, axis=0)))
        logger.debug(f"adapt iter {iteration}: L_ph={loss:.6e}")

    elapsed = (timezone.now() - started).total_seconds()
    logger.info(f"Adaptation finished in {elapsed:.2f}s: L_ph {curve[0]:.4e} -> {curve[-1]:.4e}")
    return AdaptResult(theta=theta, loss=np.array(curve), skipped_frames=skipped)


def evaluate_frames(scenes: Sequence[SyntheticScene], theta: WeightParams) -> List[PoseError]:
    """Pose errors of the weighted DLT with the activated weights on each frame."""
    w = theta.activate()
    return [
        pose_error(wdlt_solve(scene.predicted_coords, scene.pixel_obs, w, scene.intrinsics), scene.gt_pose)
        for scene in scenes
    ]
