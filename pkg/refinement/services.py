import logging
from typing import Tuple

import numpy as np
from numpy.typing import NDArray

from geometry.lie import hat_rows
from refinement.models import PoseDelta, RefineConfig, RefineResult
from sclocalize.exceptions import InsufficientInliersError, LMStallError
from simulator.models import CameraIntrinsics, Pose

logger = logging.getLogger(__name__)

MIN_INLIERS = 6


def _residuals(pose: Pose, intr: CameraIntrinsics, coords: NDArray, pixels: NDArray) -> Tuple[NDArray, NDArray]:
    projected, depth = intr.project(pose.to_w2c().transform(coords))
    return (projected - pixels).reshape(-1), depth


def find_inliers(
    pose: Pose, coords: NDArray, pixels: NDArray, intr: CameraIntrinsics, threshold: float
) -> NDArray[np.int64]:
    """Sorted indices with positive depth and reprojection error <= threshold."""
    coords = np.asarray(coords, dtype=np.float64).reshape(-1, 3)
    pixels = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    residuals, depth = _residuals(pose, intr, coords, pixels)
    errors = np.linalg.norm(residuals.reshape(-1, 2), axis=1)
    return np.flatnonzero((depth > 0) & (errors <= threshold))


def reprojection_jacobian(pose: Pose, intr: CameraIntrinsics, coords: NDArray) -> NDArray[np.float64]:
    """
    d(pixel)/d(xi) for pose * exp(xi), rows (u_0, v_0, u_1, ...), columns (omega, nu).

    The camera-frame point moves by R (omega x s + nu), so its derivative is
    [-R hat(s) | R], chained with the pinhole projection derivative.
    """
    w2c = pose.to_w2c()
    coords = np.asarray(coords, dtype=np.float64).reshape(-1, 3)
    n = len(coords)
    camera = w2c.transform(coords)
    x, y, z = camera[:, 0], camera[:, 1], camera[:, 2]

    projection = np.zeros((n, 2, 3))
    projection[:, 0, 0] = intr.fx / z
    projection[:, 0, 2] = -intr.fx * x / z**2
    projection[:, 1, 1] = intr.fy / z
    projection[:, 1, 2] = -intr.fy * y / z**2

    point = np.concatenate([-w2c.rotation @ hat_rows(coords), np.broadcast_to(w2c.rotation, (n, 3, 3))], axis=2)
    return np.einsum('nij,njk->nik', projection, point).reshape(2 * n, 6)


def apply_delta(pose: Pose, delta) -> Pose:
    if not isinstance(delta, PoseDelta):
        delta = PoseDelta(delta)
    return delta.apply(pose)


def reprojection_cost(pose: Pose, intr: CameraIntrinsics, coords: NDArray, pixels: NDArray) -> float:
    """Sum of squared pixel residuals; infinite once any point is at depth <= 0."""
    residuals, depth = _residuals(pose, intr, coords, pixels)
    if np.any(depth <= 0):
        return float('inf')
    return float(residuals @ residuals)


def _optimize_fixed_set(pose: Pose, intr, coords, pixels, cfg: RefineConfig):
    """Damped Gauss-Newton on the squared reprojection error of one inlier set."""
    cost = reprojection_cost(pose, intr, coords, pixels)
    costs = [cost]
    damping = cfg.lambda_init
    for _ in range(cfg.max_inner_iterations):
        if cost <= 1e-30:
            break
        residuals, _ = _residuals(pose, intr, coords, pixels)
        J = reprojection_jacobian(pose, intr, coords)
        H = J.T @ J
        g = J.T @ residuals

        accepted = False
        solved = False
        for _ in range(cfg.max_damping_escalations):
            try:
                step = -np.linalg.solve(H + damping * np.diag(np.diag(H)), g)
            except np.linalg.LinAlgError:
                damping *= cfg.lambda_up
                continue
            solved = True
            candidate = apply_delta(pose, step)
            candidate_cost = reprojection_cost(candidate, intr, coords, pixels)
            if candidate_cost < cost:
                accepted = True
                break
            damping *= cfg.lambda_up

        if not solved:
            raise LMStallError(
                f"Normal equations stayed singular after {cfg.max_damping_escalations} damping escalations",
                best=pose,
            )
        if not accepted:
            break

        decrease = cost - candidate_cost
        pose, cost = candidate, candidate_cost
        costs.append(cost)
        damping = max(damping / cfg.lambda_down, 1e-12)
        if decrease <= 1e-15 * max(cost, 1e-300):
            break
    return pose, costs


def lm_refine(
    pose_init: Pose, coords: NDArray, pixels: NDArray, intr: CameraIntrinsics, cfg: RefineConfig
) -> RefineResult:
    """
    Alternate inlier selection and Levenberg-Marquardt on the selected set.

    Stops when the inlier index set repeats exactly or after
    `cfg.max_iterations` optimization passes. Steps that would put an
    inlier at depth <= 0 are rejected like any step that raises the cost.
    """
    coords = np.asarray(coords, dtype=np.float64).reshape(-1, 3)
    pixels = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    pose = pose_init.to_w2c()
    inliers = find_inliers(pose, coords, pixels, intr, cfg.threshold_px)

    history = []
    converged = False
    iterations = 0
    while iterations < cfg.max_iterations:
        if len(inliers) < MIN_INLIERS:
            raise InsufficientInliersError(
                f"{len(inliers)} inliers at {cfg.threshold_px} px after {iterations} iterations; need {MIN_INLIERS}"
            )
        iterations += 1
        optimized = inliers
        try:
            pose, costs = _optimize_fixed_set(pose, intr, coords[inliers], pixels[inliers], cfg)
        except LMStallError as e:
            raise LMStallError(
                str(e),
                best=RefineResult(pose=e.best, iterations_used=iterations, final_inliers=inliers,
                                  cost_history=history, converged=False),
            ) from e
        history.append(costs)
        logger.debug(f"LM pass {iterations}: {len(inliers)} inliers, cost {costs[0]:.4e} -> {costs[-1]:.4e}")

        selected = find_inliers(pose, coords, pixels, intr, cfg.threshold_px)
        if np.array_equal(selected, inliers):
            converged = True
            break
        inliers = selected

    if not converged:
        # Report the set the pose was last optimized on, not the fresh selection
        inliers = optimized
        logger.warning(f"Inlier set still changing after {cfg.max_iterations} iterations")
    logger.info(f"LM refinement: {iterations} iterations, {len(inliers)} inliers")
    return RefineResult(
        pose=pose, iterations_used=iterations, final_inliers=inliers, cost_history=history, converged=converged
    )
