import logging

import numpy as np
from numpy.typing import NDArray

from geometry.models import Correspondences, DltSystem
from geometry.services import check_weights
from losses.models import (
    GroundTruthVector,
    InlierLabels,
    LossConfig,
    RegressionLoss,
    ReprojectionError,
    ReprojectionLoss,
)
from sclocalize.exceptions import ConfigurationError, DimensionMismatchError
from simulator.models import CameraIntrinsics, Pose
from simulator.services import reprojection_errors

logger = logging.getLogger(__name__)


# Reprojection


def reproj_error(pose: Pose, intr: CameraIntrinsics, s: NDArray, p: NDArray) -> ReprojectionError:
    error = reprojection_errors(pose, intr, np.reshape(s, (1, 3)), np.reshape(p, (1, 2)))[0]
    if np.isinf(error):
        return ReprojectionError(value=float('inf'), behind_camera=True)
    return ReprojectionError(value=float(error))


def _aligned(coords: NDArray, pixels: NDArray):
    coords = np.asarray(coords, dtype=np.float64).reshape(-1, 3)
    pixels = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    if len(coords) != len(pixels):
        raise DimensionMismatchError(f"{len(coords)} scene coordinates but {len(pixels)} pixels")
    return coords, pixels


def heuristic_points(pixels: NDArray, pose_gt: Pose, intr: CameraIntrinsics, depth: float) -> NDArray:
    """World points at `depth` along each observed pixel ray."""
    w2c = pose_gt.to_w2c()
    rays = np.column_stack([
        (pixels[:, 0] - intr.cx) / intr.fx,
        (pixels[:, 1] - intr.cy) / intr.fy,
        np.ones(len(pixels)),
    ])
    return (depth * rays - w2c.translation) @ w2c.rotation


def _validity(coords, pixels, pose_gt, intr, cfg: LossConfig):
    camera = pose_gt.to_w2c().transform(coords)
    projected, depth = intr.project(camera)
    errors = np.linalg.norm(projected - pixels, axis=1)
    valid = (depth >= cfg.depth_min) & (depth <= cfg.depth_max) & (errors < cfg.max_reprojection_px)
    return camera, projected, errors, valid


def reprojection_loss(
    coords: NDArray, pixels: NDArray, pose_gt: Pose, intr: CameraIntrinsics, cfg: LossConfig
) -> ReprojectionLoss:
    """
    Mean per-point term: pixel error for valid points, otherwise the L1
    distance to the point `depth_heuristic` meters along the observed ray.
    """
    coords, pixels = _aligned(coords, pixels)
    _, _, errors, valid = _validity(coords, pixels, pose_gt, intr, cfg)
    fallback = np.abs(heuristic_points(pixels, pose_gt, intr, cfg.depth_heuristic) - coords).sum(axis=1)
    terms = np.where(valid, errors, fallback)
    return ReprojectionLoss(value=float(terms.mean()), terms=terms, valid=valid)


def grad_reprojection_loss_wrt_coords(
    coords: NDArray, pixels: NDArray, pose_gt: Pose, intr: CameraIntrinsics, cfg: LossConfig
) -> NDArray[np.float64]:
    """dL_p/ds: through the projection for valid points, L1 sub-gradient otherwise."""
    coords, pixels = _aligned(coords, pixels)
    n = len(coords)
    camera, projected, errors, valid = _validity(coords, pixels, pose_gt, intr, cfg)
    rotation = pose_gt.to_w2c().rotation

    grad = np.sign(coords - heuristic_points(pixels, pose_gt, intr, cfg.depth_heuristic))

    x, y, z = camera[:, 0], camera[:, 1], np.where(valid, camera[:, 2], 1.0)
    jac = np.zeros((n, 2, 3))
    jac[:, 0, 0] = intr.fx / z
    jac[:, 0, 2] = -intr.fx * x / z**2
    jac[:, 1, 1] = intr.fy / z
    jac[:, 1, 2] = -intr.fy * y / z**2
    safe = np.where(errors > 0, errors, 1.0)
    direction = np.where((errors > 0)[:, None], (projected - pixels) / safe[:, None], 0.0)
    through_projection = np.einsum('ni,nij,jk->nk', direction, jac, rotation)

    grad[valid] = through_projection[valid]
    return grad / n


def inlier_labels(errors: NDArray, tau: float) -> InlierLabels:
    """l_i = r_i <= tau; behind-camera points (inf) are outliers."""
    return InlierLabels(l=np.asarray(errors, dtype=np.float64) <= tau, tau=tau)


def ground_truth_vector(pose: Pose) -> GroundTruthVector:
    vec = pose.to_w2c().vec()
    return GroundTruthVector(t=vec / np.linalg.norm(vec), pose=pose)


# Classification


def classification_loss(w: NDArray, labels: InlierLabels, eps: float = 1e-7) -> float:
    """Mean binary cross-entropy with w clamped to [eps, 1 - eps]."""
    w = check_weights(w, len(labels))
    clamped = np.clip(w, eps, 1.0 - eps)
    l = labels.as_float()
    return float(np.mean(-(l * np.log(clamped) + (1.0 - l) * np.log(1.0 - clamped))))


def grad_classification_loss_wrt_w(w: NDArray, labels: InlierLabels, eps: float = 1e-7) -> NDArray[np.float64]:
    """BCE derivative; zero where the clamp is active."""
    w = check_weights(w, len(labels))
    l = labels.as_float()
    inside = (w > eps) & (w < 1.0 - eps)
    safe = np.where(inside, w, 0.5)
    grad = (-l / safe + (1.0 - l) / (1.0 - safe)) / len(w)
    return np.where(inside, grad, 0.0)


# Eigen-decomposition free regression


def regression_loss(system: DltSystem, w: NDArray, t_gt: GroundTruthVector, cfg: LossConfig) -> RegressionLoss:
    """
    L_r = t^T X^T diag(w) X t + alpha * exp(-beta * tr(Xbar^T diag(w) Xbar)),
    Xbar = X (I - t t^T). `trace_term` is returned for calibrating beta.
    """
    w = check_weights(w, system.n)
    row_weights = np.repeat(w, 2)
    Xt = system.X @ t_gt.t
    residual = float(row_weights @ Xt**2)
    projected_sq = (system.X**2).sum(axis=1) - Xt**2
    trace = float(row_weights @ projected_sq)
    value = residual + cfg.alpha * np.exp(-cfg.beta * trace)
    return RegressionLoss(value=float(value), residual=residual, trace_term=trace)


def grad_regression_loss_wrt_w(system: DltSystem, w: NDArray, t_gt: GroundTruthVector, cfg: LossConfig) -> NDArray:
    w = check_weights(w, system.n)
    Xt = system.X @ t_gt.t
    row_residual = Xt**2
    row_projected = (system.X**2).sum(axis=1) - row_residual
    trace = float(np.repeat(w, 2) @ row_projected)
    penalty = cfg.alpha * cfg.beta * np.exp(-cfg.beta * trace)
    return row_residual.reshape(-1, 2).sum(axis=1) - penalty * row_projected.reshape(-1, 2).sum(axis=1)


def _point_terms(corrs: Correspondences, t: NDArray):
    """Per-point residual components a, b and their gradients with respect to (x, y, z)."""
    t1, t2, t3 = t[0:4], t[4:8], t[8:12]
    u, v = corrs.uv[:, 0], corrs.uv[:, 1]
    row_a = t1[None, :] - u[:, None] * t3[None, :]
    row_b = t2[None, :] - v[:, None] * t3[None, :]
    homogeneous = np.hstack([corrs.coords, np.ones((len(corrs), 1))])
    a = (homogeneous * row_a).sum(axis=1)
    b = (homogeneous * row_b).sum(axis=1)
    return a, b, row_a[:, :3], row_b[:, :3]


def grad_regression_loss_wrt_coords(
    corrs: Correspondences,
    w: NDArray,
    t_gt: GroundTruthVector,
    cfg: LossConfig,
    include_trace_term: bool = True,
) -> NDArray[np.float64]:
    """
    dL_r/d(x_i, y_i, z_i) through the row construction.

    Per point the rows satisfy X_1 t = a, X_2 t = b and
    |X_1|^2 + |X_2|^2 = (|s|^2 + 1)(2 + u^2 + v^2). With
    `include_trace_term=False` only the residual term is differentiated.
    """
    w = check_weights(w, len(corrs))
    a, b, grad_a, grad_b = _point_terms(corrs, t_gt.t)
    pull = 2.0 * (a[:, None] * grad_a + b[:, None] * grad_b)
    grad = w[:, None] * pull
    if not include_trace_term:
        return grad

    coords, uv = corrs.coords, corrs.uv
    ray = 2.0 + (uv**2).sum(axis=1)
    projected = ((coords**2).sum(axis=1) + 1.0) * ray - a**2 - b**2
    trace = float(w @ projected)
    penalty = cfg.alpha * cfg.beta * np.exp(-cfg.beta * trace)
    return grad - penalty * w[:, None] * (2.0 * coords * ray[:, None] - pull)


def calibrate_beta(trace_term: float) -> float:
    """beta ~ 1 / trace, so the exponent starts near -1."""
    if not trace_term > 0:
        raise ConfigurationError(f"Cannot calibrate beta from a non-positive trace ({trace_term})")
    beta = 1.0 / trace_term
    logger.info(f"Calibrated beta={beta:.3e} from trace {trace_term:.3e}")
    return beta
