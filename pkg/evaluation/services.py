import logging
from concurrent.futures import ThreadPoolExecutor
from typing import List, Optional, Sequence, Tuple

import numpy as np
from numpy.typing import NDArray
from scipy.stats import pearsonr

from evaluation.models import EvalSummary, FrameResult, PoseError
from geometry.lie import rotation_angle_deg
from sclocalize.exceptions import DimensionMismatchError, EmptyInputError, UndefinedCorrelationError
from simulator.models import Pose, SyntheticScene
from simulator.services import reprojection_errors
from training.models import WeightParams

logger = logging.getLogger(__name__)


def pose_error(est: Pose, gt: Pose) -> PoseError:
    """Camera-centre distance (m) and geodesic rotation angle (deg)."""
    est, gt = est.to_w2c(), gt.to_w2c()
    translation = float(np.linalg.norm(est.camera_center - gt.camera_center))
    return PoseError(translation, rotation_angle_deg(est.rotation.T @ gt.rotation))


def recall(errors: Sequence[PoseError], t_thresh: float = 0.05, r_thresh: float = 5.0) -> float:
    """Fraction of frames strictly below both thresholds."""
    if not errors:
        raise EmptyInputError("Recall of an empty error list is undefined")
    return sum(e.passes(t_thresh, r_thresh) for e in errors) / len(errors)


def weight_interpretability(w: NDArray, reproj_errors: NDArray) -> float:
    """Pearson r between weights and 1 / (1 + reprojection error)."""
    w = np.asarray(w, dtype=np.float64).reshape(-1)
    reproj_errors = np.asarray(reproj_errors, dtype=np.float64).reshape(-1)
    if len(w) != len(reproj_errors):
        raise DimensionMismatchError(f"{len(w)} weights but {len(reproj_errors)} reprojection errors")
    if len(w) < 3:
        raise UndefinedCorrelationError(f"Pearson correlation needs at least 3 points, got {len(w)}")
    inverse = 1.0 / (1.0 + reproj_errors)  # behind-camera (inf) maps to 0
    if np.ptp(w) == 0 or np.ptp(inverse) == 0:
        raise UndefinedCorrelationError("Weights or inverse reprojection errors have zero variance")
    return float(np.clip(pearsonr(w, inverse)[0], -1.0, 1.0))


def filter_confident_points(coords: NDArray, w: NDArray, threshold: float = 0.9) -> Tuple[NDArray, NDArray]:
    """Scene coordinates whose weight is at least `threshold`, with their indices."""
    coords = np.asarray(coords, dtype=np.float64).reshape(-1, 3)
    w = np.asarray(w, dtype=np.float64).reshape(-1)
    if len(coords) != len(w):
        raise DimensionMismatchError(f"{len(coords)} coordinates but {len(w)} weights")
    indices = np.flatnonzero(w >= threshold)
    return coords[indices], indices


def scene_reprojection_errors(scene: SyntheticScene) -> NDArray[np.float64]:
    return reprojection_errors(scene.gt_pose, scene.intrinsics, scene.predicted_coords, scene.pixel_obs)


def evaluate(
    poses: Sequence[Pose],
    scenes: Sequence[SyntheticScene],
    thetas: Optional[Sequence[WeightParams]] = None,
    t_thresh: float = 0.05,
    r_thresh: float = 5.0,
    confidence_threshold: float = 0.9,
    workers: int = 1,
) -> EvalSummary:
    """
    Per-frame pose errors, their medians and recall. With weights, also the
    Pearson coefficient pooled over all frames.
    """
    if not poses:
        raise EmptyInputError("No poses to evaluate")
    if len(poses) != len(scenes):
        raise DimensionMismatchError(f"{len(poses)} poses but {len(scenes)} scenes")
    if thetas is not None and len(thetas) != len(scenes):
        raise DimensionMismatchError(f"{len(thetas)} weight files but {len(scenes)} scenes")

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        errors: List[PoseError] = list(pool.map(pose_error, poses, [s.gt_pose for s in scenes]))

    frames, pooled_w, pooled_r = [], [], []
    for index, (error, scene) in enumerate(zip(errors, scenes)):
        n_confident = len(scene)
        if thetas is not None:
            w = thetas[index].activate()
            if len(w) != len(scene):
                raise DimensionMismatchError(f"Frame {index}: {len(w)} weights for {len(scene)} points")
            n_confident = len(filter_confident_points(scene.predicted_coords, w, confidence_threshold)[1])
            pooled_w.append(w)
            pooled_r.append(scene_reprojection_errors(scene))
        frames.append(FrameResult(
            frame=index,
            error=error,
            passed=error.passes(t_thresh, r_thresh),
            n_points=len(scene),
            n_confident=n_confident,
        ))

    pearson = None
    if thetas is not None:
        try:
            pearson = weight_interpretability(np.concatenate(pooled_w), np.concatenate(pooled_r))
        except UndefinedCorrelationError as e:
            logger.warning(f"Pearson coefficient not reported: {e}")

    summary = EvalSummary(
        median_translation_error=float(np.median([e.translation_error for e in errors])),
        median_rotation_error=float(np.median([e.rotation_error for e in errors])),
        recall=recall(errors, t_thresh, r_thresh),
        pearson=pearson,
        t_thresh=t_thresh,
        r_thresh=r_thresh,
        frames=frames,
    )
    logger.info(
        f"Evaluated {len(frames)} frames: median {summary.median_translation_error:.4f} m / "
        f"{summary.median_rotation_error:.3f} deg, recall {summary.recall:.3f}"
    )
    return summary
