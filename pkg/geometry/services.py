import logging
from typing import Optional

import numpy as np
from numpy.typing import NDArray

from geometry.models import Correspondences, DltSolution, DltSystem, RansacResult, WeightedDltResult
from sclocalize.exceptions import (
    AsymmetricMatrixError,
    ConfigurationError,
    ConsensusError,
    DegenerateConfigurationError,
    DimensionMismatchError,
    InsufficientCorrespondencesError,
    PipelineError,
    ProcrustesError,
)
from simulator.models import CameraIntrinsics, Pose, SyntheticScene
from simulator.services import make_rng, reprojection_errors

logger = logging.getLogger(__name__)

MIN_CORRESPONDENCES = 7
ACTIVE_WEIGHT = 1e-6
SYMMETRY_TOL = 1e-9
EIGENGAP_TOL = 1e-12


def normalize_pixel(p: NDArray, intr: CameraIntrinsics) -> NDArray[np.float64]:
    """(u, v) = ((x - cx) / fx, (y - cy) / fy) for one pixel or an (N, 2) array."""
    p = np.asarray(p, dtype=np.float64)
    return (p - np.array([intr.cx, intr.cy])) / np.array([intr.fx, intr.fy])


def make_correspondences(coords: NDArray, pixels: NDArray, intr: CameraIntrinsics) -> Correspondences:
    coords = np.asarray(coords, dtype=np.float64).reshape(-1, 3)
    pixels = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    if len(coords) != len(pixels):
        raise DimensionMismatchError(f"{len(coords)} scene coordinates but {len(pixels)} pixels")
    return Correspondences(np.hstack([coords, normalize_pixel(pixels, intr)]))


def scene_correspondences(scene: SyntheticScene, coords: Optional[NDArray] = None) -> Correspondences:
    """Predicted coordinates (or `coords`) paired with the scene's pixel observations."""
    return make_correspondences(scene.predicted_coords if coords is None else coords, scene.pixel_obs, scene.intrinsics)


def build_rows(c: NDArray) -> NDArray[np.float64]:
    """The two DLT rows of a single correspondence [x, y, z, u, v]."""
    x, y, z, u, v = np.asarray(c, dtype=np.float64)
    return np.array([
        [x, y, z, 1.0, 0.0, 0.0, 0.0, 0.0, -u * x, -u * y, -u * z, -u],
        [0.0, 0.0, 0.0, 0.0, x, y, z, 1.0, -v * x, -v * y, -v * z, -v],
    ])


def build_system(corrs: Correspondences) -> DltSystem:
    """Stack build_rows for every correspondence (vectorised)."""
    n = len(corrs)
    homogeneous = np.hstack([corrs.coords, np.ones((n, 1))])
    rows = np.zeros((n, 2, 12))
    rows[:, 0, 0:4] = homogeneous
    rows[:, 1, 4:8] = homogeneous
    rows[:, 0, 8:12] = -corrs.uv[:, 0:1] * homogeneous
    rows[:, 1, 8:12] = -corrs.uv[:, 1:2] * homogeneous
    return DltSystem(rows.reshape(2 * n, 12))


def check_weights(w: NDArray, n: int) -> NDArray[np.float64]:
    w = np.asarray(w, dtype=np.float64).reshape(-1)
    if len(w) != n:
        raise DimensionMismatchError(f"{len(w)} weights for {n} correspondences")
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise ConfigurationError("Weights must be finite and non-negative")
    return w


def assemble_normal_matrix(system: DltSystem, w: NDArray) -> NDArray[np.float64]:
    """M = X^T diag(w) X with each w_i applied to both rows of correspondence i."""
    w = check_weights(w, system.n)
    row_weights = np.repeat(w, 2)
    M = (system.X * row_weights[:, None]).T @ system.X
    return 0.5 * (M + M.T)


def solve_smallest_eigvec(M: NDArray) -> DltSolution:
    """
    Unit eigenvector of the smallest eigenvalue of a symmetric PSD 12x12 matrix.

    The sign is fixed so the component of largest magnitude is positive.
    """
    M = np.asarray(M, dtype=np.float64)
    if M.shape != (12, 12):
        raise DimensionMismatchError(f"Normal matrix must be 12 x 12, got {M.shape}")
    scale = max(1.0, float(np.abs(M).max()))
    if np.abs(M - M.T).max() > SYMMETRY_TOL * scale:
        raise AsymmetricMatrixError(f"Normal matrix is not symmetric (max |M - M^T| = {np.abs(M - M.T).max():.3e})")

    eigenvalues, eigenvectors = np.linalg.eigh(M)
    trace = float(np.trace(M))
    if eigenvalues[1] - eigenvalues[0] < EIGENGAP_TOL * trace or trace <= 0:
        raise DegenerateConfigurationError(
            f"Smallest eigenvalues {eigenvalues[0]:.3e} and {eigenvalues[1]:.3e} are not separated "
            f"(trace {trace:.3e}); the correspondence configuration is degenerate"
        )

    vec = eigenvectors[:, 0]
    if vec[np.argmax(np.abs(vec))] < 0:
        vec = -vec
        eigenvectors = eigenvectors.copy()
        eigenvectors[:, 0] = vec
    return DltSolution(
        vec_t=vec / np.linalg.norm(vec),
        smallest_eigenvalue=max(float(eigenvalues[0]), 0.0),
        eigenvalues=eigenvalues,
        eigenvectors=eigenvectors,
    )


def _sign_candidate(U: NDArray, Vt: NDArray, t_bar: NDArray, scale: float, sign: float) -> Pose:
    rotation = sign * U @ Vt
    if np.linalg.det(rotation) < 0:
        # Flip the direction paired with the smallest singular value
        U = U.copy()
        U[:, 2] *= -1
        rotation = sign * U @ Vt
    return Pose(rotation, sign * scale * t_bar)


def _choose_sign(candidates: tuple[Pose, Pose], w: NDArray, coords: NDArray) -> Pose:
    """
    Pick the candidate that puts more of the most confident correspondences
    in front of the camera.

    Correspondences are grouped by weight, highest first. Each group votes with
    its depths under both candidates; an undecided group (typically a single
    anchor that is behind both, or in front of both) hands the choice to the
    next group down. With uniform weights the first group is every point.
    """
    depths = [coords @ pose.rotation[2] + pose.translation[2] for pose in candidates]
    for level in np.unique(w)[::-1]:
        members = w == level
        front = [int((depth[members] > 0).sum()) for depth in depths]
        if front[0] != front[1]:
            if level != w.max():
                logger.debug(f"Pose sign decided by correspondences of weight {level:.4g}")
            return candidates[int(front[1] > front[0])]
    raise ProcrustesError("Pose sign is undefined: no weight level prefers either candidate")


def procrustes_regularize(sol: DltSolution, w: NDArray, corrs: Correspondences) -> Pose:
    """
    Project the raw 3x4 DLT matrix onto SE(3).

    The rotation block is replaced by its nearest rotation and the global scale
    is 3 / trace(singular values). Both signs of the homogeneous solution are
    regularized; the one placing the most confident correspondences at
    positive depth wins (see _choose_sign).
    """
    raw = sol.raw_T
    U, S, Vt = np.linalg.svd(raw[:, :3])
    trace = S.sum()
    if trace < 1e-12:
        raise ProcrustesError(f"Rotation block is degenerate (singular value sum {trace:.3e})")
    scale = 3.0 / trace

    candidates = (
        _sign_candidate(U, Vt, raw[:, 3], scale, 1.0),
        _sign_candidate(U, Vt, raw[:, 3], scale, -1.0),
    )
    return _choose_sign(candidates, np.asarray(w, dtype=float), corrs.coords)


def _validate_inputs(corrs: Correspondences, w: NDArray) -> NDArray:
    n = len(corrs)
    if n < MIN_CORRESPONDENCES:
        raise InsufficientCorrespondencesError(
            f"{n} correspondences given; the DLT needs N > 6"
        )
    w = check_weights(w, n)
    active = int((w > ACTIVE_WEIGHT).sum())
    if active < MIN_CORRESPONDENCES:
        raise InsufficientCorrespondencesError(
            f"Only {active} correspondences have weight above {ACTIVE_WEIGHT}; the DLT needs N > 6"
        )
    return w


def weighted_dlt(corrs: Correspondences, w: NDArray) -> WeightedDltResult:
    """wdlt_solve keeping the intermediate system and eigen-solution."""
    w = _validate_inputs(corrs, w)
    system = build_system(corrs)
    solution = solve_smallest_eigvec(assemble_normal_matrix(system, w))
    pose = procrustes_regularize(solution, w, corrs)
    return WeightedDltResult(pose=pose, solution=solution, system=system, correspondences=corrs, weights=w)


def wdlt_solve(coords: NDArray, pixels: NDArray, w: NDArray, intr: CameraIntrinsics) -> Pose:
    """normalize -> build -> assemble -> solve -> procrustes."""
    return weighted_dlt(make_correspondences(coords, pixels, intr), w).pose


def ransac_consensus(
    coords: NDArray,
    pixels: NDArray,
    intr: CameraIntrinsics,
    iterations: int,
    inlier_threshold: float,
    seed: int,
) -> RansacResult:
    """Best-consensus 7-point DLT hypothesis, refit on its inliers."""
    corrs = make_correspondences(coords, pixels, intr)
    pixels = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    n = len(corrs)
    if n < MIN_CORRESPONDENCES:
        raise InsufficientCorrespondencesError(f"{n} correspondences given; the DLT needs N > 6")
    if iterations < 1:
        raise ConfigurationError(f"ransac.iterations must be at least 1, got {iterations}")

    rng = make_rng(seed)
    ones = np.ones(MIN_CORRESPONDENCES)
    best_inliers = np.zeros(n, dtype=bool)
    skipped = 0
    used = 0
    for used in range(1, iterations + 1):
        sample = rng.choice(n, size=MIN_CORRESPONDENCES, replace=False)
        try:
            hypothesis = weighted_dlt(corrs[sample], ones).pose
        except PipelineError as e:
            skipped += 1
            logger.debug(f"Skipping hypothesis {used}: {e}")
            continue
        inliers = reprojection_errors(hypothesis, intr, corrs.coords, pixels) <= inlier_threshold
        if inliers.sum() > best_inliers.sum():
            best_inliers = inliers
        if best_inliers.all():
            break

    if skipped:
        logger.warning(f"RANSAC skipped {skipped} of {used} degenerate hypotheses")
    if best_inliers.sum() < MIN_CORRESPONDENCES:
        raise ConsensusError(
            f"No hypothesis reached {MIN_CORRESPONDENCES} inliers at {inlier_threshold} px in {used} iterations"
        )

    pose = weighted_dlt(corrs[best_inliers], np.ones(int(best_inliers.sum()))).pose
    logger.info(f"RANSAC consensus: {best_inliers.sum()} of {n} inliers after {used} iterations")
    return RansacResult(pose=pose, inliers=best_inliers, iterations_used=used)


def ransac_dlt(
    coords: NDArray,
    pixels: NDArray,
    intr: CameraIntrinsics,
    iterations: int,
    inlier_threshold: float,
    seed: int,
) -> Pose:
    return ransac_consensus(coords, pixels, intr, iterations, inlier_threshold, seed).pose
