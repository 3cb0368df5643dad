import logging
from typing import Optional, Sequence, Tuple

import numpy as np
from numpy.typing import NDArray
from scipy.ndimage import map_coordinates

from sclocalize.exceptions import ConfigurationError, ImagePairError, SceneGenerationError
from simulator.models import (
    PAIR_INTRINSICS,
    CameraIntrinsics,
    Pose,
    SceneParams,
    SyntheticImagePair,
    SyntheticScene,
    SyntheticSequence,
)

logger = logging.getLogger(__name__)

MIN_POINTS = 7
MAX_SAMPLING_ROUNDS = 100
MAX_OUTLIER_DRAWS = 1000
MIN_PAIR_OVERLAP = 0.5
WORLD_UP = np.array([0.0, 0.0, 1.0])


def make_rng(seed: int) -> np.random.Generator:
    """Every random draw in the package goes through PCG64 seeded here."""
    return np.random.Generator(np.random.PCG64(seed))


def look_at(eye: NDArray, target: NDArray, up: NDArray = WORLD_UP) -> Pose:
    """
    World-to-camera pose of a camera at `eye` looking at `target`.

    Camera axes follow the usual pinhole convention: x right, y down, z forward.
    """
    eye = np.asarray(eye, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - eye
    norm = np.linalg.norm(forward)
    if norm < 1e-12:
        raise ConfigurationError("Camera eye and target coincide")
    forward /= norm

    down = -(up - np.dot(up, forward) * forward)
    down_norm = np.linalg.norm(down)
    if down_norm < 1e-9:
        raise ConfigurationError("Viewing direction is parallel to the up vector")
    down /= down_norm
    right = np.cross(down, forward)

    rotation = np.vstack([right, down, forward])
    # Re-orthonormalise so the Pose invariant holds to machine precision
    u, _, vt = np.linalg.svd(rotation)
    rotation = u @ vt
    return Pose(rotation, -rotation @ eye)


def random_pose(rng: np.random.Generator, distance: float) -> Pose:
    """Camera on a sphere of radius `distance` around the world origin, looking at it."""
    azimuth = rng.uniform(0.0, 2.0 * np.pi)
    elevation = rng.uniform(-0.5, 0.5)
    eye = distance * np.array([
        np.cos(elevation) * np.cos(azimuth),
        np.cos(elevation) * np.sin(azimuth),
        np.sin(elevation),
    ])
    return look_at(eye, np.zeros(3))


def reprojection_errors(pose: Pose, intr: CameraIntrinsics, coords: NDArray, pixels: NDArray) -> NDArray:
    """Pixel distances; points at non-positive depth get +inf."""
    projected, depth = intr.project(pose.to_w2c().transform(coords))
    errors = np.linalg.norm(projected - pixels, axis=1)
    return np.where(depth > 0, errors, np.inf)


def _sample_visible_points(
    rng: np.random.Generator,
    poses: Sequence[Pose],
    intr: CameraIntrinsics,
    n_points: int,
    depth_range: Tuple[float, float],
    pixel_noise_sigma: float,
) -> Tuple[NDArray, list]:
    """
    Rejection-sample world points seen by every pose.

    Points are drawn in the first camera's frame, uniform over
    [-h, h] x [-h, h] x depth_range with h half the depth extent. A point is
    kept when its noisy pixel lies inside the image in every view.
    """
    near, far = depth_range
    half = 0.5 * (far - near)
    reference = poses[0].to_w2c().inverse()

    points, observations = [], [[] for _ in poses]
    for _ in range(MAX_SAMPLING_ROUNDS):
        if len(points) >= n_points:
            break
        candidates_cam = np.column_stack([
            rng.uniform(-half, half, n_points),
            rng.uniform(-half, half, n_points),
            rng.uniform(near, far, n_points),
        ])
        candidates = reference.transform(candidates_cam)

        keep = np.ones(n_points, dtype=bool)
        noisy = []
        for pose in poses:
            pixels, depth = intr.project(pose.to_w2c().transform(candidates))
            pixels = pixels + rng.normal(0.0, pixel_noise_sigma, pixels.shape) if pixel_noise_sigma > 0 else pixels
            keep &= (depth > 0) & intr.contains(pixels)
            noisy.append(pixels)

        for i in np.flatnonzero(keep):
            if len(points) >= n_points:
                break
            points.append(candidates[i])
            for view, pixels in enumerate(noisy):
                observations[view].append(pixels[i])

    if len(points) < MIN_POINTS:
        raise SceneGenerationError(
            f"Only {len(points)} points project inside the image; at least {MIN_POINTS} are needed (N > 6)"
        )
    if len(points) < n_points:
        logger.warning(f"Generated {len(points)} of {n_points} requested points after {MAX_SAMPLING_ROUNDS} rounds")

    return np.array(points), [np.array(obs) for obs in observations]


def _draw_outliers(
    rng: np.random.Generator,
    gt_points: NDArray,
    n_outliers: int,
    views: Sequence[Tuple[Pose, NDArray]],
    intr: CameraIntrinsics,
    min_error_px: float,
) -> Tuple[NDArray, NDArray]:
    """Pick outlier indices and replacement coordinates far from the truth in every view."""
    n = len(gt_points)
    indices = np.sort(rng.choice(n, size=n_outliers, replace=False)) if n_outliers else np.array([], dtype=int)

    lo, hi = gt_points.min(axis=0), gt_points.max(axis=0)
    center, half = 0.5 * (lo + hi), (hi - lo)  # bounding box expanded 2x about its centre

    replacements = np.empty((n_outliers, 3))
    for k, i in enumerate(indices):
        for _ in range(MAX_OUTLIER_DRAWS):
            candidate = rng.uniform(center - half, center + half)
            errors = [
                reprojection_errors(pose, intr, candidate[None, :], pixels[i][None, :])[0]
                for pose, pixels in views
            ]
            if min(errors) >= min_error_px:
                break
        else:
            raise SceneGenerationError(f"Could not draw a gross outlier for point {i} in {MAX_OUTLIER_DRAWS} tries")
        replacements[k] = candidate
    return indices, replacements


def _outlier_count(outlier_fraction: float, n: int) -> int:
    if not 0.0 <= outlier_fraction < 1.0:
        raise ConfigurationError(f"outlier_fraction must be in [0, 1), got {outlier_fraction}")
    return int(round(outlier_fraction * n))


def generate_scene(
    n_points: int,
    pose: Pose,
    intr: CameraIntrinsics,
    pixel_noise_sigma: float = 0.0,
    coord_noise_sigma: float = 0.0,
    outlier_fraction: float = 0.0,
    seed: int = 0,
    outlier_min_error_px: float = 20.0,
    depth_range: Tuple[float, float] = (2.0, 6.0),
) -> SyntheticScene:
    """
    Synthetic scene-coordinate predictions for one camera.

    Points are uniform in a box in front of the camera (depth 2-6 m by
    default, centred on the optical axis). Inlier predictions are the true
    points plus isotropic Gaussian noise; outliers are uniform draws in the
    bounding box expanded 2x, redrawn until their reprojection error at the
    true pose is at least `outlier_min_error_px`.
    """
    if n_points <= 6:
        raise ConfigurationError(f"n_points must exceed 6 (N > 6), got {n_points}")
    _outlier_count(outlier_fraction, n_points)

    rng = make_rng(seed)
    gt_points, (pixel_obs,) = _sample_visible_points(rng, [pose], intr, n_points, depth_range, pixel_noise_sigma)
    n = len(gt_points)

    predicted = gt_points + rng.normal(0.0, coord_noise_sigma, gt_points.shape) if coord_noise_sigma > 0 else gt_points.copy()
    indices, replacements = _draw_outliers(
        rng, gt_points, _outlier_count(outlier_fraction, n), [(pose, pixel_obs)], intr, outlier_min_error_px
    )
    outlier_mask = np.zeros(n, dtype=bool)
    outlier_mask[indices] = True
    predicted[indices] = replacements

    logger.info(f"Generated scene with {n} points ({len(indices)} outliers), seed={seed}")
    return SyntheticScene(
        gt_points=gt_points,
        gt_pose=pose.to_w2c(),
        intrinsics=intr,
        predicted_coords=predicted,
        pixel_obs=pixel_obs,
        outlier_mask=outlier_mask,
        seed=seed,
    )


def scene_from_params(params: SceneParams, seed: int, pose: Optional[Pose] = None) -> SyntheticScene:
    """generate_scene with the camera placed by `random_pose` unless a pose is given."""
    if pose is None:
        pose = random_pose(make_rng(seed), params.camera_distance)
    half_extent = 2.0
    return generate_scene(
        params.n_points,
        pose,
        params.intrinsics,
        pixel_noise_sigma=params.pixel_noise_sigma,
        coord_noise_sigma=params.coord_noise_sigma,
        outlier_fraction=params.outlier_fraction,
        seed=seed,
        outlier_min_error_px=params.outlier_min_error_px,
        depth_range=(params.camera_distance - half_extent, params.camera_distance + half_extent),
    )


# Image pairs


def sample_bilinear(image: NDArray, pixels: NDArray) -> NDArray:
    """Bilinear lookup of (u, v) pixel positions; callers mask out-of-range positions."""
    return map_coordinates(image, [pixels[:, 1], pixels[:, 0]], order=1, mode='nearest')


def inside_image(pixels: NDArray, depth: NDArray, intr: CameraIntrinsics) -> NDArray[np.bool_]:
    """Positions usable for bilinear sampling: [0, W-1] x [0, H-1] at positive depth."""
    return (
        (depth > 0)
        & (pixels[:, 0] >= 0) & (pixels[:, 0] <= intr.width - 1)
        & (pixels[:, 1] >= 0) & (pixels[:, 1] <= intr.height - 1)
    )


def warp_to_target(coords: NDArray, pose_t: Pose, intr: CameraIntrinsics) -> Tuple[NDArray, NDArray]:
    """Target-image positions and validity of world points (one row per source pixel)."""
    pixels, depth = intr.project(pose_t.to_w2c().transform(coords.reshape(-1, 3)))
    return pixels, inside_image(pixels, depth, intr)


class Texture:
    """Smooth procedural intensity pattern: a few low-frequency sinusoids plus a gradient."""

    def __init__(self, rng: np.random.Generator, intr: CameraIntrinsics, n_waves: int = 3):
        self.width, self.height = intr.width, intr.height
        periods = rng.uniform(20.0, 56.0, n_waves)
        angles = rng.uniform(0.0, np.pi, n_waves)
        self.freqs = (2.0 * np.pi / periods)[:, None] * np.column_stack([np.cos(angles), np.sin(angles)])
        self.phases = rng.uniform(0.0, 2.0 * np.pi, n_waves)
        self.slope = rng.uniform(-0.2, 0.2, 2)

    def __call__(self, pixels: NDArray) -> NDArray:
        waves = np.sin(pixels @ self.freqs.T + self.phases).sum(axis=1) * (0.3 / len(self.phases))
        gradient = self.slope[0] * (pixels[:, 0] / self.width - 0.5) + self.slope[1] * (pixels[:, 1] / self.height - 0.5)
        return np.clip(0.5 + waves + gradient, 0.0, 1.0)

    def render(self) -> NDArray:
        v, u = np.mgrid[0:self.height, 0:self.width]
        return self(np.column_stack([u.ravel(), v.ravel()]).astype(np.float64)).reshape(self.height, self.width)


def _intersect_plane(pose: Pose, intr: CameraIntrinsics, normal: NDArray, offset: float) -> NDArray:
    """World points where every pixel ray of `pose` meets the plane normal . X = offset."""
    v, u = np.mgrid[0:intr.height, 0:intr.width]
    rays_cam = np.column_stack([
        (u.ravel() - intr.cx) / intr.fx,
        (v.ravel() - intr.cy) / intr.fy,
        np.ones(u.size),
    ])
    w2c = pose.to_w2c()
    rays = rays_cam @ w2c.rotation  # R^T applied to each row
    origin = w2c.camera_center
    denom = rays @ normal
    if np.any(np.abs(denom) < 1e-12):
        raise ImagePairError("Viewing ray parallel to the textured plane")
    depth = (offset - origin @ normal) / denom
    if np.any(depth <= 0):
        raise ImagePairError("Textured plane is behind the source camera")
    return origin + depth[:, None] * rays


def render_pair(
    rng: np.random.Generator,
    source_pose: Pose,
    target_pose: Pose,
    plane: Tuple[NDArray, float],
    intr: CameraIntrinsics = PAIR_INTRINSICS,
    target_scene: Optional[SyntheticScene] = None,
) -> SyntheticImagePair:
    """
    Render a textured plane into two views.

    The texture lives on the target pixel grid; source intensities are
    bilinear samples of the target image at the warped positions, so the
    exact warp reproduces the target at every valid pixel.
    """
    texture = Texture(rng, intr)
    target_image = texture.render()

    coords = _intersect_plane(source_pose, intr, *plane)
    pixels, valid = warp_to_target(coords, target_pose, intr)
    overlap = valid.mean()
    if overlap < MIN_PAIR_OVERLAP:
        raise ImagePairError(f"Only {overlap:.0%} of source pixels land in the target image (need 50%)")

    source = np.where(valid, sample_bilinear(target_image, pixels), texture(pixels))
    return SyntheticImagePair(
        source_image=source.reshape(intr.height, intr.width),
        target_image=target_image,
        source_pose=source_pose.to_w2c(),
        target_pose=target_pose.to_w2c(),
        source_coords=coords.reshape(intr.height, intr.width, 3),
        intrinsics=intr,
        target_scene=target_scene,
    )


def _facing_plane(rng: np.random.Generator, pose: Pose) -> Tuple[NDArray, float]:
    """Plane through the world origin, tilted up to ~17 degrees from facing the camera."""
    toward_camera = pose.camera_center / np.linalg.norm(pose.camera_center)
    normal = toward_camera + rng.uniform(-0.3, 0.3, 3)
    return normal / np.linalg.norm(normal), 0.0


def _baseline_direction(rng: np.random.Generator, pose: Pose) -> NDArray:
    """Unit direction perpendicular to the optical axis."""
    rotation = pose.to_w2c().rotation
    angle = rng.uniform(0.0, 2.0 * np.pi)
    return np.cos(angle) * rotation[0] + np.sin(angle) * rotation[1]


def generate_image_pair(
    scene_params: SceneParams,
    baseline: float,
    seed: int,
    intr: CameraIntrinsics = PAIR_INTRINSICS,
) -> SyntheticImagePair:
    """
    Two views of a textured plane through the world origin.

    The source camera is displaced by `baseline` meters sideways from the
    target camera and looks at the same point. `target_scene` carries the
    correspondences for solving the target pose.
    """
    if baseline < 0:
        raise ConfigurationError(f"baseline must be non-negative, got {baseline}")
    rng = make_rng(seed)
    target_pose = random_pose(rng, scene_params.camera_distance)
    eye = target_pose.camera_center
    source_pose = look_at(eye + baseline * _baseline_direction(rng, target_pose), np.zeros(3))
    plane = _facing_plane(rng, target_pose)

    target_scene = scene_from_params(scene_params, int(rng.integers(2**31)), pose=target_pose)
    pair = render_pair(rng, source_pose, target_pose, plane, intr, target_scene)
    logger.info(f"Generated image pair with baseline {baseline} m, seed={seed}")
    return pair


def generate_sequence(
    params: SceneParams,
    n_frames: int,
    baseline: float,
    seed: int,
    frame_interval: int = 1,
    intr: CameraIntrinsics = PAIR_INTRINSICS,
) -> SyntheticSequence:
    """
    Camera trajectory observing one shared landmark set.

    Frame k sits `k * baseline` meters sideways of frame 0 and looks at the
    world origin. Landmarks, predicted coordinates and outlier flags are
    shared by every frame; pixel observations and their noise are per frame.
    One image pair is rendered for each (k, k + frame_interval).
    """
    if n_frames < 2:
        raise ConfigurationError(f"A sequence needs at least 2 frames, got {n_frames}")
    if not 1 <= frame_interval < n_frames:
        raise ConfigurationError(f"frame_interval must be in [1, {n_frames - 1}], got {frame_interval}")
    if params.n_points <= 6:
        raise ConfigurationError(f"n_points must exceed 6 (N > 6), got {params.n_points}")

    rng = make_rng(seed)
    first = random_pose(rng, params.camera_distance)
    step = _baseline_direction(rng, first)
    poses = [look_at(first.camera_center + k * baseline * step, np.zeros(3)) for k in range(n_frames)]
    plane = _facing_plane(rng, first)

    half_extent = 2.0
    depth_range = (params.camera_distance - half_extent, params.camera_distance + half_extent)
    gt_points, observations = _sample_visible_points(
        rng, poses, params.intrinsics, params.n_points, depth_range, params.pixel_noise_sigma
    )
    n = len(gt_points)

    predicted = gt_points.copy()
    if params.coord_noise_sigma > 0:
        predicted += rng.normal(0.0, params.coord_noise_sigma, gt_points.shape)
    indices, replacements = _draw_outliers(
        rng, gt_points, _outlier_count(params.outlier_fraction, n), list(zip(poses, observations)),
        params.intrinsics, params.outlier_min_error_px,
    )
    outlier_mask = np.zeros(n, dtype=bool)
    outlier_mask[indices] = True
    predicted[indices] = replacements

    scenes = [
        SyntheticScene(
            gt_points=gt_points,
            gt_pose=pose,
            intrinsics=params.intrinsics,
            predicted_coords=predicted,
            pixel_obs=pixels,
            outlier_mask=outlier_mask,
            seed=seed,
        )
        for pose, pixels in zip(poses, observations)
    ]
    pairs = [
        render_pair(rng, poses[k], poses[k + frame_interval], plane, intr, scenes[k + frame_interval])
        for k in range(n_frames - frame_interval)
    ]
    logger.info(f"Generated sequence: {n_frames} frames, {n} landmarks, {len(pairs)} pairs, seed={seed}")
    return SyntheticSequence(poses=poses, scenes=scenes, pairs=pairs, frame_interval=frame_interval, seed=seed)
