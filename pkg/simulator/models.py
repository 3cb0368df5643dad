from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from numpy.typing import NDArray

from sclocalize.config import get_value
from sclocalize.exceptions import ConfigurationError, InvalidPoseError

# Pose conventions: "w2c" maps world points into the camera frame,
# "c2w" maps camera-frame points into the world.
WORLD_TO_CAMERA = 'w2c'
CAMERA_TO_WORLD = 'c2w'

ORTHONORMAL_TOL = 1e-9


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole camera without distortion. All values in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ConfigurationError(f"Focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ConfigurationError(
                f"Principal point ({self.cx}, {self.cy}) outside {self.width}x{self.height} image"
            )

    @property
    def K(self) -> NDArray[np.float64]:
        return np.array([
            [self.fx, 0.0, self.cx],
            [0.0, self.fy, self.cy],
            [0.0, 0.0, 1.0],
        ])

    def project(self, camera_points: NDArray) -> Tuple[NDArray, NDArray]:
        """
        Project camera-frame points to pixels.

        Returns (pixels (N,2), depth (N,)). Pixels of points with
        non-positive depth are meaningless; callers must check depth.
        """
        camera_points = np.atleast_2d(np.asarray(camera_points, dtype=np.float64))
        depth = camera_points[:, 2]
        safe = np.where(depth > 0, depth, 1.0)
        pixels = np.column_stack([
            self.fx * camera_points[:, 0] / safe + self.cx,
            self.fy * camera_points[:, 1] / safe + self.cy,
        ])
        return pixels, depth

    def contains(self, pixels: NDArray) -> NDArray[np.bool_]:
        pixels = np.atleast_2d(pixels)
        return (
            (pixels[:, 0] >= 0) & (pixels[:, 0] < self.width)
            & (pixels[:, 1] >= 0) & (pixels[:, 1] < self.height)
        )

    def to_dict(self) -> Dict:
        return {
            'fx': self.fx, 'fy': self.fy, 'cx': self.cx, 'cy': self.cy,
            'width': self.width, 'height': self.height,
        }

    @classmethod
    def from_mapping(cls, values) -> 'CameraIntrinsics':
        return cls(
            fx=float(get_value(values, 'simulator.fx')),
            fy=float(get_value(values, 'simulator.fy')),
            cx=float(get_value(values, 'simulator.cx')),
            cy=float(get_value(values, 'simulator.cy')),
            width=int(get_value(values, 'simulator.width')),
            height=int(get_value(values, 'simulator.height')),
        )


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform [R | t] tagged with its direction."""

    rotation: NDArray[np.float64]
    translation: NDArray[np.float64]
    convention: str = WORLD_TO_CAMERA

    def __post_init__(self):
        rotation = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        translation = np.array(self.translation, dtype=np.float64).reshape(3)
        object.__setattr__(self, 'rotation', rotation)
        object.__setattr__(self, 'translation', translation)

        if self.convention not in (WORLD_TO_CAMERA, CAMERA_TO_WORLD):
            raise InvalidPoseError(f"Unknown pose convention '{self.convention}'")
        if not (np.all(np.isfinite(rotation)) and np.all(np.isfinite(translation))):
            raise InvalidPoseError("Pose contains non-finite values")
        drift = np.linalg.norm(rotation.T @ rotation - np.eye(3))
        if drift >= ORTHONORMAL_TOL:
            raise InvalidPoseError(f"Rotation is not orthonormal (|R^T R - I| = {drift:.3e})")
        det = np.linalg.det(rotation)
        if abs(det - 1.0) > ORTHONORMAL_TOL:
            raise InvalidPoseError(f"Rotation determinant is {det!r}, expected 1")

    def __eq__(self, other):
        if not isinstance(other, Pose):
            return NotImplemented
        return (
            self.convention == other.convention
            and np.array_equal(self.rotation, other.rotation)
            and np.array_equal(self.translation, other.translation)
        )

    def __repr__(self):
        return f"Pose({self.convention}, t={self.translation.tolist()})"

    @classmethod
    def identity(cls) -> 'Pose':
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, matrix: NDArray, convention: str = WORLD_TO_CAMERA) -> 'Pose':
        matrix = np.asarray(matrix, dtype=np.float64)
        return cls(matrix[:3, :3], matrix[:3, 3], convention)

    @property
    def matrix(self) -> NDArray[np.float64]:
        """3x4 matrix [R | t]."""
        return np.hstack([self.rotation, self.translation[:, None]])

    def vec(self) -> NDArray[np.float64]:
        """Row-major flattening of [R | t] (the DLT unknown Vec(T))."""
        return self.matrix.reshape(12)

    def inverse(self) -> 'Pose':
        flipped = CAMERA_TO_WORLD if self.convention == WORLD_TO_CAMERA else WORLD_TO_CAMERA
        return Pose(self.rotation.T, -self.rotation.T @ self.translation, flipped)

    def to_w2c(self) -> 'Pose':
        return self if self.convention == WORLD_TO_CAMERA else self.inverse()

    @property
    def camera_center(self) -> NDArray[np.float64]:
        """Camera position in the world frame."""
        w2c = self.to_w2c()
        return -w2c.rotation.T @ w2c.translation

    def transform(self, points: NDArray) -> NDArray[np.float64]:
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        return points @ self.rotation.T + self.translation


@dataclass(frozen=True, eq=False)
class SyntheticScene:
    gt_points: NDArray[np.float64]
    gt_pose: Pose
    intrinsics: CameraIntrinsics
    predicted_coords: NDArray[np.float64]
    pixel_obs: NDArray[np.float64]
    outlier_mask: NDArray[np.bool_]
    seed: int

    def __post_init__(self):
        object.__setattr__(self, 'gt_points', np.asarray(self.gt_points, dtype=np.float64).reshape(-1, 3))
        object.__setattr__(self, 'predicted_coords', np.asarray(self.predicted_coords, dtype=np.float64).reshape(-1, 3))
        object.__setattr__(self, 'pixel_obs', np.asarray(self.pixel_obs, dtype=np.float64).reshape(-1, 2))
        object.__setattr__(self, 'outlier_mask', np.asarray(self.outlier_mask, dtype=bool).reshape(-1))
        n = len(self.gt_points)
        lengths = {len(self.predicted_coords), len(self.pixel_obs), len(self.outlier_mask)}
        if lengths != {n}:
            raise ConfigurationError(f"Scene arrays disagree in length: {sorted(lengths | {n})}")

    def __eq__(self, other):
        if not isinstance(other, SyntheticScene):
            return NotImplemented
        return (
            self.gt_pose == other.gt_pose
            and self.intrinsics == other.intrinsics
            and self.seed == other.seed
            and np.array_equal(self.gt_points, other.gt_points)
            and np.array_equal(self.predicted_coords, other.predicted_coords)
            and np.array_equal(self.pixel_obs, other.pixel_obs)
            and np.array_equal(self.outlier_mask, other.outlier_mask)
        )

    def __len__(self):
        return len(self.gt_points)

    @property
    def n_outliers(self) -> int:
        return int(self.outlier_mask.sum())


@dataclass(frozen=True, eq=False)
class SyntheticImagePair:
    source_image: NDArray[np.float64]
    target_image: NDArray[np.float64]
    source_pose: Pose
    target_pose: Pose
    source_coords: NDArray[np.float64]
    intrinsics: CameraIntrinsics
    # Correspondences for solving the target pose
    target_scene: Optional[SyntheticScene] = None

    def __eq__(self, other):
        if not isinstance(other, SyntheticImagePair):
            return NotImplemented
        return (
            self.source_pose == other.source_pose
            and self.target_pose == other.target_pose
            and self.intrinsics == other.intrinsics
            and np.array_equal(self.source_image, other.source_image)
            and np.array_equal(self.target_image, other.target_image)
            and np.array_equal(self.source_coords, other.source_coords)
            and self.target_scene == other.target_scene
        )


@dataclass(frozen=True, eq=False)
class SyntheticSequence:
    """Frames along a trajectory observing one shared landmark set."""

    poses: List[Pose]
    scenes: List[SyntheticScene]
    pairs: List[SyntheticImagePair]
    frame_interval: int
    seed: int

    @property
    def n_landmarks(self) -> int:
        return len(self.scenes[0])


@dataclass(frozen=True)
class SceneParams:
    n_points: int = 100
    pixel_noise_sigma: float = 0.0
    coord_noise_sigma: float = 0.0
    outlier_fraction: float = 0.0
    outlier_min_error_px: float = 20.0
    camera_distance: float = 4.0
    intrinsics: CameraIntrinsics = field(
        default_factory=lambda: CameraIntrinsics(525.0, 525.0, 320.0, 240.0, 640, 480)
    )

    def __post_init__(self):
        if self.n_points <= 6:
            raise ConfigurationError(f"simulator.n_points must exceed 6 (N > 6), got {self.n_points}")
        if not 0.0 <= self.outlier_fraction < 1.0:
            raise ConfigurationError(f"simulator.outlier_fraction must be in [0, 1), got {self.outlier_fraction}")
        if self.pixel_noise_sigma < 0 or self.coord_noise_sigma < 0:
            raise ConfigurationError("Noise sigmas must be non-negative")

    @classmethod
    def from_mapping(cls, values) -> 'SceneParams':
        return cls(
            n_points=int(get_value(values, 'simulator.n_points')),
            pixel_noise_sigma=float(get_value(values, 'simulator.pixel_noise_sigma')),
            coord_noise_sigma=float(get_value(values, 'simulator.coord_noise_sigma')),
            outlier_fraction=float(get_value(values, 'simulator.outlier_fraction')),
            outlier_min_error_px=float(get_value(values, 'simulator.outlier_min_error_px')),
            camera_distance=float(get_value(values, 'simulator.camera_distance')),
            intrinsics=CameraIntrinsics.from_mapping(values),
        )


# Small-image camera used for photometric pairs (same field of view as the
# default 640x480 camera, scaled down so warping stays cheap).
PAIR_INTRINSICS = CameraIntrinsics(60.0, 60.0, 32.0, 24.0, 64, 48)
