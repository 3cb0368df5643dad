"""SO(3)/SE(3) helpers for 6-DoF pose increments ordered (omega, nu)."""

import numpy as np
from numpy.typing import NDArray
from scipy.spatial.transform import Rotation

from simulator.models import Pose


def hat(omega: NDArray) -> NDArray[np.float64]:
    """Skew-symmetric matrix with hat(a) @ b == cross(a, b)."""
    x, y, z = omega
    return np.array([
        [0.0, -z, y],
        [z, 0.0, -x],
        [-y, x, 0.0],
    ])


def hat_rows(vectors: NDArray) -> NDArray[np.float64]:
    """hat() for every row of an (N, 3) array -> (N, 3, 3)."""
    out = np.zeros((len(vectors), 3, 3))
    out[:, 0, 1], out[:, 0, 2] = -vectors[:, 2], vectors[:, 1]
    out[:, 1, 0], out[:, 1, 2] = vectors[:, 2], -vectors[:, 0]
    out[:, 2, 0], out[:, 2, 1] = -vectors[:, 1], vectors[:, 0]
    return out


def so3_exp(omega: NDArray) -> NDArray[np.float64]:
    return Rotation.from_rotvec(np.asarray(omega, dtype=np.float64)).as_matrix()


def so3_log(rotation: NDArray) -> NDArray[np.float64]:
    return Rotation.from_matrix(rotation).as_rotvec()


def se3_exp(xi: NDArray) -> NDArray[np.float64]:
    """4x4 exponential of xi = (omega, nu)."""
    omega, nu = np.asarray(xi[:3], dtype=np.float64), np.asarray(xi[3:], dtype=np.float64)
    theta = np.linalg.norm(omega)
    W = hat(omega)
    if theta < 1e-10:
        V = np.eye(3) + 0.5 * W
    else:
        V = (
            np.eye(3)
            + (1.0 - np.cos(theta)) / theta**2 * W
            + (theta - np.sin(theta)) / theta**3 * (W @ W)
        )
    out = np.eye(4)
    out[:3, :3] = so3_exp(omega)
    out[:3, 3] = V @ nu
    return out


def nearest_rotation(matrix: NDArray) -> NDArray[np.float64]:
    """Closest proper rotation in Frobenius norm."""
    u, _, vt = np.linalg.svd(matrix)
    rotation = u @ vt
    if np.linalg.det(rotation) < 0:
        u[:, -1] *= -1
        rotation = u @ vt
    return rotation


def compose_right(pose: Pose, xi: NDArray) -> Pose:
    """T * exp(xi) for a world-to-camera pose, re-orthonormalised."""
    w2c = pose.to_w2c()
    T = np.eye(4)
    T[:3, :4] = w2c.matrix
    out = T @ se3_exp(xi)
    return Pose(nearest_rotation(out[:3, :3]), out[:3, 3])


def rotation_angle_deg(rotation: NDArray) -> float:
    """Geodesic angle of a rotation matrix in [0, 180] (via the quaternion, exact near 0)."""
    angle = np.degrees(Rotation.from_matrix(rotation).magnitude())
    return float(np.clip(angle, 0.0, 180.0))
