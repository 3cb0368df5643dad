from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from sclocalize.exceptions import DimensionMismatchError
from simulator.models import Pose


@dataclass(frozen=True, eq=False)
class Correspondences:
    """
    N rows of [x, y, z, u, v]: world-frame scene coordinate plus the
    normalized (K^-1 applied) pixel it was observed at.
    """

    data: NDArray[np.float64]

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2 or data.shape[1] != 5:
            raise DimensionMismatchError(f"Correspondences must be N x 5, got shape {data.shape}")
        object.__setattr__(self, 'data', data)

    def __len__(self):
        return len(self.data)

    def __getitem__(self, index) -> 'Correspondences':
        return Correspondences(np.atleast_2d(self.data[index]))

    @property
    def coords(self) -> NDArray[np.float64]:
        return self.data[:, :3]

    @property
    def uv(self) -> NDArray[np.float64]:
        return self.data[:, 3:]


@dataclass(frozen=True, eq=False)
class DltSystem:
    """2N x 12 data matrix; rows 2i and 2i+1 belong to correspondence i."""

    X: NDArray[np.float64]

    @property
    def n(self) -> int:
        return self.X.shape[0] // 2

    def row_pairs(self) -> NDArray[np.float64]:
        """X viewed as (N, 2, 12)."""
        return self.X.reshape(self.n, 2, 12)


@dataclass(frozen=True, eq=False)
class DltSolution:
    vec_t: NDArray[np.float64]
    smallest_eigenvalue: float
    # Full spectrum of the normal matrix, ascending; kept for eigenvector derivatives
    eigenvalues: NDArray[np.float64] = field(repr=False)
    eigenvectors: NDArray[np.float64] = field(repr=False)

    @property
    def raw_T(self) -> NDArray[np.float64]:
        return self.vec_t.reshape(3, 4)

    @property
    def eigengap(self) -> float:
        return float(self.eigenvalues[1] - self.eigenvalues[0])


@dataclass(frozen=True, eq=False)
class WeightedDltResult:
    pose: Pose
    solution: DltSolution
    system: DltSystem
    correspondences: Correspondences
    weights: NDArray[np.float64]


@dataclass(frozen=True, eq=False)
class RansacResult:
    pose: Pose
    inliers: NDArray[np.bool_]
    iterations_used: int

    @property
    def n_inliers(self) -> int:
        return int(self.inliers.sum())
