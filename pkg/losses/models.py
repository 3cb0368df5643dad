from dataclasses import dataclass, replace
from typing import Optional, Tuple

import numpy as np
from numpy.typing import NDArray

from sclocalize.config import get_value
from sclocalize.exceptions import ConfigurationError
from simulator.models import Pose


@dataclass(frozen=True)
class LossConfig:
    tau: float = 1.0
    alpha: float = 5.0
    beta: float = 1e-4
    gamma: float = 5.0
    depth_heuristic: float = 10.0
    depth_min: float = 0.1
    depth_max: float = 1000.0
    max_reprojection_px: float = 1000.0
    bce_eps: float = 1e-7

    def __post_init__(self):
        for name in ('tau', 'alpha', 'beta', 'gamma', 'depth_heuristic'):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"loss.{name} must be positive, got {getattr(self, name)}")
        if not 0 < self.depth_min < self.depth_max:
            raise ConfigurationError(
                f"loss.depth_min/depth_max must satisfy 0 < min < max, got {self.depth_min}, {self.depth_max}"
            )
        if not 0 < self.bce_eps < 0.5:
            raise ConfigurationError(f"loss.bce_eps must be in (0, 0.5), got {self.bce_eps}")

    @property
    def validity_depth_range(self) -> Tuple[float, float]:
        return self.depth_min, self.depth_max

    @classmethod
    def indoor(cls) -> 'LossConfig':
        return cls(alpha=5.0, beta=1e-4)

    @classmethod
    def outdoor(cls) -> 'LossConfig':
        return cls(alpha=5.0, beta=1e-6)

    def with_beta(self, beta: float) -> 'LossConfig':
        return replace(self, beta=beta)

    @classmethod
    def from_mapping(cls, values) -> 'LossConfig':
        return cls(**{
            name: float(get_value(values, f'loss.{name}'))
            for name in cls.__dataclass_fields__
        })


@dataclass(frozen=True, eq=False)
class ReprojectionError:
    """Pixel error of one point; `behind_camera` set (and value inf) at non-positive depth."""

    value: float
    behind_camera: bool = False


@dataclass(frozen=True, eq=False)
class InlierLabels:
    l: NDArray[np.bool_]
    tau: float

    def __len__(self):
        return len(self.l)

    def as_float(self) -> NDArray[np.float64]:
        return self.l.astype(np.float64)


@dataclass(frozen=True, eq=False)
class GroundTruthVector:
    """Unit-norm flattened [R | t] of the supervising pose."""

    t: NDArray[np.float64]
    pose: Optional[Pose] = None

    def __post_init__(self):
        t = np.asarray(self.t, dtype=np.float64).reshape(12)
        norm = np.linalg.norm(t)
        if abs(norm - 1.0) > 1e-9:
            raise ConfigurationError(f"Ground-truth vector must have unit norm, got {norm}")
        object.__setattr__(self, 't', t)

    @property
    def projector(self) -> NDArray[np.float64]:
        """I - t t^T, projecting onto the hyperplane normal to t."""
        return np.eye(12) - np.outer(self.t, self.t)


@dataclass(frozen=True, eq=False)
class ReprojectionLoss:
    value: float
    terms: NDArray[np.float64]
    valid: NDArray[np.bool_]


@dataclass(frozen=True)
class RegressionLoss:
    value: float
    residual: float
    trace_term: float
