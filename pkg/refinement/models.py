from dataclasses import dataclass, field
from typing import List

import numpy as np
from numpy.typing import NDArray

from geometry.lie import compose_right
from sclocalize.config import get_value
from sclocalize.exceptions import ConfigurationError
from simulator.models import Pose


@dataclass(frozen=True)
class RefineConfig:
    threshold_px: float = 10.0
    max_iterations: int = 100
    max_inner_iterations: int = 50
    lambda_init: float = 1e-3
    lambda_up: float = 10.0
    lambda_down: float = 10.0
    max_damping_escalations: int = 10

    def __post_init__(self):
        if not self.threshold_px > 0:
            raise ConfigurationError(f"refine.threshold_px must be positive, got {self.threshold_px}")
        if self.max_iterations < 1 or self.max_inner_iterations < 1:
            raise ConfigurationError("refine.max_iters and refine.max_inner_iters must be at least 1")
        if not (self.lambda_init > 0 and self.lambda_up > 1 and self.lambda_down > 1):
            raise ConfigurationError("Damping needs lambda_init > 0 and lambda_up, lambda_down > 1")

    @classmethod
    def from_mapping(cls, values) -> 'RefineConfig':
        return cls(
            threshold_px=float(get_value(values, 'refine.threshold_px')),
            max_iterations=int(get_value(values, 'refine.max_iters')),
            max_inner_iterations=int(get_value(values, 'refine.max_inner_iters')),
            lambda_init=float(get_value(values, 'refine.lambda_init')),
            lambda_up=float(get_value(values, 'refine.lambda_up')),
            lambda_down=float(get_value(values, 'refine.lambda_down')),
        )


@dataclass(frozen=True, eq=False)
class PoseDelta:
    """Right-multiplied increment: axis-angle rotation (rad) then translation (m)."""

    xi: NDArray[np.float64]

    def __post_init__(self):
        xi = np.asarray(self.xi, dtype=np.float64).reshape(6)
        if not np.all(np.isfinite(xi)):
            raise ConfigurationError("Pose increment is not finite")
        object.__setattr__(self, 'xi', xi)

    @property
    def rotation(self) -> NDArray[np.float64]:
        return self.xi[:3]

    @property
    def translation(self) -> NDArray[np.float64]:
        return self.xi[3:]

    def apply(self, pose: Pose) -> Pose:
        return compose_right(pose, self.xi)


@dataclass(frozen=True, eq=False)
class RefineResult:
    pose: Pose
    iterations_used: int
    final_inliers: NDArray[np.int64]
    # Accepted costs of each outer iteration, starting with that set's initial cost
    cost_history: List[List[float]] = field(default_factory=list)
    converged: bool = True

    @property
    def final_cost(self) -> float:
        return self.cost_history[-1][-1] if self.cost_history else 0.0
