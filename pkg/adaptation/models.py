from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from sclocalize.config import get_value
from sclocalize.exceptions import ConfigurationError
from training.models import WeightParams


@dataclass(frozen=True)
class AdaptConfig:
    frame_interval: int = 1
    iterations: int = 100
    learning_rate: float = 0.2
    # Central-difference step for the photometric loss through the pose
    fd_step: float = 1e-5
    divergence_factor: float = 1e6

    def __post_init__(self):
        if self.frame_interval < 1:
            raise ConfigurationError(f"adapt.frame_interval must be at least 1, got {self.frame_interval}")
        if self.iterations < 1:
            raise ConfigurationError(f"adapt.iterations must be at least 1, got {self.iterations}")
        if not (self.learning_rate > 0 and self.fd_step > 0):
            raise ConfigurationError("adapt.learning_rate and adapt.fd_step must be positive")

    @classmethod
    def from_mapping(cls, values) -> 'AdaptConfig':
        return cls(
            frame_interval=int(get_value(values, 'adapt.frame_interval')),
            iterations=int(get_value(values, 'adapt.iterations')),
            learning_rate=float(get_value(values, 'adapt.learning_rate')),
            fd_step=float(get_value(values, 'adapt.fd_step')),
            divergence_factor=float(get_value(values, 'fit.divergence_factor')),
        )


@dataclass(frozen=True, eq=False)
class AdaptResult:
    theta: WeightParams
    loss: NDArray[np.float64]
    skipped_frames: int = 0
