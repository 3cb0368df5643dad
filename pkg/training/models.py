from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numpy.typing import NDArray

from sclocalize.config import get_value
from sclocalize.exceptions import ConfigurationError

MODE_JOINT = 'classification+regression'
MODE_REGRESSION = 'regression-only'
MODES = (MODE_JOINT, MODE_REGRESSION)

SCHEDULE_JOINT = 'joint'
SCHEDULE_ALTERNATE = 'alternate'

COORD_GRADIENT_RESIDUAL = 'residual'
COORD_GRADIENT_FULL = 'full'

ACTIVATION = 'tanh_relu'


@dataclass(frozen=True, eq=False)
class WeightParams:
    """Raw per-correspondence parameters; weights are tanh(relu(theta)) in [0, 1)."""

    theta: NDArray[np.float64]

    def __post_init__(self):
        theta = np.array(self.theta, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(theta)):
            raise ConfigurationError("theta contains non-finite values")
        object.__setattr__(self, 'theta', theta)

    def __eq__(self, other):
        if not isinstance(other, WeightParams):
            return NotImplemented
        return np.array_equal(self.theta, other.theta)

    def __len__(self):
        return len(self.theta)

    @classmethod
    def uniform(cls, n: int, value: float = 1.5) -> 'WeightParams':
        return cls(np.full(n, value))

    def activate(self) -> NDArray[np.float64]:
        return np.tanh(np.maximum(self.theta, 0.0))

    def activation_grad(self) -> NDArray[np.float64]:
        """d activate / d theta; zero for theta <= 0."""
        return np.where(self.theta > 0, 1.0 - np.tanh(self.theta) ** 2, 0.0)


@dataclass(frozen=True)
class OptimizerSettings:
    learning_rate: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    divergence_factor: float = 1e6

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigurationError(f"Learning rate must be positive, got {self.learning_rate}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigurationError("Adam betas must lie in [0, 1)")
        if not self.divergence_factor > 1:
            raise ConfigurationError(f"fit.divergence_factor must exceed 1, got {self.divergence_factor}")

    @classmethod
    def from_mapping(cls, values, stage: str = 'fit') -> 'OptimizerSettings':
        key = 'fit.e2e_learning_rate' if stage == 'e2e' else f'{stage}.learning_rate'
        return cls(
            learning_rate=float(get_value(values, key)),
            divergence_factor=float(get_value(values, 'fit.divergence_factor')),
        )


@dataclass(frozen=True, eq=False)
class FitReport:
    stage: str
    mode: str
    seed: int
    loss: NDArray[np.float64]
    classification: NDArray[np.float64]
    regression: NDArray[np.float64]
    translation_error: NDArray[np.float64]
    rotation_error: NDArray[np.float64]
    reprojection_error: NDArray[np.float64]
    theta: WeightParams
    coords: Optional[NDArray[np.float64]] = None
    # Excluded from comparisons and files so reruns stay byte-identical
    wall_clock: float = field(default=0.0, compare=False)

    def __post_init__(self):
        lengths = {
            len(self.loss), len(self.classification), len(self.regression),
            len(self.translation_error), len(self.rotation_error), len(self.reprojection_error),
        }
        if len(lengths) != 1:
            raise ConfigurationError(f"FitReport curves disagree in length: {sorted(lengths)}")

    def __eq__(self, other):
        if not isinstance(other, FitReport):
            return NotImplemented
        arrays = ('loss', 'classification', 'regression', 'translation_error', 'rotation_error', 'reprojection_error')
        return (
            (self.stage, self.mode, self.seed) == (other.stage, other.mode, other.seed)
            and all(np.array_equal(getattr(self, a), getattr(other, a), equal_nan=True) for a in arrays)
            and self.theta == other.theta
            and (
                (self.coords is None and other.coords is None)
                or (self.coords is not None and other.coords is not None and np.array_equal(self.coords, other.coords))
            )
        )

    @property
    def iterations(self) -> int:
        return len(self.loss)

    @property
    def weights(self) -> NDArray[np.float64]:
        return self.theta.activate()

    @property
    def best_loss(self) -> NDArray[np.float64]:
        return np.minimum.accumulate(self.loss)


@dataclass(frozen=True, eq=False)
class CoordinateInit:
    coords: NDArray[np.float64]
    loss: NDArray[np.float64]
