from dataclasses import dataclass
from typing import List, Optional

from sclocalize.exceptions import ConfigurationError


@dataclass(frozen=True)
class PoseError:
    translation_error: float
    rotation_error: float

    def __post_init__(self):
        if self.translation_error < 0 or not 0 <= self.rotation_error <= 180:
            raise ConfigurationError(
                f"Invalid pose error ({self.translation_error} m, {self.rotation_error} deg)"
            )

    def passes(self, t_thresh: float, r_thresh: float) -> bool:
        return self.translation_error < t_thresh and self.rotation_error < r_thresh


@dataclass(frozen=True)
class FrameResult:
    frame: int
    error: PoseError
    passed: bool
    n_points: int
    n_confident: int


@dataclass(frozen=True)
class EvalSummary:
    median_translation_error: float
    median_rotation_error: float
    recall: float
    # None when no weights were supplied or the correlation is undefined
    pearson: Optional[float]
    t_thresh: float
    r_thresh: float
    frames: List[FrameResult]

    def __post_init__(self):
        if not 0.0 <= self.recall <= 1.0:
            raise ConfigurationError(f"Recall {self.recall} outside [0, 1]")
        if self.pearson is not None and not -1.0 <= self.pearson <= 1.0:
            raise ConfigurationError(f"Pearson coefficient {self.pearson} outside [-1, 1]")
