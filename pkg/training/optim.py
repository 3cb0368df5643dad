import numpy as np
from numpy.typing import NDArray

from training.models import OptimizerSettings


class Adam:
    """Adam on a single numpy array. `step` returns the updated parameters."""

    def __init__(self, settings: OptimizerSettings):
        self.settings = settings
        self.m = None
        self.v = None
        self.t = 0

    def step(self, params: NDArray, grad: NDArray) -> NDArray[np.float64]:
        s = self.settings
        if self.m is None:
            self.m = np.zeros_like(params, dtype=np.float64)
            self.v = np.zeros_like(params, dtype=np.float64)
        self.t += 1
        self.m = s.beta1 * self.m + (1.0 - s.beta1) * grad
        self.v = s.beta2 * self.v + (1.0 - s.beta2) * grad**2
        m_hat = self.m / (1.0 - s.beta1**self.t)
        v_hat = self.v / (1.0 - s.beta2**self.t)
        return params - s.learning_rate * m_hat / (np.sqrt(v_hat) + s.eps)
