"""
Small numpy optimizers over named parameter arrays.
"""

from typing import Dict

import numpy as np


class Adam:
    """Adam with a learning rate per parameter group."""

    def __init__(self, learning_rates: Dict[str, float], betas=(0.9, 0.999), eps: float = 1e-15):
        self.learning_rates = dict(learning_rates)
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.step_count = 0
        self._m: Dict[str, np.ndarray] = {}
        self._v: Dict[str, np.ndarray] = {}

    def step(self, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray]) -> Dict[str, np.ndarray]:
        self.step_count += 1
        updated = {}
        for name, value in params.items():
            grad = grads.get(name)
            if grad is None or name not in self.learning_rates:
                updated[name] = value
                continue
            m = self._m.get(name)
            if m is None or m.shape != value.shape:
                m = np.zeros_like(value)
                self._v[name] = np.zeros_like(value)
            v = self._v[name]
            m = self.beta1 * m + (1 - self.beta1) * grad
            v = self.beta2 * v + (1 - self.beta2) * grad * grad
            self._m[name], self._v[name] = m, v
            m_hat = m / (1 - self.beta1 ** self.step_count)
            v_hat = v / (1 - self.beta2 ** self.step_count)
            updated[name] = value - self.learning_rates[name] * m_hat / (np.sqrt(v_hat) + self.eps)
        return updated

    def reindex(self, keep: np.ndarray, extra: int = 0):
        """Carry moment estimates through a change of row count (densification)."""
        for store in (self._m, self._v):
            for name, arr in store.items():
                rows = arr[keep]
                if extra:
                    rows = np.concatenate([rows, np.zeros((extra,) + arr.shape[1:])])
                store[name] = rows


class Rprop:
    """
    Sign-based steps with per-coordinate adaptive step sizes.

    A step grows by `growth` while the gradient keeps its sign and shrinks by
    `shrink` when it flips; gradients inside the dead band do not move the parameter.
    """

    def __init__(self, initial_step: float, growth: float = 1.2, shrink: float = 0.5,
                 max_step: float = 0.1, min_step: float = 1e-9, tolerance: float = 0.0):
        self.initial_step = initial_step
        self.growth = growth
        self.shrink = shrink
        self.max_step = max_step
        self.min_step = min_step
        self.tolerance = tolerance
        self._steps: Dict[str, np.ndarray] = {}
        self._previous: Dict[str, np.ndarray] = {}

    def step(self, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray]) -> Dict[str, np.ndarray]:
        updated = {}
        for name, value in params.items():
            grad = grads.get(name)
            if grad is None:
                updated[name] = value
                continue
            grad = np.where(np.abs(grad) <= self.tolerance, 0.0, grad)
            steps = self._steps.setdefault(name, np.full_like(value, self.initial_step, dtype=np.float64))
            previous = self._previous.get(name, np.zeros_like(grad))
            agreement = np.sign(grad) * np.sign(previous)
            steps = np.where(agreement > 0, np.minimum(steps * self.growth, self.max_step), steps)
            steps = np.where(agreement < 0, np.maximum(steps * self.shrink, self.min_step), steps)
            self._steps[name] = steps
            self._previous[name] = grad
            updated[name] = value - np.sign(grad) * steps
        return updated


class GradientDescent:
    def __init__(self, learning_rate: float):
        self.learning_rate = learning_rate

    def step(self, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray]) -> Dict[str, np.ndarray]:
        return {name: value - self.learning_rate * grads[name] if name in grads else value
                for name, value in params.items()}
