"""
Field distillation settings. Densification stays off during distillation.
"""

from dataclasses import dataclass, fields
from typing import Tuple
import math

from services.exceptions import ValidationError

MIN_DISTILLED_GAUSSIANS = 16


@dataclass(frozen=True)
class DistillConfig:
    view_count: int = 32
    iterations: int = 500
    camera_radius: Tuple[float, float] = (2.0, 4.5)
    camera_elevation: Tuple[float, float] = (-30.0, 80.0)
    camera_fov: float = 40.0
    image_size: int = 64
    batch_size: int = 1

    lr_mean: float = 2e-3
    lr_mean_final: float = 1e-4
    lr_color: float = 0.01
    lr_opacity: float = 0.01
    lr_scale: float = 0.002
    lr_rotation: float = 0.001

    seed: int = 0
    log_interval: int = 100

    def __post_init__(self):
        for f in fields(self):
            if isinstance(getattr(self, f.name), list):
                object.__setattr__(self, f.name, tuple(getattr(self, f.name)))
        self.validate()

    def validate(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name in ('seed', 'iterations', 'camera_elevation'):
                continue
            if isinstance(value, tuple):
                if any(v <= 0 for v in value):
                    raise ValidationError(f"DistillConfig.{f.name} must be positive, got {value}")
            elif not value > 0:
                raise ValidationError(f"DistillConfig.{f.name} must be positive, got {value}")
        if self.iterations < 0:
            raise ValidationError("DistillConfig.iterations must not be negative")
        for name in ('camera_radius', 'camera_elevation'):
            low, high = getattr(self, name)
            if low > high:
                raise ValidationError(f"DistillConfig.{name} must be ordered, got {(low, high)}")

    def mean_learning_rate(self, iteration: int) -> float:
        if self.iterations <= 1:
            return self.lr_mean
        t = min(max(iteration / (self.iterations - 1), 0.0), 1.0)
        return math.exp((1 - t) * math.log(self.lr_mean) + t * math.log(self.lr_mean_final))
