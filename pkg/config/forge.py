"""
Object generation settings (3,000 iterations, batch of 4 views, CFG 100).

The guidance constants (cfg_scale, loss_scale, rescale_factor, timestep ranges) are
never used locally; they travel in every guidance request so the service on the
other side of the wire can apply them.
"""

from dataclasses import dataclass, fields
from typing import Tuple
import math

from services.exceptions import ValidationError


@dataclass(frozen=True)
class ForgeConfig:
    iterations: int = 3000
    batch_size: int = 4
    cfg_scale: float = 100.0
    loss_scale: float = 0.5
    rescale_factor: float = 0.7
    timestep_range_start: Tuple[int, int] = (2, 980)
    timestep_range_end: Tuple[int, int] = (2, 500)
    timestep_anneal_steps: int = 2000

    lr_mean: float = 2e-3
    lr_mean_final: float = 1e-4
    lr_color: float = 0.01
    lr_opacity: float = 0.01
    lr_scale: float = 0.002
    lr_rotation: float = 0.001

    densify_window: Tuple[int, int] = (0, 2000)
    densify_interval: int = 250
    densify_grad_threshold: float = 0.5
    clone_scale_cutoff: float = 0.01
    split_scale_divisor: float = 1.6

    beta_hull: float = 5.0
    knn_k_hull: int = 5
    pointe_knn_weight: float = 20.0
    knn_k_pointe: int = 1
    hull_radius: float = 0.25
    hull_refresh_interval: int = 100
    fps_count: int = 2048

    init_count: int = 4096
    init_scale: float = 0.02
    init_opacity: float = 0.8

    camera_azimuth: Tuple[float, float] = (0.0, 360.0)
    camera_elevation: Tuple[float, float] = (-30.0, 80.0)
    camera_fov: Tuple[float, float] = (30.0, 55.0)
    camera_radius: Tuple[float, float] = (2.5, 3.0)
    image_size: int = 64

    seed: int = 0
    log_interval: int = 100

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, list):
                object.__setattr__(self, f.name, tuple(value))
        self.validate()

    def validate(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name in ('seed', 'iterations', 'camera_elevation', 'camera_azimuth', 'densify_window'):
                continue
            if isinstance(value, tuple):
                if any(v <= 0 for v in value):
                    raise ValidationError(f"ForgeConfig.{f.name} must be positive, got {value}")
            elif not value > 0:
                raise ValidationError(f"ForgeConfig.{f.name} must be positive, got {value}")
        for name in ('timestep_range_start', 'timestep_range_end', 'densify_window', 'camera_azimuth',
                     'camera_elevation', 'camera_fov', 'camera_radius'):
            low, high = getattr(self, name)
            if low > high:
                raise ValidationError(f"ForgeConfig.{name} must be ordered, got {(low, high)}")
        if self.iterations < 0:
            raise ValidationError("ForgeConfig.iterations must not be negative")
        if self.densify_window[0] < 0:
            raise ValidationError("densify_window must start at or after iteration 0")
        if not (-90.0 <= self.camera_elevation[0] and self.camera_elevation[1] <= 90.0):
            raise ValidationError("camera_elevation must lie within [-90, 90]")

    def mean_learning_rate(self, iteration: int) -> float:
        """Log-linear decay from lr_mean to lr_mean_final over the run."""
        if self.iterations <= 1:
            return self.lr_mean
        t = min(max(iteration / (self.iterations - 1), 0.0), 1.0)
        return math.exp((1 - t) * math.log(self.lr_mean) + t * math.log(self.lr_mean_final))

    def timestep_range(self, iteration: int) -> Tuple[int, int]:
        """Upper timestep bound annealed linearly from the start range to the end range."""
        t = min(iteration / self.timestep_anneal_steps, 1.0)
        low = round((1 - t) * self.timestep_range_start[0] + t * self.timestep_range_end[0])
        high = round((1 - t) * self.timestep_range_start[1] + t * self.timestep_range_end[1])
        return int(low), int(high)

    def densify_due(self, iteration: int) -> bool:
        start, end = self.densify_window
        return start < iteration <= end and iteration % self.densify_interval == 0
