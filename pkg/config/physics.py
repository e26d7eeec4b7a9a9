"""
Physics settle configuration.

Defaults: λ_g = 10,000, λ_c = 30,000·L_g on intersection, K_comb = 2000 and
200 steps. An impulse of 0.3 at 60° acts at most 5 times while the top-view
overlap sits between 40% and 95%.

The settle descends (F + λ_g·L_g + λ_c·L_c) / λ_g, so a `gd` step moves a resting
child by at most about `learning_rate`. The default `rprop` adapts a per-coordinate
step from the gradient sign and shrinks it on every sign flip; plain `gd` at a
constant rate keeps bouncing by one step around the floor. Child Gaussians within
`contact_floor_band` (a share of the child's height) of the anchor's floor are left
to the gravity term, and angles within `contact_tolerance` of π/2 count as touching.
"""

from dataclasses import dataclass, fields
from typing import Tuple

from services.exceptions import ValidationError

OPTIMIZERS = ('rprop', 'gd')


@dataclass(frozen=True)
class PhysicsConfig:
    lambda_g: float = 10000.0
    lambda_c_factor: float = 30000.0
    k_comb: float = 2000.0
    steps: int = 200
    learning_rate: float = 0.005
    impulse_distance: float = 0.3
    impulse_angle_deg: float = 60.0
    impulse_overlap_range: Tuple[float, float] = (0.40, 0.95)
    impulse_budget: int = 5
    freeze_scale: bool = True
    contact_floor_band: float = 0.02
    contact_tolerance: float = 1e-4

    # Step control for the settle optimizer
    optimizer: str = 'rprop'
    step_growth: float = 1.2
    step_shrink: float = 0.5
    max_step: float = 0.1
    min_step: float = 1e-9
    grad_tolerance: float = 1e-6

    # Weight on the oracle gradient when a residual-capable oracle is supplied
    guidance_weight: float = 1.0
    overlap_grid: int = 64
    log_interval: int = 50

    def __post_init__(self):
        object.__setattr__(self, 'impulse_overlap_range', tuple(float(v) for v in self.impulse_overlap_range))
        self.validate()

    def validate(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, bool) or isinstance(value, (str, tuple)):
                continue
            if not value > 0:
                raise ValidationError(f"PhysicsConfig.{f.name} must be positive, got {value}")
        low, high = self.impulse_overlap_range
        if not 0.0 <= low < high <= 1.0:
            raise ValidationError(f"impulse_overlap_range must satisfy 0 <= low < high <= 1, got {self.impulse_overlap_range}")
        if self.optimizer not in OPTIMIZERS:
            raise ValidationError(f"optimizer must be one of {OPTIMIZERS}, got '{self.optimizer}'")
        if not 0 < self.step_shrink < 1 < self.step_growth:
            raise ValidationError("step_shrink must be in (0, 1) and step_growth above 1")
        if self.min_step > self.max_step:
            raise ValidationError("min_step must not exceed max_step")
