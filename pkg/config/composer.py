"""
Structured Monte-Carlo initialization settings.

Cameras sit at a radius of 4.5 around the anchor and the child scale is searched in
[0.3, 0.7]. If the averaged best scales fall under 0.35 the search is treated as a
scale-anomaly false optimum: the cameras move in to 2.5 and the range becomes
[0.2, 0.6]. Negative camera elevations are never used.

Translation rounds search spherical caps whose half-angles follow
`translation_caps_deg` (180° is the whole sphere; later rounds reuse the last entry),
centred on the mean of the `translation_top_k` best placements seen so far.
"""

from dataclasses import dataclass, fields
from typing import Tuple

from services.exceptions import ValidationError


@dataclass(frozen=True)
class InitConfig:
    camera_radius_primary: float = 4.5
    camera_radius_reduced: float = 2.5
    scale_range_primary: Tuple[float, float] = (0.3, 0.7)
    scale_range_reduced: Tuple[float, float] = (0.2, 0.6)
    scale_switch_threshold: float = 0.35
    scale_samples: int = 50
    scale_top_k: int = 5
    translation_samples: int = 50
    joint_samples: int = 150
    translation_top_k: int = 10
    translation_caps_deg: Tuple[float, ...] = (180.0, 36.0, 18.0)
    alternating_rounds: int = 3
    visibility_exponent: float = 0.5
    init_elevations: Tuple[float, ...] = (30.0, 60.0)
    init_azimuths: Tuple[float, ...] = (0.0, 90.0, 180.0, 270.0)

    camera_fov: float = 40.0
    image_size: int = 32
    sphere_radius_factor: float = 1.2
    resample_attempts: int = 3
    resample_inflation: float = 1.1
    max_failure_fraction: float = 0.5

    def __post_init__(self):
        for name in ('scale_range_primary', 'scale_range_reduced', 'init_elevations', 'init_azimuths',
                     'translation_caps_deg'):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        self.validate()

    def validate(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                continue
            if not value > 0:
                raise ValidationError(f"InitConfig.{f.name} must be positive, got {value}")
        for name in ('scale_range_primary', 'scale_range_reduced'):
            low, high = getattr(self, name)
            if not 0 < low < high:
                raise ValidationError(f"InitConfig.{name} must be an ordered positive range, got {(low, high)}")
        if self.scale_top_k > self.scale_samples:
            raise ValidationError("scale_top_k cannot exceed scale_samples")
        if not 0 < self.visibility_exponent <= 1:
            raise ValidationError(f"visibility_exponent must be in (0, 1], got {self.visibility_exponent}")
        if not self.init_elevations or not self.init_azimuths:
            raise ValidationError("At least one init camera elevation and azimuth are required")
        if any(e < 0 for e in self.init_elevations):
            raise ValidationError("Init camera elevations must not be negative")
        if not self.translation_caps_deg or any(not 0 < a <= 180 for a in self.translation_caps_deg):
            raise ValidationError(f"translation_caps_deg must hold angles in (0, 180], got {self.translation_caps_deg}")
        if self.max_failure_fraction > 1:
            raise ValidationError("max_failure_fraction must not exceed 1")

    def scale_range(self, switched: bool) -> Tuple[float, float]:
        return self.scale_range_reduced if switched else self.scale_range_primary

    def camera_radius(self, switched: bool) -> float:
        return self.camera_radius_reduced if switched else self.camera_radius_primary

    def translation_cap(self, round_index: int) -> float:
        """Cap half-angle in degrees for a zero-based translation round."""
        caps = self.translation_caps_deg
        return caps[min(round_index, len(caps) - 1)]
