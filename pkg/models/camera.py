"""
Pinhole cameras and rendered images.

View space follows the splatting convention: +x right, +y down, +z forward, so
image rows grow downwards. Pixel (u, v) samples the image plane at integer
coordinates with the principal point at the image center.
"""

from dataclasses import dataclass, field
from functools import cached_property
from typing import Tuple
import math

import numpy as np

from services.exceptions import ShapeMismatchError, ValidationError

WORLD_UP = np.array([0.0, 1.0, 0.0])
_FALLBACK_UP = np.array([0.0, 0.0, -1.0])


@dataclass(frozen=True, eq=False)
class Camera:
    position: np.ndarray
    look_at: np.ndarray
    up: np.ndarray = field(default_factory=lambda: WORLD_UP.copy())
    fov_y: float = 40.0
    width: int = 64
    height: int = 64
    near: float = 0.01

    def __post_init__(self):
        object.__setattr__(self, 'position', np.asarray(self.position, dtype=np.float64).reshape(3))
        object.__setattr__(self, 'look_at', np.asarray(self.look_at, dtype=np.float64).reshape(3))
        object.__setattr__(self, 'up', np.asarray(self.up, dtype=np.float64).reshape(3))
        object.__setattr__(self, 'fov_y', float(self.fov_y))
        object.__setattr__(self, 'width', int(self.width))
        object.__setattr__(self, 'height', int(self.height))
        object.__setattr__(self, 'near', float(self.near))

        if not 0.0 < self.fov_y < 180.0:
            raise ValidationError(f"fov_y must be in (0, 180) degrees, got {self.fov_y}")
        if self.width < 1 or self.height < 1:
            raise ValidationError(f"Camera resolution must be at least 1x1, got {self.width}x{self.height}")
        if not self.near > 0:
            raise ValidationError(f"near must be positive, got {self.near}")
        if np.linalg.norm(self.look_at - self.position) < 1e-12:
            raise ValidationError("Camera position and look_at coincide")
        if np.linalg.norm(self.up) < 1e-12:
            raise ValidationError("Camera up vector must be nonzero")

    @classmethod
    def orbit(cls, radius: float, azimuth_deg: float, elevation_deg: float, target=(0.0, 0.0, 0.0),
              fov_y: float = 40.0, width: int = 64, height: int = 64, near: float = 0.01) -> 'Camera':
        """Camera on a sphere around `target`; azimuth 0 looks down -z, elevation is above the xz-plane."""
        az = math.radians(azimuth_deg)
        el = math.radians(elevation_deg)
        direction = np.array([math.cos(el) * math.sin(az), math.sin(el), math.cos(el) * math.cos(az)])
        target = np.asarray(target, dtype=np.float64)
        return cls(position=target + radius * direction, look_at=target, fov_y=fov_y,
                   width=width, height=height, near=near)

    @cached_property
    def rotation(self) -> np.ndarray:
        """World -> view rotation with rows (right, down, forward)."""
        forward = self.look_at - self.position
        forward = forward / np.linalg.norm(forward)
        right = np.cross(forward, self.up)
        if np.linalg.norm(right) < 1e-9:
            right = np.cross(forward, _FALLBACK_UP)
        right = right / np.linalg.norm(right)
        true_up = np.cross(right, forward)
        rot = np.stack([right, -true_up, forward])
        rot.setflags(write=False)
        return rot

    @property
    def focal(self) -> float:
        return self.height / (2.0 * math.tan(math.radians(self.fov_y) / 2.0))

    @property
    def principal_point(self) -> Tuple[float, float]:
        return (self.width - 1) / 2.0, (self.height - 1) / 2.0

    def to_view(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        return (points - self.position) @ self.rotation.T

    def project_points(self, points) -> Tuple[np.ndarray, np.ndarray]:
        """Pixel coordinates (N, 2) and view depth (N,) of world points."""
        view = self.to_view(points)
        z = view[..., 2]
        safe_z = np.where(np.abs(z) < 1e-12, 1e-12, z)
        cx, cy = self.principal_point
        pixels = np.stack([self.focal * view[..., 0] / safe_z + cx,
                           self.focal * view[..., 1] / safe_z + cy], axis=-1)
        return pixels, z

    @property
    def azimuth_elevation(self) -> Tuple[float, float]:
        """Direction of the camera seen from `look_at`, in degrees."""
        d = self.position - self.look_at
        d = d / np.linalg.norm(d)
        elevation = math.degrees(math.asin(max(-1.0, min(1.0, d[1]))))
        azimuth = math.degrees(math.atan2(d[0], d[2])) % 360.0
        return azimuth, elevation


@dataclass(frozen=True, eq=False)
class RenderedImage:
    """RGB pixels (height, width, 3) and accumulated alpha (height, width)."""

    pixels: np.ndarray
    alpha: np.ndarray

    def __post_init__(self):
        pixels = np.asarray(self.pixels, dtype=np.float64)
        alpha = np.asarray(self.alpha, dtype=np.float64)
        if pixels.ndim != 3 or pixels.shape[2] != 3:
            raise ShapeMismatchError(f"pixels must have shape (H, W, 3), got {pixels.shape}")
        if alpha.shape != pixels.shape[:2]:
            raise ShapeMismatchError(f"alpha shape {alpha.shape} does not match pixels {pixels.shape[:2]}")
        if np.any(pixels < 0) or np.any(pixels > 1) or np.any(alpha < 0) or np.any(alpha > 1):
            raise ValidationError("Rendered values must lie in [0, 1]")
        object.__setattr__(self, 'pixels', pixels)
        object.__setattr__(self, 'alpha', alpha)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    def to_uint8(self) -> np.ndarray:
        return np.round(self.pixels * 255.0).astype(np.uint8)
