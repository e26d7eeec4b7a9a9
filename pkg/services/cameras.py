"""
Camera schedules: fixed composition cameras, random training cameras and turntables.
"""

from typing import List, Sequence, Tuple

import numpy as np

from config import prompts
from models.camera import Camera


def init_cameras(target, radius: float, elevations: Sequence[float], azimuths: Sequence[float],
                 fov_y: float = 40.0, size: int = 32) -> List[Camera]:
    """One camera per (elevation, azimuth), elevation-major."""
    return [
        Camera.orbit(radius, az, el, target=target, fov_y=fov_y, width=size, height=size)
        for el in elevations for az in azimuths
    ]


def random_cameras(rng: np.random.Generator, count: int, target=(0.0, 0.0, 0.0),
                   azimuth: Tuple[float, float] = (0.0, 360.0),
                   elevation: Tuple[float, float] = (-30.0, 80.0),
                   fov: Tuple[float, float] = (30.0, 55.0),
                   radius: Tuple[float, float] = (2.5, 3.0),
                   size: int = 64) -> List[Camera]:
    cams = []
    for _ in range(count):
        az = rng.uniform(*azimuth)
        el = rng.uniform(*elevation)
        fov_y = rng.uniform(*fov)
        r = rng.uniform(*radius)
        cams.append(Camera.orbit(r, az, el, target=target, fov_y=fov_y, width=size, height=size))
    return cams


def turntable(count: int, radius: float, elevation: float = 30.0, target=(0.0, 0.0, 0.0),
              fov_y: float = 40.0, size: int = 256) -> List[Camera]:
    step = 360.0 / count
    return [Camera.orbit(radius, i * step, elevation, target=target, fov_y=fov_y, width=size, height=size)
            for i in range(count)]


def view_suffix(azimuth_deg: float, elevation_deg: float) -> str:
    """Direction phrase for a camera seen from the object (azimuth 0 is the front)."""
    if elevation_deg >= prompts.OVERHEAD_ELEVATION:
        return prompts.OVERHEAD
    az = azimuth_deg % 360.0
    if az <= prompts.FRONT_HALF_WIDTH or az >= 360.0 - prompts.FRONT_HALF_WIDTH:
        return prompts.FRONT
    if abs(az - 180.0) <= prompts.BACK_HALF_WIDTH:
        return prompts.BACK
    return prompts.SIDE


def camera_suffix(camera: Camera) -> str:
    return view_suffix(*camera.azimuth_elevation)
