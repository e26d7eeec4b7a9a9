"""
Field and scene builders for tests.
"""

import numpy as np

from models.gaussian import ObjectField
from models.interaction import InteractionParams, InteractionStatus
from models.scene import Scene
from services import rotations


def random_unit_quaternions(rng: np.random.Generator, count: int) -> np.ndarray:
    return rotations.normalize(rng.normal(size=(count, 4)))


def random_field(rng: np.random.Generator, count: int = 16, object_id: str = 'obj', spread: float = 0.5,
                 scale_range=(0.03, 0.12), opacity_range=(0.2, 0.7), center=(0.0, 0.0, 0.0)) -> ObjectField:
    return ObjectField(
        id=object_id,
        means=np.asarray(center) + rng.uniform(-spread, spread, size=(count, 3)),
        rotations=random_unit_quaternions(rng, count),
        scales=rng.uniform(*scale_range, size=(count, 3)),
        opacities=rng.uniform(*opacity_range, size=count),
        colors=rng.uniform(0.05, 0.95, size=(count, 3)),
    )


def points_field(points, object_id: str = 'obj', scale: float = 0.03, opacity: float = 0.8,
                 colors=None) -> ObjectField:
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    return ObjectField(
        id=object_id,
        means=points,
        rotations=np.tile(rotations.IDENTITY, (n, 1)),
        scales=np.full((n, 3), scale),
        opacities=np.full(n, opacity),
        colors=np.full((n, 3), 0.5) if colors is None else colors,
    )


def fibonacci_sphere(count: int, radius: float = 1.0, center=(0.0, 0.0, 0.0)) -> np.ndarray:
    i = np.arange(count) + 0.5
    phi = np.arccos(1.0 - 2.0 * i / count)
    theta = np.pi * (1.0 + 5.0 ** 0.5) * i
    unit = np.stack([np.cos(theta) * np.sin(phi), np.cos(phi), np.sin(theta) * np.sin(phi)], axis=1)
    return np.asarray(center) + radius * unit


def sphere_shell(count: int = 400, radius: float = 0.5, object_id: str = 'ball', center=(0.0, 0.0, 0.0),
                 scale: float = 0.03) -> ObjectField:
    return points_field(fibonacci_sphere(count, radius, center), object_id, scale=scale)


def textured_sphere(count: int = 400, radius: float = 0.5, object_id: str = 'ball') -> ObjectField:
    """Sphere shell whose colour varies smoothly with direction."""
    points = fibonacci_sphere(count, radius)
    unit = points / radius
    colors = np.clip(0.5 + 0.4 * unit, 0.0, 1.0)
    return points_field(points, object_id, scale=0.06, opacity=0.8, colors=colors)


def plane_grid(side: int = 21, spacing: float = 0.05, object_id: str = 'plane', height: float = 0.0,
               scale: float = 0.03) -> ObjectField:
    """Flat square of Gaussians in the xz-plane at y = height."""
    coords = (np.arange(side) - (side - 1) / 2.0) * spacing
    xs, zs = np.meshgrid(coords, coords, indexing='ij')
    points = np.stack([xs.ravel(), np.full(xs.size, height), zs.ravel()], axis=1)
    return points_field(points, object_id, scale=scale)


def slab(side: int = 21, spacing: float = 0.05, layers: int = 2, object_id: str = 'table') -> ObjectField:
    coords = (np.arange(side) - (side - 1) / 2.0) * spacing
    ys = -np.arange(layers) * spacing
    xs, yy, zs = np.meshgrid(coords, ys, coords, indexing='ij')
    points = np.stack([xs.ravel(), yy.ravel(), zs.ravel()], axis=1)
    return points_field(points, object_id, scale=spacing * 0.6)


def settled(anchor_id: str, child_id: str, translation=(0.0, 0.0, 0.0), scale: float = 1.0,
            rotation=None, prompt: str = '', status=InteractionStatus.INITIALIZED) -> InteractionParams:
    return InteractionParams(anchor_id=anchor_id, child_id=child_id, rotation=rotation, translation=translation,
                             scale=scale, prompt=prompt, status=status)


def two_object_scene(rng: np.random.Generator = None, status=InteractionStatus.INITIALIZED,
                     translation=(0.0, 0.6, 0.0), scale: float = 0.4) -> Scene:
    rng = rng or np.random.default_rng(0)
    table = random_field(rng, 24, 'table', spread=0.5)
    cup = random_field(rng, 12, 'cup', spread=0.3)
    return Scene(objects={'table': table, 'cup': cup},
                 interactions=(settled('table', 'cup', translation, scale, prompt='a cup on a table',
                                       status=status),))


def three_object_scene(status=InteractionStatus.UNSET) -> Scene:
    """A plate on a table and a chicken on the plate."""
    rng = np.random.default_rng(7)
    objects = {
        'table': random_field(rng, 20, 'table'),
        'plate': random_field(rng, 12, 'plate', spread=0.3),
        'chicken': random_field(rng, 12, 'chicken', spread=0.2),
    }
    interactions = (
        settled('table', 'plate', (0.0, 0.5, 0.0), 0.5, prompt='a plate on a table', status=status),
        settled('plate', 'chicken', (0.0, 0.4, 0.0), 0.5, prompt='roasted chicken on a plate', status=status),
    )
    return Scene(objects=objects, interactions=interactions)


def assert_fields_identical(a: ObjectField, b: ObjectField):
    for name in ('means', 'rotations', 'scales', 'opacities', 'colors'):
        assert np.array_equal(getattr(a, name), getattr(b, name)), name
