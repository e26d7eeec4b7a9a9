"""
Gaussian primitives and object fields.

An ObjectField stores its Gaussians as parallel arrays (struct of arrays) because
every consumer (renderer, physics, forge) works on whole columns at once. The
`gaussians` property and `Gaussian` type give the per-primitive view.
"""

from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Dict, List, Optional, Sequence
import logging

import numpy as np

from services import rotations
from services.exceptions import ValidationError

logger = logging.getLogger(__name__)


def _frozen_array(values, shape_tail, name: str, dtype=np.float64) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    if arr.ndim != 1 + len(shape_tail) or tuple(arr.shape[1:]) != tuple(shape_tail):
        raise ValidationError(f"{name} must have shape (N, {', '.join(map(str, shape_tail))}), got {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Gaussian:
    """One anisotropic 3D primitive."""

    mean: np.ndarray
    rotation: np.ndarray
    scale: np.ndarray
    opacity: float
    color: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, 'mean', np.asarray(self.mean, dtype=np.float64).reshape(3))
        object.__setattr__(self, 'rotation', np.asarray(self.rotation, dtype=np.float64).reshape(4))
        object.__setattr__(self, 'scale', np.asarray(self.scale, dtype=np.float64).reshape(3))
        object.__setattr__(self, 'color', np.asarray(self.color, dtype=np.float64).reshape(3))
        object.__setattr__(self, 'opacity', float(self.opacity))
        if not rotations.is_unit(self.rotation):
            raise ValidationError(f"Gaussian rotation must be unit-norm, got |q|={np.linalg.norm(self.rotation)}")
        if np.any(self.scale <= 0):
            raise ValidationError(f"Gaussian scales must be positive, got {self.scale}")
        if not 0.0 <= self.opacity <= 1.0:
            raise ValidationError(f"Gaussian opacity must be in [0,1], got {self.opacity}")
        if np.any(self.color < 0) or np.any(self.color > 1):
            raise ValidationError(f"Gaussian color must be in [0,1], got {self.color}")

    @property
    def covariance(self) -> np.ndarray:
        """Rot·diag(scale²)·Rotᵀ."""
        m = rotations.to_matrix(self.rotation) * self.scale[None, :]
        return m @ m.T


@dataclass(frozen=True, eq=False)
class ObjectField:
    """
    An ordered set of Gaussians in object-local coordinates.

    Instances are immutable; `with_arrays` returns a new revision. `provenance`,
    `frames` and `lineage` are only set on fields produced by scene flattening.
    """

    id: str
    means: np.ndarray
    rotations: np.ndarray
    scales: np.ndarray
    opacities: np.ndarray
    colors: np.ndarray
    prompt: str = ''
    init_points: Optional[np.ndarray] = None
    provenance: Optional[np.ndarray] = None
    frames: Dict[str, object] = field(default_factory=dict)
    lineage: Dict[str, tuple] = field(default_factory=dict)

    def __post_init__(self):
        means = _frozen_array(self.means, (3,), 'means')
        n = means.shape[0]
        if n == 0:
            raise ValidationError(f"Object field '{self.id}' must contain at least one Gaussian")
        quats = _frozen_array(self.rotations, (4,), 'rotations')
        scales = _frozen_array(self.scales, (3,), 'scales')
        opacities = np.array(self.opacities, dtype=np.float64).reshape(-1)
        opacities.setflags(write=False)
        colors = _frozen_array(self.colors, (3,), 'colors')

        for name, arr in (('rotations', quats), ('scales', scales), ('opacities', opacities), ('colors', colors)):
            if arr.shape[0] != n:
                raise ValidationError(f"{name} has {arr.shape[0]} rows, expected {n}")
        if not rotations.is_unit(quats):
            raise ValidationError(f"Object field '{self.id}' has non-unit rotations")
        if np.any(scales <= 0) or not np.all(np.isfinite(scales)):
            raise ValidationError(f"Object field '{self.id}' has non-positive scales")
        if np.any(opacities < 0) or np.any(opacities > 1):
            raise ValidationError(f"Object field '{self.id}' has opacities outside [0,1]")
        if np.any(colors < 0) or np.any(colors > 1):
            raise ValidationError(f"Object field '{self.id}' has colors outside [0,1]")

        object.__setattr__(self, 'means', means)
        object.__setattr__(self, 'rotations', quats)
        object.__setattr__(self, 'scales', scales)
        object.__setattr__(self, 'opacities', opacities)
        object.__setattr__(self, 'colors', colors)

        if self.init_points is not None:
            points = _frozen_array(self.init_points, (3,), 'init_points')
            object.__setattr__(self, 'init_points', points)
        if self.provenance is not None:
            provenance = np.asarray(self.provenance, dtype=object).reshape(-1)
            if provenance.shape[0] != n:
                raise ValidationError(f"provenance has {provenance.shape[0]} entries, expected {n}")
            provenance.setflags(write=False)
            object.__setattr__(self, 'provenance', provenance)

    @classmethod
    def from_gaussians(cls, id: str, gaussians: Sequence[Gaussian], prompt: str = '',
                       init_points=None) -> 'ObjectField':
        if not gaussians:
            raise ValidationError(f"Object field '{id}' must contain at least one Gaussian")
        return cls(
            id=id,
            means=[g.mean for g in gaussians],
            rotations=[g.rotation for g in gaussians],
            scales=[g.scale for g in gaussians],
            opacities=[g.opacity for g in gaussians],
            colors=[g.color for g in gaussians],
            prompt=prompt,
            init_points=init_points,
        )

    def __len__(self) -> int:
        return self.means.shape[0]

    @property
    def gaussians(self) -> List[Gaussian]:
        return [self.gaussian(i) for i in range(len(self))]

    def gaussian(self, index: int) -> Gaussian:
        return Gaussian(
            mean=self.means[index],
            rotation=self.rotations[index],
            scale=self.scales[index],
            opacity=self.opacities[index],
            color=self.colors[index],
        )

    @cached_property
    def geometric_center(self) -> np.ndarray:
        """Arithmetic mean of the Gaussian means (q)."""
        center = self.means.mean(axis=0)
        center.setflags(write=False)
        return center

    @cached_property
    def covariances(self) -> np.ndarray:
        m = rotations.to_matrix(self.rotations) * self.scales[:, None, :]
        return m @ np.swapaxes(m, -1, -2)

    def bounding_radius(self, center=None) -> float:
        """Largest distance from `center` (default: geometric center) to a mean."""
        center = self.geometric_center if center is None else np.asarray(center)
        return float(np.max(np.linalg.norm(self.means - center, axis=1)))

    def with_arrays(self, **changes) -> 'ObjectField':
        """New revision with some columns or metadata replaced."""
        return replace(self, **changes)

    def subset(self, indices) -> 'ObjectField':
        indices = np.asarray(indices)
        return replace(
            self,
            means=self.means[indices],
            rotations=self.rotations[indices],
            scales=self.scales[indices],
            opacities=self.opacities[indices],
            colors=self.colors[indices],
            provenance=None if self.provenance is None else self.provenance[indices],
        )

    def object_mask(self, object_ids) -> np.ndarray:
        """Boolean mask of Gaussians whose provenance is in `object_ids`."""
        if self.provenance is None:
            return np.full(len(self), self.id in set(object_ids))
        return np.isin(self.provenance, list(object_ids))
