"""
Pairwise interaction parameters P = (R, t, s) and the similarity transforms they induce.
"""

from dataclasses import dataclass, replace
from enum import Enum
from typing import Tuple

import numpy as np

from services import rotations
from services.exceptions import ValidationError


class InteractionStatus(str, Enum):
    """Optimization status of an interaction; ordered Unset < Initialized < Settled."""

    UNSET = 'Unset'
    INITIALIZED = 'Initialized'
    SETTLED = 'Settled'

    @property
    def rank(self) -> int:
        return _STATUS_RANK[self]


_STATUS_RANK = {
    InteractionStatus.UNSET: 0,
    InteractionStatus.INITIALIZED: 1,
    InteractionStatus.SETTLED: 2,
}


@dataclass(frozen=True, eq=False)
class Similarity:
    """x -> scale * R(rotation) x + translation."""

    scale: float
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, 'scale', float(self.scale))
        object.__setattr__(self, 'rotation', np.asarray(self.rotation, dtype=np.float64).reshape(4))
        object.__setattr__(self, 'translation', np.asarray(self.translation, dtype=np.float64).reshape(3))

    @classmethod
    def identity(cls, scale: float = 1.0) -> 'Similarity':
        return cls(scale, rotations.IDENTITY.copy(), np.zeros(3))

    @property
    def matrix(self) -> np.ndarray:
        return rotations.to_matrix(self.rotation)

    def apply(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        return self.scale * points @ self.matrix.T + self.translation

    def compose(self, inner: 'Similarity') -> 'Similarity':
        """self ∘ inner: apply `inner` first."""
        return Similarity(
            scale=self.scale * inner.scale,
            rotation=rotations.multiply(self.rotation, inner.rotation),
            translation=self.apply(inner.translation),
        )

    def inverse(self) -> 'Similarity':
        r_t = self.matrix.T
        return Similarity(
            scale=1.0 / self.scale,
            rotation=rotations.conjugate(self.rotation),
            translation=-(r_t @ self.translation) / self.scale,
        )


@dataclass(frozen=True, eq=False)
class InteractionParams:
    """Transform mapping `child_id` into the frame of `anchor_id`."""

    anchor_id: str
    child_id: str
    rotation: np.ndarray = None
    translation: np.ndarray = None
    scale: float = 1.0
    prompt: str = ''
    status: InteractionStatus = InteractionStatus.UNSET

    def __post_init__(self):
        rotation = rotations.IDENTITY.copy() if self.rotation is None else self.rotation
        translation = np.zeros(3) if self.translation is None else self.translation
        rotation = np.array(rotation, dtype=np.float64).reshape(4)
        translation = np.array(translation, dtype=np.float64).reshape(3)
        rotation.setflags(write=False)
        translation.setflags(write=False)
        object.__setattr__(self, 'rotation', rotation)
        object.__setattr__(self, 'translation', translation)
        object.__setattr__(self, 'scale', float(self.scale))
        object.__setattr__(self, 'status', InteractionStatus(self.status))

        if self.anchor_id == self.child_id:
            raise ValidationError(f"Interaction anchor and child must differ, both are '{self.anchor_id}'")
        if not self.scale > 0:
            raise ValidationError(f"Interaction scale must be positive, got {self.scale}")
        if not rotations.is_unit(rotation):
            raise ValidationError(
                f"Interaction rotation must be unit-norm within {rotations.UNIT_TOLERANCE}, "
                f"got |q|={np.linalg.norm(rotation):.9f}"
            )

    @property
    def pair(self) -> Tuple[str, str]:
        return self.anchor_id, self.child_id

    @property
    def similarity(self) -> Similarity:
        return Similarity(self.scale, self.rotation, self.translation)

    def inverse(self) -> 'InteractionParams':
        """p⁻¹ = (Rᵀ, −Rᵀt/s, 1/s), with anchor and child swapped."""
        inv = self.similarity.inverse()
        return replace(self, anchor_id=self.child_id, child_id=self.anchor_id,
                       rotation=inv.rotation, translation=inv.translation, scale=inv.scale)

    def with_updates(self, **changes) -> 'InteractionParams':
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return {
            'rotation': [float(v) for v in self.rotation],
            'translation': [float(v) for v in self.translation],
            'scale': float(self.scale),
        }
