"""
Scenes: objects plus the directed acyclic graph of pairwise interactions.

Flattening walks each object's unique anchor chain from its root anchor and
composes the pairwise transforms root-first, producing a single world-space field.
"""

from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Tuple
import logging

import numpy as np

from models.gaussian import ObjectField
from models.interaction import InteractionParams, InteractionStatus, Similarity
from services import rotations
from services.exceptions import (
    AmbiguityError, UninitializedInteractionError, UnknownObjectError, ValidationError,
)

logger = logging.getLogger(__name__)

DEFAULT_ANCHOR_SCALE = 0.8
FLOOR_DIVISOR = 1000  # lowest 0.1%


@dataclass(frozen=True, eq=False)
class Scene:
    """Objects keyed by id and the interactions between them."""

    objects: Dict[str, ObjectField]
    interactions: Tuple[InteractionParams, ...] = ()
    anchor_scale: float = DEFAULT_ANCHOR_SCALE

    def __post_init__(self):
        object.__setattr__(self, 'objects', dict(self.objects))
        object.__setattr__(self, 'interactions', tuple(self.interactions))
        if not self.anchor_scale > 0:
            raise ValidationError(f"anchor_scale must be positive, got {self.anchor_scale}")
        self.validate()

    def validate(self):
        for key, obj in self.objects.items():
            if key != obj.id:
                raise ValidationError(f"Object stored under '{key}' has id '{obj.id}'")
        seen_pairs = set()
        for inter in self.interactions:
            for ref in inter.pair:
                if ref not in self.objects:
                    raise UnknownObjectError(f"Interaction {inter.anchor_id}->{inter.child_id} references unknown object '{ref}'")
            pair = frozenset(inter.pair)
            if pair in seen_pairs:
                raise ValidationError(f"More than one interaction between {sorted(pair)}")
            seen_pairs.add(pair)
        self.topological_order()

    # Graph queries

    def interaction(self, anchor_id: str, child_id: str) -> InteractionParams:
        for inter in self.interactions:
            if inter.pair == (anchor_id, child_id):
                return inter
        raise UnknownObjectError(f"No interaction {anchor_id}->{child_id} in scene")

    def inbound(self, object_id: str) -> List[InteractionParams]:
        return [i for i in self.interactions if i.child_id == object_id]

    def outbound(self, object_id: str) -> List[InteractionParams]:
        return [i for i in self.interactions if i.anchor_id == object_id]

    def roots(self) -> List[str]:
        children = {i.child_id for i in self.interactions}
        return [oid for oid in self.objects if oid not in children]

    def topological_order(self) -> List[InteractionParams]:
        """Interactions in ancestral order (anchors before their children); raises on cycles."""
        indegree = {oid: 0 for oid in self.objects}
        for inter in self.interactions:
            indegree[inter.child_id] += 1
        ready = sorted(oid for oid, deg in indegree.items() if deg == 0)
        ordered = []
        visited = 0
        while ready:
            current = ready.pop(0)
            visited += 1
            for inter in sorted(self.outbound(current), key=lambda i: i.child_id):
                ordered.append(inter)
                indegree[inter.child_id] -= 1
                if indegree[inter.child_id] == 0:
                    ready.append(inter.child_id)
        if visited != len(self.objects):
            raise AmbiguityError("Interaction graph contains a cycle")
        return ordered

    def descendants(self, object_id: str) -> List[str]:
        found, stack = [], [object_id]
        while stack:
            for inter in self.outbound(stack.pop()):
                if inter.child_id not in found:
                    found.append(inter.child_id)
                    stack.append(inter.child_id)
        return found

    def anchor_chain(self, object_id: str) -> List[InteractionParams]:
        """Interactions from the root anchor down to `object_id` (root first)."""
        if object_id not in self.objects:
            raise UnknownObjectError(f"Unknown object '{object_id}'")
        chain = []
        current = object_id
        while True:
            inbound = self.inbound(current)
            if not inbound:
                break
            if len(inbound) > 1:
                anchors = ', '.join(i.anchor_id for i in inbound)
                raise AmbiguityError(f"Object '{current}' has more than one anchor ({anchors})")
            chain.append(inbound[0])
            current = inbound[0].anchor_id
        return list(reversed(chain))

    def world_frame(self, object_id: str) -> Similarity:
        """Cumulative object -> world similarity; the root anchor is scaled by anchor_scale."""
        frame = Similarity.identity(self.anchor_scale)
        for inter in self.anchor_chain(object_id):
            if inter.status == InteractionStatus.UNSET:
                raise UninitializedInteractionError(inter.anchor_id, inter.child_id)
            frame = frame.compose(inter.similarity)
        return frame

    # Revisions

    def with_object(self, obj: ObjectField) -> 'Scene':
        objects = dict(self.objects)
        objects[obj.id] = obj
        return replace(self, objects=objects)

    def with_interaction(self, params: InteractionParams) -> 'Scene':
        updated, found = [], False
        for inter in self.interactions:
            if inter.pair == params.pair:
                updated.append(params)
                found = True
            else:
                updated.append(inter)
        if not found:
            updated.append(params)
        return replace(self, interactions=tuple(updated))


def _is_exact_identity(sim: Similarity) -> bool:
    return (sim.scale == 1.0 and np.array_equal(sim.rotation, rotations.IDENTITY)
            and not np.any(sim.translation))


def apply_similarity(field: ObjectField, sim: Similarity) -> ObjectField:
    """Map a field through a similarity; the input is not modified."""
    if _is_exact_identity(sim):
        return field.with_arrays()
    return field.with_arrays(
        means=sim.apply(field.means),
        rotations=rotations.multiply(sim.rotation, field.rotations),
        scales=field.scales * sim.scale,
    )


def transform_to_composition(field: ObjectField, params: InteractionParams) -> ObjectField:
    """μ' = s·R·μ + t, rotations composed as R∘q, scales multiplied by s."""
    if not rotations.is_unit(params.rotation):
        raise ValidationError("Interaction rotation must be unit-norm")
    return apply_similarity(field, params.similarity)


def flatten_scene(scene: Scene, scene_id: str = 'scene') -> ObjectField:
    """
    Combine all objects into one world-space field.

    Gaussians keep their object id in `provenance`; `frames` maps each object id to
    its cumulative world similarity and `lineage` to the pairs of its anchor
    chain. Objects are concatenated in sorted id order so
    the result does not depend on insertion order.
    """
    parts = []
    for object_id in sorted(scene.objects):
        chain = tuple(inter.pair for inter in scene.anchor_chain(object_id))
        parts.append((scene.objects[object_id], scene.world_frame(object_id), chain))
    return _combine(scene_id, parts)


def pair_field(scene: Scene, params: InteractionParams, field_id: str = None) -> ObjectField:
    """
    World-space field of just an anchor and its child, with the child placed by `params`.

    Only the anchor's own chain has to be resolved, so other interactions of the
    scene may still be Unset.
    """
    anchor_id, child_id = params.pair
    for object_id in params.pair:
        if object_id not in scene.objects:
            raise UnknownObjectError(f"Unknown object '{object_id}'")
    anchor_frame = scene.world_frame(anchor_id)
    chain = tuple(inter.pair for inter in scene.anchor_chain(anchor_id))
    parts = [
        (scene.objects[anchor_id], anchor_frame, chain),
        (scene.objects[child_id], anchor_frame.compose(params.similarity), chain + (params.pair,)),
    ]
    return _combine(field_id or f"{anchor_id}+{child_id}", parts)


def _combine(field_id: str, parts) -> ObjectField:
    means, quats, scales, opacities, colors, provenance = [], [], [], [], [], []
    frames, lineage = {}, {}
    for obj, frame, chain in parts:
        frames[obj.id] = frame
        lineage[obj.id] = chain
        world = apply_similarity(obj, frame)
        means.append(world.means)
        quats.append(world.rotations)
        scales.append(world.scales)
        opacities.append(world.opacities)
        colors.append(world.colors)
        provenance.extend([obj.id] * len(obj))

    return ObjectField(
        id=field_id,
        means=np.concatenate(means),
        rotations=np.concatenate(quats),
        scales=np.concatenate(scales),
        opacities=np.concatenate(opacities),
        colors=np.concatenate(colors),
        provenance=np.array(provenance, dtype=object),
        frames=frames,
        lineage=lineage,
    )


def object_in_world(scene: Scene, object_id: str) -> ObjectField:
    """A single object mapped through its anchor chain."""
    if object_id not in scene.objects:
        raise UnknownObjectError(f"Unknown object '{object_id}'")
    return apply_similarity(scene.objects[object_id], scene.world_frame(object_id))


def floor_height(field: ObjectField) -> float:
    """Median y over the ⌈0.001·N⌉ lowest Gaussian means (at least one)."""
    ys = field.means[:, 1]
    count = max(1, -(-ys.shape[0] // FLOOR_DIVISOR))
    lowest = np.partition(ys, count - 1)[:count]
    return float(np.median(lowest))


def geometric_center(field: ObjectField) -> np.ndarray:
    return field.geometric_center
