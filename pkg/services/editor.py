"""
Scene edits: delete, replace and move objects.

Edits only touch the interaction graph and the edited object. Other objects are
carried over as the same immutable fields, so their Gaussians stay bit-identical.
Interactions whose placement an edit invalidates drop back to Unset and must be
re-initialised before the scene can be flattened.
"""

from dataclasses import replace
import logging

from models.gaussian import ObjectField
from models.interaction import InteractionParams, InteractionStatus
from models.scene import Scene
from services.exceptions import UnknownObjectError, ValidationError

logger = logging.getLogger(__name__)


def _require_object(scene: Scene, object_id: str, role: str = 'object'):
    if object_id not in scene.objects:
        raise UnknownObjectError(f"Unknown {role} '{object_id}'")


def _unset(params: InteractionParams) -> InteractionParams:
    return params.with_updates(status=InteractionStatus.UNSET)


def edit_delete(scene: Scene, object_id: str) -> Scene:
    """
    Remove an object and every interaction it takes part in.

    Children anchored on the deleted object become roots of their own subtrees.
    """
    _require_object(scene, object_id)
    objects = {oid: obj for oid, obj in scene.objects.items() if oid != object_id}
    if not objects:
        raise ValidationError(f"Cannot delete '{object_id}': a scene needs at least one object")
    interactions = tuple(i for i in scene.interactions if object_id not in i.pair)
    orphans = sorted(i.child_id for i in scene.outbound(object_id))
    if orphans:
        logger.warning(f"EDIT_DELETE: {object_id} anchored {orphans}; they are now roots")
    logger.info(f"EDIT_DELETE: {object_id} removed with {len(scene.interactions) - len(interactions)} interactions")
    return replace(scene, objects=objects, interactions=interactions)


def edit_replace(scene: Scene, object_id: str, new_field: ObjectField) -> Scene:
    """Swap an object's field; every interaction incident to it becomes Unset."""
    _require_object(scene, object_id)
    if new_field.id != object_id:
        new_field = new_field.with_arrays(id=object_id)
    objects = dict(scene.objects)
    objects[object_id] = new_field
    interactions = tuple(_unset(i) if object_id in i.pair else i for i in scene.interactions)
    reset = sum(1 for i in scene.interactions if object_id in i.pair)
    logger.info(f"EDIT_REPLACE: {object_id} now has {len(new_field)} Gaussians; {reset} interactions reset")
    return replace(scene, objects=objects, interactions=interactions)


def edit_move(scene: Scene, child_id: str, new_anchor_id: str, prompt: str = None) -> Scene:
    """
    Re-anchor `child_id` on `new_anchor_id`.

    The child's inbound interaction is rewired (a root child gets a new one) with
    identity parameters and status Unset; its prompt is kept unless `prompt` is given.
    Moving onto one of the child's own descendants would create a cycle and is rejected.
    """
    _require_object(scene, child_id)
    _require_object(scene, new_anchor_id, 'anchor')
    if child_id == new_anchor_id:
        raise ValidationError(f"Cannot anchor '{child_id}' on itself")
    if new_anchor_id in scene.descendants(child_id):
        raise ValidationError(f"Cannot move '{child_id}' onto its descendant '{new_anchor_id}'")

    inbound = scene.inbound(child_id)
    old_prompt = inbound[0].prompt if inbound else ''
    moved = InteractionParams(
        anchor_id=new_anchor_id,
        child_id=child_id,
        prompt=old_prompt if prompt is None else prompt,
        status=InteractionStatus.UNSET,
    )
    interactions = []
    for inter in scene.interactions:
        if inter.child_id == child_id:
            continue
        if inter.pair == (child_id, new_anchor_id):
            raise ValidationError(f"'{new_anchor_id}' is already anchored on '{child_id}'")
        interactions.append(inter)
    interactions.append(moved)
    previous = ', '.join(i.anchor_id for i in inbound) or 'none'
    logger.info(f"EDIT_MOVE: {child_id} from {previous} to {new_anchor_id}")
    return replace(scene, interactions=tuple(interactions))
