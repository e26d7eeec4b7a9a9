"""
Scene files, Gaussian PLY fields, point clouds and PNG images on disk.

A scene file is a UTF-8 JSON document:

    {
      "anchor_scale": 0.8,
      "objects": [{"id", "prompt", "gaussians_path", "init_points_path", "use_pointe_knn"}],
      "interactions": [{"anchor", "child", "prompt", "params": {"rotation", "translation", "scale"},
                        "status"}],
      "config": {"init": {...}, "physics": {...}, "forge": {...}, "distill": {...}}
    }

Relative paths resolve against the scene file's directory. An object without
`gaussians_path` has not been generated yet. Every write goes to a temporary file in
the destination directory and is renamed into place.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional
import io
import json
import logging
import os
import tempfile

import numpy as np
from PIL import Image
from plyfile import PlyData, PlyElement, PlyParseError
from scipy.special import expit, logit

from config import apply_overrides
from config.composer import InitConfig
from config.distill import DistillConfig
from config.forge import ForgeConfig
from config.physics import PhysicsConfig
from models.camera import RenderedImage
from models.gaussian import ObjectField
from models.interaction import InteractionParams, InteractionStatus
from models.scene import DEFAULT_ANCHOR_SCALE, Scene
from services import rotations
from services.exceptions import SchemaError, UnknownObjectError, ValidationError

logger = logging.getLogger(__name__)

SH_C0 = 0.28209479177387814
OPACITY_CLAMP = 1e-6
PLY_PROPERTIES = (
    ['x', 'y', 'z']
    + [f'scale_{i}' for i in range(3)]
    + [f'rot_{i}' for i in range(4)]
    + ['opacity']
    + [f'f_dc_{i}' for i in range(3)]
)
CONFIG_SECTIONS = {
    'init': InitConfig,
    'physics': PhysicsConfig,
    'forge': ForgeConfig,
    'distill': DistillConfig,
}
OBJECT_KEYS = {'id', 'prompt', 'gaussians_path', 'init_points_path', 'use_pointe_knn'}
INTERACTION_KEYS = {'anchor', 'child', 'prompt', 'params', 'status'}


# Atomic writes

def atomic_write(path: str, data: bytes):
    """Write `data` to a temporary sibling of `path` and rename it over `path`."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, temp_path = tempfile.mkstemp(dir=directory, prefix='.tmp-', suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, 'wb') as handle:
            handle.write(data)
            handle.flush()
            os.fsync(handle.fileno())
        os.replace(temp_path, path)
    except BaseException:
        if os.path.exists(temp_path):
            os.unlink(temp_path)
        raise


# Gaussian PLY

def field_to_ply_bytes(field: ObjectField) -> bytes:
    opacities = np.clip(field.opacities, OPACITY_CLAMP, 1.0 - OPACITY_CLAMP)
    columns = np.concatenate([
        field.means,
        np.log(field.scales),
        field.rotations,
        logit(opacities)[:, None],
        (field.colors - 0.5) / SH_C0,
    ], axis=1).astype('<f4')
    vertices = np.empty(len(field), dtype=[(name, '<f4') for name in PLY_PROPERTIES])
    for k, name in enumerate(PLY_PROPERTIES):
        vertices[name] = columns[:, k]
    buffer = io.BytesIO()
    PlyData([PlyElement.describe(vertices, 'vertex')], text=False, byte_order='<').write(buffer)
    return buffer.getvalue()


def write_field_ply(field: ObjectField, path: str):
    atomic_write(path, field_to_ply_bytes(field))


def read_field_ply(path: str, object_id: str, prompt: str = '', init_points=None) -> ObjectField:
    try:
        vertex = PlyData.read(path)['vertex']
    except (OSError, KeyError, ValueError, PlyParseError) as e:
        raise ValidationError(f"Cannot read Gaussian PLY '{path}': {e}")
    missing = [name for name in PLY_PROPERTIES if name not in vertex.data.dtype.names]
    if missing:
        raise ValidationError(f"Gaussian PLY '{path}' lacks properties {missing}")
    columns = {name: np.asarray(vertex[name], dtype=np.float64) for name in PLY_PROPERTIES}

    quats = np.stack([columns[f'rot_{i}'] for i in range(4)], axis=1)
    if not rotations.is_unit(quats):
        quats = rotations.normalize(quats)
    return ObjectField(
        id=object_id,
        means=np.stack([columns['x'], columns['y'], columns['z']], axis=1),
        rotations=quats,
        scales=np.exp(np.stack([columns[f'scale_{i}'] for i in range(3)], axis=1)),
        opacities=expit(columns['opacity']),
        colors=np.clip(0.5 + SH_C0 * np.stack([columns[f'f_dc_{i}'] for i in range(3)], axis=1), 0.0, 1.0),
        prompt=prompt,
        init_points=init_points,
    )


def read_points(path: str) -> np.ndarray:
    """Point cloud from a PLY vertex element or whitespace-separated xyz text."""
    if path.lower().endswith('.ply'):
        try:
            vertex = PlyData.read(path)['vertex']
            points = np.stack([np.asarray(vertex[c], dtype=np.float64) for c in ('x', 'y', 'z')], axis=1)
        except (OSError, KeyError, ValueError, PlyParseError) as e:
            raise ValidationError(f"Cannot read point cloud '{path}': {e}")
    else:
        try:
            points = np.loadtxt(path, dtype=np.float64, ndmin=2)
        except (OSError, ValueError) as e:
            raise ValidationError(f"Cannot read point cloud '{path}': {e}")
        if points.size and points.shape[1] != 3:
            raise ValidationError(f"Point cloud '{path}' must have three columns, got {points.shape[1]}")
    if points.size == 0:
        raise ValidationError(f"Point cloud '{path}' is empty")
    return points.reshape(-1, 3)


# Images

def write_png(image: RenderedImage, path: str):
    buffer = io.BytesIO()
    Image.fromarray(image.to_uint8()).save(buffer, format='PNG')
    atomic_write(path, buffer.getvalue())


def read_png(path: str) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img.convert('RGB'), dtype=np.float64) / 255.0


# Scene documents

@dataclass
class ObjectEntry:
    id: str
    prompt: str = ''
    gaussians_path: Optional[str] = None
    init_points_path: Optional[str] = None
    use_pointe_knn: bool = False

    def to_dict(self) -> dict:
        data = {'id': self.id, 'prompt': self.prompt}
        if self.gaussians_path is not None:
            data['gaussians_path'] = self.gaussians_path
        if self.init_points_path is not None:
            data['init_points_path'] = self.init_points_path
        data['use_pointe_knn'] = self.use_pointe_knn
        return data


@dataclass
class SceneDocument:
    """
    A parsed scene file.

    `fields` holds the loaded Gaussian fields; objects not generated yet have an
    entry but no field. `config` keeps the raw override sections.
    """

    path: str
    entries: List[ObjectEntry]
    interactions: List[InteractionParams]
    fields: Dict[str, ObjectField] = field(default_factory=dict)
    anchor_scale: float = DEFAULT_ANCHOR_SCALE
    config: Dict[str, dict] = field(default_factory=dict)

    @property
    def base_dir(self) -> str:
        return os.path.dirname(os.path.abspath(self.path))

    def resolve(self, relative: str) -> str:
        return relative if os.path.isabs(relative) else os.path.join(self.base_dir, relative)

    def entry(self, object_id: str) -> ObjectEntry:
        for entry in self.entries:
            if entry.id == object_id:
                return entry
        raise UnknownObjectError(f"Unknown object '{object_id}'")

    def pending(self) -> List[str]:
        return [e.id for e in self.entries if e.id not in self.fields]

    @property
    def scene(self) -> Scene:
        pending = self.pending()
        if pending:
            index = [e.id for e in self.entries].index(pending[0])
            raise SchemaError(f"/objects/{index}/gaussians_path",
                              f"object '{pending[0]}' has no Gaussians yet; run generate first")
        return Scene(objects=dict(self.fields), interactions=tuple(self.interactions),
                     anchor_scale=self.anchor_scale)

    def with_scene(self, scene: Scene) -> 'SceneDocument':
        """Adopt the objects and interactions of `scene`, keeping entry metadata."""
        entries = [e for e in self.entries if e.id in scene.objects]
        known = {e.id for e in entries}
        entries += [ObjectEntry(id=oid, prompt=scene.objects[oid].prompt)
                    for oid in sorted(scene.objects) if oid not in known]
        return SceneDocument(path=self.path, entries=entries, interactions=list(scene.interactions),
                             fields=dict(scene.objects), anchor_scale=scene.anchor_scale, config=dict(self.config))

    def init_config(self) -> InitConfig:
        return apply_overrides(InitConfig(), self.config.get('init'), '/config/init')

    def physics_config(self) -> PhysicsConfig:
        return apply_overrides(PhysicsConfig(), self.config.get('physics'), '/config/physics')

    def forge_config(self) -> ForgeConfig:
        return apply_overrides(ForgeConfig(), self.config.get('forge'), '/config/forge')

    def distill_config(self) -> DistillConfig:
        return apply_overrides(DistillConfig(), self.config.get('distill'), '/config/distill')

    def to_dict(self) -> dict:
        data = {
            'anchor_scale': self.anchor_scale,
            'objects': [e.to_dict() for e in self.entries],
            'interactions': [_interaction_to_dict(i) for i in self.interactions],
        }
        if self.config:
            data['config'] = self.config
        return data


def _interaction_to_dict(inter: InteractionParams) -> dict:
    data = {'anchor': inter.anchor_id, 'child': inter.child_id, 'prompt': inter.prompt,
            'status': inter.status.value}
    if inter.status != InteractionStatus.UNSET:
        data['params'] = inter.to_dict()
    return data


def _require(condition: bool, pointer: str, message: str):
    if not condition:
        raise SchemaError(pointer, message)


def _is_number(value) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool) and np.isfinite(value)


def _check_keys(data: dict, allowed: set, pointer: str):
    for key in data:
        _require(key in allowed, f"{pointer}/{key}", f"unknown property '{key}'")


def _parse_vector(value, length: int, pointer: str) -> List[float]:
    _require(isinstance(value, list) and len(value) == length, pointer, f"must be an array of {length} numbers")
    for k, v in enumerate(value):
        _require(_is_number(v), f"{pointer}/{k}", "must be a finite number")
    return [float(v) for v in value]


def _parse_object(data, index: int, seen: set) -> ObjectEntry:
    pointer = f"/objects/{index}"
    _require(isinstance(data, dict), pointer, "must be an object")
    _check_keys(data, OBJECT_KEYS, pointer)
    object_id = data.get('id')
    _require(isinstance(object_id, str) and object_id != '', f"{pointer}/id", "must be a non-empty string")
    _require(object_id not in seen, f"{pointer}/id", f"duplicate object id '{object_id}'")
    seen.add(object_id)
    for key in ('prompt', 'gaussians_path', 'init_points_path'):
        if key in data:
            _require(isinstance(data[key], str), f"{pointer}/{key}", "must be a string")
    if 'use_pointe_knn' in data:
        _require(isinstance(data['use_pointe_knn'], bool), f"{pointer}/use_pointe_knn", "must be a boolean")
    return ObjectEntry(id=object_id, prompt=data.get('prompt', ''), gaussians_path=data.get('gaussians_path'),
                       init_points_path=data.get('init_points_path'),
                       use_pointe_knn=data.get('use_pointe_knn', False))


def _parse_interaction(data, index: int, ids: set) -> InteractionParams:
    pointer = f"/interactions/{index}"
    _require(isinstance(data, dict), pointer, "must be an object")
    _check_keys(data, INTERACTION_KEYS, pointer)
    for key in ('anchor', 'child'):
        _require(isinstance(data.get(key), str), f"{pointer}/{key}", "must be a string")
        _require(data[key] in ids, f"{pointer}/{key}", f"references unknown object '{data[key]}'")
    _require(data['anchor'] != data['child'], f"{pointer}/child", "anchor and child must differ")
    prompt = data.get('prompt', '')
    _require(isinstance(prompt, str), f"{pointer}/prompt", "must be a string")

    statuses = [s.value for s in InteractionStatus]
    status = data.get('status', InteractionStatus.UNSET.value)
    _require(status in statuses, f"{pointer}/status", f"must be one of {statuses}")

    params = data.get('params')
    kwargs = {}
    if params is not None:
        _require(isinstance(params, dict), f"{pointer}/params", "must be an object")
        _check_keys(params, {'rotation', 'translation', 'scale'}, f"{pointer}/params")
        if 'rotation' in params:
            kwargs['rotation'] = _parse_vector(params['rotation'], 4, f"{pointer}/params/rotation")
        if 'translation' in params:
            kwargs['translation'] = _parse_vector(params['translation'], 3, f"{pointer}/params/translation")
        if 'scale' in params:
            _require(_is_number(params['scale']) and params['scale'] > 0, f"{pointer}/params/scale",
                     "must be a positive number")
            kwargs['scale'] = float(params['scale'])
    else:
        _require(status == InteractionStatus.UNSET.value, f"{pointer}/params",
                 f"required when status is {status}")
    try:
        return InteractionParams(anchor_id=data['anchor'], child_id=data['child'], prompt=prompt,
                                 status=InteractionStatus(status), **kwargs)
    except ValidationError as e:
        raise SchemaError(f"{pointer}/params", str(e))


def parse_scene_document(data, path: str, load_fields: bool = True) -> SceneDocument:
    """Validate a decoded scene file and load the Gaussian fields it references."""
    _require(isinstance(data, dict), '', "scene file must be a JSON object")
    _check_keys(data, {'anchor_scale', 'objects', 'interactions', 'config'}, '')
    objects = data.get('objects')
    _require(isinstance(objects, list), '/objects', "must be an array")
    _require(len(objects) > 0, '/objects', "must contain at least one object")

    seen = set()
    entries = [_parse_object(obj, i, seen) for i, obj in enumerate(objects)]
    interactions_raw = data.get('interactions', [])
    _require(isinstance(interactions_raw, list), '/interactions', "must be an array")
    interactions = [_parse_interaction(item, i, seen) for i, item in enumerate(interactions_raw)]

    anchor_scale = data.get('anchor_scale', DEFAULT_ANCHOR_SCALE)
    _require(_is_number(anchor_scale) and anchor_scale > 0, '/anchor_scale', "must be a positive number")

    config = data.get('config', {})
    _require(isinstance(config, dict), '/config', "must be an object")
    for section, values in config.items():
        _require(section in CONFIG_SECTIONS, f"/config/{section}",
                 f"unknown section; expected one of {sorted(CONFIG_SECTIONS)}")
        apply_overrides(CONFIG_SECTIONS[section](), values, f"/config/{section}")

    document = SceneDocument(path=path, entries=entries, interactions=interactions,
                             anchor_scale=float(anchor_scale), config=config)
    if load_fields:
        for index, entry in enumerate(entries):
            init_points = None
            if entry.init_points_path is not None:
                points_path = document.resolve(entry.init_points_path)
                _require(os.path.exists(points_path), f"/objects/{index}/init_points_path",
                         f"file not found: {entry.init_points_path}")
                init_points = read_points(points_path)
            if entry.gaussians_path is None:
                continue
            ply_path = document.resolve(entry.gaussians_path)
            _require(os.path.exists(ply_path), f"/objects/{index}/gaussians_path",
                     f"file not found: {entry.gaussians_path}")
            document.fields[entry.id] = read_field_ply(ply_path, entry.id, entry.prompt, init_points)

    if not document.pending():
        # Raises on cycles and on objects with more than one anchor
        Scene(objects=document.fields, interactions=tuple(interactions), anchor_scale=document.anchor_scale)
    return document


def read_scene_file(path: str) -> SceneDocument:
    try:
        with open(path, 'r', encoding='utf-8') as handle:
            data = json.load(handle)
    except json.JSONDecodeError as e:
        raise SchemaError('', f"invalid JSON at line {e.lineno}: {e.msg}")
    except OSError as e:
        raise ValidationError(f"Cannot read scene file '{path}': {e}")
    return parse_scene_document(data, path)


def write_scene_file(document: SceneDocument, path: str = None):
    """Write every loaded field to its PLY, then the JSON document."""
    path = path or document.path
    if os.path.abspath(path) != os.path.abspath(document.path):
        document = SceneDocument(path=path, entries=document.entries, interactions=document.interactions,
                                 fields=document.fields, anchor_scale=document.anchor_scale, config=document.config)
    for entry in document.entries:
        obj = document.fields.get(entry.id)
        if obj is None:
            continue
        if entry.gaussians_path is None:
            entry.gaussians_path = f"{entry.id}.ply"
        write_field_ply(obj, document.resolve(entry.gaussians_path))
    text = json.dumps(document.to_dict(), indent=2) + '\n'
    atomic_write(path, text.encode('utf-8'))
    logger.info(f"SCENE_STORED: {path} objects={len(document.entries)} interactions={len(document.interactions)}")


def load_scene(path: str) -> Scene:
    return read_scene_file(path).scene


def store_scene(scene: Scene, path: str, document: SceneDocument = None):
    """Store `scene`; metadata (prompts, paths, config) comes from `document` when given."""
    base = document or SceneDocument(path=path, entries=[], interactions=[])
    write_scene_file(base.with_scene(scene), path)
