"""
Unit tests for scene files, Gaussian PLYs, point clouds and PNG output.
"""

import json
import os

import numpy as np
import pytest

from models.camera import RenderedImage
from models.interaction import InteractionStatus
from services.exceptions import AmbiguityError, SchemaError, ValidationError
from services.scene_io import (
    atomic_write,
    load_scene,
    read_field_ply,
    read_png,
    read_points,
    read_scene_file,
    store_scene,
    write_field_ply,
    write_png,
    write_scene_file,
)
from tests.utils.builders import random_field


def _write_scene(directory, data, fields=()):
    for obj in fields:
        write_field_ply(obj, os.path.join(directory, f"{obj.id}.ply"))
    path = os.path.join(directory, 'scene.json')
    with open(path, 'w', encoding='utf-8') as handle:
        json.dump(data, handle)
    return path


def _assert_fields_close(a, b):
    for name in ('means', 'scales', 'opacities', 'colors'):
        assert np.allclose(getattr(a, name), getattr(b, name), rtol=1e-5, atol=1e-6), name
    assert np.allclose(np.abs(np.sum(a.rotations * b.rotations, axis=1)), 1.0, atol=1e-6)


@pytest.fixture
def minimal(tmp_path, rng):
    """A table and a cup on disk, the cup not placed yet."""
    table = random_field(rng, 20, 'table')
    cup = random_field(rng, 10, 'cup', spread=0.3)
    data = {
        'objects': [
            {'id': 'table', 'prompt': 'a wooden table', 'gaussians_path': 'table.ply'},
            {'id': 'cup', 'prompt': 'a cup', 'gaussians_path': 'cup.ply'},
        ],
        'interactions': [{'anchor': 'table', 'child': 'cup', 'prompt': 'a cup on a table'}],
    }
    return tmp_path, data, (table, cup)


def _expect_schema_error(tmp_path, data, fields, pointer):
    path = _write_scene(str(tmp_path), data, fields)
    with pytest.raises(SchemaError) as excinfo:
        read_scene_file(path)
    assert excinfo.value.pointer == pointer
    return excinfo.value


class TestGaussianPly:
    def test_round_trip_within_float32(self, tmp_path, rng):
        field = random_field(rng, 50, 'rock')
        path = str(tmp_path / 'rock.ply')
        write_field_ply(field, path)
        loaded = read_field_ply(path, 'rock')
        assert loaded.id == 'rock' and len(loaded) == 50
        _assert_fields_close(field, loaded)

    def test_missing_property_rejected(self, tmp_path):
        path = tmp_path / 'points.ply'
        path.write_text('ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\n'
                        'property float y\nproperty float z\nend_header\n0 0 0\n')
        with pytest.raises(ValidationError):
            read_field_ply(str(path), 'points')

    def test_unreadable_file(self, tmp_path):
        path = tmp_path / 'broken.ply'
        path.write_bytes(b'not a ply file')
        with pytest.raises(ValidationError):
            read_field_ply(str(path), 'broken')


class TestPoints:
    def test_text_points(self, tmp_path):
        path = tmp_path / 'points.xyz'
        path.write_text('0 0 0\n1 2 3\n')
        assert np.array_equal(read_points(str(path)), [[0, 0, 0], [1, 2, 3]])

    def test_ply_vertices(self, tmp_path, rng):
        field = random_field(rng, 8, 'seed')
        path = str(tmp_path / 'seed.ply')
        write_field_ply(field, path)
        assert np.allclose(read_points(path), field.means, atol=1e-6)

    def test_wrong_column_count(self, tmp_path):
        path = tmp_path / 'points.xyz'
        path.write_text('0 0\n1 2\n')
        with pytest.raises(ValidationError):
            read_points(str(path))

    def test_empty(self, tmp_path):
        path = tmp_path / 'points.xyz'
        path.write_text('')
        with pytest.raises(ValidationError):
            read_points(str(path))


class TestPng:
    def test_quantised_round_trip(self, tmp_path, rng):
        image = RenderedImage(pixels=rng.uniform(size=(8, 10, 3)), alpha=np.ones((8, 10)))
        path = str(tmp_path / 'view.png')
        write_png(image, path)
        loaded = read_png(path)
        assert loaded.shape == (8, 10, 3)
        assert np.max(np.abs(loaded - image.pixels)) <= 0.5 / 255.0 + 1e-12


class TestAtomicWrite:
    def test_failed_rename_leaves_original(self, tmp_path, mocker):
        path = tmp_path / 'scene.json'
        path.write_text('original')
        mocker.patch('services.scene_io.os.replace', side_effect=OSError('disk full'))
        with pytest.raises(OSError):
            atomic_write(str(path), b'replacement')
        assert path.read_text() == 'original'
        assert os.listdir(tmp_path) == ['scene.json']


class TestSceneFile:
    def test_minimal_scene_loads(self, minimal):
        tmp_path, data, fields = minimal
        document = read_scene_file(_write_scene(str(tmp_path), data, fields))
        assert [e.id for e in document.entries] == ['table', 'cup']
        assert document.entry('cup').prompt == 'a cup'
        scene = document.scene
        assert scene.interaction('table', 'cup').status == InteractionStatus.UNSET
        assert scene.anchor_scale == 0.8

    def test_store_then_load(self, tmp_path, pair_scene):
        path = str(tmp_path / 'out' / 'scene.json')
        store_scene(pair_scene, path)
        loaded = load_scene(path)
        assert set(loaded.objects) == {'table', 'cup'}
        original = pair_scene.interaction('table', 'cup')
        restored = loaded.interaction('table', 'cup')
        assert np.array_equal(restored.translation, original.translation)
        assert np.array_equal(restored.rotation, original.rotation)
        assert restored.scale == original.scale
        assert restored.status == original.status
        assert restored.prompt == 'a cup on a table'
        for oid in ('table', 'cup'):
            _assert_fields_close(pair_scene.objects[oid], loaded.objects[oid])

    def test_relative_paths_resolve_against_scene_directory(self, minimal, monkeypatch):
        tmp_path, data, fields = minimal
        path = _write_scene(str(tmp_path), data, fields)
        monkeypatch.chdir('/')
        assert len(read_scene_file(path).scene.objects['table']) == 20

    def test_pending_object(self, minimal):
        tmp_path, data, fields = minimal
        del data['objects'][1]['gaussians_path']
        document = read_scene_file(_write_scene(str(tmp_path), data, fields[:1]))
        assert document.pending() == ['cup']
        with pytest.raises(SchemaError) as excinfo:
            document.scene
        assert excinfo.value.pointer == '/objects/1/gaussians_path'

    def test_config_sections(self, minimal):
        tmp_path, data, fields = minimal
        data['config'] = {'physics': {'steps': 20}, 'init': {'init_elevations': [15.0]}}
        document = read_scene_file(_write_scene(str(tmp_path), data, fields))
        assert document.physics_config().steps == 20
        assert document.init_config().init_elevations == (15.0,)
        assert document.forge_config().iterations == 3000

    def test_rewrite_keeps_metadata(self, minimal):
        tmp_path, data, fields = minimal
        data['config'] = {'distill': {'view_count': 4}}
        path = _write_scene(str(tmp_path), data, fields)
        document = read_scene_file(path)
        write_scene_file(document)
        with open(path, encoding='utf-8') as handle:
            stored = json.load(handle)
        assert stored['config'] == {'distill': {'view_count': 4}}
        assert stored['objects'][0]['prompt'] == 'a wooden table'
        assert 'params' not in stored['interactions'][0]


class TestSchemaErrors:
    def test_invalid_json(self, tmp_path):
        path = tmp_path / 'scene.json'
        path.write_text('{"objects": [')
        with pytest.raises(SchemaError) as excinfo:
            read_scene_file(str(path))
        assert excinfo.value.pointer == ''

    def test_unknown_top_level_key(self, minimal):
        tmp_path, data, fields = minimal
        data['camera'] = {}
        _expect_schema_error(tmp_path, data, fields, '/camera')

    def test_no_objects(self, tmp_path):
        _expect_schema_error(tmp_path, {'objects': []}, (), '/objects')

    def test_duplicate_object_id(self, minimal):
        tmp_path, data, fields = minimal
        data['objects'][1]['id'] = 'table'
        data['interactions'] = []
        _expect_schema_error(tmp_path, data, fields, '/objects/1/id')

    def test_unknown_reference(self, minimal):
        tmp_path, data, fields = minimal
        data['interactions'][0]['child'] = 'spoon'
        _expect_schema_error(tmp_path, data, fields, '/interactions/0/child')

    def test_params_required_once_initialized(self, minimal):
        tmp_path, data, fields = minimal
        data['interactions'][0]['status'] = 'initialized'
        _expect_schema_error(tmp_path, data, fields, '/interactions/0/params')

    def test_non_unit_rotation(self, minimal):
        tmp_path, data, fields = minimal
        data['interactions'][0].update(status='settled', params={'rotation': [2, 0, 0, 0],
                                                                'translation': [0, 1, 0], 'scale': 0.5})
        _expect_schema_error(tmp_path, data, fields, '/interactions/0/params')

    def test_bad_status(self, minimal):
        tmp_path, data, fields = minimal
        data['interactions'][0]['status'] = 'floating'
        _expect_schema_error(tmp_path, data, fields, '/interactions/0/status')

    def test_missing_ply(self, minimal):
        tmp_path, data, fields = minimal
        _expect_schema_error(tmp_path, data, fields[:1], '/objects/1/gaussians_path')

    def test_unknown_config_field(self, minimal):
        tmp_path, data, fields = minimal
        data['config'] = {'physics': {'gravity': 9.8}}
        _expect_schema_error(tmp_path, data, fields, '/config/physics/gravity')

    def test_invalid_config_value(self, minimal):
        tmp_path, data, fields = minimal
        data['config'] = {'physics': {'steps': -5}}
        _expect_schema_error(tmp_path, data, fields, '/config/physics')

    def test_unknown_config_section(self, minimal):
        tmp_path, data, fields = minimal
        data['config'] = {'render': {}}
        _expect_schema_error(tmp_path, data, fields, '/config/render')

    def test_cycle_rejected(self, tmp_path, rng):
        fields = [random_field(rng, 6, oid) for oid in ('a', 'b', 'c')]
        data = {
            'objects': [{'id': f.id, 'gaussians_path': f"{f.id}.ply"} for f in fields],
            'interactions': [{'anchor': 'a', 'child': 'b'}, {'anchor': 'b', 'child': 'c'},
                             {'anchor': 'c', 'child': 'a'}],
        }
        with pytest.raises(AmbiguityError):
            read_scene_file(_write_scene(str(tmp_path), data, fields))
