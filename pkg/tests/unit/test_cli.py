"""
Command-line tests: each command runs against a scene directory under tmp_path.
"""

import json
import os

import numpy as np
import pytest

import cli
from models.interaction import InteractionStatus
from services.exceptions import OracleError
from services.oracles import CLFOracle
from services.scene_io import read_scene_file, write_field_ply
from tests.utils.builders import slab, sphere_shell, textured_sphere

LIGHT_CONFIG = {
    'init': {'scale_samples': 6, 'scale_top_k': 2, 'translation_samples': 6, 'joint_samples': 10,
             'alternating_rounds': 1, 'init_elevations': [30.0], 'init_azimuths': [0.0], 'image_size': 12},
    'physics': {'steps': 3},
    'forge': {'iterations': 2, 'image_size': 8, 'batch_size': 1, 'fps_count': 32},
    'distill': {'iterations': 0, 'view_count': 2, 'image_size': 8},
}


class FailingOracle(CLFOracle):
    needs_images = False

    def evaluate(self, request):
        raise OracleError("guidance service unavailable")


@pytest.fixture
def scene_dir(tmp_path):
    """A ball on a table, not placed yet, plus a pending lamp with seed points."""
    write_field_ply(slab(), str(tmp_path / 'table.ply'))
    write_field_ply(sphere_shell(120, 0.5, 'ball'), str(tmp_path / 'ball.ply'))
    write_field_ply(textured_sphere(60, 0.3, 'reference'), str(tmp_path / 'reference.ply'))
    np.savetxt(tmp_path / 'lamp.xyz', textured_sphere(60, 0.3).means)
    data = {
        'objects': [
            {'id': 'table', 'prompt': 'a wooden table', 'gaussians_path': 'table.ply'},
            {'id': 'ball', 'prompt': 'a ball', 'gaussians_path': 'ball.ply'},
        ],
        'interactions': [{'anchor': 'table', 'child': 'ball', 'prompt': 'a ball on a table'}],
        'config': LIGHT_CONFIG,
    }
    (tmp_path / 'scene.json').write_text(json.dumps(data))
    return tmp_path


def _scene(scene_dir):
    return str(scene_dir / 'scene.json')


def _with_lamp(scene_dir):
    path = _scene(scene_dir)
    data = json.loads(open(path).read())
    data['objects'].append({'id': 'lamp', 'prompt': 'a lamp', 'init_points_path': 'lamp.xyz'})
    open(path, 'w').write(json.dumps(data))
    return path


class TestArguments:
    def test_bad_pair_is_a_usage_error(self, scene_dir):
        with pytest.raises(SystemExit) as excinfo:
            cli.main(['init', _scene(scene_dir), '--pair', 'table'])
        assert excinfo.value.code == 1

    def test_missing_command(self):
        with pytest.raises(SystemExit) as excinfo:
            cli.main([])
        assert excinfo.value.code == 1

    def test_unknown_oracle(self, scene_dir):
        assert cli.main(['init', _scene(scene_dir), '--pair', 'table,ball', '--oracle', 'magic']) == 1

    def test_oracle_required(self, scene_dir):
        assert cli.main(['init', _scene(scene_dir), '--pair', 'table,ball', '--oracle', 'none']) == 1

    def test_parse_pair(self):
        assert cli.parse_pair(' table , ball ') == ('table', 'ball')


class TestCompositionCommands:
    def test_init_then_settle(self, scene_dir):
        path = _scene(scene_dir)
        assert cli.main(['init', path, '--pair', 'table,ball', '--oracle', 'synthetic', '--seed', '3']) == 0
        assert read_scene_file(path).scene.interaction('table', 'ball').status == InteractionStatus.INITIALIZED

        assert cli.main(['settle', path, '--pair', 'table,ball']) == 0
        document = read_scene_file(path)
        assert document.scene.interaction('table', 'ball').status == InteractionStatus.SETTLED
        assert document.physics_config().steps == 3

    def test_settle_before_init(self, scene_dir):
        assert cli.main(['settle', _scene(scene_dir), '--pair', 'table,ball']) == 1

    def test_unknown_pair(self, scene_dir):
        assert cli.main(['init', _scene(scene_dir), '--pair', 'table,lamp', '--oracle', 'synthetic']) == 1

    def test_oracle_failure_exit_code(self, scene_dir, mocker):
        mocker.patch('cli.make_oracle', return_value=FailingOracle())
        path = _scene(scene_dir)
        before = open(path).read()
        assert cli.main(['init', path, '--pair', 'table,ball']) == 2
        assert open(path).read() == before

    def test_compose(self, scene_dir):
        path = _scene(scene_dir)
        assert cli.main(['compose', path, '--oracle', 'synthetic']) == 0
        assert read_scene_file(path).scene.interaction('table', 'ball').status == InteractionStatus.SETTLED

    def test_schema_error(self, scene_dir):
        (scene_dir / 'scene.json').write_text('{"objects": []}')
        assert cli.main(['compose', _scene(scene_dir), '--oracle', 'synthetic']) == 1

    def test_missing_scene_file(self, tmp_path):
        assert cli.main(['render', str(tmp_path / 'nope.json'), '--out', str(tmp_path)]) == 1


class TestRender:
    def test_turntable_pngs(self, scene_dir):
        path = _scene(scene_dir)
        cli.main(['init', path, '--pair', 'table,ball', '--oracle', 'synthetic'])
        out = scene_dir / 'renders'
        assert cli.main(['render', path, '--turntable', '3', '--size', '8', '--out', str(out), '--workers', '1']) == 0
        assert sorted(os.listdir(out)) == ['view_000.png', 'view_001.png', 'view_002.png']

    def test_unplaced_scene_cannot_render(self, scene_dir):
        assert cli.main(['render', _scene(scene_dir), '--out', str(scene_dir / 'r')]) == 1

    def test_turntable_count_validated(self, scene_dir):
        assert cli.main(['render', _scene(scene_dir), '--turntable', '0', '--out', str(scene_dir / 'r')]) == 1


class TestObjectCommands:
    def test_generate_writes_field(self, scene_dir):
        path = _with_lamp(scene_dir)
        assert cli.main(['generate', path, '--object', 'lamp', '--oracle', 'photometric',
                         '--reference', 'reference.ply', '--workers', '1']) == 0
        document = read_scene_file(path)
        assert document.entry('lamp').gaussians_path == 'lamp.ply'
        assert len(document.fields['lamp']) >= 60
        assert os.path.exists(scene_dir / 'lamp.ply')

    def test_generate_needs_seed_points(self, scene_dir):
        assert cli.main(['generate', _scene(scene_dir), '--object', 'ball', '--oracle', 'synthetic']) == 1

    def test_generate_resets_incident_interactions(self, scene_dir):
        path = _scene(scene_dir)
        cli.main(['init', path, '--pair', 'table,ball', '--oracle', 'synthetic'])
        data = json.loads(open(path).read())
        data['objects'][1]['init_points_path'] = 'lamp.xyz'
        open(path, 'w').write(json.dumps(data))
        assert cli.main(['generate', path, '--object', 'ball', '--oracle', 'photometric',
                         '--reference', 'reference.ply', '--workers', '1']) == 0
        assert read_scene_file(path).scene.interaction('table', 'ball').status == InteractionStatus.UNSET

    def test_distill(self, scene_dir):
        path = _scene(scene_dir)
        assert cli.main(['distill', path, '--object', 'ball', '--fraction', '0.5']) == 0
        document = read_scene_file(path)
        assert document.entry('ball').gaussians_path == 'ball_distilled.ply'
        assert len(document.fields['ball']) == 60
        assert len(read_scene_file(path).fields['table']) == 21 * 21 * 2

    def test_distill_fraction_validated(self, scene_dir):
        assert cli.main(['distill', _scene(scene_dir), '--object', 'ball', '--fraction', '1.5']) == 1


class TestEdit:
    def test_delete(self, scene_dir):
        path = _scene(scene_dir)
        assert cli.main(['edit', path, 'delete', 'ball']) == 0
        document = read_scene_file(path)
        assert [e.id for e in document.entries] == ['table']
        assert document.interactions == []

    def test_move_keeps_prompt(self, scene_dir):
        path = _scene(scene_dir)
        write_field_ply(sphere_shell(30, 0.2, 'cup'), str(scene_dir / 'cup.ply'))
        data = json.loads(open(path).read())
        data['objects'].append({'id': 'cup', 'prompt': 'a cup', 'gaussians_path': 'cup.ply'})
        open(path, 'w').write(json.dumps(data))
        assert cli.main(['edit', path, 'move', 'ball', 'cup']) == 0
        moved = read_scene_file(path).scene.interaction('cup', 'ball')
        assert moved.prompt == 'a ball on a table'
        assert moved.status == InteractionStatus.UNSET

    def test_replace(self, scene_dir):
        path = _scene(scene_dir)
        write_field_ply(sphere_shell(40, 0.4, 'other'), str(scene_dir / 'other.ply'))
        assert cli.main(['edit', path, 'replace', 'ball', 'other.ply']) == 0
        document = read_scene_file(path)
        assert document.entry('ball').gaussians_path == 'other.ply'
        assert len(document.fields['ball']) == 40

    def test_unknown_object(self, scene_dir):
        assert cli.main(['edit', _scene(scene_dir), 'delete', 'spoon']) == 1
