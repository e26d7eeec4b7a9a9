"""
End-to-end composition workflows: scene files on disk, composition through in-process
and remote oracles, edits and re-composition.
"""

import logging

import numpy as np
import pytest

from config.composer import InitConfig
from config.physics import PhysicsConfig
from models.camera import Camera
from models.interaction import InteractionStatus
from models.scene import Scene, flatten_scene, object_in_world
from services.editor import edit_delete, edit_move, edit_replace
from services.guidance_client import GuidanceClient, RemoteGuidanceOracle
from services.oracles import SyntheticCLF
from services.pipeline import ScenePipeline, compose_scene
from services.renderer import SplatRenderer
from services.scene_io import load_scene, store_scene
from tests.utils.builders import assert_fields_identical, settled, slab, sphere_shell
from tests.utils.flask_session import FlaskTestSession

logger = logging.getLogger(__name__)

LIGHT = InitConfig(scale_samples=8, scale_top_k=2, translation_samples=8, joint_samples=12,
                   alternating_rounds=1, init_elevations=(30.0,), init_azimuths=(0.0, 180.0), image_size=12)
SHORT = PhysicsConfig(steps=5)


@pytest.fixture
def dinner_scene():
    """A plate on a table and a bun on the plate, nothing placed yet."""
    objects = {
        'table': slab(),
        'plate': sphere_shell(100, 0.4, 'plate'),
        'bun': sphere_shell(60, 0.1, 'bun'),
    }
    interactions = (
        settled('table', 'plate', (0.0, 0.0, 0.0), 1.0, prompt='a plate on a table', status=InteractionStatus.UNSET),
        settled('plate', 'bun', (0.0, 0.0, 0.0), 1.0, prompt='a bun on a plate', status=InteractionStatus.UNSET),
    )
    return Scene(objects=objects, interactions=interactions)


@pytest.fixture
def oracle():
    return SyntheticCLF(target_t=[0.0, 0.4, 0.0], target_s=0.5)


class TestComposeAndStore:
    """Compose a scene, store it and read it back."""

    def test_compose_store_load(self, dinner_scene, oracle, tmp_path):
        report = compose_scene(dinner_scene, oracle, LIGHT, SHORT, seed=2)
        path = str(tmp_path / 'dinner' / 'scene.json')
        store_scene(report.scene, path)
        logger.info(f"Stored composed scene at {path}")

        loaded = load_scene(path)
        for pair in (('table', 'plate'), ('plate', 'bun')):
            original = report.scene.interaction(*pair)
            restored = loaded.interaction(*pair)
            assert restored.status == InteractionStatus.SETTLED
            assert np.array_equal(restored.translation, original.translation)
            assert restored.scale == original.scale

        field = flatten_scene(loaded)
        assert set(field.provenance) == {'table', 'plate', 'bun'}
        image = SplatRenderer().render(field, _overview_camera(field))
        assert image.alpha.max() > 0.5


class TestRemoteOracle:
    """The same composition against an in-process oracle and the guidance service."""

    def test_remote_synthetic_matches_in_process(self, dinner_scene, oracle):
        from app import create_app

        app = create_app(oracle, TESTING=True, RATELIMIT_ENABLED=False)
        session = FlaskTestSession(app)
        remote = RemoteGuidanceOracle(client=GuidanceClient('http://guidance.test', backoff=0, session=session))

        local = ScenePipeline(oracle, LIGHT, SHORT, seed=4).run(dinner_scene)
        served = ScenePipeline(remote, LIGHT, SHORT, seed=4).run(dinner_scene)
        logger.info(f"Remote composition issued {len(session.calls)} HTTP calls")

        for a, b in zip(local.scene.interactions, served.scene.interactions):
            assert a.pair == b.pair
            assert np.array_equal(a.translation, b.translation)
            assert a.scale == b.scale
        assert any(method == 'POST' for method, _, _ in session.calls)


class TestEditAndRecompose:
    """Edits reset only the affected interactions; everything else is carried over."""

    @pytest.fixture
    def composed(self, dinner_scene, oracle):
        return compose_scene(dinner_scene, oracle, LIGHT, SHORT, seed=1).scene

    def test_replace_then_recompose_only_touches_incident_pairs(self, composed, oracle):
        edited = edit_replace(composed, 'bun', sphere_shell(40, 0.12, 'bun'))
        assert edited.interaction('table', 'plate').status == InteractionStatus.SETTLED
        assert edited.interaction('plate', 'bun').status == InteractionStatus.UNSET

        report = ScenePipeline(oracle, LIGHT, SHORT, seed=9).run(edited, pairs=[('plate', 'bun')])
        assert report.order == [('plate', 'bun')]
        assert report.scene.interaction('table', 'plate') is composed.interaction('table', 'plate')
        assert_fields_identical(object_in_world(report.scene, 'plate'), object_in_world(composed, 'plate'))

    def test_delete_leaves_remaining_objects_bit_identical(self, composed):
        edited = edit_delete(composed, 'bun')
        assert_fields_identical(object_in_world(edited, 'plate'), object_in_world(composed, 'plate'))
        assert_fields_identical(object_in_world(edited, 'table'), object_in_world(composed, 'table'))

    def test_move_then_recompose(self, composed, oracle):
        edited = edit_move(composed, 'bun', 'table')
        assert edited.interaction('table', 'bun').prompt == 'a bun on a plate'
        report = ScenePipeline(oracle, LIGHT, SHORT, seed=3).run(edited, pairs=[('table', 'bun')])
        assert report.scene.interaction('table', 'bun').status == InteractionStatus.SETTLED
        assert len(flatten_scene(report.scene)) == len(flatten_scene(composed))


def _overview_camera(field):
    center = field.geometric_center
    return Camera.orbit(3.0 * field.bounding_radius(center), 30.0, 30.0, target=center, width=24, height=24)
