"""
Unit tests for ancestral composition of whole scenes.
"""

import numpy as np
import pytest

from config.composer import InitConfig
from config.physics import PhysicsConfig
from models.interaction import InteractionStatus
from models.scene import Scene, flatten_scene
from services.exceptions import UnknownObjectError
from services.oracles import ConstantCLF, CountingOracle
from services.pipeline import ScenePipeline, compose_scene
from tests.utils.builders import settled, slab, sphere_shell

LIGHT = InitConfig(scale_samples=8, scale_top_k=2, translation_samples=8, joint_samples=12,
                   alternating_rounds=1, init_elevations=(30.0,), init_azimuths=(0.0,), image_size=12)
SHORT = PhysicsConfig(steps=3)


def tabletop() -> Scene:
    """Two balls on a table and a cap on one of them, nothing placed yet."""
    objects = {
        'table': slab(),
        'ball': sphere_shell(120, 0.5, 'ball'),
        'orb': sphere_shell(120, 0.4, 'orb'),
        'cap': sphere_shell(60, 0.1, 'cap'),
    }
    interactions = (
        settled('table', 'ball', (0.0, 0.0, 0.0), 1.0, prompt='a ball on a table', status=InteractionStatus.UNSET),
        settled('table', 'orb', (0.0, 0.0, 0.0), 1.0, prompt='an orb on a table', status=InteractionStatus.UNSET),
        settled('ball', 'cap', (0.0, 0.0, 0.0), 1.0, prompt='a cap on a ball', status=InteractionStatus.UNSET),
    )
    return Scene(objects=objects, interactions=interactions)


class TestLayers:
    def test_grouped_by_anchor_depth(self):
        layers = ScenePipeline(ConstantCLF()).layers(tabletop())
        assert [[i.pair for i in layer] for layer in layers] == [
            [('table', 'ball'), ('table', 'orb')],
            [('ball', 'cap')],
        ]


class TestComposeScene:
    def test_every_interaction_settled_in_ancestral_order(self):
        report = compose_scene(tabletop(), ConstantCLF(), LIGHT, SHORT, seed=3)
        assert report.order == [('table', 'ball'), ('table', 'orb'), ('ball', 'cap')]
        for inter in report.scene.interactions:
            assert inter.status == InteractionStatus.SETTLED
        assert len(flatten_scene(report.scene)) == 120 + 120 + 60 + 21 * 21 * 2

    def test_seeds_follow_topological_position(self):
        report = compose_scene(tabletop(), ConstantCLF(), LIGHT, SHORT, seed=10)
        assert [o.seed for o in report.outcomes] == [10, 11, 12]

    def test_worker_count_does_not_change_result(self):
        serial = compose_scene(tabletop(), ConstantCLF(), LIGHT, SHORT, seed=1, workers=1)
        parallel = compose_scene(tabletop(), ConstantCLF(), LIGHT, SHORT, seed=1, workers=3)
        for a, b in zip(serial.scene.interactions, parallel.scene.interactions):
            assert a.pair == b.pair
            assert np.array_equal(a.translation, b.translation)
            assert a.scale == b.scale

    def test_oracle_calls_accounted(self):
        oracle = CountingOracle(ConstantCLF())
        report = compose_scene(tabletop(), oracle, LIGHT, SHORT, seed=0)
        assert sum(o.oracle_calls for o in report.outcomes) <= oracle.calls

    def test_subset_of_pairs(self):
        scene = tabletop()
        report = ScenePipeline(ConstantCLF(), LIGHT, SHORT).run(scene, pairs=[('table', 'orb')])
        assert report.order == [('table', 'orb')]
        assert report.scene.interaction('table', 'ball').status == InteractionStatus.UNSET

    def test_unknown_pair(self):
        with pytest.raises(UnknownObjectError):
            ScenePipeline(ConstantCLF(), LIGHT, SHORT).run(tabletop(), pairs=[('table', 'lamp')])
