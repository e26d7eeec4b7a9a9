"""
Shared pytest fixtures for the composition engine test suite.
"""

import logging
import os
import sys

import numpy as np
import pytest

# Add project root to Python path for imports
project_root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, project_root)

os.environ.setdefault('TEST_MODE', 'true')

from app import create_app  # noqa: E402
from models.camera import Camera  # noqa: E402
from services.oracles import SyntheticCLF  # noqa: E402
from tests.utils.builders import random_field, three_object_scene, two_object_scene  # noqa: E402
from tests.utils.flask_session import FlaskTestSession  # noqa: E402

logger = logging.getLogger(__name__)


def pytest_collection_modifyitems(config, items):
    """Automatically mark tests based on their module name."""
    by_module = {
        'test_renderer': 'render',
        'test_physics': 'physics',
        'test_composer': 'composer',
        'test_forge': 'forge',
        'test_scene_io': 'io',
        'test_guidance_client': 'io',
        'test_cli': 'cli',
    }
    for item in items:
        module = item.module.__name__.rsplit('.', 1)[-1]
        if module in by_module:
            item.add_marker(getattr(pytest.mark, by_module[module]))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_field(rng):
    return random_field(rng, 12)


@pytest.fixture
def front_camera():
    return Camera.orbit(3.0, 0.0, 20.0, width=32, height=32)


@pytest.fixture
def pair_scene():
    return two_object_scene()


@pytest.fixture
def chain_scene():
    return three_object_scene()


@pytest.fixture
def synthetic_oracle():
    return SyntheticCLF(target_t=[0.1, 0.6, -0.1], target_s=0.45, noise_sd=0.0)


@pytest.fixture
def guidance_app(synthetic_oracle):
    """Guidance service serving the synthetic oracle, rate limits off."""
    return create_app(synthetic_oracle, TESTING=True, RATELIMIT_ENABLED=False)


@pytest.fixture
def guidance_session(guidance_app):
    return FlaskTestSession(guidance_app)
