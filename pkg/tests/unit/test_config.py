"""
Unit tests for configuration defaults and scene-file overrides.
"""

import pytest

from config import apply_overrides
from config.composer import InitConfig
from config.distill import MIN_DISTILLED_GAUSSIANS, DistillConfig
from config.render import get_render_config
from config.settings import get_guidance_config, get_runtime_config, get_synthetic_config
from services.exceptions import SchemaError, ValidationError


class TestApplyOverrides:
    def test_no_overrides_returns_same_config(self):
        cfg = InitConfig()
        assert apply_overrides(cfg, None) is cfg
        assert apply_overrides(cfg, {}) is cfg

    def test_lists_become_tuples(self):
        cfg = apply_overrides(InitConfig(), {'init_azimuths': [0, 120, 240], 'joint_samples': 30})
        assert cfg.init_azimuths == (0.0, 120.0, 240.0)
        assert cfg.joint_samples == 30

    def test_unknown_field_points_at_it(self):
        with pytest.raises(SchemaError) as excinfo:
            apply_overrides(DistillConfig(), {'views': 3}, '/config/distill')
        assert excinfo.value.pointer == '/config/distill/views'

    def test_invalid_value_points_at_section(self):
        with pytest.raises(SchemaError) as excinfo:
            apply_overrides(DistillConfig(), {'view_count': 0}, '/config/distill')
        assert excinfo.value.pointer == '/config/distill'

    def test_non_object_rejected(self):
        with pytest.raises(SchemaError):
            apply_overrides(DistillConfig(), ['view_count'], '/config/distill')


class TestDistillConfig:
    def test_defaults(self):
        cfg = DistillConfig()
        assert (cfg.view_count, cfg.iterations, cfg.image_size, cfg.batch_size) == (32, 500, 64, 1)
        assert MIN_DISTILLED_GAUSSIANS == 16

    def test_unordered_radius_rejected(self):
        with pytest.raises(ValidationError):
            DistillConfig(camera_radius=(4.0, 2.0))

    def test_learning_rate_decay(self):
        cfg = DistillConfig(iterations=11)
        assert cfg.mean_learning_rate(0) == pytest.approx(2e-3)
        assert cfg.mean_learning_rate(10) == pytest.approx(1e-4)
        assert cfg.mean_learning_rate(5) == pytest.approx((2e-3 * 1e-4) ** 0.5)


class TestSettings:
    def test_guidance_settings(self):
        guidance = get_guidance_config()
        assert set(guidance) == {'endpoint', 'timeout', 'retries', 'backoff'}
        assert not guidance['endpoint'].endswith('/')
        assert guidance['retries'] >= 0

    def test_synthetic_target_parsed(self):
        synthetic = get_synthetic_config()
        assert len(synthetic['target_t']) == 3
        assert synthetic['target_s'] > 0

    def test_runtime_and_render(self):
        assert get_runtime_config()['render_workers'] >= 1
        assert get_render_config()['tile_size'] == 16
