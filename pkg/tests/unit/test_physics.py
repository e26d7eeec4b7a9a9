"""
Unit tests for gravity, contact and impulse constraints and the settle optimizer.
"""

import math

import numpy as np
import pytest

from config.physics import PhysicsConfig
from models.interaction import InteractionStatus
from models.scene import Scene, floor_height, object_in_world
from services.exceptions import OracleError, UninitializedInteractionError, ValidationError
from services.oracles import CLFOracle
from services.physics import (
    ImpulseState,
    PhysicsSettler,
    contact_angle,
    contact_loss,
    contact_terms,
    cross_section_overlap,
    gravity_loss,
    settle,
    stabilizing_impulse,
)
from tests.utils.builders import fibonacci_sphere, plane_grid, settled, sphere_shell, two_object_scene
from tests.utils.gradients import numeric_gradient, relative_error


class FailingOracle(CLFOracle):
    supports_residual = True

    def evaluate(self, request):
        raise OracleError("guidance service unavailable")


class TestPhysicsConfig:
    def test_defaults(self):
        cfg = PhysicsConfig()
        assert cfg.lambda_g == 10000.0
        assert cfg.lambda_c_factor == 30000.0
        assert cfg.k_comb == 2000.0
        assert cfg.steps == 200
        assert cfg.impulse_budget == 5
        assert cfg.freeze_scale is True

    @pytest.mark.parametrize('changes', [
        {'lambda_g': 0.0},
        {'steps': -1},
        {'impulse_overlap_range': (0.9, 0.4)},
        {'impulse_overlap_range': (0.4, 1.2)},
        {'optimizer': 'adam'},
    ])
    def test_invalid_values_rejected(self, changes):
        with pytest.raises(ValidationError):
            PhysicsConfig(**changes)


class TestGravityLoss:
    def test_at_floor_is_zero(self):
        loss, grad = gravity_loss(np.array([[0.0, 0.5, 0.0], [1.0, 0.5, 2.0]]), 0.5)
        assert loss == 0.0
        assert np.all(grad[:, [0, 2]] == 0.0)

    def test_all_above(self):
        means = np.array([[0.0, 2.0, 0.0]] * 4)
        loss, _ = gravity_loss(means, 0.0)
        assert loss == pytest.approx(2.0)

    def test_two_regimes(self):
        means = np.array([[0, 1.0, 0], [1, 1.0, 0], [0, -1.0, 0], [1, -1.0, 0]], dtype=float)
        loss, _ = gravity_loss(means, 0.0, k_comb=2000.0)
        assert loss == pytest.approx(1.0005)

    def test_non_negative(self, rng):
        for _ in range(20):
            loss, _ = gravity_loss(rng.normal(size=(30, 3)), rng.normal())
            assert loss >= 0.0

    def test_gradient_matches_finite_differences(self):
        for trial in range(50):
            rng = np.random.default_rng(trial)
            means = rng.normal(size=(25, 3))
            floor = float(rng.uniform(-0.5, 0.5))
            # keep coordinates away from the floor kink
            means[:, 1] += np.sign(means[:, 1] - floor) * 1e-3
            _, grad = gravity_loss(means, floor)
            numeric = numeric_gradient(lambda m: gravity_loss(m, floor)[0], means, eps=1e-5)
            assert relative_error(grad, numeric) < 1e-4


class TestContactAngle:
    def test_outside_is_zero(self):
        assert contact_angle([0, 1, 0], [0, 0.5, 0], [0, 2, 0]) == pytest.approx(0.0)

    def test_penetrating_is_pi(self):
        assert contact_angle([0, 0.4, 0], [0, 0.5, 0], [0, 2, 0]) == pytest.approx(math.pi)

    def test_degenerate_is_zero(self):
        assert contact_angle([0, 0.5, 0], [0, 0.5, 0], [0, 2, 0]) == 0.0


class TestContactLoss:
    def test_separated_spheres(self):
        anchor = fibonacci_sphere(300, 0.5)
        child = fibonacci_sphere(200, 0.5, center=(0.0, 1.2, 0.0))
        loss, grad = contact_loss(child, anchor)
        assert loss == 0.0
        assert not grad.any()

    def test_enclosing_child_penetrates(self):
        anchor = fibonacci_sphere(300, 0.3)
        child = fibonacci_sphere(300, 0.5)
        loss, _ = contact_loss(child, anchor)
        assert loss > 0.5

    def test_accepts_fields(self):
        anchor = sphere_shell(200, 0.5, 'anchor')
        child = sphere_shell(100, 0.5, 'child', center=(0.0, 1.5, 0.0))
        assert contact_loss(child, anchor)[0] == 0.0

    def test_excluded_gaussians_do_not_intersect(self):
        anchor = fibonacci_sphere(300, 0.3)
        child = fibonacci_sphere(300, 0.5)
        full = contact_terms(child, anchor)
        masked = contact_terms(child, anchor, exclude=np.ones(300, dtype=bool))
        assert full.any_intersection
        assert not masked.any_intersection
        assert masked.loss == 0.0 and not masked.grad.any()
        assert np.array_equal(masked.cosines, full.cosines)

    def test_tolerance_treats_grazing_as_touching(self):
        anchor = fibonacci_sphere(300, 0.3)
        child = fibonacci_sphere(300, 0.5)
        assert not contact_terms(child, anchor, tolerance=1.0).any_intersection

    def test_gradient_matches_finite_differences(self):
        anchor = fibonacci_sphere(80, 0.5)
        for trial in range(5):
            rng = np.random.default_rng(50 + trial)
            center = np.array([0.0, 0.65, 0.0]) + rng.uniform(-0.1, 0.1, size=3)
            child = fibonacci_sphere(40, 0.3, center=center) + rng.normal(scale=0.01, size=(40, 3))
            loss, grad = contact_loss(child, anchor)
            assert loss > 0
            numeric = numeric_gradient(lambda m: contact_loss(m, anchor)[0], child, eps=1e-5)
            assert relative_error(grad, numeric) < 1e-4

    def test_retracting_child_lowers_the_loss(self):
        anchor = fibonacci_sphere(3000, 0.3)
        losses = [contact_loss(fibonacci_sphere(400, 0.5, center=(0.0, d, 0.0)), anchor)[0]
                  for d in np.linspace(0.0, 0.25, 6)]
        assert np.all(np.diff(losses) < 0.0)

    def test_intersection_matches_signed_distance(self):
        """Across random sphere pairs the angle test agrees with the inside-the-anchor test."""
        agree = total = 0
        for trial in range(20):
            rng = np.random.default_rng(200 + trial)
            r_anchor = rng.uniform(0.4, 0.6)
            r_child = rng.uniform(0.25, 0.35)
            direction = rng.normal(size=3)
            direction /= np.linalg.norm(direction)
            distance = rng.uniform(0.8, 1.2) * (r_anchor + r_child)
            anchor = fibonacci_sphere(4000, r_anchor)
            child = fibonacci_sphere(400, r_child, center=distance * direction)
            inside = np.linalg.norm(child, axis=1) < r_anchor
            agree += int(np.count_nonzero(contact_terms(child, anchor).intersecting == inside))
            total += child.shape[0]
        assert agree / total >= 0.95


class TestCrossSectionOverlap:
    def test_identical_footprints(self):
        plane = plane_grid().means
        assert cross_section_overlap(plane + [0, 0.5, 0], plane) == pytest.approx(1.0)

    def test_disjoint_footprints(self):
        plane = plane_grid().means
        assert cross_section_overlap(plane + [3.0, 0.0, 0.0], plane) == 0.0

    def test_half_offset(self):
        plane = plane_grid().means
        assert cross_section_overlap(plane + [0.5, 0.0, 0.0], plane) == pytest.approx(0.5, abs=0.1)


class TestStabilizingImpulse:
    @pytest.fixture
    def geometry(self):
        anchor = plane_grid().means
        child = fibonacci_sphere(100, 0.2, center=(0.5, 0.2, 0.0))
        return settled('plane', 'ball'), child, anchor

    def test_fires_toward_axis(self, geometry, mocker):
        mocker.patch('services.physics.cross_section_overlap', return_value=0.6)
        params, child, anchor = geometry
        state = ImpulseState(budget=5, contact=True)
        delta = stabilizing_impulse(params, child, anchor, state)
        assert np.linalg.norm(delta) == pytest.approx(0.3)
        assert delta[1] == pytest.approx(0.3 * math.sin(math.radians(60)))
        assert delta[0] < 0 and delta[2] == pytest.approx(0.0, abs=0.01)
        assert state.budget == 4

    def test_well_seated_child_left_alone(self, geometry, mocker):
        mocker.patch('services.physics.cross_section_overlap', return_value=0.99)
        params, child, anchor = geometry
        assert stabilizing_impulse(params, child, anchor, ImpulseState(budget=5, contact=True)) is None

    def test_requires_contact(self, geometry, mocker):
        mocker.patch('services.physics.cross_section_overlap', return_value=0.6)
        params, child, anchor = geometry
        assert stabilizing_impulse(params, child, anchor, ImpulseState(budget=5, contact=False)) is None

    def test_budget_exhausted_after_five(self, geometry, mocker):
        mocker.patch('services.physics.cross_section_overlap', return_value=0.6)
        params, child, anchor = geometry
        state = ImpulseState(budget=5, contact=True)
        fired = [stabilizing_impulse(params, child, anchor, state) for _ in range(6)]
        assert all(d is not None for d in fired[:5])
        assert fired[5] is None
        assert len(state.fired) == 5


def _ball_over_plane(height: float, offset_x: float = 0.0) -> Scene:
    plane = plane_grid(side=41, object_id='plane')
    ball = sphere_shell(1000, 0.5, 'ball')
    return Scene(objects={'plane': plane, 'ball': ball},
                 interactions=(settled('plane', 'ball', (offset_x, height, 0.0), 1.0, prompt='a ball on a plane'),))


class TestSettle:
    def test_requires_initialized_interaction(self):
        scene = two_object_scene(status=InteractionStatus.UNSET)
        with pytest.raises(UninitializedInteractionError):
            settle(scene, ('table', 'cup'))

    def test_returns_settled_with_frozen_scale(self, pair_scene):
        params = settle(pair_scene, ('table', 'cup'), config=PhysicsConfig(steps=10))
        assert params.status == InteractionStatus.SETTLED
        assert params.scale == pair_scene.interaction('table', 'cup').scale

    def test_oracle_failure_continues_physics_only(self, pair_scene):
        report = PhysicsSettler(PhysicsConfig(steps=5)).run(pair_scene, ('table', 'cup'), clf=FailingOracle())
        assert report.oracle_failed
        assert report.steps == 5
        assert report.params.status == InteractionStatus.SETTLED

    def test_score_only_oracle_is_ignored(self, pair_scene, synthetic_oracle):
        report = PhysicsSettler(PhysicsConfig(steps=5)).run(pair_scene, ('table', 'cup'), clf=synthetic_oracle)
        assert not report.oracle_failed

    def test_impulses_bounded_by_budget(self):
        scene = _ball_over_plane(0.8, offset_x=1.0)
        report = PhysicsSettler(PhysicsConfig(steps=60)).run(scene, ('plane', 'ball'))
        assert len(report.impulses) <= 5
        for delta in report.impulses:
            assert np.linalg.norm(delta) == pytest.approx(0.3)
            assert math.degrees(math.asin(delta[1] / 0.3)) == pytest.approx(60.0)

    @pytest.mark.slow
    @pytest.mark.acceptance
    def test_ball_drops_onto_plane(self):
        """A sphere shell released 1.0 above a plane comes to rest on it within the default 200 steps."""
        scene = _ball_over_plane(1.75)
        report = PhysicsSettler().run(scene, ('plane', 'ball'))
        ball = object_in_world(scene.with_interaction(report.params), 'ball')
        radius = 0.8 * 0.5
        lowest = float(ball.means[:, 1].min())
        assert report.steps <= 200
        assert max(0.0, -lowest) <= 0.005 * radius
        assert abs(lowest) <= 0.01 * radius
        assert report.impulses == []

    def test_resting_child_stays_put(self):
        """A ball already touching the plane is a fixed point of the settle."""
        ball = sphere_shell(1000, 0.5, 'ball')
        scene = _ball_over_plane(-float(ball.means[:, 1].min()))
        start = scene.interaction('plane', 'ball').translation.copy()
        report = PhysicsSettler().run(scene, ('plane', 'ball'))
        drift = report.params.translation - start
        assert np.linalg.norm(drift) <= 1e-3
        assert drift[0] == pytest.approx(0.0, abs=1e-9)
        assert drift[2] == pytest.approx(0.0, abs=1e-9)
        assert not report.contact_established

    def test_plain_descent_reaches_the_floor(self):
        ball = sphere_shell(1000, 0.5, 'ball')
        scene = _ball_over_plane(0.3 / 0.8 - float(ball.means[:, 1].min()))
        report = PhysicsSettler(PhysicsConfig(optimizer='gd')).run(scene, ('plane', 'ball'))
        world = object_in_world(scene.with_interaction(report.params), 'ball')
        assert np.all(np.isfinite(report.params.translation))
        assert abs(float(world.means[:, 1].min())) <= 0.01
        assert report.params.translation[0] == pytest.approx(0.0, abs=1e-3)

    @pytest.mark.slow
    @pytest.mark.acceptance
    def test_overlapping_spheres_separate(self):
        """A small sphere sunk 20% into a larger one is pushed back out to rest on it."""
        big = sphere_shell(2000, 0.5, 'big')
        small = sphere_shell(800, 0.5, 'small')
        # child radius 0.3 in the anchor frame; centers 0.8 * (0.5 + 0.3) apart
        overlap = Scene(objects={'big': big, 'small': small},
                        interactions=(settled('big', 'small', (0.0, 0.64, 0.0), 0.6, prompt='a ball on a ball'),))
        resting = overlap.with_interaction(settled('big', 'small', (0.0, 0.8, 0.0), 0.6))
        floor = floor_height(object_in_world(overlap, 'big'))
        rest_loss, _ = gravity_loss(object_in_world(resting, 'small'), floor)
        start = contact_terms(object_in_world(overlap, 'small'), object_in_world(overlap, 'big'))
        assert start.max_angle > math.pi / 2 + 0.5

        report = PhysicsSettler().run(overlap, ('big', 'small'))
        assert report.max_contact_angle <= math.pi / 2 + 1e-3
        assert report.gravity_loss == pytest.approx(rest_loss, rel=0.1)
