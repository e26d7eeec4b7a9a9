"""
Physical constraints for pairwise composition and the settle optimizer.

gravity_loss pulls the child's Gaussians down to the anchor's floor, contact_loss
penalizes child Gaussians that penetrate the anchor (obtuse contact angle) and
stabilizing_impulse nudges an overhanging child back toward the anchor's axis.
settle minimizes F + λ_g·L_g + λ_c·L_c over the pair's rotation and translation.
"""

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple
import logging
import math

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from config.physics import PhysicsConfig
from models.camera import Camera
from models.gaussian import ObjectField
from models.interaction import InteractionParams, InteractionStatus
from models.scene import Scene, floor_height, object_in_world, pair_field
from services import rotations
from services.exceptions import OracleError, UninitializedInteractionError
from services.optim import GradientDescent, Rprop

logger = logging.getLogger(__name__)

DEGENERATE_NORM = 1e-12


def _means(points) -> np.ndarray:
    if isinstance(points, ObjectField):
        return points.means
    return np.asarray(points, dtype=np.float64).reshape(-1, 3)


def gravity_loss(child, floor: float, k_comb: float = 2000.0) -> Tuple[float, np.ndarray]:
    """
    Two-regime floor penalty on world-space means.

    Entirely above the floor: mean height above it. Otherwise the above-floor term is
    damped by 1/k_comb and the below-floor set is pulled back with full weight.
    """
    means = _means(child)
    y = means[:, 1]
    grad = np.zeros_like(means)
    below = y < floor

    if not np.any(below):
        grad[:, 1] = 1.0 / y.size
        return float(np.mean(y - floor)), grad

    above = y > floor
    loss = float(np.mean(floor - y[below]))
    grad[below, 1] = -1.0 / np.count_nonzero(below)
    if np.any(above):
        loss += float(np.mean(y[above] - floor)) / k_comb
        grad[above, 1] = 1.0 / (k_comb * np.count_nonzero(above))
    return loss, grad


def contact_angle(mu_j, mu_i_nearest, q_child) -> float:
    """Angle at the anchor Gaussian between the directions to the child center and to the child Gaussian."""
    a = np.asarray(mu_i_nearest, dtype=np.float64) - np.asarray(q_child, dtype=np.float64)
    b = np.asarray(mu_i_nearest, dtype=np.float64) - np.asarray(mu_j, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na < DEGENERATE_NORM or nb < DEGENERATE_NORM:
        return 0.0
    return float(np.arccos(np.clip(a @ b / (na * nb), -1.0, 1.0)))


@dataclass
class ContactTerms:
    loss: float
    grad: np.ndarray
    cosines: np.ndarray
    intersecting: np.ndarray

    @property
    def any_intersection(self) -> bool:
        return bool(np.any(self.intersecting))

    @property
    def max_angle(self) -> float:
        return float(np.arccos(np.clip(np.min(self.cosines), -1.0, 1.0)))


def contact_terms(child, anchor, tree: Optional[cKDTree] = None, exclude: Optional[np.ndarray] = None,
                  tolerance: float = 0.0) -> ContactTerms:
    """
    Contact angles of every child Gaussian against its nearest anchor Gaussian.

    A Gaussian intersects when cos < -tolerance. `exclude` masks child Gaussians out of
    the intersecting set; the child center q is still taken over all of them.
    """
    child_means = _means(child)
    anchor_means = _means(anchor)
    tree = tree if tree is not None else cKDTree(anchor_means)
    _, nearest = tree.query(child_means)
    mu_i = anchor_means[nearest]
    q = child_means.mean(axis=0)

    a = mu_i - q
    b = mu_i - child_means
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    degenerate = (na < DEGENERATE_NORM) | (nb < DEGENERATE_NORM)
    safe_na = np.where(degenerate, 1.0, na)
    safe_nb = np.where(degenerate, 1.0, nb)
    cos = np.where(degenerate, 1.0, np.sum(a * b, axis=1) / (safe_na * safe_nb))
    cos = np.clip(cos, -1.0, 1.0)
    intersecting = (cos < -tolerance) & ~degenerate
    if exclude is not None:
        intersecting &= ~np.asarray(exclude, dtype=bool)

    grad = np.zeros_like(child_means)
    count = int(np.count_nonzero(intersecting))
    if count == 0:
        return ContactTerms(0.0, grad, cos, intersecting)

    s = intersecting
    inv = 1.0 / (safe_na[s] * safe_nb[s])
    # d(-cos)/dμ_j through b = μ_i − μ_j, and through q = mean(μ) via a = μ_i − q
    d_b = a[s] * inv[:, None] - cos[s, None] * b[s] / safe_nb[s, None] ** 2
    d_a = b[s] * inv[:, None] - cos[s, None] * a[s] / safe_na[s, None] ** 2
    grad[s] += d_b / count
    grad += d_a.sum(axis=0) / (count * child_means.shape[0])
    loss = float(np.mean(-cos[s]))
    return ContactTerms(loss, grad, cos, intersecting)


def contact_loss(child, anchor, tree: Optional[cKDTree] = None) -> Tuple[float, np.ndarray]:
    """Mean negative cosine over intersecting child Gaussians; zero when none intersect."""
    terms = contact_terms(child, anchor, tree)
    return terms.loss, terms.grad


def _occupancy(points_xz: np.ndarray, lo: np.ndarray, cell: np.ndarray, size: int) -> np.ndarray:
    idx = np.clip(((points_xz - lo) / cell).astype(int), 0, size - 1)
    grid = np.zeros((size, size), dtype=bool)
    grid[idx[:, 0], idx[:, 1]] = True
    pad = 2
    padded = np.pad(grid, pad)
    padded = ndimage.binary_closing(padded, structure=np.ones((3, 3)), iterations=pad)
    padded = ndimage.binary_fill_holes(padded)
    return padded[pad:-pad, pad:-pad]


def cross_section_overlap(child, anchor, grid: int = 64) -> float:
    """Share of the child's top-view (xz) footprint covered by the anchor's footprint."""
    child_xz = _means(child)[:, [0, 2]]
    anchor_xz = _means(anchor)[:, [0, 2]]
    joint = np.vstack([child_xz, anchor_xz])
    lo = joint.min(axis=0)
    extent = np.maximum(joint.max(axis=0) - lo, 1e-9)
    cell = extent / grid * (1 + 1e-9)
    child_cells = _occupancy(child_xz, lo, cell, grid)
    anchor_cells = _occupancy(anchor_xz, lo, cell, grid)
    return float(np.count_nonzero(child_cells & anchor_cells) / max(np.count_nonzero(child_cells), 1))


@dataclass
class ImpulseState:
    budget: int
    contact: bool = False
    fired: List[np.ndarray] = field(default_factory=list)


def stabilizing_impulse(child_params: InteractionParams, child, anchor, state: ImpulseState,
                        config: PhysicsConfig = None) -> Optional[np.ndarray]:
    """
    World-space translation kick toward the anchor's vertical axis, or None.

    Fires only after contact, while the top-view overlap lies inside the configured
    range and the budget lasts; each firing consumes one unit of budget.
    """
    config = config or PhysicsConfig()
    if not state.contact or state.budget <= 0:
        return None
    overlap = cross_section_overlap(child, anchor, config.overlap_grid)
    low, high = config.impulse_overlap_range
    if not low <= overlap <= high:
        return None

    child_center = _means(child).mean(axis=0)
    anchor_center = _means(anchor).mean(axis=0)
    horizontal = np.array([anchor_center[0] - child_center[0], 0.0, anchor_center[2] - child_center[2]])
    norm = np.linalg.norm(horizontal)
    if norm < DEGENERATE_NORM:
        return None
    angle = math.radians(config.impulse_angle_deg)
    delta = config.impulse_distance * (math.cos(angle) * horizontal / norm + np.array([0.0, math.sin(angle), 0.0]))

    state.budget -= 1
    state.fired.append(delta)
    logger.info(f"IMPULSE: {child_params.anchor_id}->{child_params.child_id} overlap={overlap:.3f} "
                f"delta={np.round(delta, 4).tolist()} remaining={state.budget}")
    return delta


@dataclass
class SettleReport:
    params: InteractionParams
    steps: int
    impulses: List[np.ndarray]
    contact_established: bool
    oracle_failed: bool
    gravity_loss: float
    contact_loss: float
    max_contact_angle: float


class PhysicsSettler:
    """Runs the settle optimization for one interaction of a scene."""

    def __init__(self, config: PhysicsConfig = None, renderer=None):
        self.config = config or PhysicsConfig()
        self.renderer = renderer
        self.logger = logging.getLogger(__name__)

    def _optimizer(self):
        cfg = self.config
        if cfg.optimizer == 'gd':
            return GradientDescent(cfg.learning_rate)
        return Rprop(cfg.learning_rate, growth=cfg.step_growth, shrink=cfg.step_shrink,
                     max_step=cfg.max_step, min_step=cfg.min_step, tolerance=cfg.grad_tolerance)

    def _contact(self, world: np.ndarray, anchor_world: ObjectField, tree: cKDTree, floor: float) -> ContactTerms:
        """Contact terms for the settle step; Gaussians resting on the floor are left to gravity."""
        cfg = self.config
        band = cfg.contact_floor_band * float(np.ptp(world[:, 1]))
        on_floor = world[:, 1] <= floor + band
        return contact_terms(world, anchor_world, tree, exclude=on_floor, tolerance=cfg.contact_tolerance)

    def _oracle_gradient(self, scene: Scene, params: InteractionParams, oracle, cameras: Sequence[Camera],
                         prompt: str, seed: int):
        from services.oracles import build_request
        from services.cameras import camera_suffix

        if self.renderer is None:
            from services.renderer import SplatRenderer
            self.renderer = SplatRenderer()
        field = pair_field(scene, params)
        images = [self.renderer.render(field, cam) for cam in cameras]
        request = build_request(prompt, images, cameras, [camera_suffix(c) for c in cameras], seed,
                                want_residual=True, configuration=params.to_dict())
        residuals = oracle.residuals(request)
        d_t, d_q, d_s = np.zeros(3), np.zeros(4), 0.0
        for cam, residual in zip(cameras, residuals):
            pose = self.renderer.render_backward(field, cam, residual, [params]).d_pose[params.pair]
            d_t += pose.d_translation
            d_q += pose.d_rotation
            d_s += pose.d_scale
        return d_t, d_q, d_s

    def run(self, scene: Scene, pair: Tuple[str, str], clf=None, cameras: Sequence[Camera] = None,
            seed: int = 0) -> SettleReport:
        cfg = self.config
        anchor_id, child_id = pair
        params = scene.interaction(anchor_id, child_id)
        if params.status.rank < InteractionStatus.INITIALIZED.rank:
            raise UninitializedInteractionError(anchor_id, child_id)

        anchor_frame = scene.world_frame(anchor_id)
        anchor_world = object_in_world(scene, anchor_id)
        floor = floor_height(anchor_world)
        tree = cKDTree(anchor_world.means)
        local = scene.objects[child_id].means
        r_anchor = anchor_frame.matrix
        s_anchor = anchor_frame.scale

        use_oracle = clf is not None and clf.supports_residual
        if clf is not None and not use_oracle:
            self.logger.info(f"SETTLE_START: oracle {type(clf).__name__} cannot supply residuals; physics only")
        if use_oracle and not cameras:
            from services.cameras import init_cameras
            cameras = init_cameras(anchor_world.geometric_center, 4.5, (30.0, 60.0), (0.0, 90.0, 180.0, 270.0))
        oracle_failed = False

        values = {'t': params.translation.copy(), 'q': params.rotation.copy(), 's': np.array([params.scale])}
        optimizer = self._optimizer()
        state = ImpulseState(budget=cfg.impulse_budget)
        self.logger.info(f"SETTLE_START: {anchor_id}->{child_id} floor={floor:.4f} steps={cfg.steps} "
                         f"optimizer={cfg.optimizer}")

        def world_means(v):
            child_anchor = v['s'][0] * local @ rotations.to_matrix(v['q']).T + v['t']
            return anchor_frame.apply(child_anchor)

        lg = lc = 0.0
        terms = None
        step = 0
        for step in range(1, cfg.steps + 1):
            world = world_means(values)
            lg, g_grav = gravity_loss(world, floor, cfg.k_comb)
            terms = self._contact(world, anchor_world, tree, floor)
            lc = terms.loss
            if terms.any_intersection:
                state.contact = True
            lambda_c = cfg.lambda_c_factor * lg if terms.any_intersection else 0.0
            # Gradient of (F + λ_g·L_g + λ_c·L_c) / λ_g
            g_world = g_grav + (lambda_c / cfg.lambda_g) * terms.grad

            rot = rotations.to_matrix(values['q'])
            g_local = s_anchor * g_world @ r_anchor
            grads = {
                't': g_local.sum(axis=0),
                'q': rotations.matrix_grad_to_quat(values['q'], values['s'][0] * g_local.T @ local),
            }
            if not cfg.freeze_scale:
                grads['s'] = np.array([np.sum(g_local * (local @ rot.T))])

            if use_oracle and not oracle_failed:
                current = params.with_updates(rotation=rotations.normalize(values['q']),
                                              translation=values['t'], scale=values['s'][0])
                try:
                    d_t, d_q, d_s = self._oracle_gradient(scene, current, clf, cameras, params.prompt, seed + step)
                    weight = cfg.guidance_weight / cfg.lambda_g
                    grads['t'] = grads['t'] + weight * d_t
                    grads['q'] = grads['q'] + weight * d_q
                    if 's' in grads:
                        grads['s'] = grads['s'] + weight * d_s
                except OracleError as e:
                    oracle_failed = True
                    self.logger.warning(f"ORACLE_FAILURE: settle {anchor_id}->{child_id} continues physics-only: {e}")

            values = optimizer.step(values, grads)
            values['q'] = rotations.normalize(values['q'])
            values['s'] = np.maximum(values['s'], 1e-6)

            current = params.with_updates(rotation=values['q'], translation=values['t'], scale=values['s'][0])
            delta = stabilizing_impulse(current, world_means(values), anchor_world, state, cfg)
            if delta is not None:
                values['t'] = values['t'] + r_anchor.T @ delta / s_anchor

            if step % cfg.log_interval == 0:
                self.logger.debug(f"SETTLE_PROGRESS: {anchor_id}->{child_id} step={step} L_g={lg:.6f} "
                                  f"L_c={lc:.6f} contact={state.contact}")

        world = world_means(values)
        lg, _ = gravity_loss(world, floor, cfg.k_comb)
        terms = self._contact(world, anchor_world, tree, floor)
        settled = params.with_updates(rotation=values['q'], translation=values['t'], scale=float(values['s'][0]),
                                      status=InteractionStatus.SETTLED)
        self.logger.info(f"SETTLE_DONE: {anchor_id}->{child_id} steps={step} L_g={lg:.6f} L_c={terms.loss:.6f} "
                         f"impulses={len(state.fired)} oracle_failed={oracle_failed}")
        return SettleReport(
            params=settled, steps=step, impulses=list(state.fired), contact_established=state.contact,
            oracle_failed=oracle_failed, gravity_loss=lg, contact_loss=terms.loss, max_contact_angle=terms.max_angle,
        )


def run_settle(scene: Scene, pair: Tuple[str, str], clf=None, config: PhysicsConfig = None,
               cameras: Sequence[Camera] = None, seed: int = 0) -> SettleReport:
    return PhysicsSettler(config).run(scene, pair, clf=clf, cameras=cameras, seed=seed)


def settle(scene: Scene, pair: Tuple[str, str], clf=None, config: PhysicsConfig = None,
           cameras: Sequence[Camera] = None, seed: int = 0) -> InteractionParams:
    return run_settle(scene, pair, clf=clf, config=config, cameras=cameras, seed=seed).params
