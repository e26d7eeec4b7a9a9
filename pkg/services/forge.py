"""
Object generation from a point cloud under guidance.

Fields are initialized from points, then optimized against per-view residuals from
a guidance oracle. Two KNN regularizers shape the result: one pulls every Gaussian
toward its nearest alpha-hull members, the optional other keeps Gaussians on the
initial point cloud. Densification clones small Gaussians and splits large ones.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Set, Tuple
import logging
import math

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import expit, logit

from config.forge import ForgeConfig
from models.gaussian import ObjectField
from services import rotations
from services.cameras import camera_suffix, random_cameras
from services.exceptions import CapabilityError, ShapeMismatchError, ValidationError
from services.oracles import CLFOracle, build_request
from services.optim import Adam
from services.renderer import SplatRenderer

logger = logging.getLogger(__name__)

OPACITY_EPSILON = 1e-6
ARC_TOLERANCE = 1e-12


def _as_points(values) -> np.ndarray:
    if isinstance(values, ObjectField):
        return values.means
    points = np.asarray(values, dtype=np.float64)
    if points.size == 0:
        return np.zeros((0, 3))
    if points.ndim == 1 and points.size == 3:
        points = points.reshape(1, 3)
    if points.ndim != 2 or points.shape[1] != 3:
        raise ValidationError(f"Points must have shape (N, 3), got {points.shape}")
    return points


def init_from_points(points, config: ForgeConfig = None, object_id: str = 'object', prompt: str = '',
                     seed: int = None) -> ObjectField:
    """
    One isotropic Gaussian per point with random color.

    The points are kept as the field's `init_points` for the point-cloud regularizer.
    """
    config = config or ForgeConfig()
    points = _as_points(points)
    if points.shape[0] == 0:
        raise ValidationError("Cannot initialize an object from an empty point cloud")
    rng = np.random.default_rng(config.seed if seed is None else seed)
    n = points.shape[0]
    return ObjectField(
        id=object_id,
        means=points,
        rotations=np.tile(rotations.IDENTITY, (n, 1)),
        scales=np.full((n, 3), config.init_scale),
        opacities=np.full(n, config.init_opacity),
        colors=rng.uniform(0.0, 1.0, size=(n, 3)),
        prompt=prompt,
        init_points=points,
    )


def knn_loss(source, target, k: int) -> Tuple[float, np.ndarray]:
    """
    Σ_i Σ_{j ∈ kNN(i)} max(0, ‖μ_i − μ_j‖ − min_scale_i)² and its gradient w.r.t. μ_i.

    min_scale_i is the smallest scale of source Gaussian i when the target is a
    Gaussian field and 0 when it is a bare point set. Targets are held constant.
    """
    src = _as_points(source)
    tgt = _as_points(target)
    if k < 1:
        raise ValidationError(f"k must be at least 1, got {k}")
    if k > tgt.shape[0]:
        raise ValidationError(f"k={k} exceeds the {tgt.shape[0]} target points")
    if isinstance(source, ObjectField) and isinstance(target, ObjectField):
        min_scale = source.scales.min(axis=1)
    else:
        min_scale = np.zeros(src.shape[0])

    dist, idx = cKDTree(tgt).query(src, k=k)
    dist = np.asarray(dist).reshape(src.shape[0], k)
    idx = np.asarray(idx).reshape(src.shape[0], k)
    hinge = np.maximum(dist - min_scale[:, None], 0.0)
    loss = float(np.sum(hinge ** 2))

    diff = src[:, None, :] - tgt[idx]
    coeff = np.where(dist > 0, 2.0 * hinge / np.where(dist > 0, dist, 1.0), 0.0)
    grads = np.sum(coeff[..., None] * diff, axis=1)
    return loss, grads


def farthest_point_sampling(points, count: int, start: int = 0) -> np.ndarray:
    """Indices of `count` points, each the farthest from those already chosen."""
    pts = _as_points(points)
    n = pts.shape[0]
    if not 1 <= count <= n:
        raise ValidationError(f"Cannot sample {count} of {n} points")
    chosen = np.empty(count, dtype=np.int64)
    chosen[0] = start
    dist = np.linalg.norm(pts - pts[start], axis=1)
    dist[start] = -1.0
    for i in range(1, count):
        nxt = int(np.argmax(dist))
        chosen[i] = nxt
        dist = np.minimum(dist, np.linalg.norm(pts - pts[nxt], axis=1))
        dist[chosen[:i + 1]] = -1.0
    return chosen


def _orthonormal_basis(axis: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    helper = np.eye(3)[int(np.argmin(np.abs(axis)))]
    e1 = np.cross(axis, helper)
    e1 /= np.linalg.norm(e1)
    return e1, np.cross(axis, e1)


def _arcs_cover_circle(centers: np.ndarray, half_widths: np.ndarray) -> bool:
    """True if the open arcs leave no point of the circle free."""
    ends = np.concatenate([centers - half_widths, centers + half_widths])
    offset = np.angle(np.exp(1j * (ends[:, None] - centers[None, :])))
    inside = np.abs(offset) < half_widths[None, :] - ARC_TOLERANCE
    return bool(np.all(inside.any(axis=1)))


def _pair_has_empty_sphere(points: np.ndarray, i: int, j: int, radius: float, tree: cKDTree) -> bool:
    """
    Whether some sphere of `radius` through points i and j holds no other point.

    Centers of such spheres lie on a circle around the pair's midpoint. Each other
    point rules out an open arc of that circle; the pair qualifies if the arcs
    leave a gap.
    """
    p, q = points[i], points[j]
    axis = q - p
    d = float(np.linalg.norm(axis))
    if d == 0.0:
        return False
    mid = 0.5 * (p + q)
    rho = math.sqrt(max(radius * radius - 0.25 * d * d, 0.0))
    near = [k for k in tree.query_ball_point(mid, rho + radius) if k != i and k != j]
    if not near:
        return True
    rel = points[near] - mid
    r2 = radius * radius
    if rho < ARC_TOLERANCE:
        return not np.any(np.sum(rel ** 2, axis=1) < r2 - ARC_TOLERANCE)

    axis /= d
    along = rel @ axis
    radial = rel - along[:, None] * axis
    b = np.linalg.norm(radial, axis=1)
    a2 = along ** 2 + b ** 2 + rho ** 2

    on_axis = b < ARC_TOLERANCE
    if np.any(on_axis & (a2 < r2 - ARC_TOLERANCE)):
        return False
    off = ~on_axis
    kappa = (a2[off] - r2) / (2.0 * rho * b[off])
    if np.any(kappa < -1.0):
        return False
    blocking = kappa < 1.0 - ARC_TOLERANCE
    if not blocking.any():
        return True
    e1, e2 = _orthonormal_basis(axis)
    radial = radial[off][blocking]
    centers = np.arctan2(radial @ e2, radial @ e1)
    half_widths = np.arccos(np.clip(kappa[blocking], -1.0, 1.0))
    return not _arcs_cover_circle(centers, half_widths)


def hull_members(points: np.ndarray, radius: float) -> Set[int]:
    """Endpoints of every pair that lies on an empty sphere of `radius`."""
    tree = cKDTree(points)
    members: Set[int] = set()
    for i, j in sorted(tree.query_pairs(2.0 * radius)):
        if i in members and j in members:
            continue
        if _pair_has_empty_sphere(points, i, j, radius, tree):
            members.update((i, j))
    return members


def alpha_hull(field, alpha: float, fps_count: int) -> Set[int]:
    """
    Indices of alpha-hull members among a farthest-point subset of the means.

    A pair of subset points belongs to the hull if a sphere of radius 1/alpha passes
    through both and contains no other subset point; the result is the union of
    qualifying pair endpoints, as indices into `field`.
    """
    if not alpha > 0:
        raise ValidationError(f"alpha must be positive, got {alpha}")
    points = _as_points(field)
    count = min(int(fps_count), points.shape[0])
    if count < 2:
        raise ValidationError("The alpha hull needs at least two sampled points")
    subset = farthest_point_sampling(points, count)
    return {int(subset[k]) for k in hull_members(points[subset], 1.0 / alpha)}


@dataclass
class DensifyResult:
    field: ObjectField
    keep: np.ndarray
    added: int
    cloned: int
    split: int


def densify_field(field: ObjectField, accumulated_grads, config: ForgeConfig,
                  rng: np.random.Generator) -> DensifyResult:
    """
    Clone or split every Gaussian whose gradient statistic reaches the threshold.

    Rows below the threshold come first, untouched and in order, followed by the
    clones and then the split children; `keep` indexes the surviving original rows.
    """
    grads = np.asarray(accumulated_grads, dtype=np.float64).reshape(-1)
    n = len(field)
    if grads.shape[0] != n:
        raise ShapeMismatchError(f"Got {grads.shape[0]} gradient statistics for {n} Gaussians")
    selected = grads >= config.densify_grad_threshold
    if not selected.any():
        return DensifyResult(field=field, keep=np.arange(n), added=0, cloned=0, split=0)

    small = field.scales.min(axis=1) < config.clone_scale_cutoff
    clone_idx = np.flatnonzero(selected & small)
    split_idx = np.flatnonzero(selected & ~small)
    keep = np.flatnonzero(~(selected & ~small))
    rot = rotations.to_matrix(field.rotations)

    largest = np.argmax(field.scales[clone_idx], axis=1)
    offset = rot[clone_idx, :, largest] * field.scales[clone_idx, largest][:, None]
    children = np.repeat(split_idx, 2)
    local = rng.normal(size=(children.size, 3)) * field.scales[children]
    child_means = field.means[children] + np.einsum('nij,nj->ni', rot[children], local)

    def stack(column, clones=None, splits=None):
        return np.concatenate([
            column[keep],
            column[clone_idx] if clones is None else clones,
            column[children] if splits is None else splits,
        ])

    provenance = None if field.provenance is None else stack(field.provenance)
    densified = field.with_arrays(
        means=stack(field.means, clones=field.means[clone_idx] + offset, splits=child_means),
        rotations=stack(field.rotations),
        scales=stack(field.scales, splits=field.scales[children] / config.split_scale_divisor),
        opacities=stack(field.opacities),
        colors=stack(field.colors),
        provenance=provenance,
    )
    return DensifyResult(field=densified, keep=keep, added=clone_idx.size + children.size,
                         cloned=clone_idx.size, split=split_idx.size)


def densify(field: ObjectField, accumulated_grads, config: ForgeConfig = None, seed: int = 0) -> ObjectField:
    config = config or ForgeConfig()
    return densify_field(field, accumulated_grads, config, np.random.default_rng(seed)).field


def unpack_params(field: ObjectField) -> dict:
    return {
        'mean': field.means.copy(),
        'log_scale': np.log(field.scales),
        'opacity_logit': logit(np.clip(field.opacities, OPACITY_EPSILON, 1.0 - OPACITY_EPSILON)),
        'rotation': field.rotations.copy(),
        'color': field.colors.copy(),
    }


def pack_params(template: ObjectField, params: dict) -> ObjectField:
    return template.with_arrays(
        means=params['mean'],
        scales=np.exp(params['log_scale']),
        opacities=expit(params['opacity_logit']),
        rotations=rotations.normalize(params['rotation']),
        colors=np.clip(params['color'], 0.0, 1.0),
    )


class ObjectGenerator:
    """Runs the guidance-driven optimization loop for one object."""

    def __init__(self, oracle: CLFOracle, config: ForgeConfig = None, renderer: SplatRenderer = None,
                 workers: int = 1):
        self.oracle = oracle
        self.config = config or ForgeConfig()
        self.renderer = renderer or SplatRenderer()
        self.workers = max(1, int(workers))
        self.logger = logging.getLogger(__name__)

    def _map(self, fn, items: List) -> List:
        if self.workers == 1 or len(items) < 2:
            return [fn(item) for item in items]
        with ThreadPoolExecutor(max_workers=self.workers) as pool:
            return list(pool.map(fn, items))

    def _learning_rates(self, iteration: int) -> dict:
        cfg = self.config
        return {
            'mean': cfg.mean_learning_rate(iteration),
            'log_scale': cfg.lr_scale,
            'opacity_logit': cfg.lr_opacity,
            'rotation': cfg.lr_rotation,
            'color': cfg.lr_color,
        }

    def run(self, prompt: str, init_points, use_pointe_knn: bool = False,
            object_id: str = 'object') -> ObjectField:
        cfg = self.config
        if self.oracle is None:
            raise CapabilityError("Object generation needs a guidance oracle")
        self.oracle.require_residual()

        if isinstance(init_points, ObjectField):
            field = init_points.with_arrays(id=object_id, prompt=prompt)
        else:
            field = init_from_points(init_points, cfg, object_id=object_id, prompt=prompt)
        anchors_e = field.init_points if field.init_points is not None else field.means.copy()
        if use_pointe_knn and anchors_e.shape[0] < cfg.knn_k_pointe:
            raise ValidationError("The initial point cloud is smaller than knn_k_pointe")
        if cfg.iterations == 0:
            return field

        rng = np.random.default_rng(cfg.seed)
        target = field.means.mean(axis=0)
        params = unpack_params(field)
        optimizer = Adam(self._learning_rates(0))
        hull: Optional[np.ndarray] = None
        grad_sum = np.zeros(len(field))
        seen = np.zeros(len(field))
        self.logger.info(f"FORGE_START: {object_id} gaussians={len(field)} iterations={cfg.iterations} "
                         f"batch={cfg.batch_size} pointe_knn={use_pointe_knn}")

        for it in range(1, cfg.iterations + 1):
            optimizer.learning_rates = self._learning_rates(it - 1)
            field = pack_params(field, params)
            if hull is None or (it - 1) % cfg.hull_refresh_interval == 0:
                hull = np.array(sorted(alpha_hull(field, 1.0 / cfg.hull_radius, cfg.fps_count)), dtype=np.int64)

            cameras = random_cameras(rng, cfg.batch_size, target=target, azimuth=cfg.camera_azimuth,
                                     elevation=cfg.camera_elevation, fov=cfg.camera_fov,
                                     radius=cfg.camera_radius, size=cfg.image_size)
            images = self._map(lambda cam: self.renderer.render(field, cam), cameras)
            request = build_request(prompt, images, cameras, [camera_suffix(c) for c in cameras], cfg.seed + it,
                                    want_residual=True, cfg_scale=cfg.cfg_scale,
                                    timestep_range=cfg.timestep_range(it), loss_scale=cfg.loss_scale,
                                    rescale_factor=cfg.rescale_factor)
            response = self.oracle.guide(request)
            views = self._map(lambda pair: self.renderer.render_backward(field, pair[0], pair[1]),
                              list(zip(cameras, response.residuals)))

            d_mean = sum(v.d_mean for v in views)
            for v in views:
                visible = v.contribution > 0
                grad_sum[visible] += np.linalg.norm(v.d_mean2d[visible], axis=1)
                seen[visible] += 1

            hull_loss = 0.0
            if hull.size >= cfg.knn_k_hull:
                hull_loss, g_hull = knn_loss(field, field.subset(hull), cfg.knn_k_hull)
                d_mean = d_mean + cfg.beta_hull * g_hull
            if use_pointe_knn:
                _, g_points = knn_loss(field, anchors_e, cfg.knn_k_pointe)
                d_mean = d_mean + cfg.pointe_knn_weight * g_points

            opacities = field.opacities
            grads = {
                'mean': d_mean,
                'log_scale': sum(v.d_scale for v in views) * field.scales,
                'opacity_logit': sum(v.d_opacity for v in views) * opacities * (1.0 - opacities),
                'rotation': sum(v.d_rotation for v in views),
                'color': sum(v.d_color for v in views),
            }
            params = optimizer.step(params, grads)
            params['rotation'] = rotations.normalize(params['rotation'])
            params['color'] = np.clip(params['color'], 0.0, 1.0)

            if cfg.densify_due(it):
                stat = grad_sum / np.maximum(seen, 1.0)
                result = densify_field(pack_params(field, params), stat, cfg, rng)
                if result.added:
                    field = result.field
                    params = unpack_params(field)
                    optimizer.reindex(result.keep, result.added)
                    hull = None
                    self.logger.info(f"DENSIFY: {object_id} iteration={it} cloned={result.cloned} "
                                     f"split={result.split} gaussians={len(field)}")
                grad_sum = np.zeros(len(result.field))
                seen = np.zeros(len(result.field))

            if it % cfg.log_interval == 0:
                self.logger.info(f"FORGE_PROGRESS: {object_id} iteration={it} score={response.score:.6f} "
                                 f"hull_knn={hull_loss:.6f} gaussians={len(field)}")

        field = pack_params(field, params)
        self.logger.info(f"FORGE_DONE: {object_id} gaussians={len(field)}")
        return field


def generate_object(prompt: str, init_points, oracle: CLFOracle, config: ForgeConfig = None,
                    use_pointe_knn: bool = False, object_id: str = 'object',
                    renderer: SplatRenderer = None, workers: int = 1) -> ObjectField:
    return ObjectGenerator(oracle, config, renderer=renderer, workers=workers).run(
        prompt, init_points, use_pointe_knn=use_pointe_knn, object_id=object_id)
