"""
Tile-based software splatting renderer with an analytic backward pass.

Gaussians are projected with the local affine (EWA) approximation, sorted once per
view by view-space depth (index breaks ties) and alpha-blended front to back over
16x16 pixel tiles against a black background.

The backward pass returns gradients of L = Σ_p residual(p)·C(p) with respect to every
per-Gaussian attribute and, for flattened scenes, with respect to the (R, t, s) of
each requested interaction.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from threading import Lock
from typing import Dict, Optional, Sequence, Tuple
import logging

import numpy as np

from config import render as render_config
from models.camera import Camera, RenderedImage
from models.gaussian import Gaussian, ObjectField
from models.interaction import InteractionParams
from models.scene import Scene, flatten_scene
from services import rotations
from services.exceptions import ShapeMismatchError, UnknownObjectError, ValidationError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ProjectedGaussian:
    mean2d: np.ndarray
    cov2d: np.ndarray
    depth: float
    culled: bool = False


@dataclass
class PoseGradient:
    d_rotation: np.ndarray
    d_translation: np.ndarray
    d_scale: float


@dataclass
class ViewGradients:
    """Gradients of Σ residual·C for one view."""

    d_mean: np.ndarray
    d_pose: Dict[Tuple[str, str], PoseGradient]
    contribution: np.ndarray
    d_color: np.ndarray = None
    d_opacity: np.ndarray = None
    d_scale: np.ndarray = None
    d_rotation: np.ndarray = None
    d_mean2d: np.ndarray = None
    d_cov3d: np.ndarray = None


@dataclass
class _FieldProjection:
    view: np.ndarray          # (N, 3) view-space means
    means2d: np.ndarray       # (N, 2)
    cov3d: np.ndarray         # (N, 3, 3)
    m: np.ndarray             # (N, 2, 3) = J·W
    cov2d: np.ndarray         # (N, 2, 2)
    conics: np.ndarray        # (N, 3) a, b, c of the inverse covariance
    radii: np.ndarray         # (N,) pixel extent at the sigma cutoff
    valid: np.ndarray         # (N,) in front of the near plane and invertible
    culled: int = 0
    degenerate: int = 0


def _project_field(field: ObjectField, camera: Camera) -> _FieldProjection:
    rot = camera.rotation
    focal = camera.focal
    cx, cy = camera.principal_point

    view = camera.to_view(field.means)
    x, y, z = view[:, 0], view[:, 1], view[:, 2]
    in_front = z > camera.near
    safe_z = np.where(in_front, z, 1.0)

    n = len(field)
    jac = np.zeros((n, 2, 3))
    jac[:, 0, 0] = focal / safe_z
    jac[:, 0, 2] = -focal * x / safe_z ** 2
    jac[:, 1, 1] = focal / safe_z
    jac[:, 1, 2] = -focal * y / safe_z ** 2
    m = jac @ rot

    cov3d = field.covariances
    cov2d = m @ cov3d @ np.swapaxes(m, 1, 2)
    cov2d[:, 0, 0] += render_config.COV2D_INFLATION
    cov2d[:, 1, 1] += render_config.COV2D_INFLATION

    a, b, c = cov2d[:, 0, 0], cov2d[:, 0, 1], cov2d[:, 1, 1]
    det = a * c - b * b
    invertible = np.isfinite(det) & (det > render_config.MIN_COV2D_DETERMINANT)
    safe_det = np.where(invertible, det, 1.0)
    conics = np.stack([c / safe_det, -b / safe_det, a / safe_det], axis=1)

    half_trace = 0.5 * (a + c)
    lambda_max = half_trace + np.sqrt(np.maximum(half_trace ** 2 - det, 0.0))
    radii = render_config.SIGMA_CUTOFF * np.sqrt(np.maximum(lambda_max, 0.0))

    means2d = np.stack([focal * x / safe_z + cx, focal * y / safe_z + cy], axis=1)
    valid = in_front & invertible
    return _FieldProjection(
        view=view, means2d=means2d, cov3d=cov3d, m=m, cov2d=cov2d, conics=conics, radii=radii,
        valid=valid, culled=int(np.sum(~in_front)), degenerate=int(np.sum(in_front & ~invertible)),
    )


def depth_order(depths: np.ndarray, candidates: np.ndarray) -> np.ndarray:
    """Indices of `candidates` sorted front to back; equal depths keep index order."""
    candidates = np.asarray(candidates)
    return candidates[np.lexsort((candidates, depths[candidates]))]


class SplatRenderer:
    """Renders fields for a camera; `cutoffs=False` disables the 3σ and transmittance truncations."""

    def __init__(self, cutoffs: bool = True, workers: int = 1, tile_size: int = None):
        self.cutoffs = cutoffs
        self.workers = max(1, int(workers))
        self.tile_size = tile_size or render_config.TILE_SIZE
        self.logger = logging.getLogger(__name__)
        self.degenerate_skipped = 0
        self.culled = 0
        self._stats_lock = Lock()

    # Public API

    def project(self, gaussian: Gaussian, camera: Camera) -> ProjectedGaussian:
        single = ObjectField.from_gaussians('projection', [gaussian])
        proj = _project_field(single, camera)
        depth = float(proj.view[0, 2])
        if proj.culled:
            return ProjectedGaussian(mean2d=np.full(2, np.nan), cov2d=np.full((2, 2), np.nan),
                                     depth=depth, culled=True)
        return ProjectedGaussian(mean2d=proj.means2d[0], cov2d=proj.cov2d[0], depth=depth)

    def render(self, field: ObjectField, camera: Camera) -> RenderedImage:
        color, alpha, _, _ = self._rasterize(field, camera)
        return RenderedImage(pixels=np.clip(color, 0.0, 1.0), alpha=np.clip(alpha, 0.0, 1.0))

    def contributions(self, field: ObjectField, camera: Camera) -> np.ndarray:
        """Per-Gaussian blending weight summed over pixels."""
        _, _, contribution, _ = self._rasterize(field, camera)
        return contribution

    def render_backward(self, field: ObjectField, camera: Camera, residual,
                        params: Sequence[InteractionParams] = ()) -> ViewGradients:
        residual = np.asarray(residual, dtype=np.float64)
        if residual.shape != (camera.height, camera.width, 3):
            raise ShapeMismatchError(
                f"Residual shape {residual.shape} does not match camera ({camera.height}, {camera.width}, 3)"
            )
        _, _, contribution, grads = self._rasterize(field, camera, residual)
        grads.contribution = contribution
        grads.d_pose = pose_gradients(field, grads, params)
        return grads

    # Rasterization

    def _tiles(self, camera: Camera):
        size = self.tile_size
        for y0 in range(0, camera.height, size):
            for x0 in range(0, camera.width, size):
                yield x0, y0, min(x0 + size, camera.width), min(y0 + size, camera.height)

    def _rasterize(self, field: ObjectField, camera: Camera, residual: np.ndarray = None):
        proj = _project_field(field, camera)
        with self._stats_lock:
            self.culled += proj.culled
            self.degenerate_skipped += proj.degenerate
        if proj.degenerate:
            self.logger.debug(f"RENDER_DEGENERATE: skipped {proj.degenerate} Gaussians with singular 2D covariance")

        n = len(field)
        order = depth_order(proj.view[:, 2], np.flatnonzero(proj.valid))
        tiles = list(self._tiles(camera))

        def run(tile):
            return self._tile_pass(field, proj, order, tile, residual)

        if self.workers > 1 and len(tiles) > 1:
            with ThreadPoolExecutor(max_workers=self.workers) as pool:
                results = list(pool.map(run, tiles))
        else:
            results = [run(tile) for tile in tiles]

        color = np.zeros((camera.height, camera.width, 3))
        alpha = np.zeros((camera.height, camera.width))
        contribution = np.zeros(n)
        partial = {'d_color': np.zeros((n, 3)), 'd_opacity': np.zeros(n), 'd_mean2d': np.zeros((n, 2)),
                   'd_conic': np.zeros((n, 3))}

        # Per-tile partial buffers merged in tile order
        for (x0, y0, x1, y1), result in zip(tiles, results):
            if result is None:
                continue
            ids, tile_color, tile_alpha, tile_weight, tile_grads = result
            color[y0:y1, x0:x1] = tile_color.reshape(y1 - y0, x1 - x0, 3)
            alpha[y0:y1, x0:x1] = tile_alpha.reshape(y1 - y0, x1 - x0)
            np.add.at(contribution, ids, tile_weight)
            if tile_grads is not None:
                for key, value in tile_grads.items():
                    np.add.at(partial[key], ids, value)

        grads = None
        if residual is not None:
            grads = self._chain_to_world(field, camera, proj, partial)
        return color, alpha, contribution, grads

    def _tile_pass(self, field: ObjectField, proj: _FieldProjection, order: np.ndarray, tile, residual):
        x0, y0, x1, y1 = tile
        if self.cutoffs:
            mu, radius = proj.means2d[order], proj.radii[order]
            touches = ((mu[:, 0] + radius >= x0) & (mu[:, 0] - radius <= x1 - 1)
                       & (mu[:, 1] + radius >= y0) & (mu[:, 1] - radius <= y1 - 1))
            ids = order[touches]
        else:
            ids = order
        if ids.size == 0:
            return None

        ys, xs = np.mgrid[y0:y1, x0:x1]
        px = xs.reshape(-1).astype(np.float64)
        py = ys.reshape(-1).astype(np.float64)

        mu = proj.means2d[ids]
        dx = px[None, :] - mu[:, 0:1]
        dy = py[None, :] - mu[:, 1:2]
        ca, cb, cc = (proj.conics[ids, k:k + 1] for k in range(3))
        power = -0.5 * (ca * dx * dx + cc * dy * dy) - cb * dx * dy
        gauss = np.exp(power)
        alpha = field.opacities[ids][:, None] * gauss
        live = np.ones_like(alpha, dtype=bool)
        if self.cutoffs:
            live = power >= -0.5 * render_config.SIGMA_CUTOFF ** 2
            alpha = np.where(live, alpha, 0.0)

        t_after = np.cumprod(1.0 - alpha, axis=0)
        t_before = np.vstack([np.ones((1, px.size)), t_after[:-1]])
        if self.cutoffs:
            active = t_before >= render_config.TRANSMITTANCE_FLOOR
        else:
            active = np.ones_like(t_before, dtype=bool)
        weight = alpha * t_before * active

        colors = field.colors[ids]
        tile_color = weight.T @ colors
        tile_alpha = weight.sum(axis=0)
        tile_weight = weight.sum(axis=1)
        if residual is None:
            return ids, tile_color, tile_alpha, tile_weight, None

        res = residual[y0:y1, x0:x1].reshape(-1, 3)
        g = colors @ res.T
        weighted = weight * g
        suffix = np.cumsum(weighted[::-1], axis=0)[::-1] - weighted
        # An opaque splat (1 - alpha = 0) hides everything behind it, so its suffix is zero
        opened = t_after > 0.0
        behind = np.where(opened, suffix / np.where(opened, t_after, 1.0), 0.0)
        d_alpha = t_before * (g - behind) * active
        d_alpha_live = d_alpha * live
        d_power = d_alpha_live * alpha

        tile_grads = {
            'd_color': weight @ res,
            'd_opacity': (d_alpha_live * gauss).sum(axis=1),
            'd_mean2d': np.stack([(d_power * (ca * dx + cb * dy)).sum(axis=1),
                                  (d_power * (cb * dx + cc * dy)).sum(axis=1)], axis=1),
            'd_conic': np.stack([-0.5 * (d_power * dx * dx).sum(axis=1),
                                 -0.5 * (d_power * dx * dy).sum(axis=1),
                                 -0.5 * (d_power * dy * dy).sum(axis=1)], axis=1),
        }
        return ids, tile_color, tile_alpha, tile_weight, tile_grads

    def _chain_to_world(self, field: ObjectField, camera: Camera, proj: _FieldProjection, partial) -> ViewGradients:
        n = len(field)
        valid = proj.valid
        focal = camera.focal
        rot = camera.rotation

        # Conic -> 2D covariance: dL/dA = -Q·dL/dQ·Q
        qa, qb, qc = proj.conics[:, 0], proj.conics[:, 1], proj.conics[:, 2]
        conic = np.stack([np.stack([qa, qb], -1), np.stack([qb, qc], -1)], -2)
        g_conic = np.stack([np.stack([partial['d_conic'][:, 0], partial['d_conic'][:, 1]], -1),
                            np.stack([partial['d_conic'][:, 1], partial['d_conic'][:, 2]], -1)], -2)
        g_cov2d = -conic @ g_conic @ conic

        m = proj.m
        g_cov3d = np.swapaxes(m, 1, 2) @ g_cov2d @ m
        g_m = 2.0 * g_cov2d @ m @ proj.cov3d
        g_jac = g_m @ rot.T

        x, y, z = proj.view[:, 0], proj.view[:, 1], np.where(valid, proj.view[:, 2], 1.0)
        du, dv = partial['d_mean2d'][:, 0], partial['d_mean2d'][:, 1]
        j00, j02, j11, j12 = g_jac[:, 0, 0], g_jac[:, 0, 2], g_jac[:, 1, 1], g_jac[:, 1, 2]
        d_view = np.stack([
            du * focal / z - j02 * focal / z ** 2,
            dv * focal / z - j12 * focal / z ** 2,
            (-du * focal * x / z ** 2 - dv * focal * y / z ** 2
             - (j00 + j11) * focal / z ** 2 + 2.0 * focal * (j02 * x + j12 * y) / z ** 3),
        ], axis=1)
        d_view[~valid] = 0.0
        g_cov3d[~valid] = 0.0
        d_mean = d_view @ rot

        # Σ = M·Mᵀ with M = Rot·diag(scale)
        rot_mats = rotations.to_matrix(field.rotations)
        factor = rot_mats * field.scales[:, None, :]
        g_factor = 2.0 * g_cov3d @ factor
        d_scale = np.sum(g_factor * rot_mats, axis=1)
        d_rotation = rotations.matrix_grad_to_quat(field.rotations, g_factor * field.scales[:, None, :])

        grads = ViewGradients(
            d_mean=d_mean,
            d_pose={},
            contribution=np.zeros(n),
            d_color=partial['d_color'],
            d_opacity=partial['d_opacity'],
            d_scale=d_scale,
            d_rotation=d_rotation,
            d_mean2d=partial['d_mean2d'],
            d_cov3d=g_cov3d,
        )
        return grads


def pose_gradients(field: ObjectField, grads: ViewGradients,
                   params: Sequence[InteractionParams]) -> Dict[Tuple[str, str], PoseGradient]:
    """
    Chain world-space mean and covariance gradients into each interaction's (R, t, s).

    For a pair (A, C) the Gaussians of C and of every object anchored below C move
    with the pair transform; they are pulled back into C's frame through the
    flattened field's `frames`.
    """
    result = {}
    if not params:
        return result
    if field.provenance is None or not field.frames:
        raise ValidationError("Pose gradients require a flattened scene field")
    g_cov3d = grads.d_cov3d

    for p in params:
        if p.child_id not in field.frames or p.anchor_id not in field.frames:
            raise UnknownObjectError(f"Interaction {p.anchor_id}->{p.child_id} is not part of the rendered field")
        moved = [oid for oid, chain in field.lineage.items() if p.pair in chain]
        mask = field.object_mask(moved)
        anchor_frame = field.frames[p.anchor_id]
        child_frame = field.frames[p.child_id]

        r_anchor = anchor_frame.matrix
        r_pair = rotations.to_matrix(p.rotation)
        g_world = grads.d_mean[mask]
        g_local = anchor_frame.scale * g_world @ r_anchor
        y = child_frame.inverse().apply(field.means[mask])

        d_translation = g_local.sum(axis=0)
        d_scale = float(np.sum(g_local * (y @ r_pair.T)))
        d_rmat = p.scale * g_local.T @ y

        if g_cov3d is not None:
            # Σw = (sA·s)² RA·R·Σy·Rᵀ·RAᵀ
            cov_world = field.covariances[mask]
            g_cov = g_cov3d[mask]
            d_scale += float(2.0 * np.sum(g_cov * cov_world) / p.scale)
            h = np.swapaxes(r_anchor, 0, 1)[None] @ g_cov @ r_anchor[None]
            cov_anchor = r_anchor.T[None] @ cov_world @ r_anchor[None]
            # h·K·R with K = R Σy Rᵀ expressed in the anchor frame
            d_rmat = d_rmat + np.sum(2.0 * h @ cov_anchor, axis=0) @ r_pair

        result[p.pair] = PoseGradient(
            d_rotation=rotations.matrix_grad_to_quat(p.rotation, d_rmat),
            d_translation=d_translation,
            d_scale=d_scale,
        )
    return result


_default_renderer = SplatRenderer()


def project(gaussian: Gaussian, camera: Camera) -> ProjectedGaussian:
    return _default_renderer.project(gaussian, camera)


def render(field: ObjectField, camera: Camera, cutoffs: bool = True) -> RenderedImage:
    renderer = _default_renderer if cutoffs else SplatRenderer(cutoffs=False)
    return renderer.render(field, camera)


def render_backward(field: ObjectField, camera: Camera, residual,
                    params: Sequence[InteractionParams] = (), cutoffs: bool = True) -> ViewGradients:
    renderer = _default_renderer if cutoffs else SplatRenderer(cutoffs=False)
    return renderer.render_backward(field, camera, residual, params)


def visibility(scene: Scene, child_id: str, cameras: Sequence[Camera],
               renderer: Optional[SplatRenderer] = None) -> float:
    """
    Mean blending contribution of the child's Gaussians, averaged over cameras.

    The blending weight does not depend on the residual, so a forward pass suffices.
    """
    if child_id not in scene.objects:
        raise UnknownObjectError(f"Unknown object '{child_id}'")
    if not cameras:
        raise ValidationError("visibility needs at least one camera")
    return field_visibility(flatten_scene(scene), child_id, cameras, renderer)


def field_visibility(field: ObjectField, object_id: str, cameras: Sequence[Camera],
                     renderer: Optional[SplatRenderer] = None) -> float:
    if not cameras:
        raise ValidationError("visibility needs at least one camera")
    renderer = renderer or _default_renderer
    mask = field.object_mask([object_id])
    if not mask.any():
        raise UnknownObjectError(f"No Gaussians of '{object_id}' in field {field.id}")
    per_view = [float(np.mean(renderer.contributions(field, cam)[mask])) for cam in cameras]
    return float(np.mean(per_view))
