"""
Field distillation: retrain a smaller field on rendered views of a dense one.
"""

from dataclasses import dataclass, replace
from typing import List
import logging
import math

import numpy as np

from config.distill import MIN_DISTILLED_GAUSSIANS, DistillConfig
from models.camera import Camera, RenderedImage
from models.gaussian import ObjectField
from services import rotations
from services.cameras import random_cameras
from services.exceptions import ShapeMismatchError, ValidationError
from services.forge import pack_params, unpack_params, farthest_point_sampling
from services.optim import Adam
from services.renderer import SplatRenderer

logger = logging.getLogger(__name__)


def _pixels(image) -> np.ndarray:
    return image.pixels if isinstance(image, RenderedImage) else np.asarray(image, dtype=np.float64)


def psnr(a, b) -> float:
    """10·log10(1/MSE) over RGB in [0, 1]; infinite for identical images."""
    pa, pb = _pixels(a), _pixels(b)
    if pa.shape != pb.shape:
        raise ShapeMismatchError(f"Cannot compare images of shapes {pa.shape} and {pb.shape}")
    mse = float(np.mean((pa - pb) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


@dataclass
class DistillReport:
    field: ObjectField
    psnr: float
    best_loss: float
    best_iteration: int
    source_count: int


class Distiller:
    def __init__(self, config: DistillConfig = None, renderer: SplatRenderer = None):
        self.config = config or DistillConfig()
        self.renderer = renderer or SplatRenderer()
        self.logger = logging.getLogger(__name__)

    def _cameras(self, rng: np.random.Generator, count: int, target) -> List[Camera]:
        cfg = self.config
        return random_cameras(rng, count, target=target, elevation=cfg.camera_elevation,
                              fov=(cfg.camera_fov, cfg.camera_fov), radius=cfg.camera_radius,
                              size=cfg.image_size)

    def initial_field(self, field: ObjectField, target_fraction: float) -> ObjectField:
        """FPS subset of the source, scales inflated to keep the surface covered."""
        if not 0 < target_fraction < 1:
            raise ValidationError(f"target_fraction must be in (0, 1), got {target_fraction}")
        count = int(math.floor(target_fraction * len(field)))
        if count < MIN_DISTILLED_GAUSSIANS:
            raise ValidationError(f"target_fraction {target_fraction} keeps {count} of {len(field)} Gaussians; "
                                  f"at least {MIN_DISTILLED_GAUSSIANS} are required")
        subset = field.subset(np.sort(farthest_point_sampling(field, count)))
        return subset.with_arrays(scales=subset.scales * math.sqrt(1.0 / target_fraction))

    def run(self, field: ObjectField, target_fraction: float) -> DistillReport:
        cfg = self.config
        student = self.initial_field(field, target_fraction)
        center = field.geometric_center
        train_rng = np.random.default_rng(cfg.seed)
        eval_rng = np.random.default_rng(cfg.seed + 1)
        self.logger.info(f"DISTILL_START: {field.id} {len(field)} -> {len(student)} Gaussians "
                         f"iterations={cfg.iterations}")

        params = unpack_params(student)
        optimizer = Adam({'mean': cfg.lr_mean, 'log_scale': cfg.lr_scale, 'opacity_logit': cfg.lr_opacity,
                          'rotation': cfg.lr_rotation, 'color': cfg.lr_color})
        best_field, best_loss, best_iteration = student, math.inf, 0

        for it in range(1, cfg.iterations + 1):
            optimizer.learning_rates['mean'] = cfg.mean_learning_rate(it - 1)
            current = pack_params(student, params)
            totals = {k: 0.0 for k in ('mean', 'log_scale', 'opacity_logit', 'rotation', 'color')}
            loss = 0.0
            for cam in self._cameras(train_rng, cfg.batch_size, center):
                target = self.renderer.render(field, cam).pixels
                image = self.renderer.render(current, cam).pixels
                residual = image - target
                loss += float(np.mean(residual ** 2))
                grads = self.renderer.render_backward(current, cam, residual)
                totals['mean'] = totals['mean'] + grads.d_mean
                totals['log_scale'] = totals['log_scale'] + grads.d_scale * current.scales
                totals['opacity_logit'] = (totals['opacity_logit']
                                           + grads.d_opacity * current.opacities * (1.0 - current.opacities))
                totals['rotation'] = totals['rotation'] + grads.d_rotation
                totals['color'] = totals['color'] + grads.d_color
            loss /= cfg.batch_size
            # Snapshot the parameters the loss was measured on
            if loss < best_loss:
                best_field, best_loss, best_iteration = current, loss, it - 1

            params = optimizer.step(params, totals)
            params['rotation'] = rotations.normalize(params['rotation'])
            params['color'] = np.clip(params['color'], 0.0, 1.0)
            if it % cfg.log_interval == 0:
                self.logger.info(f"DISTILL_PROGRESS: {field.id} iteration={it} loss={loss:.6f} best={best_loss:.6f}")

        held_out = self._cameras(eval_rng, cfg.view_count, center)
        scores = [psnr(self.renderer.render(best_field, cam), self.renderer.render(field, cam)) for cam in held_out]
        value = float(np.mean(scores))
        self.logger.info(f"DISTILL_DONE: {field.id} gaussians={len(best_field)} psnr={value:.2f}dB "
                         f"best_iteration={best_iteration}")
        return DistillReport(field=best_field, psnr=value, best_loss=best_loss, best_iteration=best_iteration,
                             source_count=len(field))


def distill(field: ObjectField, target_fraction: float, view_count: int = None, iterations: int = None,
            config: DistillConfig = None, renderer: SplatRenderer = None) -> tuple:
    """Returns (distilled field, mean PSNR over the held-out views)."""
    config = config or DistillConfig()
    overrides = {}
    if view_count is not None:
        overrides['view_count'] = view_count
    if iterations is not None:
        overrides['iterations'] = iterations
    if overrides:
        config = replace(config, **overrides)
    report = Distiller(config, renderer).run(field, target_fraction)
    return report.field, report.psnr
