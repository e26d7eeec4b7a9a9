"""
Structured Monte-Carlo initialization of interaction parameters.

The child's rotation stays at identity. A joint search over (t, s) seeds the pair;
translation and scale are then refined alternately. Translation candidates are ranked
by a visibility-corrected CLF so placements hidden behind the anchor cannot win by
default, and a scale search that settles near the bottom of its range moves the
cameras closer and shifts the range down for the remaining rounds.

Each translation round after the first samples a narrower cap of the sphere around
the mean of the best placements scored so far, and that mean becomes the round's
translation. A single noisy minimum wanders; the mean of the leaders does not.
"""

from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple
import logging
import math

import numpy as np
from scipy.spatial import cKDTree

from config.composer import InitConfig
from models.camera import Camera
from models.gaussian import ObjectField
from models.interaction import InteractionParams, InteractionStatus, Similarity
from models.scene import Scene, apply_similarity, floor_height, pair_field
from services import rotations
from services.cameras import camera_suffix, init_cameras
from services.exceptions import InitializationError, OracleError, ValidationError
from services.oracles import CLFOracle, build_request
from services.physics import contact_terms
from services.renderer import SplatRenderer, field_visibility

logger = logging.getLogger(__name__)

VISIBILITY_EPSILON = 1e-8
PRUNE_REASONS = ('intersection', 'below-floor', 'out-of-range')


def f_trans(f: float, visibility: float, s: float, gamma: float) -> float:
    """
    Visibility-corrected translation score.

    Non-negative scores are divided by max(v/s², ε)^γ and negative scores multiplied
    by it, so lowering the visibility always raises the result.
    """
    if not s > 0:
        raise ValidationError(f"scale must be positive, got {s}")
    if visibility < 0:
        raise ValidationError(f"visibility must be non-negative, got {visibility}")
    if not 0 < gamma <= 1:
        raise ValidationError(f"gamma must be in (0, 1], got {gamma}")
    factor = max(visibility / (s * s), VISIBILITY_EPSILON) ** gamma
    return f / factor if f >= 0 else f * factor


@dataclass
class CandidateScore:
    """One sampled configuration; pruned candidates are never scored."""

    params: InteractionParams
    index: int = 0
    f: Optional[float] = None
    f_trans: Optional[float] = None
    visibility: Optional[float] = None
    pruned: bool = False
    reason: Optional[str] = None
    error: Optional[str] = None

    @property
    def scored(self) -> bool:
        return self.f is not None

    @property
    def objective(self) -> float:
        return self.f_trans if self.f_trans is not None else self.f


@dataclass
class _PairContext:
    scene: Scene
    params: InteractionParams
    anchor_frame: Similarity
    anchor_world: ObjectField
    tree: cKDTree
    floor: float
    child_local: np.ndarray
    child_center: np.ndarray
    sphere_center: np.ndarray
    sphere_radius: float
    target: np.ndarray


    def placement(self, params: InteractionParams) -> np.ndarray:
        """Anchor-frame position of the child's geometric center."""
        return params.translation + params.scale * self.child_center


class StructuredInitializer:
    """
    Runs the Monte-Carlo searches for one pair.

    State carried between calls: the random generator, whether the reduced camera
    radius and scale range are active, the oracle call count, pruning statistics and
    the scored translation placements that steer later rounds.
    """

    def __init__(self, oracle: CLFOracle, config: InitConfig = None, renderer: SplatRenderer = None,
                 seed: int = 0):
        self.oracle = oracle
        self.config = config or InitConfig()
        self.renderer = renderer or SplatRenderer()
        self.seed = int(seed)
        self.rng = np.random.default_rng(self.seed)
        self.switched = False
        self.calls = 0
        self.failures = 0
        self.pruned: Counter = Counter()
        self.history: List[float] = []
        self.placements: List[Tuple[float, int, np.ndarray]] = []
        self.translation_rounds = 0
        self.logger = logging.getLogger(__name__)

    # Context and sampling

    def _context(self, scene: Scene, pair: Tuple[str, str]) -> _PairContext:
        anchor_id, child_id = pair
        params = scene.interaction(anchor_id, child_id)
        anchor = scene.objects[anchor_id]
        child = scene.objects[child_id]
        anchor_frame = scene.world_frame(anchor_id)
        anchor_world = apply_similarity(anchor, anchor_frame)
        return _PairContext(
            scene=scene,
            params=params,
            anchor_frame=anchor_frame,
            anchor_world=anchor_world,
            tree=cKDTree(anchor_world.means),
            floor=floor_height(anchor_world),
            child_local=child.means,
            child_center=np.asarray(child.geometric_center),
            sphere_center=np.asarray(anchor.geometric_center),
            sphere_radius=self.config.sphere_radius_factor * anchor.bounding_radius(),
            target=np.asarray(anchor_world.geometric_center),
        )

    def cameras(self, ctx: _PairContext) -> List[Camera]:
        cfg = self.config
        return init_cameras(ctx.target, cfg.camera_radius(self.switched), cfg.init_elevations,
                            cfg.init_azimuths, fov_y=cfg.camera_fov, size=cfg.image_size)

    def _sphere_points(self, count: int, center: np.ndarray, radius: float, axis: Optional[np.ndarray] = None,
                       cap_deg: float = 180.0) -> np.ndarray:
        """Uniform points on the sphere, or on the cap of half-angle `cap_deg` around `axis`."""
        if axis is None or cap_deg >= 180.0:
            directions = self.rng.normal(size=(count, 3))
            directions /= np.maximum(np.linalg.norm(directions, axis=1, keepdims=True), 1e-12)
            return center + radius * directions
        cos_theta = 1.0 - self.rng.uniform(size=count) * (1.0 - math.cos(math.radians(cap_deg)))
        sin_theta = np.sqrt(np.maximum(1.0 - cos_theta ** 2, 0.0))
        phi = self.rng.uniform(0.0, 2.0 * np.pi, size=count)
        helper = np.eye(3)[int(np.argmin(np.abs(axis)))]
        e1 = np.cross(axis, helper)
        e1 /= np.linalg.norm(e1)
        e2 = np.cross(axis, e1)
        ring = np.cos(phi)[:, None] * e1 + np.sin(phi)[:, None] * e2
        directions = cos_theta[:, None] * axis + sin_theta[:, None] * ring
        return center + radius * directions

    def _candidate(self, ctx: _PairContext, point: np.ndarray, scale: float, index: int) -> CandidateScore:
        """A candidate that puts the child's geometric center at `point` (anchor frame)."""
        translation = np.asarray(point, dtype=np.float64) - scale * ctx.child_center
        params = ctx.params.with_updates(rotation=rotations.IDENTITY.copy(), translation=translation,
                                         scale=float(scale), status=InteractionStatus.INITIALIZED)
        return CandidateScore(params=params, index=index)

    def _rejection(self, ctx: _PairContext, params: InteractionParams) -> Optional[str]:
        low, high = self.config.scale_range(self.switched)
        if not low - 1e-12 <= params.scale <= high + 1e-12:
            return 'out-of-range'
        world = ctx.anchor_frame.apply(params.scale * ctx.child_local + params.translation)
        if np.any(world[:, 1] < ctx.floor):
            return 'below-floor'
        if contact_terms(world, ctx.anchor_world, ctx.tree).any_intersection:
            return 'intersection'
        return None

    def _prune(self, ctx: _PairContext, candidates: Sequence[CandidateScore], stage: str) -> int:
        reasons = Counter()
        for cand in candidates:
            reason = self._rejection(ctx, cand.params)
            if reason:
                cand.pruned, cand.reason = True, reason
                reasons[reason] += 1
        self.pruned.update(reasons)
        if reasons:
            summary = ', '.join(f"{k}={v}" for k, v in sorted(reasons.items()))
            self.logger.debug(f"CANDIDATES_PRUNED: {stage} {ctx.params.anchor_id}->{ctx.params.child_id} "
                              f"{sum(reasons.values())}/{len(candidates)} ({summary})")
        return len(candidates) - sum(reasons.values())

    def _sample_placements(self, ctx: _PairContext, count: int, scales, stage: str, axis: Optional[np.ndarray] = None,
                           cap_deg: float = 180.0, extra: Sequence[CandidateScore] = ()) -> List[CandidateScore]:
        """
        Sphere samples around the anchor, inflating the sphere while every candidate is pruned.

        `extra` candidates are pruned once and returned with every attempt's samples.
        """
        cfg = self.config
        radius = ctx.sphere_radius
        extra = list(extra)
        kept = self._prune(ctx, extra, stage) if extra else 0
        for attempt in range(cfg.resample_attempts + 1):
            points = self._sphere_points(count, ctx.sphere_center, radius, axis, cap_deg)
            sizes = scales() if callable(scales) else np.full(count, float(scales))
            candidates = [self._candidate(ctx, p, s, i) for i, (p, s) in enumerate(zip(points, sizes))]
            if self._prune(ctx, candidates, stage) + kept:
                return candidates + extra
            self.logger.warning(f"CANDIDATES_PRUNED: {stage} {ctx.params.anchor_id}->{ctx.params.child_id} "
                                f"all {count} pruned at sphere radius {radius:.4f} (attempt {attempt + 1})")
            radius *= cfg.resample_inflation
        raise InitializationError(
            f"Every {stage} candidate for {ctx.params.anchor_id}->{ctx.params.child_id} was pruned",
            diagnostics=self.diagnostics(stage=stage, sphere_radius=radius),
        )

    # Scoring

    def _evaluate(self, ctx: _PairContext, cand: CandidateScore, cameras: List[Camera],
                  suffixes: List[str], with_visibility: bool) -> CandidateScore:
        field = None
        if self.oracle.needs_images or with_visibility:
            field = pair_field(ctx.scene, cand.params)
        images = [self.renderer.render(field, cam) for cam in cameras] if self.oracle.needs_images else []
        request = build_request(ctx.params.prompt, images, cameras, suffixes, self.seed,
                                configuration=cand.params.to_dict())
        try:
            cand.f = self.oracle.score(request)
        except OracleError as e:
            cand.error = str(e)
            return cand
        if with_visibility:
            cand.visibility = field_visibility(field, ctx.params.child_id, cameras, self.renderer)
            cand.f_trans = f_trans(cand.f, cand.visibility, cand.params.scale, self.config.visibility_exponent)
        return cand

    def _score(self, ctx: _PairContext, candidates: Sequence[CandidateScore], stage: str,
               with_visibility: bool):
        live = [c for c in candidates if not c.pruned]
        if not live:
            return
        cameras = self.cameras(ctx)
        suffixes = [camera_suffix(cam) for cam in cameras]
        workers = max(1, int(self.oracle.concurrency_limit))
        if workers == 1:
            for cand in live:
                self._evaluate(ctx, cand, cameras, suffixes, with_visibility)
        else:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                list(pool.map(lambda c: self._evaluate(ctx, c, cameras, suffixes, with_visibility), live))
        self.calls += len(live)

        failed = [c for c in live if c.error is not None]
        if failed:
            self.failures += len(failed)
            self.logger.warning(f"ORACLE_FAILURE: {stage} {ctx.params.anchor_id}->{ctx.params.child_id} "
                                f"{len(failed)}/{len(live)} candidates failed: {failed[0].error}")
            if len(failed) > self.config.max_failure_fraction * len(live):
                raise InitializationError(
                    f"Oracle failed on {len(failed)} of {len(live)} {stage} candidates",
                    diagnostics=self.diagnostics(stage=stage, failed=len(failed), scored=len(live),
                                                 last_error=failed[-1].error),
                )

    @staticmethod
    def _ranked(candidates: Sequence[CandidateScore]) -> List[CandidateScore]:
        scored = [c for c in candidates if c.scored]
        return sorted(scored, key=lambda c: (c.objective, c.index))

    def diagnostics(self, **extra) -> dict:
        report = {
            'oracle_calls': self.calls,
            'oracle_failures': self.failures,
            'pruned': dict(self.pruned),
            'radius_switched': self.switched,
            'camera_radius': self.config.camera_radius(self.switched),
        }
        report.update(extra)
        return report

    # Searches

    def sample_scale(self, scene: Scene, pair: Tuple[str, str]) -> Tuple[float, bool]:
        """Mean of the top-k scales with the translation frozen; may switch to the reduced radius."""
        cfg = self.config
        ctx = self._context(scene, pair)
        low, high = cfg.scale_range(self.switched)
        scales = self.rng.uniform(low, high, size=cfg.scale_samples)
        frozen = ctx.params.with_updates(rotation=rotations.IDENTITY.copy(), status=InteractionStatus.INITIALIZED)
        candidates = [CandidateScore(params=frozen.with_updates(scale=float(s)), index=i)
                      for i, s in enumerate(scales)]
        self._prune(ctx, candidates, 'scale')
        self._score(ctx, candidates, 'scale', with_visibility=False)

        best = self._ranked(candidates)[:cfg.scale_top_k]
        if not best:
            self.logger.warning(f"CANDIDATES_PRUNED: scale {pair[0]}->{pair[1]} no candidate survived; "
                                f"keeping s={ctx.params.scale:.4f}")
            return float(ctx.params.scale), False
        scale = float(np.mean([c.params.scale for c in best]))

        switched = False
        if not self.switched and scale < cfg.scale_switch_threshold:
            self.switched = switched = True
            self.logger.info(f"RADIUS_SWITCH: {pair[0]}->{pair[1]} s={scale:.4f} < {cfg.scale_switch_threshold}; "
                             f"camera radius {cfg.camera_radius_primary} -> {cfg.camera_radius_reduced}, "
                             f"scale range {cfg.scale_range_reduced}")
        return scale, switched

    def _leaders(self) -> Optional[np.ndarray]:
        """Mean placement of the best-ranked translation candidates scored so far."""
        if not self.placements:
            return None
        best = sorted(self.placements, key=lambda entry: (entry[0], entry[1]))[:self.config.translation_top_k]
        return np.mean([point for _, _, point in best], axis=0)

    def _refinement_axis(self, ctx: _PairContext) -> Optional[np.ndarray]:
        mean = self._leaders()
        if mean is None:
            return None
        offset = mean - ctx.sphere_center
        norm = float(np.linalg.norm(offset))
        return offset / norm if norm > 1e-12 else None

    def sample_translation(self, scene: Scene, pair: Tuple[str, str]) -> np.ndarray:
        """
        Best visibility-corrected placement on the sphere with the scale frozen.

        An initialized pair's current placement fills one of the candidate slots, scored
        at the frozen scale. Later rounds sample a cap around the leading placements.
        """
        cfg = self.config
        ctx = self._context(scene, pair)
        scale = float(ctx.params.scale)
        cap_deg = cfg.translation_cap(self.translation_rounds)
        axis = self._refinement_axis(ctx) if cap_deg < 180.0 else None
        if axis is None:
            cap_deg = 180.0

        fresh = cfg.translation_samples
        extra = []
        if ctx.params.status != InteractionStatus.UNSET and fresh > 1:
            fresh -= 1
            extra.append(CandidateScore(params=ctx.params.with_updates(rotation=rotations.IDENTITY.copy()),
                                        index=fresh))
        candidates = self._sample_placements(ctx, fresh, scale, 'translation', axis=axis, cap_deg=cap_deg,
                                             extra=extra)

        self._score(ctx, candidates, 'translation', with_visibility=True)
        ranked = self._ranked(candidates)
        if not ranked:
            raise InitializationError(f"No translation candidate for {pair[0]}->{pair[1]} could be scored",
                                      diagnostics=self.diagnostics(stage='translation'))
        for cand in ranked:
            self.placements.append((float(cand.objective), len(self.placements), ctx.placement(cand.params)))
        self.translation_rounds += 1
        self.history.append(float(ranked[0].f_trans))
        self.logger.debug(f"TRANSLATION_ROUND: {pair[0]}->{pair[1]} round={self.translation_rounds} "
                          f"cap={cap_deg:.1f}deg scored={len(ranked)} best={ranked[0].f_trans:.6f}")
        return ranked[0].params.translation.copy()

    def refined_translation(self, scene: Scene, pair: Tuple[str, str]) -> Optional[np.ndarray]:
        """
        The mean of the leading placements, moved onto the sampling sphere.

        Returns None when nothing has been scored yet or the mean placement would be
        pruned at the pair's current scale.
        """
        mean = self._leaders()
        if mean is None:
            return None
        ctx = self._context(scene, pair)
        offset = mean - ctx.sphere_center
        norm = float(np.linalg.norm(offset))
        if norm <= 1e-12:
            return None
        point = ctx.sphere_center + ctx.sphere_radius * offset / norm
        params = self._candidate(ctx, point, float(ctx.params.scale), 0).params
        reason = self._rejection(ctx, params)
        if reason:
            self.logger.debug(f"TRANSLATION_ROUND: {pair[0]}->{pair[1]} leader mean rejected ({reason})")
            return None
        return params.translation.copy()

    def joint_init(self, scene: Scene, pair: Tuple[str, str]) -> Tuple[np.ndarray, float]:
        """Best single (t, s) sample by f_trans; no averaging."""
        cfg = self.config
        low, high = cfg.scale_range(self.switched)
        ctx = self._context(scene, pair)
        candidates = self._sample_placements(
            ctx, cfg.joint_samples, lambda: self.rng.uniform(low, high, size=cfg.joint_samples), 'joint')
        self._score(ctx, candidates, 'joint', with_visibility=True)
        ranked = self._ranked(candidates)
        if not ranked:
            raise InitializationError(f"No joint candidate for {pair[0]}->{pair[1]} could be scored",
                                      diagnostics=self.diagnostics(stage='joint'))
        best = ranked[0]
        self.history.append(float(best.f_trans))
        return best.params.translation.copy(), float(best.params.scale)

    def run(self, scene: Scene, pair: Tuple[str, str]) -> InteractionParams:
        """Joint search, then alternating translation and scale rounds."""
        cfg = self.config
        anchor_id, child_id = pair
        current = scene.interaction(anchor_id, child_id)
        if current.status != InteractionStatus.UNSET:
            self.logger.info(f"INIT_START: {anchor_id}->{child_id} re-initializing from status {current.status.value}")
        self.logger.info(f"INIT_START: {anchor_id}->{child_id} seed={self.seed} oracle={type(self.oracle).__name__}")

        self.placements, self.translation_rounds = [], 0
        t, s = self.joint_init(scene, pair)
        params = current.with_updates(rotation=rotations.IDENTITY.copy(), translation=t, scale=s,
                                      status=InteractionStatus.INITIALIZED)
        for round_index in range(1, cfg.alternating_rounds + 1):
            t = self.sample_translation(scene.with_interaction(params), pair)
            refined = self.refined_translation(scene.with_interaction(params), pair)
            params = params.with_updates(translation=t if refined is None else refined)
            s, _ = self.sample_scale(scene.with_interaction(params), pair)
            params = params.with_updates(scale=s)
            self.logger.debug(f"INIT_ROUND: {anchor_id}->{child_id} round={round_index} "
                              f"t={np.round(params.translation, 4).tolist()} s={s:.4f}")

        self.logger.info(f"INIT_DONE: {anchor_id}->{child_id} t={np.round(params.translation, 4).tolist()} "
                         f"s={params.scale:.4f} calls={self.calls} switched={self.switched} "
                         f"pruned={dict(self.pruned)}")
        return params


def sample_scale(scene: Scene, pair: Tuple[str, str], oracle: CLFOracle, config: InitConfig = None,
                 seed: int = 0, switched: bool = False) -> Tuple[float, bool]:
    initializer = StructuredInitializer(oracle, config, seed=seed)
    initializer.switched = switched
    return initializer.sample_scale(scene, pair)


def sample_translation(scene: Scene, pair: Tuple[str, str], oracle: CLFOracle, config: InitConfig = None,
                       seed: int = 0) -> np.ndarray:
    return StructuredInitializer(oracle, config, seed=seed).sample_translation(scene, pair)


def joint_init(scene: Scene, pair: Tuple[str, str], oracle: CLFOracle, config: InitConfig = None,
               seed: int = 0) -> Tuple[np.ndarray, float]:
    return StructuredInitializer(oracle, config, seed=seed).joint_init(scene, pair)


def structured_init(scene: Scene, pair: Tuple[str, str], oracle: CLFOracle, config: InitConfig = None,
                    seed: int = 0, renderer: SplatRenderer = None) -> InteractionParams:
    return StructuredInitializer(oracle, config, renderer=renderer, seed=seed).run(scene, pair)
