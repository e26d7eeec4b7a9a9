"""
Configurational likelihood (CLF) and guidance oracles.

An oracle scores a set of rendered views against a text prompt; lower is better.
Residual-capable oracles also return, per view, dScore/dImage as an (H, W, 3) array,
which the renderer's backward pass turns into parameter gradients.
"""

from abc import ABC, abstractmethod
from dataclasses import dataclass
from threading import Lock
from typing import Dict, List, Optional, Sequence, Tuple
import hashlib
import json
import logging

import numpy as np
from cachetools import LRUCache

from models.camera import Camera, RenderedImage
from models.gaussian import ObjectField
from services.exceptions import CapabilityError, OracleError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GuidanceRequest:
    """One scoring request; `configuration` and `cameras` are metadata for in-process oracles."""

    prompt: str
    images: Tuple[np.ndarray, ...] = ()
    view_suffixes: Tuple[str, ...] = ()
    want_residual: bool = False
    seed: int = 0
    cfg_scale: float = 100.0
    timestep_range: Tuple[int, int] = (2, 980)
    loss_scale: float = 0.5
    rescale_factor: float = 0.7
    configuration: Optional[Dict] = None
    cameras: Tuple[Dict, ...] = ()

    @property
    def view_count(self) -> int:
        return max(len(self.images), len(self.view_suffixes), len(self.cameras))

    def fingerprint(self) -> str:
        digest = hashlib.sha256()
        meta = {
            'prompt': self.prompt, 'suffixes': list(self.view_suffixes), 'want_residual': self.want_residual,
            'seed': self.seed, 'cfg': self.cfg_scale, 'timesteps': list(self.timestep_range),
            'loss_scale': self.loss_scale, 'rescale': self.rescale_factor,
            'configuration': self.configuration, 'cameras': list(self.cameras),
        }
        digest.update(json.dumps(meta, sort_keys=True, default=float).encode('utf-8'))
        for image in self.images:
            digest.update(np.ascontiguousarray(image, dtype=np.float64).tobytes())
        return digest.hexdigest()


@dataclass
class GuidanceResponse:
    score: float
    residuals: Optional[List[np.ndarray]] = None


def camera_to_dict(camera: Camera) -> Dict:
    return {
        'position': [float(v) for v in camera.position],
        'look_at': [float(v) for v in camera.look_at],
        'up': [float(v) for v in camera.up],
        'fov_y': camera.fov_y,
        'width': camera.width,
        'height': camera.height,
        'near': camera.near,
    }


def camera_from_dict(data: Dict) -> Camera:
    return Camera(**data)


class CLFOracle(ABC):
    """Base class for scoring oracles."""

    supports_residual = False
    needs_images = True
    concurrency_limit = 1

    @abstractmethod
    def evaluate(self, request: GuidanceRequest) -> GuidanceResponse:
        ...

    def score(self, request: GuidanceRequest) -> float:
        return float(self.evaluate(request).score)

    def residuals(self, request: GuidanceRequest) -> List[np.ndarray]:
        return self.guide(request).residuals

    def guide(self, request: GuidanceRequest) -> GuidanceResponse:
        """Score plus one residual per view, each shaped like its image."""
        self.require_residual()
        response = self.evaluate(request)
        if response.residuals is None or len(response.residuals) != len(request.images):
            raise OracleError(f"Oracle returned {0 if response.residuals is None else len(response.residuals)} "
                              f"residuals for {len(request.images)} views")
        for image, residual in zip(request.images, response.residuals):
            if np.shape(residual) != np.shape(image):
                raise OracleError(f"Residual shape {np.shape(residual)} does not match image {np.shape(image)}")
        return response

    def require_residual(self):
        if not self.supports_residual:
            raise CapabilityError(f"{type(self).__name__} can only score; a residual was requested")


class SyntheticCLF(CLFOracle):
    """
    ‖t − t*‖² + 10·(s − s*)² plus Gaussian noise.

    Noise is drawn once per view from a generator seeded by (oracle seed, request seed,
    candidate) and averaged, so identical requests always score identically.
    """

    needs_images = False

    def __init__(self, target_t, target_s: float, noise_sd: float = 0.0, seed: int = 0,
                 concurrency_limit: int = 4):
        self.target_t = np.asarray(target_t, dtype=np.float64).reshape(3)
        self.target_s = float(target_s)
        self.noise_sd = float(noise_sd)
        self.seed = int(seed)
        self.concurrency_limit = concurrency_limit

    def evaluate(self, request: GuidanceRequest) -> GuidanceResponse:
        if not request.configuration:
            raise OracleError("SyntheticCLF needs the candidate configuration in the request")
        t = np.asarray(request.configuration['translation'], dtype=np.float64)
        s = float(request.configuration['scale'])
        value = float(np.sum((t - self.target_t) ** 2) + 10.0 * (s - self.target_s) ** 2)
        if self.noise_sd > 0:
            candidate = np.concatenate([t, [s]]).astype(np.float64)
            words = np.frombuffer(candidate.tobytes(), dtype=np.uint32).tolist()
            rng = np.random.default_rng([self.seed, int(request.seed) & 0xFFFFFFFF, *words])
            views = max(1, request.view_count)
            value += float(np.mean(rng.normal(0.0, self.noise_sd, size=views)))
        return GuidanceResponse(score=value)


def synthetic_clf(target_t, target_s: float, noise_sd: float = 0.0, seed: int = 0) -> SyntheticCLF:
    return SyntheticCLF(target_t, target_s, noise_sd=noise_sd, seed=seed)


class ConstantCLF(CLFOracle):
    needs_images = False

    def __init__(self, value: float = 1.0):
        self.value = float(value)

    def evaluate(self, request: GuidanceRequest) -> GuidanceResponse:
        return GuidanceResponse(score=self.value)


class PhotometricTargetOracle(CLFOracle):
    """
    Scores views against renders of a reference field from the same cameras.

    The residual of a view is render − target and the score is their mean squared
    difference. Target renders are cached per camera.
    """

    supports_residual = True

    def __init__(self, reference: ObjectField, renderer=None, cache_size: int = 256, concurrency_limit: int = 4):
        from services.renderer import SplatRenderer

        self.reference = reference
        self.renderer = renderer or SplatRenderer()
        self.concurrency_limit = concurrency_limit
        self._targets = LRUCache(maxsize=cache_size)
        self._lock = Lock()

    def target(self, camera: Camera) -> np.ndarray:
        key = json.dumps(camera_to_dict(camera), sort_keys=True)
        with self._lock:
            if key in self._targets:
                return self._targets[key]
        image = self.renderer.render(self.reference, camera).pixels
        with self._lock:
            self._targets[key] = image
        return image

    def evaluate(self, request: GuidanceRequest) -> GuidanceResponse:
        if len(request.cameras) != len(request.images):
            raise OracleError("PhotometricTargetOracle needs one camera description per image")
        residuals, errors = [], []
        for image, cam in zip(request.images, request.cameras):
            target = self.target(camera_from_dict(cam))
            image = np.asarray(image, dtype=np.float64)
            if image.shape != target.shape:
                raise OracleError(f"Image shape {image.shape} does not match camera {target.shape}")
            diff = image - target
            residuals.append(diff)
            errors.append(float(np.mean(diff ** 2)))
        return GuidanceResponse(score=float(np.mean(errors)) if errors else 0.0,
                                residuals=residuals if request.want_residual else None)


class CountingOracle(CLFOracle):
    """Counts evaluate() calls of the wrapped oracle."""

    def __init__(self, inner: CLFOracle):
        self.inner = inner
        self.calls = 0
        self._lock = Lock()

    @property
    def supports_residual(self):
        return self.inner.supports_residual

    @property
    def needs_images(self):
        return self.inner.needs_images

    @property
    def concurrency_limit(self):
        return self.inner.concurrency_limit

    def evaluate(self, request: GuidanceRequest) -> GuidanceResponse:
        with self._lock:
            self.calls += 1
        return self.inner.evaluate(request)


class CachedOracle(CLFOracle):
    """Memoises responses by request fingerprint; valid because scoring is pure per request."""

    def __init__(self, inner: CLFOracle, maxsize: int = 4096):
        self.inner = inner
        self._cache = LRUCache(maxsize=maxsize)
        self._lock = Lock()
        self.hits = 0

    @property
    def supports_residual(self):
        return self.inner.supports_residual

    @property
    def needs_images(self):
        return self.inner.needs_images

    @property
    def concurrency_limit(self):
        return self.inner.concurrency_limit

    def evaluate(self, request: GuidanceRequest) -> GuidanceResponse:
        key = request.fingerprint()
        with self._lock:
            if key in self._cache:
                self.hits += 1
                return self._cache[key]
        response = self.inner.evaluate(request)
        with self._lock:
            self._cache[key] = response
        return response


def build_request(prompt: str, images: Sequence[RenderedImage], cameras: Sequence[Camera],
                  suffixes: Sequence[str], seed: int, want_residual: bool = False,
                  configuration: Optional[Dict] = None, **guidance) -> GuidanceRequest:
    return GuidanceRequest(
        prompt=prompt,
        images=tuple(img.pixels if isinstance(img, RenderedImage) else np.asarray(img) for img in images),
        view_suffixes=tuple(suffixes),
        want_residual=want_residual,
        seed=int(seed),
        configuration=configuration,
        cameras=tuple(camera_to_dict(c) for c in cameras),
        **guidance,
    )
