"""
HTTP transport for guidance oracles.

Wire format (JSON over POST <endpoint>/guidance):

    request  {prompt, view_suffix: [str], images: [base64 PNG], cfg_scale,
              timestep_range: [lo, hi], loss_scale, rescale_factor, want_residual, seed,
              configuration?: {...}, cameras?: [{...}]}
    response {score: number, residuals?: [base64 little-endian float32, H*W*3]}

Residuals carry no shape on the wire; the client reshapes each one to the image it sent.
GET <endpoint>/info answers {supports_residual, needs_images, concurrency_limit}.
"""

from typing import Dict, Optional
import base64
import binascii
import io
import logging
import math
import uuid

import numpy as np
import requests
from PIL import Image, UnidentifiedImageError
from tenacity import Retrying, retry_if_exception_type, stop_after_attempt, wait_exponential

from config.settings import get_guidance_config
from services.exceptions import CapabilityError, OracleError
from services.limiter import CLIENT_HEADER
from services.oracles import CLFOracle, GuidanceRequest, GuidanceResponse

logger = logging.getLogger(__name__)

GUIDANCE_PATH = '/guidance'
INFO_PATH = '/info'
MAX_BACKOFF = 8.0


class TransientGuidanceError(OracleError):
    """A failure worth retrying: connection drop, timeout or a 5xx answer."""


# Codec

def encode_image(pixels: np.ndarray) -> str:
    pixels = np.asarray(pixels, dtype=np.float64)
    buffer = io.BytesIO()
    Image.fromarray(np.round(np.clip(pixels, 0.0, 1.0) * 255.0).astype(np.uint8)).save(buffer, format='PNG')
    return base64.b64encode(buffer.getvalue()).decode('ascii')


def decode_image(data: str) -> np.ndarray:
    try:
        with Image.open(io.BytesIO(base64.b64decode(data, validate=True))) as img:
            return np.asarray(img.convert('RGB'), dtype=np.float64) / 255.0
    except (binascii.Error, UnidentifiedImageError, ValueError, TypeError) as e:
        raise OracleError(f"Malformed PNG image on the wire: {e}") from e


def encode_array(values: np.ndarray) -> str:
    return base64.b64encode(np.asarray(values, dtype='<f4').tobytes()).decode('ascii')


def decode_array(data: str, shape) -> np.ndarray:
    try:
        raw = base64.b64decode(data, validate=True)
    except (binascii.Error, ValueError, TypeError) as e:
        raise OracleError(f"Malformed residual encoding: {e}") from e
    expected = int(np.prod(shape)) * 4
    if len(raw) != expected:
        raise OracleError(f"Residual holds {len(raw)} bytes, expected {expected} for shape {tuple(shape)}")
    return np.frombuffer(raw, dtype='<f4').astype(np.float64).reshape(shape)


def encode_request(request: GuidanceRequest) -> Dict:
    payload = {
        'prompt': request.prompt,
        'view_suffix': list(request.view_suffixes),
        'images': [encode_image(img) for img in request.images],
        'cfg_scale': request.cfg_scale,
        'timestep_range': list(request.timestep_range),
        'loss_scale': request.loss_scale,
        'rescale_factor': request.rescale_factor,
        'want_residual': request.want_residual,
        'seed': request.seed,
    }
    if request.configuration is not None:
        payload['configuration'] = request.configuration
    if request.cameras:
        payload['cameras'] = list(request.cameras)
    return payload


def decode_request(payload) -> GuidanceRequest:
    """Server side of encode_request; malformed payloads raise OracleError."""
    if not isinstance(payload, dict):
        raise OracleError("Guidance request body must be a JSON object")
    if not isinstance(payload.get('prompt'), str):
        raise OracleError("Guidance request needs a string 'prompt'")
    try:
        timesteps = payload.get('timestep_range', [2, 980])
        return GuidanceRequest(
            prompt=payload['prompt'],
            images=tuple(decode_image(img) for img in payload.get('images', [])),
            view_suffixes=tuple(str(s) for s in payload.get('view_suffix', [])),
            want_residual=bool(payload.get('want_residual', False)),
            seed=int(payload.get('seed', 0)),
            cfg_scale=float(payload.get('cfg_scale', 100.0)),
            timestep_range=(int(timesteps[0]), int(timesteps[1])),
            loss_scale=float(payload.get('loss_scale', 0.5)),
            rescale_factor=float(payload.get('rescale_factor', 0.7)),
            configuration=payload.get('configuration'),
            cameras=tuple(payload.get('cameras', [])),
        )
    except (TypeError, ValueError, IndexError) as e:
        raise OracleError(f"Malformed guidance request: {e}") from e


def encode_response(response: GuidanceResponse, request: GuidanceRequest) -> Dict:
    body = {'score': float(response.score)}
    if request.want_residual and response.residuals is not None:
        body['residuals'] = [encode_array(r) for r in response.residuals]
    return body


def decode_response(body, request: GuidanceRequest) -> GuidanceResponse:
    if not isinstance(body, dict):
        raise OracleError("Guidance response must be a JSON object")
    score = body.get('score')
    if isinstance(score, bool) or not isinstance(score, (int, float)) or not math.isfinite(score):
        raise OracleError(f"Guidance response has no finite 'score': {score!r}")
    if not request.want_residual:
        return GuidanceResponse(score=float(score))

    encoded = body.get('residuals')
    if encoded is None:
        raise CapabilityError("A residual was requested but the guidance service returned a score only")
    if not isinstance(encoded, list) or len(encoded) != len(request.images):
        count = len(encoded) if isinstance(encoded, list) else 'no list of'
        raise OracleError(f"Guidance service returned {count} residuals for {len(request.images)} views")
    residuals = [decode_array(data, np.shape(img)) for data, img in zip(encoded, request.images)]
    return GuidanceResponse(score=float(score), residuals=residuals)


# Transport

class GuidanceClient:
    """
    JSON client for a guidance service.

    Every request is idempotent (scoring is pure given views, prompt and seed), so
    connection failures, timeouts and 5xx answers are retried up to `retries` times with
    exponential backoff. 4xx answers and malformed bodies fail immediately.
    Requests carry a `client_id` header so the service rate-limits each engine run on its own.
    """

    def __init__(self, endpoint: str = None, timeout: float = None, retries: int = None,
                 backoff: float = None, session=None, client_id: str = None):
        defaults = get_guidance_config()
        self.endpoint = (endpoint or defaults['endpoint']).rstrip('/')
        self.timeout = defaults['timeout'] if timeout is None else float(timeout)
        self.retries = defaults['retries'] if retries is None else int(retries)
        self.backoff = defaults['backoff'] if backoff is None else float(backoff)
        self.session = session or requests.Session()
        self.client_id = client_id or f"engine-{uuid.uuid4().hex[:12]}"
        self.headers = {CLIENT_HEADER: self.client_id}
        self.logger = logging.getLogger(__name__)

    def _send(self, method: str, path: str, payload: Optional[Dict] = None) -> Dict:
        url = f"{self.endpoint}{path}"
        try:
            if method == 'POST':
                response = self.session.post(url, json=payload, headers=self.headers, timeout=self.timeout)
            else:
                response = self.session.get(url, headers=self.headers, timeout=self.timeout)
        except requests.Timeout as e:
            raise TransientGuidanceError(f"Guidance request to {url} timed out after {self.timeout}s") from e
        except requests.ConnectionError as e:
            raise TransientGuidanceError(f"Cannot reach guidance service at {url}: {e}") from e

        if response.status_code >= 500:
            raise TransientGuidanceError(f"Guidance service answered {response.status_code} for {url}")
        if response.status_code >= 400:
            raise OracleError(f"Guidance service rejected the request ({response.status_code}): "
                              f"{response.text[:200]}")
        try:
            return response.json()
        except ValueError as e:
            raise OracleError(f"Guidance service at {url} returned non-JSON content") from e

    def request(self, method: str, path: str, payload: Optional[Dict] = None) -> Dict:
        retrying = Retrying(
            stop=stop_after_attempt(self.retries + 1),
            wait=wait_exponential(multiplier=self.backoff, max=MAX_BACKOFF),
            retry=retry_if_exception_type(TransientGuidanceError),
            reraise=True,
        )
        for attempt in retrying:
            with attempt:
                number = attempt.retry_state.attempt_number
                if number > 1:
                    self.logger.warning(f"GUIDANCE_RETRY: {method} {path} attempt {number}/{self.retries + 1}")
                return self._send(method, path, payload)

    def post(self, path: str, payload: Dict) -> Dict:
        return self.request('POST', path, payload)

    def get(self, path: str) -> Dict:
        return self.request('GET', path)


class RemoteGuidanceOracle(CLFOracle):
    """A CLFOracle answered by a guidance service over HTTP."""

    def __init__(self, endpoint: str = None, client: GuidanceClient = None, **client_options):
        self.client = client or GuidanceClient(endpoint, **client_options)
        self._capabilities = None

    @property
    def capabilities(self) -> Dict:
        if self._capabilities is None:
            info = self.client.get(INFO_PATH)
            if not isinstance(info, dict):
                raise OracleError("Guidance /info must answer a JSON object")
            self._capabilities = info
            logger.info(f"GUIDANCE_INFO: {self.client.endpoint} {info}")
        return self._capabilities

    @property
    def supports_residual(self) -> bool:
        return bool(self.capabilities.get('supports_residual', False))

    @property
    def needs_images(self) -> bool:
        return bool(self.capabilities.get('needs_images', True))

    @property
    def concurrency_limit(self) -> int:
        return max(1, int(self.capabilities.get('concurrency_limit', 1)))

    def evaluate(self, request: GuidanceRequest) -> GuidanceResponse:
        if request.want_residual:
            self.require_residual()
        body = self.client.post(GUIDANCE_PATH, encode_request(request))
        return decode_response(body, request)


def guidance_client(endpoint: str, request: GuidanceRequest, timeout: float = None, retries: int = None,
                    session=None) -> GuidanceResponse:
    """One round trip to the guidance service at `endpoint`."""
    client = GuidanceClient(endpoint, timeout=timeout, retries=retries, session=session)
    return decode_response(client.post(GUIDANCE_PATH, encode_request(request)), request)


def capability_report(oracle: CLFOracle) -> Dict:
    return {
        'oracle': type(oracle).__name__,
        'supports_residual': bool(oracle.supports_residual),
        'needs_images': bool(oracle.needs_images),
        'concurrency_limit': int(oracle.concurrency_limit),
    }
