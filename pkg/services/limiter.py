"""
Rate limiting for the guidance service.

Composition runs share one guidance service, so limits are counted per engine run rather
than per host: every GuidanceClient tags its requests with a CLIENT_HEADER id, and the
limiter falls back to the caller's address for untagged traffic.
"""

import logging

from flask import request
from flask_limiter import Limiter

from config.rate_limits import DEFAULT_RATE_LIMIT, LIMITER_STORAGE_URL

logger = logging.getLogger(__name__)

CLIENT_HEADER = 'X-Guidance-Client'
MAX_CLIENT_ID = 64


def caller_address() -> str:
    """First hop of X-Forwarded-For when proxied, else the socket address."""
    forwarded_for = request.headers.get('X-Forwarded-For')
    if forwarded_for:
        return forwarded_for.split(',')[0].strip()
    return request.remote_addr or 'unknown'


def guidance_client_key() -> str:
    """Bucket for the current request: the engine's client id, or its address when untagged."""
    client_id = request.headers.get(CLIENT_HEADER, '').strip()
    if client_id and len(client_id) <= MAX_CLIENT_ID and client_id.isprintable():
        return f"client:{client_id}"
    if client_id:
        logger.warning(f"GUIDANCE_CLIENT_ID: ignoring malformed client id from {caller_address()}")
    return f"addr:{caller_address()}"


# Bound to the application in create_app()
guidance_limiter = Limiter(
    key_func=guidance_client_key,
    storage_uri=LIMITER_STORAGE_URL,
    default_limits=[DEFAULT_RATE_LIMIT],
)
