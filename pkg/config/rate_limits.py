"""
Rate limiting configuration for the guidance service.
A composition issues a few hundred scoring calls per pair, so limits are generous.
"""

import os


def is_test_mode():
    """Check if running in test mode based on environment variable."""
    return os.getenv('TEST_MODE', '').lower() == 'true'


RATE_LIMITS = {
    # Scoring and residual requests from the engine
    'guidance': '10000 per minute' if is_test_mode() else '1200 per minute',

    # Capability checks from clients before a run
    'info': '60 per minute',
}

# In-memory storage; the guidance service runs as a single instance
LIMITER_STORAGE_URL = 'memory://'

DEFAULT_RATE_LIMIT = '600 per minute'


def get_rate_limit_message(endpoint_type: str) -> str:
    messages = {
        'guidance': 'Too many guidance requests. Lower the client concurrency or retry later.',
        'info': 'Too many requests. Please wait a moment.',
    }

    return messages.get(endpoint_type, 'Rate limit exceeded. Please wait before trying again.')
