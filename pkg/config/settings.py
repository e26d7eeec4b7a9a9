import os
import logging

from dotenv import load_dotenv

load_dotenv()

# Guidance service transport; the client POSTs to <endpoint>/guidance and probes <endpoint>/info
GUIDANCE_ENDPOINT = os.environ.get('GUIDANCE_ENDPOINT', 'http://127.0.0.1:8080').rstrip('/')
GUIDANCE_TIMEOUT = float(os.environ.get('GUIDANCE_TIMEOUT', 60))
GUIDANCE_RETRIES = int(os.environ.get('GUIDANCE_RETRIES', 2))
GUIDANCE_BACKOFF = float(os.environ.get('GUIDANCE_BACKOFF', 0.5))

# Guidance service (serve)
GUIDANCE_HOST = os.environ.get('GUIDANCE_HOST', '127.0.0.1')
GUIDANCE_PORT = int(os.environ.get('PORT', 8080))

# Synthetic CLF served or used when no live guidance service is configured
SYNTHETIC_TARGET_T = os.environ.get('SYNTHETIC_TARGET_T', '0,0.5,0')
SYNTHETIC_TARGET_S = float(os.environ.get('SYNTHETIC_TARGET_S', 0.4))
SYNTHETIC_NOISE_SD = float(os.environ.get('SYNTHETIC_NOISE_SD', 0.0))

# Runtime
LOG_LEVEL = os.environ.get('LOG_LEVEL', 'INFO').upper()
DEFAULT_SEED = int(os.environ.get('DEFAULT_SEED', 0))
RENDER_WORKERS = int(os.environ.get('RENDER_WORKERS', min(8, os.cpu_count() or 1)))

LOG_FORMAT = '%(asctime)s [%(levelname)s] %(name)s: %(message)s'


def configure_logging(level: str = None):
    """Root logging setup; only entry points call this."""
    logging.basicConfig(level=getattr(logging, level or LOG_LEVEL, logging.INFO), format=LOG_FORMAT)


def get_guidance_config() -> dict:
    return {
        'endpoint': GUIDANCE_ENDPOINT,
        'timeout': GUIDANCE_TIMEOUT,
        'retries': GUIDANCE_RETRIES,
        'backoff': GUIDANCE_BACKOFF,
    }


def get_synthetic_config() -> dict:
    return {
        'target_t': [float(v) for v in SYNTHETIC_TARGET_T.split(',')],
        'target_s': SYNTHETIC_TARGET_S,
        'noise_sd': SYNTHETIC_NOISE_SD,
    }


def get_runtime_config() -> dict:
    return {
        'log_level': LOG_LEVEL,
        'default_seed': DEFAULT_SEED,
        'render_workers': RENDER_WORKERS,
    }
