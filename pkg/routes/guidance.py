from flask import Blueprint, current_app, jsonify, request
import logging

from config.rate_limits import RATE_LIMITS, get_rate_limit_message
from services.exceptions import CapabilityError, OracleError
from services.guidance_client import capability_report, decode_request, encode_response
from services.limiter import guidance_limiter

guidance_bp = Blueprint('guidance', __name__)
logger = logging.getLogger(__name__)


def _oracle():
    return current_app.config['GUIDANCE_ORACLE']


@guidance_bp.route('/guidance', methods=['POST'])
@guidance_limiter.limit(RATE_LIMITS['guidance'], error_message=get_rate_limit_message('guidance'))
def guidance():
    """Score rendered views; answers residuals when asked and supported."""
    oracle = _oracle()
    try:
        guidance_request = decode_request(request.get_json(silent=True))
    except OracleError as e:
        return jsonify({'error': str(e)}), 400

    if guidance_request.want_residual and not oracle.supports_residual:
        # 422 rather than a bare score so the client can tell capability from transport
        return jsonify({'error': f"{type(oracle).__name__} can only score"}), 422

    try:
        response = oracle.evaluate(guidance_request)
    except CapabilityError as e:
        return jsonify({'error': str(e)}), 422
    except OracleError as e:
        logger.warning(f"ORACLE_FAILURE: {type(oracle).__name__} rejected a request: {e}")
        return jsonify({'error': str(e)}), 400
    except Exception as e:
        logger.error(f"ORACLE_FAILURE: {type(oracle).__name__} raised {type(e).__name__}: {e}")
        return jsonify({'error': 'Oracle failure'}), 500

    return jsonify(encode_response(response, guidance_request))


@guidance_bp.route('/info')
@guidance_limiter.limit(RATE_LIMITS['info'], error_message=get_rate_limit_message('info'))
def info():
    """Capability probe used by remote clients before optimisation starts."""
    return jsonify(capability_report(_oracle()))
