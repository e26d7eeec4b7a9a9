# app.py - guidance service entry point
from flask import Flask, jsonify
import logging
import os

from config.settings import GUIDANCE_HOST, GUIDANCE_PORT, configure_logging, get_synthetic_config
from services.limiter import guidance_limiter
from services.oracles import SyntheticCLF

logger = logging.getLogger(__name__)

# Coverage measurement for the served process (test runs only)
coverage_instance = None
if os.environ.get('ENABLE_COVERAGE') == 'true' and os.environ.get('TEST_MODE') == 'true':
    try:
        import coverage
        coverage_instance = coverage.Coverage(data_file='/tmp/.coverage')
        coverage_instance.start()
        logging.info("Coverage measurement started")
    except Exception as e:
        logging.warning(f"Could not start coverage: {e}")


def default_oracle():
    """Oracle served when none is given: a synthetic CLF configured from the environment."""
    synthetic = get_synthetic_config()
    return SyntheticCLF(synthetic['target_t'], synthetic['target_s'], noise_sd=synthetic['noise_sd'])


def create_app(oracle=None, **config) -> Flask:
    """Flask app serving `oracle` behind the guidance wire protocol."""
    app = Flask(__name__)
    app.config.update(config)
    app.config['GUIDANCE_ORACLE'] = oracle if oracle is not None else default_oracle()
    guidance_limiter.init_app(app)

    from routes.guidance import guidance_bp
    app.register_blueprint(guidance_bp)

    @app.after_request
    def set_security_headers(response):
        response.headers['X-Content-Type-Options'] = 'nosniff'
        response.headers['Cache-Control'] = 'no-store'
        return response

    @app.errorhandler(404)
    def not_found_error(error):
        return jsonify({'error': 'Not found'}), 404

    @app.errorhandler(429)
    def rate_limited(error):
        return jsonify({'error': str(error.description)}), 429

    logger.info(f"Guidance service ready with {type(app.config['GUIDANCE_ORACLE']).__name__}")
    return app


if __name__ == '__main__':
    # Development server; use gunicorn 'app:create_app()' in production
    configure_logging()
    create_app().run(host=GUIDANCE_HOST, port=GUIDANCE_PORT)
