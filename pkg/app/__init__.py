# app/__init__.py
# Runner factory for the systemic-risk governance toolkit

import logging
import os

__version__ = '1.0.0'


def create_runner(config_name=None, output_dir=None, threads=None, context=None):
    """Runner factory: pick the configuration class, set up logging, build the run service."""
    from config import config
    from app.services.run_service import RunService

    if config_name is None:
        config_name = os.environ.get('RISKGOV_CONFIG', 'development')
    config_class = config.get(config_name, config['default'])

    config_class.init_logging(context)
    logging.getLogger(__name__).debug(f"Loading runner with config: {config_name}")

    return RunService(config_class, output_dir=output_dir, threads=threads)
