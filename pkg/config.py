# config.py
import os
import sys
import logging
from dotenv import load_dotenv

basedir = os.path.abspath(os.path.dirname(__file__))
load_dotenv(os.path.join(basedir, '.env'))


def _int_env(name: str, default: int) -> int:
    raw = os.environ.get(name)
    if raw is None or raw.strip() == '':
        return default
    try:
        return int(raw)
    except ValueError:
        print(f"WARNING: {name}={raw!r} is not an integer, using {default}")
        return default


class Config:
    """Base configuration class."""

    # --- Output Configuration ---
    OUTPUT_DIR = os.environ.get('RISKGOV_OUTPUT_DIR') or os.path.join(basedir, 'output')

    # --- Worker Pool Configuration ---
    # 0 means one worker per CPU
    THREADS = _int_env('RISKGOV_THREADS', 0)
    BATCH_SIZE = _int_env('RISKGOV_BATCH_SIZE', 256)

    # --- Numerics ---
    DENOMINATOR_FLOOR = 1e-6
    MAX_TRAJECTORY_POINTS = 2000

    # Logging
    LOG_LEVEL = os.environ.get('LOG_LEVEL', 'INFO')
    LOG_FORMAT = os.environ.get('LOG_FORMAT', 'text')

    TESTING = False

    @classmethod
    def init_logging(cls, context=None):
        """Configure the root logger for a run."""
        root = logging.getLogger()
        for handler in list(root.handlers):
            if getattr(handler, 'riskgov', False):
                root.removeHandler(handler)

        handler = logging.StreamHandler(sys.stderr)
        handler.riskgov = True  # type: ignore[attr-defined]
        if cls.LOG_FORMAT == 'json':
            handler.setFormatter(_json_formatter(context or {}))
        else:
            handler.setFormatter(logging.Formatter(
                '[%(asctime)s] %(levelname)s in %(module)s: %(message)s'
            ))
        root.addHandler(handler)
        root.setLevel(getattr(logging, cls.LOG_LEVEL.upper(), logging.INFO))

    @classmethod
    def worker_count(cls, requested=None):
        """Resolve the worker pool size: flag, then environment, then hardware."""
        workers = requested if requested is not None else cls.THREADS
        if not workers or workers < 1:
            workers = os.cpu_count() or 1
        return workers


def _json_formatter(context):
    from pythonjsonlogger import jsonlogger

    class CustomJsonFormatter(jsonlogger.JsonFormatter):
        def add_fields(self, log_record, record, message_dict):
            super().add_fields(log_record, record, message_dict)
            log_record['timestamp'] = self.formatTime(record, self.datefmt)
            log_record['level'] = record.levelname
            log_record['message'] = record.getMessage()
            for key, value in context.items():
                log_record.setdefault(key, value)

    return CustomJsonFormatter()


class DevelopmentConfig(Config):
    """Configuration settings for interactive runs."""
    LOG_LEVEL = os.environ.get('LOG_LEVEL', 'DEBUG')


class ProductionConfig(Config):
    """Configuration settings for batch runs (JSON logs on stderr)."""
    LOG_LEVEL = os.environ.get('LOG_LEVEL', 'INFO')
    LOG_FORMAT = 'json'


class TestingConfig(Config):
    """Testing configuration."""
    TESTING = True
    LOG_LEVEL = 'WARNING'
    THREADS = 1
    BATCH_SIZE = 64


# A dictionary to easily access configuration classes by name.
config = {
    'development': DevelopmentConfig,
    'production': ProductionConfig,
    'testing': TestingConfig,
    'default': DevelopmentConfig
}
