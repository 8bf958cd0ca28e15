"""
Small helpers shared across services: structured event logging and hashing.
"""
import hashlib
import json
import logging
import time
from typing import Any, Dict

logger = logging.getLogger('app.events')


def log_event(event_type: str, details: Dict[str, Any], level: str = "info") -> None:
    """Structured logging for run events"""
    log_data = {
        "service": "riskgov",
        "event_type": event_type,
        "timestamp": time.time(),
        "details": details
    }

    if level == "error":
        logger.error(json.dumps(log_data, default=str))
    elif level == "warning":
        logger.warning(json.dumps(log_data, default=str))
    elif level == "debug":
        logger.debug(json.dumps(log_data, default=str))
    else:
        logger.info(json.dumps(log_data, default=str))


def stable_hash(payload: Dict[str, Any]) -> str:
    """SHA-256 of the canonical JSON encoding of a mapping."""
    encoded = json.dumps(payload, sort_keys=True, separators=(',', ':'), default=str)
    return hashlib.sha256(encoded.encode('utf-8')).hexdigest()
