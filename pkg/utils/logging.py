import json
import logging
import os
import sys
import uuid
from datetime import datetime
from typing import Any, Dict, Optional

import numpy as np

PLAIN_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


def _jsonable(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    return str(value)


class JSONFormatter(logging.Formatter):
    def format(self, record):
        log_data = {
            'timestamp': datetime.fromtimestamp(record.created).isoformat(),
            'level': record.levelname,
            'message': record.getMessage(),
            'logger': record.name,
        }

        if hasattr(record, 'run_id'):
            log_data['run_id'] = record.run_id

        if record.exc_info:
            log_data['exception'] = self.formatException(record.exc_info)

        if hasattr(record, 'data') and record.data:
            log_data['data'] = record.data

        return json.dumps(log_data, default=_jsonable)


def new_run_id() -> str:
    return uuid.uuid4().hex[:12]


def setup_logging(level: str = "INFO", log_file: Optional[str] = None, json_format: bool = False):
    log_level = getattr(logging, level.upper(), logging.INFO)

    logger = logging.getLogger()
    logger.setLevel(log_level)

    for handler in logger.handlers[:]:
        logger.removeHandler(handler)

    # stderr keeps stdout free for result tables
    console_handler = logging.StreamHandler(sys.stderr)
    console_handler.setLevel(log_level)
    console_handler.setFormatter(JSONFormatter() if json_format else logging.Formatter(PLAIN_FORMAT))
    logger.addHandler(console_handler)

    if log_file:
        directory = os.path.dirname(log_file)
        if directory:
            os.makedirs(directory, exist_ok=True)
        file_handler = logging.FileHandler(log_file)
        file_handler.setLevel(log_level)
        # log files are always structured
        file_handler.setFormatter(JSONFormatter())
        logger.addHandler(file_handler)

    return logger


def log_with_context(logger, level: str, message: str, run_id: Optional[str] = None,
                     data: Optional[Dict[str, Any]] = None):
    log_level = getattr(logging, level.upper())
    if not logger.isEnabledFor(log_level):
        return
    record = logger.makeRecord(logger.name, log_level, '', 0, message, (), None)

    if run_id:
        record.run_id = run_id

    if data:
        record.data = data

    logger.handle(record)
