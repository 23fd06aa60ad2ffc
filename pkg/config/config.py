import copy
import logging
import os
from typing import Any, Dict, Optional

import jsonschema
import yaml

from core.errors import ConfigError

SCHEMA_VERSION = 1

DEFAULT_CONFIG: Dict[str, Any] = {
    'schema_version': SCHEMA_VERSION,
    'seed': 0,
    'workers': 1,
    'logging': {
        'level': 'INFO',
        'file': None,
        'json': False,
    },
    'dataset': {
        'path': None,
        'dt': None,  # only needed for CSV datasets
    },
    'synth': {
        'preset': None,  # 'fig1' or null
        'task': 'classification',
        'classes': 3,
        'per_class': 40,
        'trials': 120,
        'targets': 1,
        'channels': 20,
        'samples': 200,
        'dt': 0.001,
        'noise': 0.3,
    },
    'features': {
        'layout': 'snDM',
        'bands': [],
        'inner_layout': 'snDM',
        'car': False,
        'nfft': 512,
        'stack_factor': None,
        'ranks': [10],
    },
    'decode': {
        'task': 'auto',
        'classifier': 'linear-l2',
        'mode': 'nested',
        'permute_labels': False,
        'save_model': True,
    },
    'cv': {
        'outer_folds': 10,
        'outer_repeats': 10,
        'inner_folds': 10,
        'inner_repeats': 10,
        'split_rule': 'class-balanced',
        'cost_grid': [10.0 ** e for e in range(-1, 9)],
        'lambda_grid': [10.0 ** e for e in range(-8, 9)],
        'rank_grid': [25, 50, 100, 200, 300, 600, 900],
        'oversample': True,
        'track_indices': False,
    },
    'analyze': {
        'kind': 'f-map',
        'rank': 10,
        'z_transform': False,
    },
    'bench': {
        'pipelines': ['kernel-l2', 'linear-l2', 'l1-sndm'],
        'n_values': [50, 100, 200, 400, 800],
        'repetitions': 5,
        'channels': 8,
        'samples': 64,
        'rank': 8,
        'cost': 1.0,
        'noise': 0.05,
    },
}

_NUMBER = {'type': 'number'}
_NULLABLE_NUMBER = {'type': ['number', 'null']}
_POSITIVE_INT = {'type': 'integer', 'minimum': 1}
_LAYOUTS = ['snDM', 'seDM', 'snDM+seDM', 'sdm', 'full-vec', 'gram', 'band-concatenated', 'band-power']


def _section(properties: Dict[str, Any]) -> Dict[str, Any]:
    return {'type': 'object', 'additionalProperties': False, 'properties': properties}


CONFIG_SCHEMA: Dict[str, Any] = {
    'type': 'object',
    'additionalProperties': False,
    'required': ['schema_version'],
    'properties': {
        'schema_version': {'const': SCHEMA_VERSION},
        'seed': {'type': 'integer', 'minimum': 0},
        'workers': _POSITIVE_INT,
        'logging': _section({
            'level': {'enum': ['DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL']},
            'file': {'type': ['string', 'null']},
            'json': {'type': 'boolean'},
        }),
        'dataset': _section({
            'path': {'type': ['string', 'null']},
            'dt': _NULLABLE_NUMBER,
        }),
        'synth': _section({
            'preset': {'enum': [None, 'fig1']},
            'task': {'enum': ['classification', 'regression']},
            'classes': {'type': 'integer', 'minimum': 2},
            'per_class': _POSITIVE_INT,
            'trials': _POSITIVE_INT,
            'targets': _POSITIVE_INT,
            'channels': _POSITIVE_INT,
            'samples': {'type': 'integer', 'minimum': 2},
            'dt': {'type': 'number', 'exclusiveMinimum': 0},
            'noise': {'type': 'number', 'minimum': 0},
        }),
        'features': _section({
            'layout': {'enum': _LAYOUTS},
            'bands': {'type': 'array', 'items': {'type': 'array', 'items': _NUMBER, 'minItems': 2, 'maxItems': 2}},
            'inner_layout': {'enum': ['snDM', 'seDM', 'snDM+seDM']},
            'car': {'type': 'boolean'},
            'nfft': {'type': 'integer', 'minimum': 2},
            'stack_factor': {'type': ['integer', 'null'], 'minimum': 1},
            'ranks': {'type': 'array', 'items': _POSITIVE_INT, 'minItems': 1},
        }),
        'decode': _section({
            'task': {'enum': ['auto', 'classification', 'regression']},
            'classifier': {'enum': ['linear-l2', 'kernel-l2', 'l1-logistic']},
            'mode': {'enum': ['nested', 'rank-sweep', 'band']},
            'permute_labels': {'type': 'boolean'},
            'save_model': {'type': 'boolean'},
        }),
        'cv': _section({
            'outer_folds': {'type': 'integer', 'minimum': 2},
            'outer_repeats': _POSITIVE_INT,
            'inner_folds': {'type': 'integer', 'minimum': 2},
            'inner_repeats': _POSITIVE_INT,
            'split_rule': {'enum': ['class-balanced', 'grouped', 'time-sequence']},
            'cost_grid': {'type': 'array', 'items': {'type': 'number', 'exclusiveMinimum': 0}, 'minItems': 1},
            'lambda_grid': {'type': 'array', 'items': {'type': 'number', 'minimum': 0}, 'minItems': 1},
            'rank_grid': {'type': 'array', 'items': _POSITIVE_INT, 'minItems': 1},
            'oversample': {'type': 'boolean'},
            'track_indices': {'type': 'boolean'},
        }),
        'analyze': _section({
            'kind': {'enum': ['f-map', 'reproducibility', 'psd-corr']},
            'rank': _POSITIVE_INT,
            'z_transform': {'type': 'boolean'},
        }),
        'bench': _section({
            'pipelines': {'type': 'array', 'items': {'enum': ['kernel-l2', 'linear-l2', 'l1-sndm']},
                          'minItems': 1},
            'n_values': {'type': 'array', 'items': _POSITIVE_INT, 'minItems': 2},
            'repetitions': {'type': 'integer', 'minimum': 3},
            'channels': _POSITIVE_INT,
            'samples': {'type': 'integer', 'minimum': 2},
            'rank': _POSITIVE_INT,
            'cost': {'type': 'number', 'exclusiveMinimum': 0},
            'noise': {'type': 'number', 'minimum': 0},
        }),
    },
}


def load_config(config_path: str) -> Dict[str, Any]:
    try:
        with open(config_path, 'r') as file:
            config = yaml.safe_load(file)
    except FileNotFoundError as e:
        logging.error(f"Configuration file not found: {config_path}")
        raise ConfigError(f"Configuration file not found: {config_path}") from e
    except yaml.YAMLError as e:
        logging.error(f"Error parsing YAML configuration: {e}")
        raise ConfigError(f"Error parsing YAML configuration {config_path}: {e}") from e
    if config is None:
        return {}
    if not isinstance(config, dict):
        raise ConfigError(f"Configuration {config_path} must be a mapping")
    return config


def get_env_config() -> Dict[str, Any]:
    config: Dict[str, Any] = {}
    workers = os.environ.get('SDM_WORKERS')
    if workers:
        try:
            config['workers'] = int(workers)
        except ValueError as e:
            raise ConfigError(f"SDM_WORKERS must be an integer, got {workers!r}") from e
    level = os.environ.get('SDM_LOG_LEVEL')
    if level:
        config['logging'] = {'level': level.upper()}
    return config


def merge_config(base: Dict[str, Any], override: Optional[Dict[str, Any]]) -> Dict[str, Any]:
    """Recursive merge; ``None`` values in ``override`` leave ``base`` unchanged."""
    merged = copy.deepcopy(base)
    for key, value in (override or {}).items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = merge_config(merged[key], value)
        elif value is not None:
            merged[key] = copy.deepcopy(value)
    return merged


def validate_config(config: Dict[str, Any]) -> Dict[str, Any]:
    try:
        jsonschema.validate(instance=config, schema=CONFIG_SCHEMA)
    except jsonschema.ValidationError as e:
        location = '.'.join(str(p) for p in e.absolute_path) or '<root>'
        raise ConfigError(f"Invalid configuration at {location}: {e.message}") from e
    return config


def build_config(config_path: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    """Defaults, then the file, then environment, then command-line overrides; validated."""
    file_config = load_config(config_path) if config_path else {}
    if config_path:
        validate_config(file_config)
    config = merge_config(DEFAULT_CONFIG, file_config)
    config = merge_config(config, get_env_config())
    config = merge_config(config, overrides)
    return validate_config(config)


def create_default_config(output_path: str) -> None:
    directory = os.path.dirname(output_path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(output_path, 'w') as file:
        file.write(f"# sdm-decoding run configuration (schema version {SCHEMA_VERSION})\n")
        yaml.safe_dump(DEFAULT_CONFIG, file, default_flow_style=False, sort_keys=False)

    logging.info(f"Default configuration created at {output_path}")
