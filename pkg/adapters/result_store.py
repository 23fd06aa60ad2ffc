"""Output files: atomic run directories, CSV tables, JSON summaries, models and feature stores."""
import hashlib
import json
import logging
import os
import shutil
import tempfile
from contextlib import contextmanager
from typing import Any, Dict, Iterator, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
import yaml

from core.errors import ConfigError, DataError
from core.models import KernelModel, LinearModel, Regularization

logger = logging.getLogger(__name__)

FLOAT_FORMAT = '%.17g'
EFFECTIVE_CONFIG = 'effective_config.yaml'


def _jsonable(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    if hasattr(value, 'value'):
        return value.value
    raise TypeError(f"Cannot serialize {type(value).__name__}")


@contextmanager
def atomic_directory(path: str, force: bool = False) -> Iterator[str]:
    """Build a directory under a temporary name and move it into place on success.

    An existing non-empty ``path`` is refused unless ``force`` is set. On
    any error the temporary directory is removed and ``path`` is untouched.
    """
    path = os.path.abspath(path)
    if os.path.isdir(path) and os.listdir(path) and not force:
        raise ConfigError(f"Output directory {path} is not empty, use --force to overwrite")
    if os.path.exists(path) and not os.path.isdir(path):
        raise ConfigError(f"Output path {path} exists and is not a directory")
    parent = os.path.dirname(path)
    try:
        os.makedirs(parent, exist_ok=True)
        staging = tempfile.mkdtemp(prefix=f".{os.path.basename(path)}.", dir=parent)
    except OSError as e:
        raise DataError(f"Cannot write to {parent}: {e}") from e

    try:
        yield staging
        if os.path.exists(path):
            shutil.rmtree(path)
        os.replace(staging, path)
    except BaseException:
        shutil.rmtree(staging, ignore_errors=True)
        raise
    logger.info(f"Wrote {path}")


def write_csv(rows: Union[pd.DataFrame, Sequence[Dict[str, Any]]], path: str) -> None:
    frame = rows if isinstance(rows, pd.DataFrame) else pd.DataFrame(list(rows))
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)


def write_matrix_csv(matrix: np.ndarray, labels: Sequence[str], path: str) -> None:
    """Square matrix with channel names on both axes."""
    frame = pd.DataFrame(np.asarray(matrix), index=list(labels), columns=list(labels))
    frame.index.name = 'channel'
    frame.to_csv(path, float_format=FLOAT_FORMAT)


def write_json(payload: Dict[str, Any], path: str) -> None:
    with open(path, 'w') as file:
        json.dump(payload, file, indent=2, sort_keys=True, default=_jsonable)
        file.write('\n')


def read_json(path: str) -> Dict[str, Any]:
    try:
        with open(path, 'r') as file:
            return json.load(file)
    except (OSError, json.JSONDecodeError) as e:
        raise DataError(f"Cannot read {path}: {e}") from e


def write_effective_config(config: Dict[str, Any], directory: str) -> str:
    path = os.path.join(directory, EFFECTIVE_CONFIG)
    with open(path, 'w') as file:
        yaml.safe_dump(json.loads(json.dumps(config, default=_jsonable)), file, default_flow_style=False,
                       sort_keys=True)
    return path


def save_model(model: Union[LinearModel, KernelModel], path: str) -> None:
    write_json(model.to_dict(), path)


def load_model(path: str) -> Union[LinearModel, KernelModel]:
    payload = read_json(path)
    try:
        classes = None if payload.get('classes') is None else np.asarray(payload['classes'], dtype=int)
        pairs = tuple(tuple(p) for p in payload.get('pairs', []))
        if payload['kind'] == 'kernel':
            return KernelModel(
                coefficients=tuple(np.asarray(c, dtype=float) for c in payload['coefficients']),
                bias=np.asarray(payload['bias'], dtype=float),
                support_index=tuple(np.asarray(s, dtype=int) for s in payload['support_index']),
                training_index=np.asarray(payload['training_index'], dtype=int),
                cost=float(payload['hyperparameter']),
                classes=classes,
                pairs=pairs,
                provenance=payload.get('provenance', {}),
            )
        hyper = payload['hyperparameter']
        return LinearModel(
            weights=np.asarray(payload['weights'], dtype=float),
            bias=np.asarray(payload['bias'], dtype=float),
            regularization=Regularization(payload['regularization']),
            hyperparameter=np.asarray(hyper, dtype=float) if isinstance(hyper, list) else hyper,
            classes=classes,
            pairs=pairs,
            provenance=payload.get('provenance', {}),
            flags=tuple(payload.get('flags', [])),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise DataError(f"Model file {path} is malformed: {e}") from e


def content_hash(paths: Sequence[str], extra: Optional[Dict[str, Any]] = None) -> str:
    digest = hashlib.sha256()
    for path in sorted(paths):
        digest.update(os.path.basename(path).encode())
        with open(path, 'rb') as file:
            for chunk in iter(lambda: file.read(1 << 20), b''):
                digest.update(chunk)
    if extra is not None:
        digest.update(json.dumps(extra, sort_keys=True, default=_jsonable).encode())
    return digest.hexdigest()


class FeatureStore:
    """Per-rank feature tables plus a record file with provenance, errors and a content hash."""

    RECORDS = 'records.json'

    def __init__(self, directory: str):
        self.directory = directory

    @property
    def records_path(self) -> str:
        return os.path.join(self.directory, self.RECORDS)

    def stored_hash(self) -> Optional[str]:
        if not os.path.exists(self.records_path):
            return None
        return read_json(self.records_path).get('content_hash')

    def is_current(self, digest: str) -> bool:
        return self.stored_hash() == digest

    @staticmethod
    def table_name(rank: Optional[int]) -> str:
        return 'features.csv' if rank is None else f'features_rank{rank}.csv'

    @staticmethod
    def write(staging: str, tables: Dict[Optional[int], pd.DataFrame], records: List[Dict[str, Any]],
              errors: List[Dict[str, Any]], digest: str, spec: Dict[str, Any]) -> None:
        for rank, frame in tables.items():
            write_csv(frame, os.path.join(staging, FeatureStore.table_name(rank)))
        write_json({'content_hash': digest, 'features': spec, 'records': records, 'errors': errors},
                   os.path.join(staging, FeatureStore.RECORDS))

    def read(self, rank: Optional[int]) -> pd.DataFrame:
        path = os.path.join(self.directory, self.table_name(rank))
        try:
            return pd.read_csv(path)
        except OSError as e:
            raise DataError(f"Cannot read feature table {path}: {e}") from e
