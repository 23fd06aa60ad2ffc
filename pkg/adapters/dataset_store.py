"""Dataset directories on disk.

The native layout is a ``manifest.json`` next to one binary file per
trial. Each trial file holds two little-endian uint64 values (P, L)
followed by P*L little-endian float64 values in row-major order.
A CSV layout (``index.csv`` plus one headerless P x L CSV per trial) can
be imported as well.
"""
import json
import logging
import os
from abc import ABC, abstractmethod
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd

from adapters.result_store import atomic_directory
from core.errors import DataError, InvalidArgumentError
from core.models import Dataset, TrialMatrix

logger = logging.getLogger(__name__)

MANIFEST = 'manifest.json'
CSV_INDEX = 'index.csv'
FORMAT_NAME = 'sdm-dataset'
FORMAT_VERSION = 1
HEADER_DTYPE = np.dtype('<u8')
DATA_DTYPE = np.dtype('<f8')


def write_trial(trial: TrialMatrix, path: str) -> None:
    with open(path, 'wb') as file:
        file.write(np.asarray([trial.n_channels, trial.n_samples], dtype=HEADER_DTYPE).tobytes())
        file.write(np.ascontiguousarray(trial.data, dtype=DATA_DTYPE).tobytes())


def read_trial_data(path: str) -> np.ndarray:
    try:
        raw = np.fromfile(path, dtype=np.uint8)
    except OSError as e:
        raise DataError(f"Cannot read trial file {path}: {e}") from e
    if raw.size < 2 * HEADER_DTYPE.itemsize:
        raise DataError(f"Trial file {path} is too short for its header")
    n_channels, n_samples = (int(v) for v in raw[:16].view(HEADER_DTYPE))
    body = raw[16:]
    if body.size != n_channels * n_samples * DATA_DTYPE.itemsize:
        raise DataError(f"Trial file {path} declares {n_channels}x{n_samples} but holds {body.size} data bytes")
    return body.view(DATA_DTYPE).reshape(n_channels, n_samples).copy()


def _manifest_entry(dataset: Dataset, index: int, file_name: str) -> Dict[str, Any]:
    entry: Dict[str, Any] = {'file': file_name}
    if dataset.labels is not None:
        entry['label'] = int(dataset.labels[index])
    if dataset.targets is not None:
        entry['target'] = [float(v) for v in dataset.targets[index]]
    if dataset.groups is not None:
        group = dataset.groups[index]
        entry['group'] = group.item() if isinstance(group, np.generic) else group
    return entry


def write_dataset_files(dataset: Dataset, directory: str) -> None:
    os.makedirs(os.path.join(directory, 'trials'))
    entries = []
    for index, trial in enumerate(dataset.trials):
        file_name = os.path.join('trials', f'trial_{index:05d}.bin')
        write_trial(trial, os.path.join(directory, file_name))
        entries.append(_manifest_entry(dataset, index, file_name))
    manifest = {
        'format': FORMAT_NAME,
        'version': FORMAT_VERSION,
        'name': dataset.name,
        'dt': dataset.dt,
        'channel_ids': list(dataset.channel_ids),
        'metadata': dataset.metadata,
        'trials': entries,
    }
    with open(os.path.join(directory, MANIFEST), 'w') as file:
        json.dump(manifest, file, indent=2, sort_keys=True)
        file.write('\n')


def write_dataset(dataset: Dataset, path: str, force: bool = False) -> str:
    """Write manifest and trial binaries; the directory appears only once complete."""
    with atomic_directory(path, force=force) as staging:
        write_dataset_files(dataset, staging)
    logger.info(f"Dataset {dataset.name} with {len(dataset)} trials written to {path}")
    return path


def _assemble(trials: List[TrialMatrix], entries: List[Dict[str, Any]], name: str,
              metadata: Dict[str, Any]) -> Dataset:
    def column(key: str) -> Optional[list]:
        present = [key in e and e[key] is not None for e in entries]
        if not any(present):
            return None
        if not all(present):
            raise DataError(f"Field '{key}' is present for some trials but not all")
        return [e[key] for e in entries]

    try:
        return Dataset(trials=trials, labels=column('label'), targets=column('target'), groups=column('group'),
                       name=name, metadata=metadata)
    except InvalidArgumentError as e:
        raise DataError(f"Inconsistent dataset {name}: {e}") from e


class DatasetReader(ABC):
    @abstractmethod
    def read(self, path: str) -> Dataset:
        """Load a dataset directory."""
        pass


class ManifestDatasetReader(DatasetReader):
    def read(self, path: str) -> Dataset:
        manifest_path = os.path.join(path, MANIFEST)
        try:
            with open(manifest_path, 'r') as file:
                manifest = json.load(file)
        except (OSError, json.JSONDecodeError) as e:
            raise DataError(f"Cannot read manifest {manifest_path}: {e}") from e
        if manifest.get('format') != FORMAT_NAME or manifest.get('version') != FORMAT_VERSION:
            raise DataError(f"Unsupported dataset format {manifest.get('format')!r} "
                            f"version {manifest.get('version')!r}")

        entries = manifest.get('trials') or []
        if not entries:
            raise DataError(f"Manifest {manifest_path} lists no trials")
        trials = []
        for entry in entries:
            data = read_trial_data(os.path.join(path, entry['file']))
            try:
                trials.append(TrialMatrix(data=data, dt=manifest['dt'], channel_ids=manifest.get('channel_ids', ())))
            except (InvalidArgumentError, KeyError) as e:
                raise DataError(f"Invalid trial {entry['file']}: {e}") from e
        return _assemble(trials, entries, manifest.get('name', os.path.basename(path)), manifest.get('metadata', {}))


class CsvDatasetReader(DatasetReader):
    """``index.csv`` with a ``file`` column and optional ``label``, ``group`` and ``target*`` columns."""

    def __init__(self, dt: float):
        self.dt = dt

    def read(self, path: str) -> Dataset:
        index_path = os.path.join(path, CSV_INDEX)
        try:
            index = pd.read_csv(index_path)
        except (OSError, pd.errors.ParserError) as e:
            raise DataError(f"Cannot read {index_path}: {e}") from e
        if 'file' not in index.columns:
            raise DataError(f"{index_path} needs a 'file' column")

        target_columns = sorted(c for c in index.columns if c.startswith('target'))
        trials = []
        entries = []
        for row in index.to_dict(orient='records'):
            try:
                data = pd.read_csv(os.path.join(path, row['file']), header=None).to_numpy(dtype=float)
                trials.append(TrialMatrix(data=data, dt=self.dt))
            except (OSError, ValueError, pd.errors.ParserError) as e:
                raise DataError(f"Invalid trial {row['file']}: {e}") from e
            entry: Dict[str, Any] = {'file': row['file']}
            if 'label' in row and not pd.isna(row['label']):
                entry['label'] = int(row['label'])
            if 'group' in row and not pd.isna(row['group']):
                entry['group'] = row['group']
            if target_columns:
                entry['target'] = [float(row[c]) for c in target_columns]
            entries.append(entry)
        return _assemble(trials, entries, os.path.basename(os.path.normpath(path)), {'source': 'csv'})


class DatasetReaderFactory:
    @staticmethod
    def create(path: str, dt: Optional[float] = None) -> DatasetReader:
        """Pick a reader from the files present in ``path``."""
        if os.path.exists(os.path.join(path, MANIFEST)):
            return ManifestDatasetReader()
        if os.path.exists(os.path.join(path, CSV_INDEX)):
            if dt is None:
                raise DataError(f"CSV dataset {path} needs a sampling interval (dt)")
            return CsvDatasetReader(dt)
        raise DataError(f"No {MANIFEST} or {CSV_INDEX} in {path}")


def read_dataset(path: str, dt: Optional[float] = None) -> Dataset:
    if not os.path.isdir(path):
        raise DataError(f"Dataset directory {path} does not exist")
    dataset = DatasetReaderFactory.create(path, dt).read(path)
    logger.info(f"Loaded dataset {dataset.name}: {len(dataset)} trials, P={dataset.n_channels}, dt={dataset.dt}")
    return dataset
