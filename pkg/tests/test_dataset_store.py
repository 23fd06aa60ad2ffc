import os

import numpy as np
import pandas as pd
import pytest

from adapters.dataset_store import (CsvDatasetReader, DatasetReaderFactory, ManifestDatasetReader, read_dataset,
                                    read_trial_data, write_dataset, write_trial)
from core.errors import ConfigError, DataError
from core.models import TrialMatrix


def test_trial_file_round_trip(tmp_path, rng):
    trial = TrialMatrix(data=rng.standard_normal((3, 7)), dt=0.002)
    path = str(tmp_path / "trial.bin")
    write_trial(trial, path)
    assert os.path.getsize(path) == 16 + 3 * 7 * 8
    assert np.array_equal(read_trial_data(path), trial.data)


def test_short_and_truncated_trial_files(tmp_path, rng):
    short = tmp_path / "short.bin"
    short.write_bytes(b"\x01\x02")
    with pytest.raises(DataError, match="header"):
        read_trial_data(str(short))

    path = str(tmp_path / "trial.bin")
    write_trial(TrialMatrix(data=rng.standard_normal((2, 4)), dt=1.0), path)
    with open(path, "r+b") as file:
        file.truncate(16 + 8 * 7)
    with pytest.raises(DataError, match="declares 2x4"):
        read_trial_data(path)


def test_class_dataset_round_trip(tmp_path, class_dataset):
    path = write_dataset(class_dataset, str(tmp_path / "classes"))
    loaded = read_dataset(path)
    assert len(loaded) == len(class_dataset)
    assert loaded.dt == class_dataset.dt
    assert np.array_equal(loaded.labels, class_dataset.labels)
    assert np.array_equal(loaded.groups, class_dataset.groups)
    assert loaded.targets is None
    assert loaded.metadata == class_dataset.metadata
    assert all(np.array_equal(a.data, b.data) for a, b in zip(loaded.trials, class_dataset.trials))
    assert loaded.trials[0].channel_ids == class_dataset.trials[0].channel_ids


def test_regression_dataset_round_trip(tmp_path, regression_dataset):
    loaded = read_dataset(write_dataset(regression_dataset, str(tmp_path / "reg")))
    assert np.array_equal(loaded.targets, regression_dataset.targets)
    assert loaded.labels is None


def test_existing_output_needs_force(tmp_path, class_dataset):
    path = str(tmp_path / "classes")
    write_dataset(class_dataset, path)
    with pytest.raises(ConfigError):
        write_dataset(class_dataset, path)
    write_dataset(class_dataset, path, force=True)
    assert len(read_dataset(path)) == len(class_dataset)


def test_unsupported_manifest_format(tmp_path, class_dataset):
    path = write_dataset(class_dataset, str(tmp_path / "classes"))
    manifest = tmp_path / "classes" / "manifest.json"
    manifest.write_text(manifest.read_text().replace('"version": 1', '"version": 9'))
    with pytest.raises(DataError, match="Unsupported"):
        ManifestDatasetReader().read(path)


def _write_csv_dataset(directory, rng, rows):
    directory.mkdir()
    for row in rows:
        pd.DataFrame(rng.standard_normal((3, 10))).to_csv(directory / row["file"], header=False, index=False)
    pd.DataFrame(rows).to_csv(directory / "index.csv", index=False)


def test_csv_import(tmp_path, rng):
    rows = [{"file": f"t{i}.csv", "label": i % 2, "target_a": float(i), "target_b": -float(i)} for i in range(4)]
    _write_csv_dataset(tmp_path / "csv", rng, rows)
    loaded = read_dataset(str(tmp_path / "csv"), dt=0.004)
    assert loaded.dt == 0.004
    assert loaded.labels.tolist() == [0, 1, 0, 1]
    assert loaded.targets[:, 1].tolist() == [0.0, -1.0, -2.0, -3.0]
    assert loaded.n_channels == 3


def test_csv_import_needs_dt(tmp_path, rng):
    _write_csv_dataset(tmp_path / "csv", rng, [{"file": "t0.csv"}])
    with pytest.raises(DataError, match="sampling interval"):
        DatasetReaderFactory.create(str(tmp_path / "csv"))
    assert isinstance(DatasetReaderFactory.create(str(tmp_path / "csv"), dt=1.0), CsvDatasetReader)


def test_partially_labelled_csv_is_rejected(tmp_path, rng):
    rows = [{"file": "t0.csv", "label": 0}, {"file": "t1.csv", "label": None}]
    _write_csv_dataset(tmp_path / "csv", rng, rows)
    with pytest.raises(DataError, match="label"):
        read_dataset(str(tmp_path / "csv"), dt=1.0)


def test_missing_dataset_directory(tmp_path):
    with pytest.raises(DataError, match="does not exist"):
        read_dataset(str(tmp_path / "absent"))
    (tmp_path / "empty").mkdir()
    with pytest.raises(DataError, match="No manifest.json"):
        read_dataset(str(tmp_path / "empty"))
