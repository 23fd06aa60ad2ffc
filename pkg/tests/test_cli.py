import filecmp
import json
import os

import pandas as pd
import pytest

from adapters.dataset_store import read_dataset
from main import EXIT_DATA, EXIT_OK, EXIT_USAGE, main

SMALL_CV = ["--outer-folds", "3", "--outer-repeats", "1", "--inner-folds", "2", "--inner-repeats", "1",
            "--ranks", "4", "--cost-grid", "1,100"]


def _synth_classes(path, seed=1):
    return main(["synth", "--out", str(path), "--classes", "3", "--per-class", "6", "--channels", "5",
                 "--samples", "50", "--noise", "0.05", "--seed", str(seed)])


@pytest.fixture
def classes_dir(tmp_path):
    path = tmp_path / "classes"
    assert _synth_classes(path) == EXIT_OK
    return path


def _same_tree(left, right):
    comparison = filecmp.dircmp(left, right)
    if comparison.left_only or comparison.right_only or comparison.diff_files or comparison.funny_files:
        return False
    _, mismatch, errors = filecmp.cmpfiles(left, right, comparison.common_files, shallow=False)
    return not mismatch and not errors and all(
        _same_tree(os.path.join(left, d), os.path.join(right, d)) for d in comparison.common_dirs)


def test_synth_fig1_preset(tmp_path):
    assert main(["synth", "--preset", "fig1", "--out", str(tmp_path / "fig1")]) == EXIT_OK
    dataset = read_dataset(str(tmp_path / "fig1"))
    assert len(dataset) == 1
    assert dataset.n_channels == 81
    assert dataset.trials[0].n_samples == 500
    assert (tmp_path / "fig1" / "effective_config.yaml").exists()


def test_synth_is_byte_deterministic(tmp_path):
    assert _synth_classes(tmp_path / "a", seed=7) == EXIT_OK
    assert _synth_classes(tmp_path / "b", seed=7) == EXIT_OK
    assert _same_tree(str(tmp_path / "a"), str(tmp_path / "b"))


def test_non_empty_output_is_refused(tmp_path, classes_dir):
    marker = classes_dir / "manifest.json"
    before = marker.read_bytes()
    assert _synth_classes(classes_dir, seed=2) == EXIT_USAGE
    assert marker.read_bytes() == before
    assert main(["synth", "--out", str(classes_dir), "--force", "--classes", "2", "--per-class", "2",
                 "--channels", "3", "--samples", "20"]) == EXIT_OK
    assert len(read_dataset(str(classes_dir))) == 4


def test_usage_errors(tmp_path):
    assert main(["synth"]) == EXIT_USAGE
    assert main(["decode", "--out", str(tmp_path / "o")]) == EXIT_USAGE
    assert main(["unknown-command"]) == EXIT_USAGE
    assert main(["decode", "--classifier", "forest", "--out", str(tmp_path / "o")]) == EXIT_USAGE


def test_unwritable_output_path(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["synth", "--preset", "fig1", "--out", str(blocker / "sub")]) != EXIT_OK


def test_bad_dataset_is_a_data_error(tmp_path):
    broken = tmp_path / "broken"
    broken.mkdir()
    (broken / "manifest.json").write_text("{not json")
    assert main(["decode", "--dataset", str(broken), "--out", str(tmp_path / "o")]) == EXIT_DATA
    assert main(["decode", "--dataset", str(tmp_path / "absent"), "--out", str(tmp_path / "o")]) == EXIT_DATA
    assert not (tmp_path / "o").exists()


def test_featurize_writes_tables_and_skips_when_current(tmp_path):
    assert main(["synth", "--preset", "fig1", "--out", str(tmp_path / "fig1")]) == EXIT_OK
    out = tmp_path / "features"
    args = ["featurize", "--dataset", str(tmp_path / "fig1"), "--out", str(out), "--ranks", "10"]
    assert main(args) == EXIT_OK
    table = pd.read_csv(out / "features_rank10.csv")
    assert len(table) == 1
    assert len([c for c in table.columns if c.startswith("f")]) == 81

    stamp = os.stat(out / "records.json").st_mtime_ns
    assert main(args) == EXIT_OK
    assert os.stat(out / "records.json").st_mtime_ns == stamp

    assert main(args[:-1] + ["4"]) == EXIT_OK
    assert (out / "features_rank4.csv").exists()


def test_featurize_sdm_layout_length(tmp_path):
    assert main(["synth", "--preset", "fig1", "--out", str(tmp_path / "fig1")]) == EXIT_OK
    out = tmp_path / "features"
    assert main(["featurize", "--dataset", str(tmp_path / "fig1"), "--out", str(out), "--ranks", "10",
                 "--features", "sdm"]) == EXIT_OK
    table = pd.read_csv(out / "features_rank10.csv")
    assert len([c for c in table.columns if c.startswith("f")]) == 81 * 82 // 2


def test_decode_nested_classification(tmp_path, classes_dir):
    out = tmp_path / "decode"
    assert main(["decode", "--dataset", str(classes_dir), "--out", str(out)] + SMALL_CV) == EXIT_OK
    summary = json.loads((out / "summary.json").read_text())
    assert summary["task"] == "classification"
    assert 0.0 <= summary["mean"] <= 1.0
    assert len(pd.read_csv(out / "folds.csv")) == 3
    assert {"select", "fit", "predict", "total"} <= set(json.loads((out / "timings.json").read_text()))
    assert json.loads((out / "model.json").read_text())["kind"] == "linear"


def test_decode_kernel_matches_linear_sdm(tmp_path, classes_dir):
    linear = tmp_path / "linear"
    kernel = tmp_path / "kernel"
    base = ["decode", "--dataset", str(classes_dir)] + SMALL_CV
    assert main(base + ["--out", str(linear), "--features", "sdm"]) == EXIT_OK
    assert main(base + ["--out", str(kernel), "--features", "gram", "--classifier", "kernel-l2"]) == EXIT_OK
    assert pd.read_csv(linear / "folds.csv")["metric"].tolist() == pd.read_csv(kernel / "folds.csv")["metric"].tolist()


def test_decode_regression(tmp_path):
    data = tmp_path / "reg"
    assert main(["synth", "--task", "regression", "--trials", "24", "--targets", "2", "--channels", "5",
                 "--samples", "50", "--out", str(data)]) == EXIT_OK
    out = tmp_path / "decode"
    assert main(["decode", "--dataset", str(data), "--out", str(out), "--lambda-grid", "1e-3,1,1e3",
                 "--split-rule", "grouped"] + SMALL_CV) == EXIT_OK
    summary = json.loads((out / "summary.json").read_text())
    assert summary["task"] == "regression"
    assert summary["metric"] == "mean-correlation"


def test_decode_rank_sweep(tmp_path, classes_dir):
    out = tmp_path / "sweep"
    cv = SMALL_CV[:-4] + ["--ranks", "2,4", "--cost-grid", "1"]
    assert main(["decode", "--dataset", str(classes_dir), "--out", str(out), "--mode", "rank-sweep"] + cv) == EXIT_OK
    assert pd.read_csv(out / "rank_sweep.csv")["rank"].tolist() == [2, 4]


def test_permuted_labels_need_classification(tmp_path):
    data = tmp_path / "reg"
    assert main(["synth", "--task", "regression", "--trials", "12", "--channels", "4", "--samples", "30",
                 "--out", str(data)]) == EXIT_OK
    assert main(["decode", "--dataset", str(data), "--out", str(tmp_path / "o"), "--permute-labels"]) == EXIT_USAGE


@pytest.mark.parametrize("kind,table", [
    ("f-map", "f_map.csv"),
    ("reproducibility", "reproducibility.csv"),
    ("psd-corr", "psd_correlation.csv"),
])
def test_analyze_outputs(tmp_path, classes_dir, kind, table):
    out = tmp_path / kind
    assert main(["analyze", kind, "--dataset", str(classes_dir), "--out", str(out), "--rank", "4",
                 "--nfft", "64"]) == EXIT_OK
    assert (out / table).exists()
    assert json.loads((out / "summary.json").read_text())["kind"] == kind


def test_f_map_is_channel_square(tmp_path, classes_dir):
    out = tmp_path / "fmap"
    assert main(["analyze", "f-map", "--dataset", str(classes_dir), "--out", str(out), "--rank", "4"]) == EXIT_OK
    frame = pd.read_csv(out / "f_map.csv", index_col="channel")
    assert frame.shape == (5, 5)


def test_bench_writes_exponents(tmp_path):
    out = tmp_path / "bench"
    assert main(["bench", "--out", str(out), "--pipelines", "linear-l2,l1-sndm", "--n-values", "3,6",
                 "--repetitions", "3", "--channels", "4", "--samples", "32", "--rank", "4"]) == EXIT_OK
    exponents = pd.read_csv(out / "exponents.csv")
    assert list(exponents["pipeline"]) == ["linear-l2", "l1-sndm"]
    assert {"train_exponent", "predict_exponent"} <= set(exponents.columns)
    assert exponents[["train_exponent", "predict_exponent"]].notna().all().all()
    timings = pd.read_csv(out / "timings.csv")
    assert len(timings) == 8
    assert set(timings["repetitions"]) == {3}
    assert "machine" in json.loads((out / "environment.json").read_text())


def test_init_config_writes_loadable_defaults(tmp_path):
    path = tmp_path / "run.yaml"
    assert main(["init-config", "--out", str(path)]) == EXIT_OK
    assert main(["init-config", "--out", str(path)]) == EXIT_USAGE
    assert main(["init-config", "--out", str(path), "--force"]) == EXIT_OK
    out = tmp_path / "fig1"
    assert main(["synth", "--config", str(path), "--preset", "fig1", "--out", str(out)]) == EXIT_OK
    assert len(read_dataset(str(out))) == 1
