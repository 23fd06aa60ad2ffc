import pytest
import yaml

from config.config import (DEFAULT_CONFIG, build_config, create_default_config, get_env_config, load_config,
                           merge_config, validate_config)
from core.errors import ConfigError


def _write(tmp_path, payload):
    path = tmp_path / "run.yaml"
    path.write_text(yaml.safe_dump(payload))
    return str(path)


def test_defaults_are_valid():
    assert validate_config(DEFAULT_CONFIG) is DEFAULT_CONFIG


def test_unknown_keys_are_rejected(tmp_path):
    with pytest.raises(ConfigError, match="cv"):
        build_config(_write(tmp_path, {"schema_version": 1, "cv": {"outer_fold": 5}}))
    with pytest.raises(ConfigError):
        build_config(_write(tmp_path, {"schema_version": 1, "colour": "blue"}))


def test_schema_version_is_required(tmp_path):
    with pytest.raises(ConfigError):
        build_config(_write(tmp_path, {"seed": 3}))
    with pytest.raises(ConfigError):
        build_config(_write(tmp_path, {"schema_version": 2}))


def test_file_values_override_defaults(tmp_path):
    config = build_config(_write(tmp_path, {"schema_version": 1, "seed": 4, "cv": {"outer_folds": 5}}))
    assert config["seed"] == 4
    assert config["cv"]["outer_folds"] == 5
    assert config["cv"]["inner_folds"] == DEFAULT_CONFIG["cv"]["inner_folds"]


def test_precedence_of_environment_and_overrides(tmp_path, monkeypatch):
    monkeypatch.setenv("SDM_WORKERS", "3")
    monkeypatch.setenv("SDM_LOG_LEVEL", "debug")
    config = build_config(_write(tmp_path, {"schema_version": 1, "workers": 2}))
    assert config["workers"] == 3
    assert config["logging"]["level"] == "DEBUG"
    config = build_config(overrides={"workers": 5, "seed": None})
    assert config["workers"] == 5
    assert config["seed"] == DEFAULT_CONFIG["seed"]


def test_bad_environment_value(monkeypatch):
    monkeypatch.setenv("SDM_WORKERS", "many")
    with pytest.raises(ConfigError):
        get_env_config()


def test_invalid_override_values():
    with pytest.raises(ConfigError):
        build_config(overrides={"cv": {"cost_grid": [0.0]}})
    with pytest.raises(ConfigError):
        build_config(overrides={"features": {"layout": "raw"}})


def test_merge_keeps_base_for_none():
    merged = merge_config({"a": {"b": 1, "c": 2}}, {"a": {"b": None, "c": 3}})
    assert merged == {"a": {"b": 1, "c": 3}}


def test_missing_and_malformed_files(tmp_path):
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "absent.yaml"))
    broken = tmp_path / "broken.yaml"
    broken.write_text("cv: [unclosed")
    with pytest.raises(ConfigError):
        load_config(str(broken))
    empty = tmp_path / "empty.yaml"
    empty.write_text("")
    assert load_config(str(empty)) == {}


def test_default_config_file_round_trips(tmp_path):
    path = tmp_path / "nested" / "default.yaml"
    create_default_config(str(path))
    assert build_config(str(path)) == build_config()
