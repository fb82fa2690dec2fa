import json
from pathlib import Path

import pytest

from difpath.config import ExperimentConfig, config_from_dict, load_config
from difpath.errors import ConfigError, MissingFileError

GRID = sorted((Path(__file__).resolve().parents[1] / "configs" / "grid").glob("*.json"))


def test_default_round_trip():
    cfg = ExperimentConfig().validate()
    again = config_from_dict(json.loads(cfg.to_json()))
    assert again.to_dict() == cfg.to_dict()


@pytest.mark.parametrize("raw", [
    {"bogus": 1},
    {"model": {"kind": "DDPM", "depth": 3}},
    {"sampler": {"kind": "ddim", "n_steps": 10, "bogus": 0}},
    {"model": {"ae": {"what": 1}}},
])
def test_unknown_keys_rejected(raw):
    with pytest.raises(ConfigError):
        config_from_dict(raw)


@pytest.mark.parametrize("raw", [
    {"schema_version": 2},
    {"model": {"kind": "GAN"}},
    {"dataset": {"preset": None, "path": None}},
    {"dataset": {"path": "x"}},
    {"metrics": {"extractor": "inception"}},
    {"model": {"precision": "float16"}},
    {"sampler": {"kind": "ddim", "n_steps": 5000}},
    {"model": "DDPM"},
])
def test_invalid_values_rejected(raw):
    with pytest.raises(ConfigError):
        config_from_dict(raw)


def test_model_kind_case_insensitive():
    assert config_from_dict({"model": {"kind": "ldm"}}).model.kind == "LDM"


def test_load_errors(tmp_path):
    with pytest.raises(MissingFileError):
        load_config(tmp_path / "none.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(bad)


def test_grid_present():
    assert len(GRID) == 10


@pytest.mark.parametrize("path", GRID, ids=lambda p: p.stem)
def test_grid_files_load(path):
    cfg = load_config(path)
    assert json.loads(cfg.to_json()) == json.loads(path.read_text())
