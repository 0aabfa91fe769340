import json

import pytest
from pydantic import ValidationError

from kbrw.config_loader import load_config, load_json, section
from kbrw.errors import ParameterError
from kbrw.schemas import BandTolerances, Caps, ExperimentConfig, ModelSpec, parse_grid


def test_model_spec_validation():
    spec = ModelSpec(family="two_point", params={"p": 0.1}, b=2)
    assert spec.calibrate is False
    with pytest.raises(ValidationError):
        ModelSpec(family="cauchy", params={}, b=2)
    with pytest.raises(ValidationError):
        ModelSpec(family="two_point", params={"p": 0.1}, b=1)


def test_caps_and_bands_from_config():
    caps = Caps.from_config()
    assert caps.max_generations == 10**6
    assert caps.max_population == 10**7
    assert BandTolerances.from_config().exact_ratio == 2.0
    with pytest.raises(ValidationError):
        Caps(max_population=0)


def test_config_files_load():
    config = load_config()
    assert config["solver"]["tree_block_size"] == 1024
    assert load_json("config/does_not_exist.json") == {}
    assert section("solver", {"extra": 1})["extra"] == 1


def test_model_file_resolves(tmp_path):
    cfg = ExperimentConfig(command="walk", model_file="config/models/two_point_b2.json", seed=1)
    assert cfg.model.family == "two_point"
    assert cfg.require_seed() == 1
    with pytest.raises(ValidationError):
        ExperimentConfig(command="walk", model_file=str(tmp_path / "missing.json"))


def test_seed_range_and_requirement():
    with pytest.raises(ValidationError):
        ExperimentConfig(command="brw", seed=2**64)
    with pytest.raises(ParameterError):
        ExperimentConfig(command="brw").require_seed()


def test_config_hash_ignores_workers_and_output(tmp_path):
    base = dict(command="tail-z", model_file="config/models/two_point_b2.json", seed=3, params={"grid": "10,100"})
    one = ExperimentConfig(workers=1, output_dir=str(tmp_path / "a"), **base)
    two = ExperimentConfig(workers=4, output_dir=str(tmp_path / "b"), **base)
    assert one.config_hash() == two.config_hash()
    other = ExperimentConfig(**{**base, "seed": 4})
    assert other.config_hash() != one.config_hash()


def test_parse_grid():
    assert parse_grid("10, 100,1e3") == [10.0, 100.0, 1000.0]
    with pytest.raises(ParameterError):
        parse_grid("100,10")
    with pytest.raises(ParameterError):
        parse_grid("a,b")


def test_config_dir_override(tmp_path, monkeypatch):
    (tmp_path / "solver.json").write_text(json.dumps({"tree_block_size": 7}))
    from kbrw.config import Config
    monkeypatch.setattr(Config, "CONFIG_DIR", str(tmp_path))
    assert section("solver", {"tree_block_size": 1024})["tree_block_size"] == 7


def test_model_spec_requires_family_params():
    with pytest.raises(ValidationError, match="missing sigma"):
        ModelSpec(family="gaussian", params={"mu": -1.0}, b=2)
    with pytest.raises(ValidationError, match="probs or weights"):
        ModelSpec(family="user_lattice", params={"support": [-1, 1]}, b=2)
    with pytest.raises(ValidationError, match="missing weights"):
        ModelSpec(family="user_lattice", params={"support": [-1, 1]}, b=2, calibrate=True)
    # calibrated closed-form families solve their free parameter
    assert ModelSpec(family="gaussian", params={}, b=2, calibrate=True).calibrate


def test_solver_and_caps_keys_are_read(tmp_path, monkeypatch):
    from kbrw.config import Config
    from kbrw.errors import ResourceError
    from kbrw.model.laws import TwoPointLaw
    from kbrw.walk.boundary import boundary_max_steps
    from kbrw.walk.lattice import LatticeStrip

    (tmp_path / "solver.json").write_text(json.dumps({"max_states": 20}))
    (tmp_path / "caps.json").write_text(json.dumps({"boundary_max_steps": 123}))
    monkeypatch.setattr(Config, "CONFIG_DIR", str(tmp_path))
    monkeypatch.setattr(Config, "MAX_STATES", 0)
    assert boundary_max_steps() == 123
    with pytest.raises(ResourceError):
        LatticeStrip.from_law(TwoPointLaw(0.5), 0, 30)
    monkeypatch.setattr(Config, "MAX_STATES", 40)
    assert LatticeStrip.from_law(TwoPointLaw(0.5), 0, 30).max_states == 40
