import json

import pytest

from cocoa_lab.config import ConfigError, ExperimentConfig, apply_override, build_config, load_file


class TestExperimentConfig:
    def test_unknown_keys_rejected(self):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict({"scenario": "train", "learning_rate": 1})

    def test_scenario_required(self):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict({"seeds": [0]})

    @pytest.mark.parametrize("kw", [{"seeds": [-1]}, {"seeds": "0"}, {"batch_size": 0}, {"num_batches": -2},
                                    {"sample_count": 1}, {"estimators": "reinforce"}, {"params": []}])
    def test_field_checks(self, kw):
        with pytest.raises(ConfigError):
            ExperimentConfig(scenario="train", **kw)

    def test_int_seed_becomes_list(self):
        assert ExperimentConfig(scenario="x", seeds=3).seeds == [3]

    def test_snapshot_round_trip_and_id(self):
        cfg = ExperimentConfig(scenario="train", seeds=[1, 2], params={"a": 1})
        again = ExperimentConfig.from_dict(json.loads(cfg.snapshot()))
        assert again == cfg
        assert again.experiment_id == cfg.experiment_id
        assert cfg.experiment_id.startswith("train-")
        assert ExperimentConfig(scenario="train", seeds=[1]).experiment_id != cfg.experiment_id

    def test_id_ignores_output_directory(self):
        assert ExperimentConfig(scenario="t", out="a").experiment_id == ExperimentConfig(scenario="t", out="b").experiment_id


class TestOverrides:
    def test_dotted_yaml_values(self):
        data = apply_override({}, "params.length=40")
        apply_override(data, "estimators=[reinforce, cocoa-reward]")
        assert data == {"params": {"length": 40}, "estimators": ["reinforce", "cocoa-reward"]}

    def test_exponent_floats_are_numbers(self):
        assert apply_override({}, "params.tolerance=1e-9") == {"params": {"tolerance": 1e-9}}

    @pytest.mark.parametrize("item", ["novalue", "=3", "a.b=1"])
    def test_bad_overrides(self, item):
        with pytest.raises(ConfigError):
            apply_override({"a": 5}, item)


class TestBuild:
    def test_precedence(self, tmp_path):
        f = tmp_path / "c.yaml"
        f.write_text("scenario: train\nseeds: [4]\nparams:\n  b: 2\n")
        cfg = build_config("train", f, ["params.c=3"], seed=9, out="o", defaults={"params": {"a": 1, "b": 0}})
        assert cfg.params == {"a": 1, "b": 2, "c": 3}
        assert cfg.seeds == [9] and cfg.out == "o"

    def test_scenario_mismatch(self, tmp_path):
        f = tmp_path / "c.json"
        f.write_text('{"scenario": "other"}')
        with pytest.raises(ConfigError):
            build_config("train", f)

    def test_load_errors(self, tmp_path):
        f = tmp_path / "bad.yaml"
        f.write_text("[1, 2")
        with pytest.raises(ConfigError):
            load_file(f)
        f.write_text("- 1\n- 2\n")
        with pytest.raises(ConfigError):
            load_file(f)
        f.write_text("")
        assert load_file(f) == {}
