import pytest
import yaml

from fgssl import config as C
from fgssl.errors import ConfigError
from fgssl.image_aug import PRESETS


def test_defaults_build_valid_objects():
    cfg = C.build_config()
    tc = C.train_config(cfg)
    assert tc.steps == 300 and tc.seed == 0
    policy = C.aug_policy(cfg)
    assert policy.name == "dino"
    assert (policy.n_global, policy.global_size, policy.n_local, policy.local_size) == (2, 224, 10, 96)


def test_preset_params_materialized():
    cfg = C.build_config(overrides=[("aug.preset", "plant")])
    assert set(cfg["aug"]["params"]) == set(PRESETS["plant"])
    assert all(isinstance(v, dict) and "p" in v for v in cfg["aug"]["params"].values())


def test_unknown_keys_rejected(tmp_path):
    with pytest.raises(ConfigError, match="unknown config key 'train.stepz'"):
        C.build_config(overrides=[("train.stepz", 3)])
    (tmp_path / "c.yaml").write_text("encoder:\n  depth: 2\n  colour: red\n")
    with pytest.raises(ConfigError, match="encoder.colour"):
        C.build_config(tmp_path / "c.yaml")


def test_section_override_rejected():
    with pytest.raises(ConfigError, match="section"):
        C.build_config(overrides=[("train", 3)])


def test_bad_preset_lists_presets():
    with pytest.raises(ConfigError) as err:
        C.build_config(overrides=[("aug.preset", "nope")])
    for name in PRESETS:
        assert name in str(err.value)


def test_aug_param_override_and_typos():
    cfg = C.build_config(overrides=[("aug.preset", "plant"), ("aug.params.posterize.p", 0.5)])
    assert cfg["aug"]["params"]["posterize"]["p"] == 0.5
    with pytest.raises(ConfigError, match="unknown parameters"):
        C.build_config(overrides=[("aug.preset", "plant"), ("aug.params.posterize.q", 1)])
    with pytest.raises(ConfigError, match="not in preset"):
        C.build_config(overrides=[("aug.preset", "plant"), ("aug.params.solarize.p", 0.7)])


def test_overrides_parse():
    got = C.parse_overrides(["--train.steps", "5", "--aug.preset=plant", "--loss.tau", "0.2", "--eval.shots", "[1, 5]"])
    assert got == [("train.steps", 5), ("aug.preset", "plant"), ("loss.tau", 0.2), ("eval.shots", [1, 5])]
    with pytest.raises(ConfigError, match="missing a value"):
        C.parse_overrides(["--train.steps"])
    with pytest.raises(ConfigError, match="unexpected argument"):
        C.parse_overrides(["stray"])


def test_file_then_overrides_win(tmp_path):
    (tmp_path / "c.yaml").write_text("seed: 4\ntrain:\n  steps: 7\n")
    cfg = C.build_config(tmp_path / "c.yaml", [("train.steps", 9)])
    assert cfg["seed"] == 4 and cfg["train"]["steps"] == 9


def test_config_file_errors(tmp_path):
    (tmp_path / "list.yaml").write_text("- 1\n- 2\n")
    with pytest.raises(ConfigError, match="mapping"):
        C.build_config(tmp_path / "list.yaml")
    (tmp_path / "bad.yaml").write_text("a: [\n")
    with pytest.raises(ConfigError, match="not valid YAML"):
        C.build_config(tmp_path / "bad.yaml")
    with pytest.raises(ConfigError, match="cannot read"):
        C.build_config(tmp_path / "missing.yaml")


def test_invalid_values_surface_as_config_errors():
    cfg = C.build_config(overrides=[("train.batch_size", 0)])
    with pytest.raises(ConfigError):
        C.train_config(cfg)


def test_snapshot_reloads_to_same_config(tmp_path):
    cfg = C.build_config(overrides=[("aug.preset", "plant"), ("seed", 11), ("train.steps", 4)])
    path = C.write_snapshot(cfg, tmp_path, "train")
    assert yaml.safe_load(path.read_text())["command"] == "train"
    again = C.build_config(path)
    assert again == cfg
    assert C.train_config(again) == C.train_config(cfg)


def test_snapshot_then_switch_preset(tmp_path):
    cfg = C.build_config(overrides=[("aug.preset", "dino")])
    path = C.write_snapshot(cfg, tmp_path, "train")
    switched = C.build_config(path, [("aug.preset", "plant")])
    assert set(switched["aug"]["params"]) == set(PRESETS["plant"])


def test_output_dir_resolution(tmp_path, monkeypatch):
    monkeypatch.delenv(C.OUTPUT_ROOT_ENV, raising=False)
    cfg = C.build_config()
    assert C.output_dir(cfg, "train").as_posix() == "fgssl_runs/train"
    monkeypatch.setenv(C.OUTPUT_ROOT_ENV, str(tmp_path))
    assert C.output_dir(cfg, "embed") == tmp_path / "embed"
    cfg["output_dir"] = str(tmp_path / "x")
    assert C.output_dir(cfg, "embed") == tmp_path / "x"
