import pytest

from tenrmot.config import ModelConfig, RunConfig, dump_config, load_config, parse_overrides
from tenrmot.errors import ConfigError


def test_defaults():
    cfg = RunConfig()
    assert cfg.model.alpha == 0.8
    assert (cfg.model.conf_threshold, cfg.model.ref_threshold, cfg.model.miss_tolerance) == (0.7, 0.4, 5)
    assert (cfg.w_cls, cfg.w_l1, cfg.w_giou, cfg.w_ref, cfg.w_mask, cfg.w_dice) == (5, 2, 2, 2, 5, 5)


def test_overrides_are_typed():
    cfg = parse_overrides({"epochs": "3", "lr": "0.01", "model.use_ice": "off", "model__d": "16",
                           "model.heads": "2", "matching_cues": "box"})
    assert cfg.epochs == 3 and isinstance(cfg.epochs, int)
    assert cfg.lr == 0.01 and cfg.model.use_ice is False and cfg.model.d == 16
    assert cfg.matching_cues == "box"


@pytest.mark.parametrize("pairs", [
    {"nope": "1"},
    {"model.use_ice": "maybe"},
    {"epochs": "three"},
    {"model.alpha": "1.5"},
    {"model.d": "12"},
    {"matching_cues": "boxes"},
    {"match_targets": "all"},
    {"model.conf_threshold": "1"},
])
def test_bad_overrides(pairs):
    with pytest.raises((ConfigError, ValueError)):
        parse_overrides(pairs)


def test_dump_and_reload_round_trip(tmp_path):
    cfg = parse_overrides({"seed": "7", "model.alpha": "0.25", "model.use_lgd": "false", "out": "x/y"})
    path = tmp_path / "run.ini"
    path.write_text(dump_config(cfg))
    assert load_config(path) == cfg


def test_sectionless_file_is_run_section(tmp_path):
    path = tmp_path / "c.ini"
    path.write_text("epochs = 4\n# comment\nclip_len = 2\n")
    cfg = load_config(path)
    assert (cfg.epochs, cfg.clip_len) == (4, 2)


def test_model_validation():
    with pytest.raises(ConfigError):
        ModelConfig(d=32, heads=3)
    with pytest.raises(ConfigError):
        ModelConfig(height=60)
    with pytest.raises(ConfigError):
        RunConfig(clip_len=0)
