"""Run configuration: profiles, file parsing, override precedence."""

import os

import pytest

from awdlm.config import (DATA_ENV_VAR, PROFILES, RunConfig, config_from_text,
                          diff_configs, dump_config, make_config,
                          parse_config_file)


def test_defaults_match_standard_setup():
    cfg = RunConfig()
    assert (cfg.layers, cfg.hidden, cfg.embed) == (3, 1150, 400)
    assert cfg.lr == 30.0 and cfg.clip == 0.25
    assert cfg.optimizer == "ntasgd" and cfg.nonmono == 5
    assert cfg.bptt == 70 and cfg.bptt_p == 0.95 and cfg.bptt_std == 5.0


def test_profile_overlays_defaults():
    cfg = make_config(profile="tiny")
    assert cfg.layers == 2 and cfg.hidden == 64 and cfg.embed == 32
    assert cfg.alpha == 0.0 and cfg.wdrop == 0.0
    # untouched keys keep their defaults
    assert cfg.clip == RunConfig().clip


def test_unknown_profile_rejected():
    with pytest.raises(ValueError, match="profile"):
        make_config(profile="huge")


def test_config_file_overrides_profile(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# comment line\nlr = 3.5\nepochs = 7  # inline\n\n")
    cfg = make_config(profile="tiny", config_file=str(path))
    assert cfg.lr == 3.5 and cfg.epochs == 7
    assert cfg.hidden == 64  # profile keys survive


def test_flags_beat_config_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("lr = 3.5\n")
    cfg = make_config(config_file=str(path), overrides={"lr": 1.25})
    assert cfg.lr == 1.25


def test_none_overrides_are_ignored():
    cfg = make_config(overrides={"lr": None, "seed": 5})
    assert cfg.lr == RunConfig().lr and cfg.seed == 5


def test_unknown_key_rejected(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("momentum = 0.9\n")
    with pytest.raises(ValueError, match="momentum"):
        parse_config_file(str(path))


def test_malformed_line_rejected(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("lr 30\n")
    with pytest.raises(ValueError):
        parse_config_file(str(path))


def test_dump_and_parse_round_trip():
    cfg = make_config(profile="tiny", overrides={"seed": 77, "data_dir": "/tmp/x"})
    text = dump_config(cfg)
    back = config_from_text(text)
    assert back == cfg
    # dump is sorted and covers every field
    keys = [line.split(" = ")[0] for line in text.strip().split("\n")]
    assert keys == sorted(keys)


def test_diff_configs_names_changed_keys():
    a = make_config(profile="tiny")
    b = make_config(profile="tiny", overrides={"lr": 1.0, "seed": 9})
    assert set(diff_configs(a, b)) == {"lr", "seed"}


def test_env_var_supplies_data_dir(monkeypatch, tmp_path):
    monkeypatch.setenv(DATA_ENV_VAR, str(tmp_path))
    cfg = make_config()
    assert cfg.resolved_data_dir() == str(tmp_path)
    assert cfg.corpus_path("train") == os.path.join(str(tmp_path), "train.txt")


def test_explicit_data_dir_beats_env(monkeypatch, tmp_path):
    monkeypatch.setenv(DATA_ENV_VAR, "/somewhere/else")
    cfg = make_config(overrides={"data_dir": str(tmp_path)})
    assert cfg.resolved_data_dir() == str(tmp_path)


def test_all_profiles_produce_valid_configs():
    for name in PROFILES:
        cfg = make_config(profile=name)
        assert cfg.epochs > 0 and cfg.batch > 0
