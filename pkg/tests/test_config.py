import pytest

from safnet.config import ConfigError, PRESETS, parse_config


def test_empty_file_takes_preset(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("# nothing\n\ndataset = two-moons\n")
    cfg = parse_config(p)
    assert (cfg.lam, cfg.v_th, cfg.beta, cfg.alpha, cfg.momentum) == (0.5, 1.0, 4.0, 0.05, 0.9)
    assert (cfg.batch_size, cfg.epochs, cfg.lr) == (128, 300, 0.1)


def test_override_beats_file(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("dataset = two-moons\nlr = 0.1\nhidden = 8, 4\nlambda = 1.0\n")
    cfg = parse_config(p, {"lr": "0.01"})
    assert cfg.lr == 0.01 and cfg.hidden == (8, 4) and cfg.lam == 1.0


def test_bogus_engine_lists_valid_ones():
    with pytest.raises(ConfigError, match="saf-e, saf-f, ottt-o, ottt-a"):
        parse_config(overrides={"dataset": "x", "engine": "bogus"})


def test_errors(tmp_path):
    with pytest.raises(ConfigError, match="unknown config key"):
        parse_config(overrides={"dataset": "x", "colour": "red"})
    with pytest.raises(ConfigError, match="cannot parse"):
        parse_config(overrides={"dataset": "x", "epochs": "many"})
    with pytest.raises(ConfigError, match="no dataset"):
        parse_config()
    p = tmp_path / "c.cfg"
    p.write_text("dataset two-moons\n")
    with pytest.raises(ConfigError, match=":1:"):
        parse_config(p)
    with pytest.raises(ConfigError):
        parse_config(overrides={"dataset": "x"}, preset="nope")


def test_desk_preset_keeps_reference_optimizer_values():
    cfg = parse_config(preset="desk-moons")
    base = PRESETS["paper-c"]
    assert cfg.lr == base["lr"] and cfg.momentum == base["momentum"] and cfg.T == base["T"]
    assert cfg.dataset == "two-moons" and cfg.epochs == 50 and cfg.seed == 0


def test_booleans():
    cfg = parse_config(overrides={"dataset": "x", "accumulate": "yes", "normalize": "off"})
    assert cfg.accumulate is True and cfg.normalize is False
    with pytest.raises(ConfigError):
        parse_config(overrides={"dataset": "x", "accumulate": "maybe"})
