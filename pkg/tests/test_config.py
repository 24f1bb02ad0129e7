import pytest

from fpie import config
from fpie.models import GeneratorConfig


def test_defaults_round_trip():
    text = config.dump(config.DEFAULTS)
    assert config.parse_text(text) == config.DEFAULTS


def test_grammar(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# comment\n\nseed = 7   # trailing\ngen.use_prelu = yes\ndisc.strides = 2,1\n")
    cfg = config.load(path, {"seed": "9"})
    assert cfg["seed"] == 9
    assert cfg["gen.use_prelu"] is True
    assert cfg["disc.strides"] == (2, 1)


def test_unknown_key_named(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("sed = 1\n")
    with pytest.raises(config.ConfigError, match="'sed'"):
        config.load(path)
    with pytest.raises(config.ConfigError, match="'gen.blokcs'"):
        config.load(None, {"gen.blokcs": "2"})


@pytest.mark.parametrize("line", ["seed", "seed = x", "deterministic = maybe", "lr = fast"])
def test_bad_lines(line):
    with pytest.raises(config.ConfigError, match="1"):
        config.parse_text(line)


def test_sections():
    cfg = config.load(None, {"gen.variant": "baseline", "gen.base_channels": "32", "gen.max_channels": "32"})
    gen = config.generator_config(cfg)
    assert gen.variant == "baseline" and gen.base_channels == 32
    assert config.generator_config(config.DEFAULTS) == GeneratorConfig()
    assert config.loss_weights(config.DEFAULTS).tv == 400.0


def test_hash_ignores_order():
    a = {"seed": 1, "lr": 0.1}
    assert config.config_hash(a) == config.config_hash(dict(reversed(list(a.items()))))
    assert config.config_hash(a) != config.config_hash({"seed": 2, "lr": 0.1})
