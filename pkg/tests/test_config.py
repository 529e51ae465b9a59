import pytest

from ccpdml.config import (
    CCPSettings,
    ExperimentConfig,
    config_from_items,
    config_items,
    dump_config,
    load_config,
    parse_text,
)
from ccpdml.errors import ConfigError
from ccpdml.loads import available_presets, load_preset
from ccpdml.losses import LossKind


def write(tmp_path, text, name="run.cfg"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


def test_parse_text_strips_comments_and_blanks():
    items = parse_text("# header\n\nseed = 3  # trailing\nccp.lambda=1e-3\n")
    assert items == {"seed": "3", "ccp.lambda": "1e-3"}


@pytest.mark.parametrize("text", ["seed 3\n", "= 3\n"])
def test_parse_text_rejects_malformed_lines(text):
    with pytest.raises(ConfigError, match=":1:"):
        parse_text(text)


def test_parse_text_rejects_duplicates():
    with pytest.raises(ConfigError) as info:
        parse_text("seed = 1\nseed = 2\n")
    assert info.value.key == "seed"


def test_synth_preset_matches_defaults():
    assert load_config("preset:synth") == ExperimentConfig(out_dir="runs/synth")


@pytest.mark.parametrize("name", available_presets())
def test_every_preset_loads(name):
    config = load_config(f"preset:{name}")
    assert config.ccp.pool_budget >= config.ccp.proxies_per_class


def test_available_presets():
    assert {"synth", "synth_baseline", "synth_samples", "mnist", "cub", "cars196", "sop", "inshop"} <= set(
        available_presets())


def test_tuned_presets_carry_their_losses():
    cub = load_config("preset:cub")
    assert cub.loss.kind is LossKind.CONTRASTIVE_C2
    assert cub.loss["m_minus"] == 0.3841
    assert (cub.ccp.proxies_per_class, cub.ccp.pool_budget) == (8, 12)
    sop = load_config("preset:sop")
    assert (sop.ccp.proxies_per_class, sop.ccp.pool_budget) == (4, 7)
    assert load_config("preset:synth_baseline").mode == "baseline_proxy"
    assert load_config("preset:mnist").data.source == "mnist"


def test_extends_layers_over_preset(tmp_path):
    path = write(tmp_path, "extends = synth\nccp.lambda = 0.01\nloss.kind = triplet\n")
    config = load_config(path)
    assert config.ccp.lam == 0.01
    assert config.ccp.proxies_per_class == 4
    assert config.loss.kind is LossKind.TRIPLET
    assert config.loss["margin"] == 0.0961


def test_overrides_apply_last(tmp_path):
    path = write(tmp_path, "extends = synth\nseed = 1\n")
    config = load_config(path, overrides={"seed": 9, "out_dir": None})
    assert config.seed == 9 and config.out_dir == "runs/synth"


@pytest.mark.parametrize("line, key", [
    ("ccp.lamda = 1", "ccp.lamda"),
    ("ccp.lam = 1", "ccp.lam"),
    ("network.hidden = 4", "network.hidden"),
    ("ccp.lambda = abc", "ccp.lambda"),
    ("ccp.lambda = -1", "ccp.lambda"),
    ("ccp.pool_budget = 50", "ccp.pool_budget"),
    ("mode = fancy", "mode"),
    ("data.val_fraction = 0.005", "data.val_fraction"),
    ("data.val_fraction = 0.995", "data.val_fraction"),
])
def test_invalid_values_name_their_key(tmp_path, line, key):
    path = write(tmp_path, f"extends = synth\n{line}\n")
    with pytest.raises(ConfigError) as info:
        load_config(path)
    assert info.value.key == key
    assert str(info.value).startswith(key)


def test_invalid_loss_parameters(tmp_path):
    path = write(tmp_path, "extends = synth\nloss.kind = contrastive_c2\nloss.m_plus = 0.6\nloss.m_minus = 0.3\n")
    with pytest.raises(ConfigError):
        load_config(path)


def test_missing_file():
    with pytest.raises(ConfigError):
        load_config("/nonexistent/run.cfg")


def test_unknown_preset_lists_available():
    with pytest.raises(ConfigError, match="synth"):
        load_preset("nothing")


def test_unknown_extends(tmp_path):
    with pytest.raises(ConfigError) as info:
        load_config(write(tmp_path, "extends = nothing\n"))
    assert info.value.key == "extends"


def test_dump_reads_back_to_equal_config(tmp_path):
    config = load_config("preset:cars196", overrides={"seed": 5, "ccp.proximal": "false"})
    assert config.ccp.proximal is False
    assert load_config(write(tmp_path, dump_config(config))) == config
    assert config_from_items(config_items(config)) == config


def test_config_items_spell_lambda():
    items = config_items(ExperimentConfig(ccp=CCPSettings(lam=0.5)))
    assert items["ccp.lambda"] == 0.5
    assert "ccp.lam" not in items
    assert items["eval.alpha"] == 0.1
