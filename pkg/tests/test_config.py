import pytest

from cfardet import config
from cfardet.config import ConfigError


def test_parse_comments_and_blank_lines():
    text = "# header\n\nexperiment = adaptive  # trailing\ntrain.steps=10\n"
    assert config.parse(text) == {"experiment": "adaptive", "train.steps": "10"}


@pytest.mark.parametrize("text", ["train.steps = 1\ntrain.steps = 2\n", "no equals sign\n"])
def test_parse_errors(text):
    with pytest.raises(ConfigError):
        config.parse(text)


def test_defaults_per_experiment():
    table = config.resolve({})
    assert table["experiment"] == "dc-noise" and table["seed"] == 0
    assert table["eval.detectors"] == ("glrt_dc", "net", "cfarnet")
    assert "theory.asym_n" in config.resolve({"experiment": "theory"})


def test_coercion():
    table = config.resolve({"train.alpha": "0, 0.5, 2", "train.steps": "7", "train.resample": "no",
                            "model.noise": "contaminated", "train.hidden": "16,16"})
    assert table["train.alpha"] == (0.0, 0.5, 2.0)
    assert table["train.steps"] == 7 and table["train.resample"] is False
    assert table["model.noise"] == "contaminated" and table["train.hidden"] == (16, 16)


@pytest.mark.parametrize("entries", [{"experiment": "radar"}, {"train.step": "5"}, {"train.steps": "many"},
                                     {"train.resample": "maybe"}, {"model.n_sec": "4"}, {"seed": "-1"}])
def test_rejections(entries):
    with pytest.raises(ConfigError):
        config.resolve(entries)


def test_seed_precedence():
    assert config.resolve({"seed": "4"}, seed=9, env_seed="7")["seed"] == 9
    assert config.resolve({"seed": "4"}, env_seed="7")["seed"] == 4
    assert config.resolve({}, env_seed="7")["seed"] == 7
    assert config.resolve({}, env_seed="")["seed"] == 0


@pytest.mark.parametrize("experiment", config.EXPERIMENTS)
def test_dump_round_trip(experiment):
    table = config.resolve({"experiment": experiment, "seed": "3"})
    assert config.resolve(config.parse(config.dump(table))) == table


def test_section():
    table = config.resolve({"experiment": "theory"})
    sec = config.section(table, "theory")
    assert sec["asym_n"] == 100 and all("." not in k for k in sec)
