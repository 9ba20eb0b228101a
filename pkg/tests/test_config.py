import pytest

from drn.config import ConfigError, dump_config, parse_config, valid_keys
from drn.train import TrainConfig, preset


def test_parse_types_and_comments():
    cfg = parse_config("""
        # toy run
        scale = 2        # factor
        lr = 1e-4
        iterations = 2e3
        use_dual = false
        loss = gp
    """)
    assert cfg == dict(scale=2, lr=1e-4, iterations=2000, use_dual=False, loss="gp")


def test_unknown_key_lists_valid_keys():
    with pytest.raises(ConfigError) as exc:
        parse_config("colour = red")
    for key in valid_keys():
        assert key in str(exc.value)


@pytest.mark.parametrize("text", ["scale 2", "scale = two", "use_dual = maybe"])
def test_bad_lines(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_every_key_has_default():
    assert set(valid_keys()) == set(TrainConfig.__dataclass_fields__)


def test_dump_round_trip():
    cfg = preset("toy")
    assert TrainConfig(**parse_config(dump_config(cfg))) == cfg
