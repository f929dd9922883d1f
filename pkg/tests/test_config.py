import math

import pytest

from ivpb.config import ConfigError, default_config_text, parse_config


def test_defaults_materialized():
    cfg = parse_config("")
    assert cfg["grid.dim"] == 1
    assert cfg["grid.cells"] == 64
    assert cfg["grid.length"] == pytest.approx(2 * math.pi)
    assert cfg["velocity.nodes"] == 16
    assert cfg["velocity.v_max"] == 6.0
    assert cfg["physics.beta"] == 3.5
    assert cfg["collision.mode"] == "bgk"
    assert cfg["kinetic.epsilons"] == (0.2, 0.1, 0.05, 0.025)
    assert cfg["euler.modes"] == (1,)
    assert cfg["collision.conservation_fix"] is True


def test_overrides_and_comments():
    cfg = parse_config(
        """
        # a comment
        grid.cells = 32   # trailing comment
        collision.mode = hard_sphere
        kinetic.epsilons = 0.4, 0.2, 0.1
        euler.muscl = false
        """
    )
    assert cfg["grid.cells"] == 32
    assert cfg["collision.mode"] == "hard_sphere"
    assert cfg["kinetic.epsilons"] == (0.4, 0.2, 0.1)
    assert cfg["euler.muscl"] is False


def test_unknown_key_rejected_with_line():
    with pytest.raises(ConfigError, match=r"grid\.size: unknown key \(line 1\)"):
        parse_config("grid.size = 32")


def test_type_error_carries_key():
    with pytest.raises(ConfigError, match="grid.cells"):
        parse_config("grid.cells = many")


def test_beta_constraint_message():
    with pytest.raises(ConfigError, match="β ≥ 7/2 required"):
        parse_config("physics.beta = 2.0")


def test_odd_velocity_nodes_message():
    with pytest.raises(ConfigError, match="symmetric under v -> -v"):
        parse_config("velocity.nodes = 15")


def test_amplitude_bound():
    with pytest.raises(ConfigError, match="small-data"):
        parse_config("euler.amplitude = 0.5")


def test_missing_equals_rejected():
    with pytest.raises(ConfigError, match="expected 'key = value'"):
        parse_config("grid.cells 32")


def test_echo_roundtrip():
    cfg = parse_config("grid.cells = 48\nkinetic.T = 0.25")
    again = parse_config(cfg.echo())
    assert again.values == cfg.values
    assert again.echo() == cfg.echo()


def test_default_text_roundtrip():
    text = default_config_text()
    assert parse_config(text).echo() == text
