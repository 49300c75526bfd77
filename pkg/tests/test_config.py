import pytest

from casa.config import ConfigError, ExperimentConfig, dumps, loads, parse_config

from conftest import DEFAULT_CONFIG, ROOT


def test_default_config_parses(default_cfg):
    assert default_cfg.casa.beta_fraction == pytest.approx(1 / 20)
    assert [d.name for d in default_cfg.stream.domains] == ["A", "B", "C"]
    assert default_cfg.seeds == [0, 1, 2]


@pytest.mark.parametrize("beta", ["0", "0.0", "3/2", "-1/20"])
def test_beta_outside_unit_interval_rejected(beta):
    with pytest.raises(ConfigError, match="beta"):
        loads(f"casa: {{beta: {beta}}}")


def test_unknown_key_names_path():
    with pytest.raises(ConfigError, match=r"config\.casa: unknown key\(s\) kk"):
        loads("casa: {kk: 1}")
    with pytest.raises(ConfigError, match=r"config\.stream\.domains\[0\]"):
        loads("stream: {domains: [{name: A, gama: 1}]}")


def test_bad_types_and_values():
    with pytest.raises(ConfigError, match="memory_size"):
        loads("casa: {memory_size: 0}")
    with pytest.raises(ConfigError, match="memory_size"):
        loads("casa: {memory_size: many}")
    with pytest.raises(ConfigError, match="unknown domain"):
        loads("stream: {schedule: [{Z: 4}]}")
    with pytest.raises(ConfigError, match="not found"):
        parse_config(ROOT / "nope.yaml")


def test_sweep_grid_expands():
    cfg = parse_config(ROOT / "configs" / "sweep.yaml")
    grid = cfg.sweep.grid()
    assert len(grid) == 8
    assert {(p["beta"], p["k"]) for p in grid} == {
        (b, k) for b in ("1/20", "1/10", "1/8", "1/5") for k in (5.0, 7.0)
    }
    assert ExperimentConfig().sweep is None


def test_round_trip(default_cfg):
    assert loads(dumps(default_cfg)) == default_cfg
    sweep = parse_config(ROOT / "configs" / "sweep.yaml")
    assert loads(dumps(sweep)) == sweep
    assert loads(dumps(ExperimentConfig())) == ExperimentConfig()


def test_overrides_validated(default_cfg):
    assert default_cfg.with_overrides(k=7.0).casa.k == 7.0
    with pytest.raises(ConfigError):
        default_cfg.with_overrides(beta=0)


def test_shipped_default_matches_dataclass_defaults(default_cfg):
    fresh = parse_config(DEFAULT_CONFIG)
    assert fresh.casa == ExperimentConfig().casa
    assert fresh == default_cfg
