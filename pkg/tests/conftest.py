from pathlib import Path

import pytest

from casa.config import loads, parse_config

ROOT = Path(__file__).resolve().parents[1]
DEFAULT_CONFIG = ROOT / "configs" / "default.yaml"

# criterion lines reported by test_acceptance, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []

SMALL_YAML = """
stream:
  pretrain: 40
  val_per_domain: 10
  test_per_domain: 10
  domains:
    - {name: A, gamma: 1.0, noise_seed: 10, sample_noise: 0.03}
    - {name: B, gamma: 0.7, noise_amplitude: 0.03, noise_seed: 11, sample_noise: 0.03}
  schedule: [{A: 16}, {A: 8, B: 40}]
forest: {n_trees: 20}
learner: {pretrain_epochs: 3, offline_epochs: 3}
casa: {memory_size: 32, outlier_discovery_size: 10}
seeds: [0, 1]
"""


@pytest.fixture
def small_cfg():
    return loads(SMALL_YAML)


@pytest.fixture(scope="session")
def default_cfg():
    return parse_config(DEFAULT_CONFIG)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
