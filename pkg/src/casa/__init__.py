"""Continual active learning with pseudo-domain detection on synthetic image streams."""

from .config import ExperimentConfig, parse_config
from .controller import (
    CasaController,
    RunResult,
    run_casa,
    run_joint,
    run_naive_al,
    run_per_domain,
)
from .stream import generate_experiment
from .style import StyleEmbedder

__version__ = "0.1.0"

__all__ = [
    "CasaController",
    "ExperimentConfig",
    "RunResult",
    "StyleEmbedder",
    "generate_experiment",
    "parse_config",
    "run_casa",
    "run_joint",
    "run_naive_al",
    "run_per_domain",
]
