"""Configuration, scenario runners and the command-line interface."""
from .config import ScenarioSpec, load_config, parse_config
from .scenarios import convergence_report, run_scenario, sweep

__all__ = ["ScenarioSpec", "load_config", "parse_config", "run_scenario", "convergence_report", "sweep"]
