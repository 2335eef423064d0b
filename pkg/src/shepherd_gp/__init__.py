"""Genetic programming of shepherding dog controllers in a flocking simulator."""

__version__ = "0.1.0"

from .controllers import Evolved, PenRef, RandDog, SimpleDog, TerminalSet, dog_force, extract_params
from .episode import EpisodeResult, run_episode
from .evaluation import PRESETS, TrialReport, evaluate_trials, fitness, run_scenarios
from .expr import ExprTree, parse, serialize
from .gp_engine import GpConfig, SeedMode, evolve
from .sim_core import Geometry, SimConfig, WorldState, spawn, step_world

__all__ = [
    "Evolved", "PenRef", "RandDog", "SimpleDog", "TerminalSet", "dog_force", "extract_params",
    "EpisodeResult", "run_episode", "PRESETS", "TrialReport", "evaluate_trials", "fitness",
    "run_scenarios", "ExprTree", "parse", "serialize", "GpConfig", "SeedMode", "evolve",
    "Geometry", "SimConfig", "WorldState", "spawn", "step_world",
]
