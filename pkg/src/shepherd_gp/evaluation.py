"""Fitness, large-trial statistics and the generalisation scenarios."""

from __future__ import annotations

import json
import math
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .controllers import Controller, Evolved, TerminalSet
from .episode import Seed, run_episode
from .expr import ExprTree
from .sim_core import Geometry, SimConfig, SpawnRegion


def _map(fn, jobs, workers: int) -> list:
    # kernels release the GIL, so threads give real parallelism; order is kept
    if workers <= 1:
        return [fn(j) for j in jobs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs))


def captured_counts(controller: Controller, cfg: SimConfig, seeds: Sequence[Seed],
                    workers: int = 1) -> list[int]:
    geometry = Geometry.from_config(cfg)
    return _map(lambda s: run_episode(controller, cfg, geometry, s).captured, seeds, workers)


@dataclass(frozen=True)
class FitnessSpec:
    sim_cfg: SimConfig = field(default_factory=SimConfig)
    sims_per_eval: int = 10
    seeds: tuple[Seed, ...] | None = None

    def __post_init__(self):
        if self.sims_per_eval < 1:
            raise ValueError("sims_per_eval must be >= 1")

    def seed_list(self) -> list[Seed]:
        if self.seeds is not None:
            return list(self.seeds)
        return [(0, k) for k in range(self.sims_per_eval)]


def fitness(controller: Controller, spec: FitnessSpec, workers: int = 1) -> float:
    """Mean captured fraction over the episodes listed in ``spec``."""
    seeds = spec.seed_list()
    total = sum(captured_counts(controller, spec.sim_cfg, seeds, workers))
    return total / (len(seeds) * spec.sim_cfg.n_sheep)


class FitnessEvaluator:
    """Batch fitness function for :func:`gp_engine.evolve`.

    Every (tree, seed) episode is an independent job; results are reduced as
    integer capture counts so the value does not depend on ``workers``.
    """

    def __init__(self, sim_cfg: SimConfig, terminals: TerminalSet, workers: int = 1):
        terminals.check(sim_cfg)
        self.sim_cfg = sim_cfg
        self.terminals = terminals
        self.workers = workers
        self.geometry = Geometry.from_config(sim_cfg)

    def __call__(self, trees: Sequence[ExprTree], seeds: Sequence[Seed]) -> list[float]:
        controllers = [Evolved(t, self.terminals) for t in trees]
        jobs = [(c, s) for c in controllers for s in seeds]
        counts = _map(lambda j: run_episode(j[0], self.sim_cfg, self.geometry, j[1]).captured,
                      jobs, self.workers)
        k = len(seeds)
        denom = k * self.sim_cfg.n_sheep
        return [sum(counts[i * k:(i + 1) * k]) / denom for i in range(len(trees))]


@dataclass
class TrialReport:
    controller: str
    scenario: str
    n_trials: int
    mean: float
    std_error: float
    histogram: list[int]  # histogram[c] = trials that captured exactly c sheep

    @classmethod
    def from_counts(cls, counts: Sequence[int], n_sheep: int, controller: str = "",
                    scenario: str = "Default") -> "TrialReport":
        fractions = np.asarray(counts, dtype=np.float64) / n_sheep
        n = len(fractions)
        mean = int(np.sum(counts, dtype=np.int64)) / (n * n_sheep)
        sd = float(np.sqrt(np.sum((fractions - mean) ** 2) / (n - 1))) if n > 1 else 0.0
        hist = np.bincount(np.asarray(counts, dtype=np.int64), minlength=n_sheep + 1)
        return cls(controller, scenario, n, mean, sd / math.sqrt(n), hist.tolist())

    def csv_row(self) -> str:
        return f"{self.controller},{self.scenario},{self.n_trials},{self.mean!r},{self.std_error!r}"

    def to_json(self) -> str:
        return json.dumps(self.__dict__)


CSV_HEADER = "controller,scenario,n_trials,mean,std_error"


def trial_seeds(seed: int, n_trials: int) -> list[Seed]:
    return [(seed, i) for i in range(n_trials)]


def evaluate_trials(controller: Controller, sim_cfg: SimConfig, n_trials: int, seed: int,
                    workers: int = 1, scenario: str = "Default") -> TrialReport:
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    counts = captured_counts(controller, sim_cfg, trial_seeds(seed, n_trials), workers)
    return TrialReport.from_counts(counts, sim_cfg.n_sheep, getattr(controller, "name", ""), scenario)


@dataclass(frozen=True)
class ScenarioPreset:
    name: str
    overrides: dict

    def apply(self, cfg: SimConfig) -> SimConfig:
        return cfg.replace(**self.overrides)


PRESETS = (
    ScenarioPreset("Default", {}),
    ScenarioPreset("FewSheep", {"n_sheep": 5}),
    ScenarioPreset("ManySheep", {"n_sheep": 100}),
    ScenarioPreset("FastSheep", {"v_s": 3.0}),
    ScenarioPreset("WeakCluster", {"d_s": 5.0}),
    ScenarioPreset("LowerSpawn", {"sheep_spawn_region": SpawnRegion.LOWER_HALF}),
)
PRESETS_BY_NAME = {p.name: p for p in PRESETS}


def scenario_seed(seed: int, name: str) -> int:
    """Independent per-preset seed; Default keeps ``seed`` itself."""
    if name == "Default":
        return seed
    return int(np.random.SeedSequence([seed, zlib.crc32(name.encode())]).generate_state(1)[0])


def run_scenarios(controller: Controller, presets: Sequence[ScenarioPreset], n_trials: int, seed: int,
                  base_cfg: SimConfig | None = None, workers: int = 1) -> list[TrialReport]:
    base_cfg = base_cfg or SimConfig()
    return [evaluate_trials(controller, p.apply(base_cfg), n_trials, scenario_seed(seed, p.name),
                            workers, scenario=p.name)
            for p in presets]
