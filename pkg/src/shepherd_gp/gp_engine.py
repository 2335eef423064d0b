"""Generational GP over pair-rooted expression trees.

Ramped half-and-half initialisation, binary tournament selection, subtree
crossover, point (subtree-replacement) mutation and a single elite clone.
Fitness is supplied from outside as a batch function so evaluation can be
parallelised without the engine knowing about the simulator.
"""

from __future__ import annotations

import csv
import dataclasses
import enum
import io
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .expr import (ExprTree, Method, get_node, grow_random, depth, random_tree,
                   replace_at, select_node, serialize)

log = logging.getLogger(__name__)

Seed = tuple[int, ...]
FitnessFn = Callable[[Sequence[ExprTree], Sequence[Seed]], list[float]]
Sink = Callable[["GenerationRecord", list["Individual"]], None]

CROSSOVER_RETRIES = 10


class SeedMode(str, enum.Enum):
    FRESH_PER_GENERATION = "FreshPerGeneration"
    FIXED_SUITE = "FixedSuite"


@dataclass(frozen=True)
class GpConfig:
    population_size: int = 250
    generations: int = 220
    p_m: float = 0.05
    d_ramp: int = 5
    d_max: int = 10
    tournament_size: int = 2
    fitness_sims: int = 10
    master_seed: int = 0
    seed_mode: SeedMode = SeedMode.FRESH_PER_GENERATION
    const_sd: float = 1.0

    def __post_init__(self):
        if not isinstance(self.seed_mode, SeedMode):
            object.__setattr__(self, "seed_mode", SeedMode(self.seed_mode))
        self.validate()

    def validate(self) -> None:
        if self.population_size < 2:
            raise ValueError(f"population_size must be ≥ 2 (got {self.population_size})")
        if self.generations < 1:
            raise ValueError(f"generations must be ≥ 1 (got {self.generations})")
        if not 0.0 <= self.p_m <= 1.0:
            raise ValueError(f"p_m must be in [0, 1] (got {self.p_m})")
        if self.d_ramp < 0:
            raise ValueError(f"d_ramp must be ≥ 0 (got {self.d_ramp})")
        if self.d_max < self.d_ramp + 1:
            raise ValueError(f"d_max must be ≥ d_ramp + 1 (got {self.d_max})")
        if self.tournament_size < 1:
            raise ValueError(f"tournament_size must be ≥ 1 (got {self.tournament_size})")
        if self.fitness_sims < 1:
            raise ValueError(f"fitness_sims must be ≥ 1 (got {self.fitness_sims})")

    def replace(self, **changes) -> "GpConfig":
        return dataclasses.replace(self, **changes)


@dataclass
class Individual:
    tree: ExprTree
    fitness: float | None = None

    def clone(self) -> "Individual":
        return Individual(self.tree, self.fitness)


@dataclass
class GenerationRecord:
    generation: int
    max_fitness: float
    mean_fitness: float
    best_tree: ExprTree
    seeds: list[Seed]


@dataclass
class EvolutionLog:
    records: list[GenerationRecord] = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["generation", "max_fitness", "mean_fitness"])
        for r in self.records:
            w.writerow([r.generation, repr(r.max_fitness), repr(r.mean_fitness)])
        return buf.getvalue()


# ---------------------------------------------------------------------------
# operators
# ---------------------------------------------------------------------------

def init_population(cfg: GpConfig, arity: int, rng: np.random.Generator) -> list[Individual]:
    """First ceil(P/2) trees are full to ``d_ramp``, the rest grown."""
    n_full = (cfg.population_size + 1) // 2
    pop = []
    for i in range(cfg.population_size):
        method = Method.FULL if i < n_full else Method.GROW
        pop.append(Individual(random_tree(cfg.d_ramp, arity, method, rng, cfg.const_sd)))
    return pop


def tournament_select(pop: Sequence[Individual], k: int, rng: np.random.Generator) -> Individual:
    entrants = [pop[int(i)] for i in rng.integers(len(pop), size=k)]
    best = max(e.fitness for e in entrants)
    winners = [e for e in entrants if e.fitness == best]
    if len(winners) == 1:
        return winners[0]
    return winners[int(rng.integers(len(winners)))]


def crossover(a: Individual, b: Individual, cfg: GpConfig, rng: np.random.Generator) -> list[Individual]:
    """Swap one random non-root subtree between the parents.

    Children deeper than ``d_max`` are dropped, so 0, 1 or 2 come back.
    """
    pa = select_node(a.tree, rng)
    pb = select_node(b.tree, rng)
    sub_a = get_node(a.tree, pa)
    sub_b = get_node(b.tree, pb)
    kids = (replace_at(a.tree, pa, sub_b), replace_at(b.tree, pb, sub_a))
    return [Individual(t) for t in kids if depth(t) <= cfg.d_max]


def mutate(a: Individual, cfg: GpConfig, arity: int, rng: np.random.Generator) -> Individual:
    path = select_node(a.tree, rng)
    budget = cfg.d_max - len(path)
    return Individual(replace_at(a.tree, path, grow_random(budget, arity, Method.GROW, rng, cfg.const_sd)))


# ---------------------------------------------------------------------------
# evolution loop
# ---------------------------------------------------------------------------

def fitness_seeds(cfg: GpConfig, generation: int) -> list[Seed]:
    if cfg.seed_mode is SeedMode.FIXED_SUITE:
        return [(cfg.master_seed, 1, k) for k in range(cfg.fitness_sims)]
    return [(cfg.master_seed, 2, generation, k) for k in range(cfg.fitness_sims)]


def _evaluate(pop: list[Individual], seeds: list[Seed], fitness_fn: FitnessFn,
              cache: dict[str, float]) -> None:
    """Fill in missing fitness values, running each distinct tree once."""
    pending: dict[str, ExprTree] = {}
    keys = []
    for ind in pop:
        key = serialize(ind.tree)
        keys.append(key)
        if ind.fitness is None and key not in cache:
            pending.setdefault(key, ind.tree)
    if pending:
        values = fitness_fn(list(pending.values()), seeds)
        for key, value in zip(pending, values):
            if not 0.0 <= value <= 1.0 or math.isnan(value):
                raise ValueError(f"fitness {value} outside [0, 1]")
            cache[key] = value
    for ind, key in zip(pop, keys):
        if ind.fitness is None:
            ind.fitness = cache[key]


def _elite_index(pop: Sequence[Individual]) -> int:
    best = 0
    for i, ind in enumerate(pop):
        if ind.fitness > pop[best].fitness:
            best = i
    return best


def _breed(pop: list[Individual], cfg: GpConfig, arity: int, rng: np.random.Generator) -> list[Individual]:
    elite = pop[_elite_index(pop)].clone()
    if cfg.seed_mode is SeedMode.FRESH_PER_GENERATION:
        elite.fitness = None
    nxt = [elite]
    while len(nxt) < cfg.population_size:
        if rng.random() < cfg.p_m:
            parent = tournament_select(pop, cfg.tournament_size, rng)
            nxt.append(mutate(parent, cfg, arity, rng))
            continue
        a = tournament_select(pop, cfg.tournament_size, rng)
        b = tournament_select(pop, cfg.tournament_size, rng)
        for _ in range(1 + CROSSOVER_RETRIES):
            kids = crossover(a, b, cfg, rng)
            if kids:
                break
        else:
            kids = [Individual((a if a.fitness >= b.fitness else b).tree)]
        nxt.extend(kids[: cfg.population_size - len(nxt)])
    return nxt


def evolve(cfg: GpConfig, arity: int, fitness_fn: FitnessFn,
           sink: Sink | None = None) -> tuple[Individual, EvolutionLog]:
    """Run ``cfg.generations`` generations and return the best individual seen.

    ``fitness_fn(trees, seeds)`` must return, for each tree, its mean captured
    fraction over the episodes named by ``seeds``. ``sink`` is called after
    every generation with its record and the evaluated population.
    """
    rng = np.random.default_rng([cfg.master_seed, 0])
    evo_log = EvolutionLog()
    cache: dict[str, float] = {}
    best: Individual | None = None

    pop = init_population(cfg, arity, rng)
    for g in range(cfg.generations):
        seeds = fitness_seeds(cfg, g)
        if cfg.seed_mode is SeedMode.FRESH_PER_GENERATION:
            cache = {}
        _evaluate(pop, seeds, fitness_fn, cache)

        top = pop[_elite_index(pop)]
        record = GenerationRecord(g, top.fitness, math.fsum(i.fitness for i in pop) / len(pop),
                                  top.tree, seeds)
        evo_log.records.append(record)
        if best is None or top.fitness > best.fitness:
            best = top.clone()
        log.info("generation %d: max %.4f mean %.4f", g, record.max_fitness, record.mean_fitness)
        if sink is not None:
            sink(record, pop)
        if g + 1 < cfg.generations:
            pop = _breed(pop, cfg, arity, rng)
    return best, evo_log

