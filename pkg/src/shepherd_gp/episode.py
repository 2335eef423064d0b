"""Running whole episodes: spawn, step until done, count captures."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import IO, Sequence

import numpy as np
from numba import njit

from .controllers import KIND_RANDOM, N_PARAMS_MAX, Controller, dog_force_kernel
from .sim_core import Geometry, SimConfig, WorldState, spawn, step_kernel

Seed = int | Sequence[int]


@dataclass
class EpisodeResult:
    captured: int
    n_sheep: int
    steps_run: int
    trace: list[WorldState] | None = None

    @property
    def captured_fraction(self) -> float:
        return self.captured / self.n_sheep


@njit(cache=True, nogil=True)
def episode_kernel(sheep_pos, sheep_vel, captured, dog_pos, dog_vel, phys, steps,
                   kind, terminals, codes, args, pen_ref, stack_size, rand_draws,
                   record, tr_sheep, tr_sheep_vel, tr_cap, tr_dogs, tr_dog_vel):
    n = sheep_pos.shape[0]
    nd = dog_pos.shape[0]
    forces = np.zeros((nd, 2))
    params = np.zeros(N_PARAMS_MAX)
    stack = np.zeros(stack_size)
    no_draw = np.zeros(2)
    n_captured = 0
    for i in range(n):
        if captured[i]:
            n_captured += 1
    if record:
        tr_sheep[0] = sheep_pos
        tr_sheep_vel[0] = sheep_vel
        tr_cap[0] = captured
        tr_dogs[0] = dog_pos
        tr_dog_vel[0] = dog_vel
    t = 0
    while t < steps and n_captured < n:
        for k in range(nd):
            draw = rand_draws[t, k] if kind == KIND_RANDOM else no_draw
            fx, fy = dog_force_kernel(kind, terminals, codes, args, pen_ref, sheep_pos, captured,
                                      dog_pos, k, phys, draw, params, stack)
            forces[k, 0] = fx
            forces[k, 1] = fy
        n_captured += step_kernel(sheep_pos, sheep_vel, captured, dog_pos, dog_vel, forces, phys)
        t += 1
        if record:
            tr_sheep[t] = sheep_pos
            tr_sheep_vel[t] = sheep_vel
            tr_cap[t] = captured
            tr_dogs[t] = dog_pos
            tr_dog_vel[t] = dog_vel
    return n_captured, t


def episode_rng(seed: Seed) -> np.random.Generator:
    return np.random.default_rng(seed if isinstance(seed, int) else list(seed))


def run_episode(controller: Controller, cfg: SimConfig, geometry: Geometry | None = None,
                seed: Seed = 0, trace: bool = False) -> EpisodeResult:
    """Simulate one seeded episode.

    Stops after ``cfg.steps`` updates or as soon as every sheep is penned.
    With ``trace=True`` the result carries the state before the first step
    and after every step.
    """
    geometry = geometry or Geometry.from_config(cfg)
    rng = episode_rng(seed)
    state = spawn(cfg, geometry, rng)
    c = controller.compile(geometry)
    if c.kind == KIND_RANDOM:
        draws = rng.random((cfg.steps, cfg.n_dogs, 2))
    else:
        draws = np.zeros((0, cfg.n_dogs, 2))
    rows = cfg.steps + 1 if trace else 0
    tr_sheep = np.zeros((rows, cfg.n_sheep, 2))
    tr_sheep_vel = np.zeros((rows, cfg.n_sheep, 2))
    tr_cap = np.zeros((rows, cfg.n_sheep), dtype=np.bool_)
    tr_dogs = np.zeros((rows, cfg.n_dogs, 2))
    tr_dog_vel = np.zeros((rows, cfg.n_dogs, 2))
    phys = cfg.replace(field_size=geometry.field_size, pen_size=geometry.pen_size).physics_array()
    n_captured, t = episode_kernel(
        state.sheep_pos, state.sheep_vel, state.captured, state.dog_pos, state.dog_vel, phys,
        cfg.steps, c.kind, c.terminals, c.codes, c.args, c.pen_ref, c.stack_size, draws,
        trace, tr_sheep, tr_sheep_vel, tr_cap, tr_dogs, tr_dog_vel)
    frames = None
    if trace:
        frames = [WorldState(tr_sheep[i], tr_sheep_vel[i], tr_cap[i], tr_dogs[i], tr_dog_vel[i], i)
                  for i in range(t + 1)]
    return EpisodeResult(int(n_captured), cfg.n_sheep, int(t), frames)


def write_trace(frames: Sequence[WorldState], out: IO[str]) -> None:
    """One JSON object per frame: ``{step, sheep: [[x, y, captured]], dogs: [[x, y]]}``."""
    for f in frames:
        row = {
            "step": f.step,
            "sheep": [[float(p[0]), float(p[1]), bool(c)] for p, c in zip(f.sheep_pos, f.captured)],
            "dogs": [[float(p[0]), float(p[1])] for p in f.dog_pos],
        }
        out.write(json.dumps(row) + "\n")
