"""Field, pen, fences and the sheep/dog dynamics.

Coordinates: origin at the bottom-left corner of the field, y pointing up.
The pen is the ``pen_size`` square in the top-left corner; its bottom edge is
open, its right edge is an interior fence.

All hot-path physics lives in numba kernels operating on flat float64 arrays
so a full episode can run without touching the interpreter. The public
functions here are thin wrappers used by tests and by the trace tooling.
"""

from __future__ import annotations

import dataclasses
import enum
import logging
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from numba import njit

log = logging.getLogger(__name__)

EPS = 1e-9


class Vec2(NamedTuple):
    x: float
    y: float

    def norm(self) -> float:
        return math.hypot(self.x, self.y)


class SpawnRegion(str, enum.Enum):
    RIGHT_HALF = "RightHalf"
    LOWER_HALF = "LowerHalf"


@dataclass(frozen=True)
class SimConfig:
    f_a: float = 0.1
    f_r: float = 0.05
    f_d: float = 5.0
    f_f: float = 1.0
    d_s: float = 20.0
    d_d: float = 30.0
    d_f: float = 5.0
    v_s: float = 1.0
    v_d: float = 3.0
    dt: float = 1.0
    steps: int = 500
    field_size: float = 100.0
    pen_size: float = 25.0
    n_sheep: int = 20
    n_dogs: int = 1
    sheep_spawn_region: SpawnRegion = SpawnRegion.RIGHT_HALF
    steering_offset: float = 10.0

    def __post_init__(self):
        if not isinstance(self.sheep_spawn_region, SpawnRegion):
            object.__setattr__(self, "sheep_spawn_region", SpawnRegion(self.sheep_spawn_region))
        self.validate()

    def validate(self) -> None:
        """Raise ``ValueError`` naming the first offending field."""
        for name in ("d_s", "d_d", "d_f", "v_s", "v_d", "dt", "field_size", "pen_size",
                     "steering_offset"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be > 0 (got {value})")
        for name in ("f_a", "f_r", "f_d", "f_f"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1 (got {self.steps})")
        if self.n_sheep < 1:
            raise ValueError(f"n_sheep must be >= 1 (got {self.n_sheep})")
        if self.n_dogs < 1:
            raise ValueError(f"n_dogs must be >= 1 (got {self.n_dogs})")
        if self.pen_size >= self.field_size:
            raise ValueError("pen_size must be < field_size")

    def replace(self, **changes) -> "SimConfig":
        return dataclasses.replace(self, **changes)

    def physics_array(self) -> np.ndarray:
        """Pack the constants the kernels need, in ``P_*`` index order."""
        return np.array([
            self.f_a, self.f_r, self.f_d, self.f_f,
            self.d_s, self.d_d, self.d_f,
            self.v_s, self.v_d, self.dt,
            self.field_size, self.pen_size, self.steering_offset,
        ], dtype=np.float64)


# index layout of SimConfig.physics_array()
P_FA, P_FR, P_FD, P_FF, P_DS, P_DD, P_DF, P_VS, P_VD, P_DT, P_L, P_PEN, P_STEER = range(13)


@dataclass(frozen=True)
class Segment:
    start: Vec2
    end: Vec2


@dataclass(frozen=True)
class Geometry:
    """Fence layout derived from a config.

    ``fences`` holds the four field walls followed by the interior pen fence.
    The pen's bottom edge (``opening``) deliberately has no fence.
    """

    field_size: float
    pen_size: float
    fences: tuple[Segment, ...] = field(init=False)
    opening: Segment = field(init=False)

    def __post_init__(self):
        L, P = self.field_size, self.pen_size
        walls = (
            Segment(Vec2(0.0, 0.0), Vec2(0.0, L)),
            Segment(Vec2(L, 0.0), Vec2(L, L)),
            Segment(Vec2(0.0, 0.0), Vec2(L, 0.0)),
            Segment(Vec2(0.0, L), Vec2(L, L)),
            Segment(Vec2(P, L - P), Vec2(P, L)),
        )
        object.__setattr__(self, "fences", walls)
        object.__setattr__(self, "opening", Segment(Vec2(0.0, L - P), Vec2(P, L - P)))

    @classmethod
    def from_config(cls, cfg: SimConfig) -> "Geometry":
        return cls(cfg.field_size, cfg.pen_size)

    @property
    def pen_corner(self) -> Vec2:
        """Where captured sheep are parked."""
        return Vec2(0.0, self.field_size)

    @property
    def pen_center(self) -> Vec2:
        half = self.pen_size / 2.0
        return Vec2(half, self.field_size - half)

    def in_pen(self, x: float, y: float) -> bool:
        return _in_pen(x, y, self.field_size, self.pen_size)


@dataclass
class WorldState:
    """Positions and velocities of every agent after ``step`` updates."""

    sheep_pos: np.ndarray  # (n_sheep, 2)
    sheep_vel: np.ndarray  # (n_sheep, 2)
    captured: np.ndarray  # (n_sheep,) bool
    dog_pos: np.ndarray  # (n_dogs, 2)
    dog_vel: np.ndarray  # (n_dogs, 2)
    step: int = 0

    def copy(self) -> "WorldState":
        return WorldState(self.sheep_pos.copy(), self.sheep_vel.copy(), self.captured.copy(),
                          self.dog_pos.copy(), self.dog_vel.copy(), self.step)

    @property
    def n_captured(self) -> int:
        return int(self.captured.sum())

    def identical(self, other: "WorldState") -> bool:
        """Bitwise equality of every array plus the step counter."""
        return (self.step == other.step
                and all(np.array_equal(a, b) for a, b in zip(self._arrays(), other._arrays())))

    def _arrays(self):
        return (self.sheep_pos, self.sheep_vel, self.captured, self.dog_pos, self.dog_vel)


# ---------------------------------------------------------------------------
# force laws
# ---------------------------------------------------------------------------

@njit(cache=True, nogil=True)
def _cluster_force(dx, dy, f_a, f_r, d_s):
    """Force on a sheep from a neighbour at offset (dx, dy).

    Positive magnitude pulls toward the neighbour. Coincident sheep are
    treated as separated by EPS along +x, so the first one is pushed to -x.
    """
    r2 = dx * dx + dy * dy
    if r2 > d_s * d_s:
        return 0.0, 0.0
    r = math.sqrt(r2)
    if r < EPS:
        m = f_a - f_r * (d_s * d_s / (EPS * EPS) - 1.0)
        return -abs(m), 0.0
    m = f_a - f_r * (d_s * d_s / r2 - 1.0)
    return m * dx / r, m * dy / r


@njit(cache=True, nogil=True)
def _dog_force(dx, dy, f_d, d_d):
    """Repulsion on a sheep from a dog; (dx, dy) points from dog to sheep."""
    r2 = dx * dx + dy * dy
    if r2 > d_d * d_d:
        return 0.0, 0.0
    r = math.sqrt(r2)
    if r < EPS:
        return abs(f_d * (d_d * d_d / (EPS * EPS) - 1.0)), 0.0
    m = f_d * (d_d * d_d / r2 - 1.0)
    return m * dx / r, m * dy / r


@njit(cache=True, nogil=True)
def _wall_push(d_perp, f_f, d_f):
    if d_perp >= d_f:
        return 0.0
    return f_f * (d_f - d_perp) / d_f


@njit(cache=True, nogil=True)
def _fence_force(x, y, f_f, d_f, L, P):
    fx = _wall_push(x, f_f, d_f) - _wall_push(L - x, f_f, d_f)
    fy = _wall_push(y, f_f, d_f) - _wall_push(L - y, f_f, d_f)
    if L - P <= y <= L:
        push = _wall_push(abs(x - P), f_f, d_f)
        fx += push if x >= P else -push
    return fx, fy


@njit(cache=True, nogil=True)
def _in_pen(x, y, L, P):
    return 0.0 < x < P and L - P < y < L


# ---------------------------------------------------------------------------
# integration
# ---------------------------------------------------------------------------

@njit(cache=True, nogil=True)
def _cap_speed(vx, vy, vmax):
    speed = math.hypot(vx, vy)
    if speed > vmax:
        s = vmax / speed
        return vx * s, vy * s
    return vx, vy


@njit(cache=True, nogil=True)
def _move(pos, vel, i, dt, L, P):
    """Advance agent ``i`` by one step and resolve fence collisions in place."""
    x0 = pos[i, 0]
    y0 = pos[i, 1]
    x = x0 + vel[i, 0] * dt
    y = y0 + vel[i, 1] * dt
    if x < 0.0:
        x = 0.0
        vel[i, 0] = 0.0
    elif x > L:
        x = L
        vel[i, 0] = 0.0
    if y < 0.0:
        y = 0.0
        vel[i, 1] = 0.0
    elif y > L:
        y = L
        vel[i, 1] = 0.0
    # interior fence is zero-thickness: x < P is the pen side, x >= P the field
    # side, and an agent stopped on the pen side sits one ulp left of P
    was_left = x0 < P
    if was_left != (x < P):
        y_cross = y0 + (P - x0) / (x - x0) * (y - y0)
        if y_cross >= L - P:
            x = np.nextafter(P, -np.inf) if was_left else P
            vel[i, 0] = 0.0
    pos[i, 0] = x
    pos[i, 1] = y


@njit(cache=True, nogil=True)
def step_kernel(sheep_pos, sheep_vel, captured, dog_pos, dog_vel, dog_forces, phys):
    """One synchronous update, in place. Returns the number of new captures."""
    f_a, f_r, f_d, f_f = phys[P_FA], phys[P_FR], phys[P_FD], phys[P_FF]
    d_s, d_d, d_f = phys[P_DS], phys[P_DD], phys[P_DF]
    v_s, v_d, dt = phys[P_VS], phys[P_VD], phys[P_DT]
    L, P = phys[P_L], phys[P_PEN]
    n = sheep_pos.shape[0]
    nd = dog_pos.shape[0]

    force = np.zeros((n, 2))
    for i in range(n):
        if captured[i]:
            continue
        xi = sheep_pos[i, 0]
        yi = sheep_pos[i, 1]
        for j in range(i + 1, n):
            if captured[j]:
                continue
            fx, fy = _cluster_force(sheep_pos[j, 0] - xi, sheep_pos[j, 1] - yi, f_a, f_r, d_s)
            force[i, 0] += fx
            force[i, 1] += fy
            force[j, 0] -= fx
            force[j, 1] -= fy
        for k in range(nd):
            fx, fy = _dog_force(xi - dog_pos[k, 0], yi - dog_pos[k, 1], f_d, d_d)
            force[i, 0] += fx
            force[i, 1] += fy
        fx, fy = _fence_force(xi, yi, f_f, d_f, L, P)
        force[i, 0] += fx
        force[i, 1] += fy

    for i in range(n):
        if captured[i]:
            continue
        vx, vy = _cap_speed(sheep_vel[i, 0] + force[i, 0] * dt,
                            sheep_vel[i, 1] + force[i, 1] * dt, v_s)
        sheep_vel[i, 0] = vx
        sheep_vel[i, 1] = vy
    for k in range(nd):
        fx = dog_forces[k, 0]
        fy = dog_forces[k, 1]
        if not (math.isfinite(fx) and math.isfinite(fy)):
            fx = 0.0
            fy = 0.0
        vx, vy = _cap_speed(dog_vel[k, 0] + fx * dt, dog_vel[k, 1] + fy * dt, v_d)
        dog_vel[k, 0] = vx
        dog_vel[k, 1] = vy

    for i in range(n):
        if not captured[i]:
            _move(sheep_pos, sheep_vel, i, dt, L, P)
    for k in range(nd):
        _move(dog_pos, dog_vel, k, dt, L, P)

    new = 0
    for i in range(n):
        if not captured[i] and _in_pen(sheep_pos[i, 0], sheep_pos[i, 1], L, P):
            captured[i] = True
            sheep_pos[i, 0] = 0.0
            sheep_pos[i, 1] = L
            sheep_vel[i, 0] = 0.0
            sheep_vel[i, 1] = 0.0
            new += 1
    return new


# ---------------------------------------------------------------------------
# public wrappers
# ---------------------------------------------------------------------------

def sheep_cluster_force(p1, p2, cfg: SimConfig) -> Vec2:
    """Clustering force on the sheep at ``p1`` from the sheep at ``p2``."""
    return Vec2(*_cluster_force(float(p2[0] - p1[0]), float(p2[1] - p1[1]),
                                cfg.f_a, cfg.f_r, cfg.d_s))


def dog_repulsion_force(sheep, dog, cfg: SimConfig) -> Vec2:
    return Vec2(*_dog_force(float(sheep[0] - dog[0]), float(sheep[1] - dog[1]), cfg.f_d, cfg.d_d))


def fence_force(pos, geometry: Geometry, cfg: SimConfig) -> Vec2:
    """Sum of the perpendicular pushes from every fence closer than ``d_f``."""
    return Vec2(*_fence_force(float(pos[0]), float(pos[1]), cfg.f_f, cfg.d_f,
                              geometry.field_size, geometry.pen_size))


def step_world(state: WorldState, dog_forces, cfg: SimConfig, geometry: Geometry | None = None,
               rng=None) -> WorldState:
    """Return the state one step later; ``state`` is left untouched.

    ``rng`` is accepted for call-site symmetry with the controllers; the
    physics itself is deterministic.
    """
    geometry = geometry or Geometry.from_config(cfg)
    forces = np.array(dog_forces, dtype=np.float64).reshape(state.dog_pos.shape)
    bad = ~np.isfinite(forces).all(axis=1)
    if bad.any():
        log.warning("non-finite dog force for dogs %s replaced by zero", np.flatnonzero(bad).tolist())
        forces[bad] = 0.0
    phys = cfg.replace(field_size=geometry.field_size, pen_size=geometry.pen_size).physics_array()
    new = state.copy()
    step_kernel(new.sheep_pos, new.sheep_vel, new.captured, new.dog_pos, new.dog_vel, forces, phys)
    new.step += 1
    return new


def spawn(cfg: SimConfig, geometry: Geometry | None, rng: np.random.Generator) -> WorldState:
    """Random initial state.

    Dogs are placed uniformly in the pen at rest. Sheep are placed uniformly in
    the configured spawn region with a uniform heading and a speed uniform in
    ``[0, v_s]``. Draw order is fixed (dogs, then one row of four uniforms per
    sheep) so a seed pins the layout.
    """
    geometry = geometry or Geometry.from_config(cfg)
    L, P = geometry.field_size, geometry.pen_size
    u_dog = rng.random((cfg.n_dogs, 2))
    dog_pos = np.empty((cfg.n_dogs, 2))
    dog_pos[:, 0] = u_dog[:, 0] * P
    dog_pos[:, 1] = (L - P) + u_dog[:, 1] * P

    u = rng.random((cfg.n_sheep, 4))
    sheep_pos = np.empty((cfg.n_sheep, 2))
    if cfg.sheep_spawn_region is SpawnRegion.RIGHT_HALF:
        sheep_pos[:, 0] = L / 2 + u[:, 0] * (L / 2)
        sheep_pos[:, 1] = u[:, 1] * L
    else:
        sheep_pos[:, 0] = u[:, 0] * L
        sheep_pos[:, 1] = u[:, 1] * (L / 2)
    heading = 2.0 * np.pi * u[:, 2]
    speed = cfg.v_s * u[:, 3]
    sheep_vel = np.stack([speed * np.cos(heading), speed * np.sin(heading)], axis=1)
    return WorldState(sheep_pos, sheep_vel, np.zeros(cfg.n_sheep, dtype=bool),
                      dog_pos, np.zeros((cfg.n_dogs, 2)), 0)
