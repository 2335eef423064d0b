"""Dog controllers: evolved programs and the two hand-made baselines.

Each controller is turned into a small bundle of arrays (:class:`Compiled`)
so the episode kernel can query it without leaving numba.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .expr import D_MAX, ExprTree, Program, compile_tree, depth, max_param_index, run_program
from .sim_core import P_STEER, P_VD, Geometry, SimConfig, Vec2, WorldState


class TerminalSet(enum.Enum):
    SINGLE_DOG4 = ("SingleDog4", ("dog-x", "dog-y", "sheep-x", "sheep-y"))
    MULTI_DOG12 = ("MultiDog12", ("dog-x", "dog-y", "dog2-x", "dog2-y", "dog3-x", "dog3-y",
                                  "sheep-x", "sheep-y", "flock-x", "flock-y", "steer-x", "steer-y"))

    def __init__(self, label: str, labels: tuple[str, ...]):
        self.label = label
        self.labels = labels

    @property
    def arity(self) -> int:
        return len(self.labels)

    @property
    def code(self) -> int:
        return 0 if self is TerminalSet.SINGLE_DOG4 else 1

    @classmethod
    def for_dogs(cls, n_dogs: int) -> "TerminalSet":
        if n_dogs == 1:
            return cls.SINGLE_DOG4
        if n_dogs == 3:
            return cls.MULTI_DOG12
        raise ValueError(f"no default terminal set for {n_dogs} dogs (use 1 or 3)")

    @classmethod
    def parse(cls, name: str) -> "TerminalSet":
        for ts in cls:
            if name.lower() in (ts.label.lower(), ts.name.lower()):
                return ts
        raise ValueError(f"unknown terminal set {name!r}")

    def check(self, cfg: SimConfig) -> None:
        if self is TerminalSet.MULTI_DOG12 and cfg.n_dogs != 3:
            raise ValueError(f"n_dogs must be 3 for MultiDog12 (got {cfg.n_dogs})")


class PenRef(str, enum.Enum):
    """Point of the pen the steering point is lined up with."""

    CENTER = "center"
    CORNER = "corner"
    OPENING = "opening"

    def point(self, geometry: Geometry) -> Vec2:
        L, P = geometry.field_size, geometry.pen_size
        if self is PenRef.CENTER:
            return geometry.pen_center
        if self is PenRef.CORNER:
            return geometry.pen_corner
        return Vec2(P / 2.0, L - P)


KIND_EVOLVED, KIND_SIMPLE, KIND_RANDOM = 0, 1, 2
N_PARAMS_MAX = 12



@dataclass(frozen=True)
class Compiled:
    kind: int
    terminals: int
    codes: np.ndarray
    args: np.ndarray
    stack_size: int
    pen_ref: np.ndarray  # steering reference (x, y); SimpleDog appends its stand-off


_EMPTY_I = np.zeros(0, dtype=np.int64)
_EMPTY_F = np.zeros(0, dtype=np.float64)


@dataclass(frozen=True)
class Evolved:
    tree: ExprTree
    terminals: TerminalSet = TerminalSet.SINGLE_DOG4
    pen_ref: PenRef = PenRef.CENTER
    name: str = "evolved"
    _program: Program = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if depth(self.tree) > D_MAX:
            raise ValueError(f"tree depth {depth(self.tree)} exceeds {D_MAX}")
        if max_param_index(self.tree) >= self.terminals.arity:
            raise ValueError(f"tree references parameters beyond {self.terminals.label}")
        object.__setattr__(self, "_program", compile_tree(self.tree))

    def compile(self, geometry: Geometry) -> Compiled:
        p = self._program
        return Compiled(KIND_EVOLVED, self.terminals.code, p.codes, p.args, max(p.stack_size, 2),
                        np.array(self.pen_ref.point(geometry)))


@dataclass(frozen=True)
class SimpleDog:
    """Hand-written baseline: run at full force toward a point behind the nearest sheep.

    The point sits ``standoff`` units beyond the nearest free sheep on the ray
    from ``aim`` through that sheep, so the dog's repulsion pushes the sheep
    toward ``aim``. Only the single-dog inputs and fixed pen geometry are used.
    """

    standoff: float = 25.0
    aim: PenRef = PenRef.OPENING
    name: str = "simple"

    def compile(self, geometry: Geometry) -> Compiled:
        aim = self.aim.point(geometry)
        return Compiled(KIND_SIMPLE, TerminalSet.SINGLE_DOG4.code, _EMPTY_I, _EMPTY_F, 2,
                        np.array([aim.x, aim.y, self.standoff]))


@dataclass(frozen=True)
class RandDog:
    """Uniform random heading, magnitude uniform on ``[0, v_d]`` each step."""

    name: str = "random"

    def compile(self, geometry: Geometry) -> Compiled:
        return Compiled(KIND_RANDOM, TerminalSet.SINGLE_DOG4.code, _EMPTY_I, _EMPTY_F, 2,
                        np.zeros(2))


Controller = Evolved | SimpleDog | RandDog


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------

@njit(cache=True, nogil=True)
def _steering_point(sx, sy, ref_x, ref_y, offset):
    dx = sx - ref_x
    dy = sy - ref_y
    r = math.hypot(dx, dy)
    if r == 0.0:
        return sx, sy
    return sx + offset * dx / r, sy + offset * dy / r


@njit(cache=True, nogil=True)
def _nearest_free(sheep_pos, captured, x, y):
    best = -1
    best_d2 = 0.0
    for i in range(sheep_pos.shape[0]):
        if captured[i]:
            continue
        dx = sheep_pos[i, 0] - x
        dy = sheep_pos[i, 1] - y
        d2 = dx * dx + dy * dy
        if best < 0 or d2 < best_d2:
            best = i
            best_d2 = d2
    return best


@njit(cache=True, nogil=True)
def extract_kernel(sheep_pos, captured, dog_pos, k, phys, terminals, pen_ref, out):
    """Fill ``out`` with the terminal values seen by dog ``k``; returns arity."""
    x = dog_pos[k, 0]
    y = dog_pos[k, 1]
    near = _nearest_free(sheep_pos, captured, x, y)
    sx = sheep_pos[near, 0]
    sy = sheep_pos[near, 1]
    out[0] = x
    out[1] = y
    if terminals == 0:
        out[2] = sx
        out[3] = sy
        return 4

    # other dogs by ascending distance, ties to the lower index
    nd = dog_pos.shape[0]
    slot = 2
    taken = np.zeros(nd, dtype=np.bool_)
    taken[k] = True
    for _ in range(2):
        pick = -1
        pick_d2 = 0.0
        for j in range(nd):
            if taken[j]:
                continue
            dx = dog_pos[j, 0] - x
            dy = dog_pos[j, 1] - y
            d2 = dx * dx + dy * dy
            if pick < 0 or d2 < pick_d2:
                pick = j
                pick_d2 = d2
        if pick < 0:
            out[slot] = x
            out[slot + 1] = y
        else:
            taken[pick] = True
            out[slot] = dog_pos[pick, 0]
            out[slot + 1] = dog_pos[pick, 1]
        slot += 2

    mx = 0.0
    my = 0.0
    free = 0
    for i in range(sheep_pos.shape[0]):
        if not captured[i]:
            mx += sheep_pos[i, 0]
            my += sheep_pos[i, 1]
            free += 1
    out[6] = sx
    out[7] = sy
    out[8] = mx / free
    out[9] = my / free
    out[10], out[11] = _steering_point(sx, sy, pen_ref[0], pen_ref[1], phys[P_STEER])
    return 12


@njit(cache=True, nogil=True)
def dog_force_kernel(kind, terminals, codes, args, pen_ref, sheep_pos, captured, dog_pos, k,
                     phys, rand_draw, params, stack):
    """Force requested by dog ``k``. ``rand_draw`` holds two uniforms (RandDog only)."""
    if kind == KIND_RANDOM:
        angle = 2.0 * math.pi * rand_draw[0]
        mag = phys[P_VD] * rand_draw[1]
        return mag * math.cos(angle), mag * math.sin(angle)
    if kind == KIND_SIMPLE:
        extract_kernel(sheep_pos, captured, dog_pos, k, phys, 0, pen_ref, params)
        tx, ty = _steering_point(params[2], params[3], pen_ref[0], pen_ref[1], pen_ref[2])
        dx = tx - params[0]
        dy = ty - params[1]
        r = math.hypot(dx, dy)
        if r == 0.0:
            return 0.0, 0.0
        return phys[P_VD] * dx / r, phys[P_VD] * dy / r
    extract_kernel(sheep_pos, captured, dog_pos, k, phys, terminals, pen_ref, params)
    fx, fy = run_program(codes, args, params, stack)
    if not math.isfinite(fx):
        fx = 0.0
    if not math.isfinite(fy):
        fy = 0.0
    return fx, fy


# ---------------------------------------------------------------------------
# python-level API
# ---------------------------------------------------------------------------

def extract_params(state: WorldState, dog_index: int, cfg: SimConfig, geometry: Geometry | None = None,
                   terminals: TerminalSet | None = None, pen_ref: PenRef = PenRef.CENTER) -> list[float]:
    geometry = geometry or Geometry.from_config(cfg)
    terminals = terminals or TerminalSet.for_dogs(cfg.n_dogs)
    if state.captured.all():
        raise ValueError("no free sheep left")
    out = np.zeros(N_PARAMS_MAX)
    n = extract_kernel(state.sheep_pos, state.captured, state.dog_pos, dog_index,
                       cfg.physics_array(), terminals.code, np.array(pen_ref.point(geometry)), out)
    return out[:n].tolist()


def dog_force(controller: Controller, state: WorldState, dog_index: int, cfg: SimConfig,
              geometry: Geometry | None = None, rng: np.random.Generator | None = None) -> Vec2:
    """Force one dog asks for on ``state``. ``rng`` is only read by RandDog."""
    geometry = geometry or Geometry.from_config(cfg)
    c = controller.compile(geometry)
    draw = rng.random(2) if c.kind == KIND_RANDOM else np.zeros(2)
    return Vec2(*dog_force_kernel(c.kind, c.terminals, c.codes, c.args, c.pen_ref,
                                  state.sheep_pos, state.captured, state.dog_pos, dog_index,
                                  cfg.physics_array(), draw, np.zeros(N_PARAMS_MAX),
                                  np.zeros(c.stack_size)))


def parse_controller(spec: str, terminals: TerminalSet) -> Controller:
    """Resolve ``simple``, ``random`` or ``evolved:<path.sexp>``."""
    from .expr import parse

    if spec == "simple":
        return SimpleDog()
    if spec == "random":
        return RandDog()
    if spec.startswith("evolved:"):
        path = spec.split(":", 1)[1]
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
        return Evolved(parse(text, terminals.labels), terminals, name=path)
    raise ValueError(f"unknown controller {spec!r}")
