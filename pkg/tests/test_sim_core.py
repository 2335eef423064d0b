import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import brentq

from oracles import cluster_magnitude, dog_magnitude
from shepherd_gp.controllers import Evolved, RandDog, SimpleDog
from shepherd_gp.episode import run_episode
from shepherd_gp.expr import parse
from shepherd_gp.sim_core import (Geometry, SimConfig, SpawnRegion, Vec2, WorldState,
                                  dog_repulsion_force, fence_force, sheep_cluster_force, spawn,
                                  step_world)

CFG = SimConfig()
GEO = Geometry.from_config(CFG)


def state(sheep, sheep_vel=None, dogs=((90.0, 10.0),), dog_vel=None, captured=None):
    sheep = np.array(sheep, dtype=float).reshape(-1, 2)
    dogs = np.array(dogs, dtype=float).reshape(-1, 2)
    return WorldState(
        sheep,
        np.zeros_like(sheep) if sheep_vel is None else np.array(sheep_vel, dtype=float).reshape(-1, 2),
        np.zeros(len(sheep), dtype=bool) if captured is None else np.array(captured),
        dogs,
        np.zeros_like(dogs) if dog_vel is None else np.array(dog_vel, dtype=float).reshape(-1, 2),
    )


class TestConfig:
    def test_defaults(self):
        assert (CFG.f_a, CFG.f_r, CFG.f_d, CFG.f_f) == (0.1, 0.05, 5.0, 1.0)
        assert (CFG.d_s, CFG.d_d, CFG.d_f, CFG.v_s, CFG.v_d) == (20.0, 30.0, 5.0, 1.0, 3.0)
        assert (CFG.dt, CFG.steps, CFG.field_size, CFG.pen_size) == (1.0, 500, 100.0, 25.0)
        assert CFG.steering_offset == 10.0

    @pytest.mark.parametrize("change", [{"d_s": 0.0}, {"v_d": -1.0}, {"steps": 0},
                                        {"pen_size": 100.0}, {"n_sheep": 0}])
    def test_invalid(self, change):
        with pytest.raises(ValueError, match=next(iter(change)) if "pen" not in str(change) else "pen_size"):
            SimConfig(**change)

    def test_geometry(self):
        assert len(GEO.fences) == 5
        assert GEO.opening.start == Vec2(0.0, 75.0) and GEO.opening.end == Vec2(25.0, 75.0)
        # the opening is not one of the fences
        assert all({f.start, f.end} != {GEO.opening.start, GEO.opening.end} for f in GEO.fences)
        assert GEO.in_pen(10.0, 80.0) and not GEO.in_pen(10.0, 70.0) and not GEO.in_pen(30.0, 80.0)


class TestForces:
    def test_cluster_at_range_edge(self):
        f = sheep_cluster_force((0.0, 0.0), (20.0, 0.0), CFG)
        assert f.x == pytest.approx(0.1, abs=1e-12) and f.y == 0.0

    def test_cluster_equilibrium(self):
        # root found numerically from the bare magnitude law, not from the package
        r0 = brentq(cluster_magnitude, 5.0, 20.0, xtol=1e-14)
        assert r0 == pytest.approx(20 / math.sqrt(3), abs=1e-12)
        f = sheep_cluster_force((0.0, 0.0), (0.0, r0), CFG)
        assert f.norm() == pytest.approx(0.0, abs=1e-12)

    def test_cluster_repels_inside_equilibrium(self):
        f = sheep_cluster_force((0.0, 0.0), (5.0, 0.0), CFG)
        assert f.x == pytest.approx(cluster_magnitude(5.0)) and f.x < 0

    def test_cluster_out_of_range(self):
        assert sheep_cluster_force((0.0, 0.0), (25.0, 0.0), CFG) == (0.0, 0.0)

    def test_cluster_coincident_is_finite(self):
        f = sheep_cluster_force((3.0, 3.0), (3.0, 3.0), CFG)
        assert math.isfinite(f.x) and f.x < 0 and f.y == 0.0

    @given(st.floats(0, 100), st.floats(0, 100), st.floats(0, 100), st.floats(0, 100))
    def test_cluster_antisymmetric(self, x1, y1, x2, y2):
        if math.hypot(x1 - x2, y1 - y2) < 1e-6:
            return
        a = sheep_cluster_force((x1, y1), (x2, y2), CFG)
        b = sheep_cluster_force((x2, y2), (x1, y1), CFG)
        assert a.x == -b.x and a.y == -b.y

    def test_dog_at_range_edge(self):
        assert dog_repulsion_force((30.0, 0.0), (0.0, 0.0), CFG).norm() == pytest.approx(0.0, abs=1e-12)

    def test_dog_inside_range(self):
        r = 30 / math.sqrt(2)
        f = dog_repulsion_force((0.0, r), (0.0, 0.0), CFG)
        assert dog_magnitude(r) == pytest.approx(5.0, abs=1e-12)
        assert f.y == pytest.approx(5.0, abs=1e-12) and f.x == 0.0

    def test_dog_out_of_range(self):
        assert dog_repulsion_force((40.0, 0.0), (0.0, 0.0), CFG) == (0.0, 0.0)

    @pytest.mark.parametrize("pos, expected", [
        ((5.0, 50.0), (0.0, 0.0)),
        ((2.5, 50.0), (0.5, 0.0)),
        ((0.0, 50.0), (1.0, 0.0)),
        ((50.0, 50.0), (0.0, 0.0)),
        ((97.5, 50.0), (-0.5, 0.0)),
        ((50.0, 1.0), (0.0, 0.8)),
        ((50.0, 99.0), (0.0, -0.8)),
        ((27.5, 90.0), (0.5, 0.0)),   # interior fence, field side
        ((27.5, 70.0), (0.0, 0.0)),   # below the fence end: no foot on the segment
        ((2.5, 2.5), (0.5, 0.5)),     # corner: contributions add
    ])
    def test_fence(self, pos, expected):
        f = fence_force(pos, GEO, CFG)
        assert f.x == pytest.approx(expected[0], abs=1e-12)
        assert f.y == pytest.approx(expected[1], abs=1e-12)


class TestStep:
    def test_resting_sheep_unchanged(self):
        s0 = WorldState(np.array([[50.0, 50.0]]), np.zeros((1, 2)), np.zeros(1, bool),
                        np.zeros((0, 2)), np.zeros((0, 2)))
        s1 = step_world(s0, np.zeros((0, 2)), CFG.replace(n_dogs=1))
        assert np.array_equal(s1.sheep_pos, s0.sheep_pos) and np.array_equal(s1.sheep_vel, s0.sheep_vel)
        assert s1.step == s0.step + 1

    def test_input_state_untouched(self):
        s0 = state([[50.0, 50.0]], [[1.0, 0.0]])
        before = s0.copy()
        step_world(s0, [[1.0, 1.0]], CFG)
        assert s0.identical(before)

    def test_capture_through_opening(self):
        s1 = step_world(state([[10.0, 74.5]], [[0.0, 1.0]]), [[0.0, 0.0]], CFG)
        assert s1.captured[0]
        assert tuple(s1.sheep_pos[0]) == (0.0, 100.0) and tuple(s1.sheep_vel[0]) == (0.0, 0.0)

    def test_captured_sheep_frozen(self):
        s = state([[0.0, 100.0], [50.0, 50.0]], captured=[True, False], dogs=[[0.0, 90.0]])
        for _ in range(20):
            s = step_world(s, [[0.0, 0.0]], CFG)
        assert tuple(s.sheep_pos[0]) == (0.0, 100.0) and s.captured[0]

    def test_right_wall_clamp(self):
        cfg = CFG.replace(v_s=5.0)
        s1 = step_world(state([[99.0, 50.0]], [[5.0, 0.0]]), [[0.0, 0.0]], cfg)
        assert s1.sheep_pos[0, 0] == 100.0 and s1.sheep_vel[0, 0] == 0.0

    def test_interior_fence_blocks_sheep(self):
        cfg = CFG.replace(v_s=3.0)
        s1 = step_world(state([[26.0, 90.0]], [[-3.0, 0.0]]), [[0.0, 0.0]], cfg)
        assert s1.sheep_pos[0, 0] == 25.0 and s1.sheep_vel[0, 0] == 0.0
        assert not s1.captured[0]

    def test_interior_fence_blocks_dog_inside(self):
        s1 = step_world(state([[80.0, 20.0]], dogs=[[24.0, 90.0]]), [[3.0, 0.0]], CFG)
        assert s1.dog_pos[0, 0] < 25.0 and s1.dog_pos[0, 0] == pytest.approx(25.0)
        assert s1.dog_vel[0, 0] == 0.0
        # and it stays inside when pushed again
        s2 = step_world(s1, [[3.0, 0.0]], CFG)
        assert s2.dog_pos[0, 0] < 25.0

    def test_sheep_slips_under_fence_end(self):
        cfg = CFG.replace(v_s=3.0)
        s1 = step_world(state([[26.0, 73.0]], [[-1.5, 2.5]]), [[0.0, 0.0]], cfg)
        assert s1.captured[0]

    def test_dog_leaves_through_opening(self):
        s = state([[80.0, 20.0]], dogs=[[10.0, 77.0]])
        s = step_world(s, [[0.0, -3.0]], CFG)
        assert s.dog_pos[0, 1] == pytest.approx(74.0)

    def test_dog_speed_cap(self):
        s1 = step_world(state([[80.0, 20.0]], dogs=[[50.0, 50.0]]), [[100.0, 100.0]], CFG)
        assert np.hypot(*s1.dog_vel[0]) == pytest.approx(3.0)

    def test_non_finite_force_zeroed(self, caplog):
        s1 = step_world(state([[80.0, 20.0]], dogs=[[50.0, 50.0]]), [[math.inf, 1.0]], CFG)
        assert tuple(s1.dog_pos[0]) == (50.0, 50.0)
        assert "non-finite" in caplog.text


class TestSpawn:
    def test_default(self):
        s = spawn(CFG, GEO, np.random.default_rng(1))
        assert s.sheep_pos.shape == (20, 2) and s.dog_pos.shape == (1, 2)
        assert (s.sheep_pos[:, 0] >= 50).all()
        assert (s.dog_pos[:, 0] <= 25).all() and (s.dog_pos[:, 1] >= 75).all()
        assert (np.hypot(*s.sheep_vel.T) <= 1.0).all()
        assert not s.dog_vel.any() and not s.captured.any()

    def test_deterministic(self):
        a = spawn(CFG, GEO, np.random.default_rng(7))
        b = spawn(CFG, GEO, np.random.default_rng(7))
        assert a.identical(b)

    def test_lower_half(self):
        cfg = CFG.replace(sheep_spawn_region=SpawnRegion.LOWER_HALF)
        s = spawn(cfg, GEO, np.random.default_rng(2))
        assert (s.sheep_pos[:, 1] <= 50).all()


class TestEpisode:
    def test_idle_dog_catches_nothing(self):
        # Monte-Carlo baseline: without guidance sheep essentially never reach the pen
        idle = Evolved(parse("(pair 0 0)"))
        fractions = [run_episode(idle, CFG, GEO, (11, i)).captured_fraction for i in range(300)]
        assert np.mean(fractions) < 0.01

    def test_early_exit(self):
        cfg = CFG.replace(n_sheep=1)
        results = [run_episode(SimpleDog(), cfg, seed=seed, trace=True) for seed in range(50)]
        done = [r for r in results if r.captured]
        assert done
        for r in done:
            assert r.steps_run < cfg.steps
            assert len(r.trace) == r.steps_run + 1
            assert r.trace[-1].captured.all() and not r.trace[-2].captured.all()

    def test_deterministic(self):
        a = run_episode(RandDog(), CFG, GEO, 5, trace=True)
        b = run_episode(RandDog(), CFG, GEO, 5, trace=True)
        assert a.captured == b.captured and a.steps_run == b.steps_run
        assert all(x.identical(y) for x, y in zip(a.trace, b.trace))

    def test_trace_matches_stepping(self):
        """The compiled loop and repeated step_world agree bit for bit."""
        from shepherd_gp.controllers import dog_force

        ctrl = Evolved(parse("(pair (- sheep-x dog-x) (- (- sheep-y 20) dog-y))",
                             ("dog-x", "dog-y", "sheep-x", "sheep-y")))
        r = run_episode(ctrl, CFG, GEO, 3, trace=True)
        s = r.trace[0].copy()
        for frame in r.trace[1:60]:
            s = step_world(s, [dog_force(ctrl, s, 0, CFG, GEO)], CFG, GEO)
            assert np.array_equal(s.sheep_pos, frame.sheep_pos)
            assert np.array_equal(s.dog_pos, frame.dog_pos)
            assert np.array_equal(s.sheep_vel, frame.sheep_vel)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.lists(st.tuples(st.floats(-50, 50), st.floats(-50, 50)),
                                           min_size=1, max_size=40))
def test_invariants_under_arbitrary_dog_forces(seed, forces):
    cfg = CFG.replace(n_dogs=1)
    s = spawn(cfg, GEO, np.random.default_rng(seed))
    prev_captured = 0
    for f in forces * 5:
        s = step_world(s, [f], cfg, GEO)
        assert ((s.sheep_pos >= 0) & (s.sheep_pos <= 100)).all()
        assert ((s.dog_pos >= 0) & (s.dog_pos <= 100)).all()
        free = ~s.captured
        assert (np.hypot(*s.sheep_vel[free].T) <= cfg.v_s + 1e-9).all()
        assert (np.hypot(*s.dog_vel.T) <= cfg.v_d + 1e-9).all()
        assert (s.sheep_pos[s.captured] == (0.0, 100.0)).all()
        assert s.n_captured >= prev_captured
        prev_captured = s.n_captured
