from __future__ import annotations

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from leads_lab.envs import (ArmEnv, GridSpec, GridWorld, MazeEnv, MazeSpec, StepCounter, cell_of, dump_maze,
                            four_rooms, load_maze, make_env, reachable_cells, rollout, segments_intersect)

WALL_X005 = MazeSpec("wall", walls=(((0.05, -1.0), (0.05, 1.0)),), s0=(-0.5, 0.0))


def test_constructed_collision_returns_intersection():
    env = MazeEnv(WALL_X005)
    s, term = env.step(np.array([0.0, 0.0]), np.array([1.0, 0.0]))
    assert term
    np.testing.assert_allclose(s, [0.05, 0.0], atol=1e-12)


def test_free_move_is_euler_step():
    env = MazeEnv(load_maze("easy"))
    s, term = env.step(np.array([0.0, 0.0]), np.array([0.5, -1.0]))
    assert not term
    np.testing.assert_allclose(s, [0.05, -0.1])


def test_boundary_exit_terminates_on_the_boundary():
    env = MazeEnv(load_maze("easy"))
    s, term = env.step(np.array([0.97, 0.0]), np.array([1.0, 0.0]))
    assert term and s[0] == pytest.approx(1.0)


def test_rollout_into_wall_has_length_one():
    env = MazeEnv(WALL_X005)
    env_start = MazeEnv(MazeSpec("wall", WALL_X005.walls, s0=(0.0, 0.0)))
    ep = rollout(env_start, lambda s, z, r: np.array([1.0, 0.0]), 0, 50, np.random.default_rng(0))
    assert len(ep) == 1 and ep.terminated
    ep = rollout(env, lambda s, z, r: np.array([0.0, 0.0]), 0, 7, np.random.default_rng(0))
    assert len(ep) == 7 and not ep.terminated


def test_rollout_is_deterministic_given_seed():
    env = make_env("u")
    pol = lambda s, z, r: r.uniform(-1, 1, size=2)
    a = rollout(env, pol, 1, 50, np.random.default_rng(3))
    b = rollout(env, pol, 1, 50, np.random.default_rng(3))
    np.testing.assert_array_equal(a.states, b.states)


def test_reachable_open_maze_and_bisected():
    open_maze = MazeSpec("open", walls=())
    assert reachable_cells(open_maze, 4) == set(range(16))
    cut = MazeSpec("cut", walls=(((0.0, -1.0), (0.0, 1.0)),), s0=(-0.5, -0.5))
    cells = reachable_cells(cut, 4)
    assert cells == {iy * 4 + ix for iy in range(4) for ix in range(2)}
    with pytest.raises(ValueError):
        reachable_cells(open_maze, 1)


def test_shipped_hard_maze_reachable_count_golden():
    # frozen flood-fill result; walls lie on cell boundaries, so no cell is cut off
    assert len(reachable_cells(load_maze("hard"), 32)) == 1024


def test_shipped_mazes_roundtrip_through_json(tmp_path):
    for name in ("easy", "u", "hard"):
        spec = load_maze(name)
        p = tmp_path / f"{name}.json"
        p.write_text(dump_maze(spec))
        assert load_maze(p) == spec


def test_maze_spec_validation():
    with pytest.raises(ValueError):
        MazeSpec("diag", walls=(((0, 0), (0.5, 0.5)),))
    with pytest.raises(ValueError):
        MazeSpec("inside", walls=(((0, -1), (0, 1)),), s0=(0.0, 0.0))
    with pytest.raises(ValueError):
        make_env("nonexistent")


def test_gridworld_moves_and_walls():
    g = GridWorld(GridSpec(3, 3, frozenset({4}), s0=0))
    assert g.step(np.array([0.0]), np.array([1]))[0][0] == 1  # right
    assert g.step(np.array([0.0]), np.array([0]))[0][0] == 0  # up: border
    assert g.step(np.array([1.0]), np.array([2]))[0][0] == 1  # down into the blocked centre
    P = g.transition_tensor()
    np.testing.assert_allclose(P.sum(-1), 1.0)


def test_four_rooms_is_connected():
    g = four_rooms(9)
    P = g.transition_tensor()
    seen, frontier = {0}, [0]
    while frontier:
        c = frontier.pop()
        for n in np.nonzero(P[c].sum(0))[0]:
            if int(n) not in seen:
                seen.add(int(n))
                frontier.append(int(n))
    assert len(seen) == 81 - len(g.spec.blocked)


def test_arm_clamps_at_joint_limits():
    env = ArmEnv()
    s = env.s0
    for _ in range(500):
        s, term = env.step(s, np.array([1.0, 1.0]))
        assert not term
    hi = np.array([lim[1] for lim in env.spec.joint_limits])
    np.testing.assert_allclose(s[:2], hi)
    np.testing.assert_array_equal(s[2:], 0.0)
    assert env.featurize(s).shape == (2,)


def test_step_counter_counts():
    env = StepCounter(make_env("easy"))
    ep = rollout(env, lambda s, z, r: np.array([0.1, 0.1]), 0, 20, np.random.default_rng(0))
    assert env.count == len(ep) == 20


@settings(max_examples=200, deadline=None)
@given(
    x=st.floats(-0.99, 0.99), y=st.floats(-0.99, 0.99),
    ax=st.floats(-1, 1), ay=st.floats(-1, 1), name=st.sampled_from(["easy", "u", "hard"]),
)
def test_step_stays_in_bounds_and_never_tunnels(x, y, ax, ay, name):
    env = make_env(name)
    s = np.array([x, y])
    for a, b in env.spec.interior_walls:  # start must be off every wall
        assume(not (np.all(s >= np.minimum(a, b) - 0.01) and np.all(s <= np.maximum(a, b) + 0.01)))
    s2, term = env.step(s, np.array([ax, ay]))
    assert np.all(np.abs(s2) <= 1.0)
    if not term:
        for w in env.spec.interior_walls:
            assert not segments_intersect(s, s2, w)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), name=st.sampled_from(["easy", "u", "hard"]))
def test_rollout_invariants(seed, name):
    env = make_env(name)
    rng = np.random.default_rng(seed)
    ep = rollout(env, lambda s, z, r: r.uniform(-1, 1, 2), 0, env.horizon, rng)
    assert len(ep) <= env.horizon
    ts = list(ep.transitions())
    assert all(not t.terminated for t in ts[:-1])
    assert all(t.step < env.horizon for t in ts)
    reach = reachable_cells(env.spec, 32)
    assert {cell_of(s, 32) for s in ep.states} <= reach


@settings(max_examples=25, deadline=None)
@given(wx=st.sampled_from([-0.5, -0.25, 0.25, 0.5]), extra=st.booleans())
def test_reachable_monotone_in_walls(wx, extra):
    base = MazeSpec("a", walls=(((wx, -1.0), (wx, 0.5)),))
    walls = base.interior_walls + ((((-1.0, 0.25), (0.0, 0.25)),) if extra else ())
    more = MazeSpec("b", walls=walls + (((wx, 0.5), (wx, 1.0)),))
    assert reachable_cells(more, 16) <= reachable_cells(base, 16)
