"""Reward-free environments: point-mass mazes, a planar two-link arm and
finite gridworlds (the latter convertible to an exact tabular MDP)."""
from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Iterator, Sequence

import numpy as np

Segment = tuple[tuple[float, float], tuple[float, float]]

BOUNDARY: tuple[Segment, ...] = (
    ((-1.0, -1.0), (1.0, -1.0)),
    ((1.0, -1.0), (1.0, 1.0)),
    ((1.0, 1.0), (-1.0, 1.0)),
    ((-1.0, 1.0), (-1.0, -1.0)),
)


@dataclass(frozen=True)
class Transition:
    skill: int
    s: np.ndarray
    a: np.ndarray
    s_next: np.ndarray
    terminated: bool
    step: int


@dataclass
class Episode:
    """One skill-conditioned trajectory. ``states`` has one more row than
    ``actions``; ``states[t + 1]`` is the successor of ``states[t]``."""

    skill: int
    states: np.ndarray
    actions: np.ndarray
    terminated: bool = False

    def __len__(self) -> int:
        return len(self.actions)

    def transitions(self) -> Iterator[Transition]:
        n = len(self)
        for t in range(n):
            yield Transition(
                self.skill, self.states[t], self.actions[t], self.states[t + 1],
                self.terminated and t == n - 1, t,
            )


# --- geometry ------------------------------------------------------------------

def _orient(ax, ay, bx, by, cx, cy) -> float:
    return (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)


def segments_intersect(p: Sequence[float], q: Sequence[float], seg: Segment) -> bool:
    """Closed segment-segment intersection test (touching counts)."""
    (ax, ay), (bx, by) = seg
    px, py = p
    qx, qy = q
    d1 = _orient(ax, ay, bx, by, px, py)
    d2 = _orient(ax, ay, bx, by, qx, qy)
    d3 = _orient(px, py, qx, qy, ax, ay)
    d4 = _orient(px, py, qx, qy, bx, by)
    if ((d1 > 0 and d2 < 0) or (d1 < 0 and d2 > 0)) and ((d3 > 0 and d4 < 0) or (d3 < 0 and d4 > 0)):
        return True

    def on(ux, uy, vx, vy, wx, wy) -> bool:
        return min(ux, vx) <= wx <= max(ux, vx) and min(uy, vy) <= wy <= max(uy, vy)

    return (
        (d1 == 0 and on(ax, ay, bx, by, px, py))
        or (d2 == 0 and on(ax, ay, bx, by, qx, qy))
        or (d3 == 0 and on(px, py, qx, qy, ax, ay))
        or (d4 == 0 and on(px, py, qx, qy, bx, by))
    )


def _crossing_param(p: np.ndarray, d: np.ndarray, seg: Segment) -> float | None:
    """Parameter t in [0, 1] where p + t d crosses ``seg``, if it does."""
    a = np.asarray(seg[0], dtype=float)
    e = np.asarray(seg[1], dtype=float) - a
    denom = d[0] * e[1] - d[1] * e[0]
    if denom == 0.0:
        return None
    w = a - p
    t = (w[0] * e[1] - w[1] * e[0]) / denom
    u = (w[0] * d[1] - w[1] * d[0]) / denom
    if 0.0 <= t <= 1.0 and 0.0 <= u <= 1.0:
        return float(t)
    return None


def _slab_entry(p: np.ndarray, d: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> float | None:
    """First t in [0, 1] at which p + t d is inside the box [lo, hi]."""
    t_enter, t_exit = -np.inf, np.inf
    for k in range(2):
        if d[k] == 0.0:
            if p[k] < lo[k] or p[k] > hi[k]:
                return None
            continue
        with np.errstate(over="ignore"):  # subnormal d[k] gives +-inf, which is the right limit
            t1 = (lo[k] - p[k]) / d[k]
            t2 = (hi[k] - p[k]) / d[k]
        t_enter = max(t_enter, min(t1, t2))
        t_exit = min(t_exit, max(t1, t2))
    if t_enter > t_exit or t_exit < 0.0 or t_enter > 1.0:
        return None
    return max(t_enter, 0.0)


# --- mazes ---------------------------------------------------------------------

@dataclass(frozen=True)
class MazeSpec:
    name: str
    walls: tuple[Segment, ...]
    s0: tuple[float, float] = (-0.75, -0.75)
    dt: float = 0.1
    horizon: int = 50
    radius: float = 0.01

    def __post_init__(self):
        walls = tuple((tuple(map(float, a)), tuple(map(float, b))) for a, b in self.walls)
        for a, b in walls:
            if a[0] != b[0] and a[1] != b[1]:
                raise ValueError(f"wall {a}->{b} is not axis-aligned")
        missing = tuple(w for w in BOUNDARY if w not in walls)
        object.__setattr__(self, "walls", missing + walls)
        x, y = self.s0
        if not (-1.0 < x < 1.0 and -1.0 < y < 1.0):
            raise ValueError(f"s0 {self.s0} outside the open unit box")
        for a, b in self.walls:
            lo = np.minimum(a, b) - self.radius
            hi = np.maximum(a, b) + self.radius
            if np.all(np.asarray(self.s0) >= lo) and np.all(np.asarray(self.s0) <= hi):
                raise ValueError(f"s0 {self.s0} lies inside wall {a}->{b}")

    @property
    def interior_walls(self) -> tuple[Segment, ...]:
        return tuple(w for w in self.walls if w not in BOUNDARY)


class MazeEnv:
    """Point mass in [-1, 1]^2 with velocity actions; hitting a wall ends
    the episode at the contact point."""

    state_dim = 2
    action_dim = 2
    feature_dim = 2
    discrete_actions = False

    def __init__(self, spec: MazeSpec):
        self.spec = spec
        self.name = spec.name
        self.horizon = spec.horizon
        self.obs_dim = 2
        self.feature_bounds = (np.array([-1.0, -1.0]), np.array([1.0, 1.0]))
        self._boxes = []
        for a, b in spec.walls:
            lo = np.minimum(a, b) - spec.radius
            hi = np.maximum(a, b) + spec.radius
            self._boxes.append((lo, hi))

    @property
    def s0(self) -> np.ndarray:
        return np.array(self.spec.s0, dtype=float)

    def reset(self) -> np.ndarray:
        return self.s0

    def step(self, s, a) -> tuple[np.ndarray, bool]:
        s = np.asarray(s, dtype=float)
        a = np.asarray(a, dtype=float)
        if s.shape != (2,) or a.shape != (2,):
            raise ValueError(f"maze expects 2-d state and action, got {s.shape} and {a.shape}")
        d = self.spec.dt * np.clip(a, -1.0, 1.0)
        if not np.any(d):
            return s.copy(), False
        best_t, best_i = None, -1
        for i, (lo, hi) in enumerate(self._boxes):
            t = _slab_entry(s, d, lo, hi)
            if t is not None and (best_t is None or t < best_t):
                best_t, best_i = t, i
        if best_t is None:
            return s + d, False
        t_cross = _crossing_param(s, d, self.spec.walls[best_i])
        t = t_cross if t_cross is not None else best_t
        return np.clip(s + t * d, -1.0, 1.0), True

    def featurize(self, s) -> np.ndarray:
        return np.asarray(s, dtype=float)

    def featurize_batch(self, states: np.ndarray) -> np.ndarray:
        return np.asarray(states, dtype=float)

    def encode(self, states: np.ndarray) -> np.ndarray:
        return np.asarray(states, dtype=float)

    def encode_actions(self, actions: np.ndarray) -> np.ndarray:
        return np.asarray(actions, dtype=float)


def cell_of(point: Sequence[float], resolution: int, lo=(-1.0, -1.0), hi=(1.0, 1.0)) -> int:
    """Flat cell index ``iy * G + ix`` of a feature point (clamped into the grid)."""
    g = resolution
    ix = int(np.floor((point[0] - lo[0]) / (hi[0] - lo[0]) * g))
    iy = int(np.floor((point[1] - lo[1]) / (hi[1] - lo[1]) * g))
    return min(max(iy, 0), g - 1) * g + min(max(ix, 0), g - 1)


def cell_center(index: int, resolution: int, lo=(-1.0, -1.0), hi=(1.0, 1.0)) -> np.ndarray:
    iy, ix = divmod(index, resolution)
    w = (np.asarray(hi, float) - np.asarray(lo, float)) / resolution
    return np.asarray(lo, float) + (np.array([ix, iy]) + 0.5) * w


def reachable_cells(maze: MazeSpec, grid_resolution: int) -> set[int]:
    """Flood fill over grid cells from the s0 cell; neighbours connect when the
    segment between their centers crosses no wall."""
    if grid_resolution < 2:
        raise ValueError("grid_resolution must be >= 2")
    g = grid_resolution
    walls = maze.interior_walls
    start = cell_of(maze.s0, g)
    if any(segments_intersect(maze.s0, cell_center(start, g), w) for w in walls):
        raise ValueError(f"cell {start} containing s0 is blocked from s0")

    def open_between(c1: int, c2: int) -> bool:
        p, q = cell_center(c1, g), cell_center(c2, g)
        return not any(segments_intersect(p, q, w) for w in walls)

    seen = {start}
    queue = deque([start])
    while queue:
        c = queue.popleft()
        iy, ix = divmod(c, g)
        for dy, dx in ((0, 1), (1, 0), (0, -1), (-1, 0)):
            ny, nx = iy + dy, ix + dx
            if 0 <= ny < g and 0 <= nx < g:
                n = ny * g + nx
                if n not in seen and open_between(c, n):
                    seen.add(n)
                    queue.append(n)
    return seen


def load_maze(source) -> MazeSpec:
    """Load a maze layout by shipped name (``easy``, ``u``, ``hard``) or path."""
    path = Path(source)
    if path.suffix == ".json" and path.exists():
        text = path.read_text()
    else:
        name = str(source).lower()
        try:
            text = resources.files("leads_lab").joinpath(f"data/mazes/{name}.json").read_text()
        except FileNotFoundError:
            raise ValueError(f"unknown maze {source!r}") from None
    raw = json.loads(text)
    return MazeSpec(
        name=raw["name"],
        walls=tuple(tuple(map(tuple, w)) for w in raw["walls"]),
        s0=tuple(raw["s0"]),
        dt=float(raw.get("dt", 0.1)),
        horizon=int(raw.get("horizon", 50)),
        radius=float(raw.get("radius", 0.01)),
    )


def dump_maze(spec: MazeSpec) -> str:
    return json.dumps(
        {
            "name": spec.name,
            "walls": [list(map(list, w)) for w in spec.interior_walls],
            "s0": list(spec.s0),
            "dt": spec.dt,
            "horizon": spec.horizon,
            "radius": spec.radius,
        },
        indent=2,
    )


# --- arm -----------------------------------------------------------------------

@dataclass(frozen=True)
class ArmSpec:
    links: tuple[float, float] = (0.5, 0.5)
    joint_limits: tuple[tuple[float, float], tuple[float, float]] = ((-np.pi, np.pi), (-2.5, 2.5))
    dt: float = 0.1
    max_speed: float = 2.0
    accel: float = 5.0
    s0: tuple[float, float, float, float] = (0.0, np.pi / 2, 0.0, 0.0)
    horizon: int = 50

    def __post_init__(self):
        if min(self.links) <= 0 or sum(self.links) > 1.0 + 1e-12:
            raise ValueError("link lengths must be positive and sum to at most 1")


class ArmEnv:
    """Planar two-link arm. State: two joint angles, two angular velocities;
    actions are joint accelerations. Never terminates."""

    state_dim = 4
    action_dim = 2
    feature_dim = 2
    discrete_actions = False

    def __init__(self, spec: ArmSpec | None = None):
        self.spec = spec or ArmSpec()
        self.name = "arm"
        self.horizon = self.spec.horizon
        self.obs_dim = 4
        self.feature_bounds = (np.array([-1.0, -1.0]), np.array([1.0, 1.0]))
        self._lo = np.array([lim[0] for lim in self.spec.joint_limits])
        self._hi = np.array([lim[1] for lim in self.spec.joint_limits])

    @property
    def s0(self) -> np.ndarray:
        return np.array(self.spec.s0, dtype=float)

    def reset(self) -> np.ndarray:
        return self.s0

    def step(self, s, a) -> tuple[np.ndarray, bool]:
        s = np.asarray(s, dtype=float)
        a = np.asarray(a, dtype=float)
        if s.shape != (4,) or a.shape != (2,):
            raise ValueError(f"arm expects 4-d state and 2-d action, got {s.shape} and {a.shape}")
        sp = self.spec
        omega = np.clip(s[2:] + sp.dt * sp.accel * np.clip(a, -1.0, 1.0), -sp.max_speed, sp.max_speed)
        theta = s[:2] + sp.dt * omega
        clamped = (theta < self._lo) | (theta > self._hi)
        theta = np.clip(theta, self._lo, self._hi)
        omega = np.where(clamped, 0.0, omega)
        return np.concatenate([theta, omega]), False

    def featurize(self, s) -> np.ndarray:
        return self.featurize_batch(np.asarray(s, dtype=float)[None])[0]

    def featurize_batch(self, states: np.ndarray) -> np.ndarray:
        states = np.asarray(states, dtype=float)
        l1, l2 = self.spec.links
        t1 = states[:, 0]
        t12 = t1 + states[:, 1]
        return np.stack([l1 * np.cos(t1) + l2 * np.cos(t12), l1 * np.sin(t1) + l2 * np.sin(t12)], axis=1)

    def encode(self, states: np.ndarray) -> np.ndarray:
        return np.asarray(states, dtype=float)

    def encode_actions(self, actions: np.ndarray) -> np.ndarray:
        return np.asarray(actions, dtype=float)


# --- gridworld -----------------------------------------------------------------

GRID_MOVES = {0: (-1, 0), 1: (0, 1), 2: (1, 0), 3: (0, -1)}  # up, right, down, left
ACTION_NAMES = {"up": 0, "right": 1, "down": 2, "left": 3}


@dataclass(frozen=True)
class GridSpec:
    rows: int
    cols: int
    blocked: frozenset[int] = field(default_factory=frozenset)
    s0: int = 0
    horizon: int = 50


class GridWorld:
    """Deterministic 4-neighbour grid. A state is the cell index stored as a
    length-1 float vector; blocked cells and borders leave the agent in place."""

    state_dim = 1
    action_dim = 1
    n_actions = 4
    discrete_actions = True

    def __init__(self, spec: GridSpec):
        if spec.s0 in spec.blocked:
            raise ValueError("s0 is a blocked cell")
        self.spec = spec
        self.name = f"grid{spec.rows}x{spec.cols}"
        self.horizon = spec.horizon
        self.n_states = spec.rows * spec.cols
        self.obs_dim = self.n_states
        self.action_obs_dim = 4
        self.feature_dim = 2
        self.feature_bounds = (np.array([-0.5, -0.5]), np.array([spec.rows - 0.5, spec.cols - 0.5]))

    @property
    def s0(self) -> np.ndarray:
        return np.array([float(self.spec.s0)])

    def reset(self) -> np.ndarray:
        return self.s0

    def next_cell(self, cell: int, action: int) -> int:
        r, c = divmod(cell, self.spec.cols)
        dr, dc = GRID_MOVES[action]
        nr, nc = r + dr, c + dc
        if not (0 <= nr < self.spec.rows and 0 <= nc < self.spec.cols):
            return cell
        n = nr * self.spec.cols + nc
        return cell if n in self.spec.blocked else n

    def step(self, s, a) -> tuple[np.ndarray, bool]:
        s = np.atleast_1d(np.asarray(s, dtype=float))
        a = np.atleast_1d(np.asarray(a))
        if s.shape != (1,) or a.shape != (1,):
            raise ValueError(f"gridworld expects a cell index and an action index, got {s.shape}, {a.shape}")
        cell = int(s[0])
        if not 0 <= cell < self.n_states:
            raise ValueError(f"cell {cell} outside the grid")
        return np.array([float(self.next_cell(cell, int(a[0])))]), False

    def featurize(self, s) -> np.ndarray:
        r, c = divmod(int(np.asarray(s).ravel()[0]), self.spec.cols)
        return np.array([float(r), float(c)])

    def featurize_batch(self, states: np.ndarray) -> np.ndarray:
        idx = np.asarray(states).reshape(-1).astype(int)
        return np.stack([idx // self.spec.cols, idx % self.spec.cols], axis=1).astype(float)

    def encode(self, states: np.ndarray) -> np.ndarray:
        idx = np.asarray(states).reshape(-1).astype(int)
        return np.eye(self.n_states)[idx]

    def encode_actions(self, actions: np.ndarray) -> np.ndarray:
        idx = np.asarray(actions).reshape(-1).astype(int)
        return np.eye(4)[idx]

    def transition_tensor(self) -> np.ndarray:
        P = np.zeros((self.n_states, 4, self.n_states))
        for s in range(self.n_states):
            for a in range(4):
                P[s, a, self.next_cell(s, a)] = 1.0
        return P

    def to_mdp(self, gamma: float):
        from .oracle import FiniteMdp

        return FiniteMdp(self.transition_tensor(), gamma, self.spec.s0)


def four_rooms(size: int = 9, horizon: int = 50) -> GridWorld:
    """Square grid split into four rooms by a cross of walls with one door each."""
    mid = size // 2
    blocked = set()
    for i in range(size):
        blocked.add(mid * size + i)
        blocked.add(i * size + mid)
    for door in (mid * size + mid // 2, mid * size + mid + 1 + mid // 2,
                 (mid // 2) * size + mid, (mid + 1 + mid // 2) * size + mid):
        blocked.discard(door)
    return GridWorld(GridSpec(size, size, frozenset(blocked), s0=0, horizon=horizon))


# --- episodes ------------------------------------------------------------------

class StepCounter:
    """Wraps an environment and counts ``step`` calls."""

    def __init__(self, env):
        self.env = env
        self.count = 0

    def step(self, s, a):
        self.count += 1
        return self.env.step(s, a)

    def __getattr__(self, name):
        return getattr(self.env, name)


Policy = Callable[[np.ndarray, int, np.random.Generator], np.ndarray]


def rollout(env, policy: Policy, skill: int, horizon: int, rng: np.random.Generator) -> Episode:
    """Run one episode from s0 until ``horizon`` steps or the first termination."""
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    s = env.reset()
    states = [s]
    actions = []
    terminated = False
    for _ in range(horizon):
        a = np.atleast_1d(np.asarray(policy(s, skill, rng), dtype=float))
        s, terminated = env.step(s, a)
        actions.append(a)
        states.append(s)
        if terminated:
            break
    return Episode(skill, np.array(states), np.array(actions), terminated)


ENV_NAMES = ("easy", "u", "hard", "arm")


def make_env(name: str):
    name = name.lower()
    if name in ("easy", "u", "hard"):
        return MazeEnv(load_maze(name))
    if name == "arm":
        return ArmEnv()
    if name.endswith(".json"):
        return MazeEnv(load_maze(name))
    raise ValueError(f"unknown environment {name!r}; choose from {', '.join(ENV_NAMES)}")
