"""The skill-discovery loop: target selection by the uncertainty score, the
exploration-diversity policy objective with an entropy bonus, the epoch
procedure and the successor-measure archive."""
from __future__ import annotations

import dataclasses
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .clearning import Classifier, SkillBuffers, fit_onpolicy, m_bar, refresh_offpolicy, skill_embeddings
from .envs import MazeEnv, StepCounter, reachable_cells, rollout
from .metrics import CoverageCurve, CoverageGrid
from .nn import Adam, NonFiniteError, SquashedGaussianPolicy

EPS = 1e-8
OBJECTIVES = ("leads", "diayn-ablation")


@dataclass
class HyperParams:
    n_skill: int = 6
    z_dim: int = 20
    lambda_h: float = 0.05
    gamma: float = 0.95
    lambda_clearning: float = 0.5
    alpha_theta: float = 5e-4
    alpha_clearning: float = 5e-4
    n_episode: int = 16
    n_sgd_clearning: int = 256
    n_sgd_actor: int = 16
    n_archive: int = 1
    batch_clearning: int = 1024
    batch_loss: int = 1024
    # not in the published table
    k_actions: int = 8
    target_subsample: int = 512
    target_sync: int = 64
    grid_resolution: int = 32

    def __post_init__(self):
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if f.name in ("lambda_h", "n_sgd_actor", "n_sgd_clearning"):
                if v < 0:
                    raise ValueError(f"{f.name} must be non-negative")
            elif v <= 0:
                raise ValueError(f"{f.name} must be positive")
        if self.gamma >= 1.0:
            raise ValueError("gamma must be below 1")
        if self.n_episode < self.n_skill:
            raise ValueError("n_episode must be at least n_skill so every skill gets an episode per epoch")

    @classmethod
    def field_types(cls) -> dict[str, type]:
        return {f.name: (int if f.type in ("int", int) else float) for f in dataclasses.fields(cls)}


class SsmArchive:
    """Bounded history of classifier snapshots from past epochs."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self.items: deque[tuple[int, Classifier]] = deque(maxlen=capacity)

    def push(self, epoch: int, clf: Classifier) -> None:
        snap = clf.copy()
        snap.params.flags.writeable = False
        self.items.append((epoch, snap))

    def __len__(self) -> int:
        return len(self.items)

    def classifiers(self) -> list[Classifier]:
        return [c for _, c in self.items]


# --- uncertainty and targets ---------------------------------------------------

MFn = Callable[[np.ndarray, np.ndarray, int], np.ndarray]
"""``m(start_state, states, skill) -> successor ratio at each state``."""


def uncertainty_table(states: np.ndarray, m_now: MFn, m_past: Sequence[MFn], prev_targets: Sequence[np.ndarray],
                      s0: np.ndarray, n_skill: int) -> np.ndarray:
    """Score u(s, z) for every skill z and every state in ``states``; (Z, N).

    Exploration: log(m_now(s0, s, z) / sum over archive and skills of
    m_past(s0, s, z')), the denominator being 1 for an empty archive.
    Repulsion, for each other skill z': log(m_now(prev_z, s, z) /
    m_now(prev_z', s, z')) + log(m_now(s0, s, z) / m_now(s0, s, z')).
    Every m is floored at 1e-8.
    """
    states = np.atleast_2d(states)
    Z = n_skill
    from_s0 = np.log(np.maximum(np.stack([m_now(s0, states, z) for z in range(Z)]), EPS))
    from_prev = np.log(np.maximum(np.stack([m_now(prev_targets[z], states, z) for z in range(Z)]), EPS))
    if m_past:
        denom = sum(m(s0, states, z) for m in m_past for z in range(Z))
        explore = from_s0 - np.log(np.maximum(denom, EPS))[None]
    else:
        explore = from_s0
    repulse = (Z - 1) * (from_prev + from_s0) - (from_prev.sum(0) - from_prev) - (from_s0.sum(0) - from_s0)
    return explore + repulse


def uncertainty(s: np.ndarray, z: int, m_now: MFn, m_past: Sequence[MFn], prev_targets, s0, n_skill: int) -> float:
    return float(uncertainty_table(np.atleast_2d(s), m_now, m_past, prev_targets, s0, n_skill)[z, 0])


def neural_m(clf: Classifier, policy: SquashedGaussianPolicy, emb: np.ndarray, env, k: int,
             rng: np.random.Generator) -> MFn:
    """Successor ratio from a classifier, averaged over k policy actions at the start state."""

    def sample(obs_rows: np.ndarray, skill: int) -> np.ndarray:
        noise = rng.standard_normal((len(obs_rows), policy.action_dim))
        a, _ = policy.sample(obs_rows, emb[skill], noise)
        return a

    def m(start, states, skill):
        start_obs = env.encode(np.atleast_2d(start))
        return m_bar(clf, sample, start_obs, env.encode(np.atleast_2d(states)), emb[skill], skill, k)

    return m


@dataclass
class SkillTargets:
    states: list[np.ndarray]
    indices: list[int]  # pool indices in the epoch's buffers
    previous: list[np.ndarray]


def select_targets(buffers: SkillBuffers, m_now: MFn, m_past: Sequence[MFn], prev_targets, s0,
                   subsample: int, rng: np.random.Generator) -> SkillTargets:
    """Per skill, the highest-scoring state among up to ``subsample`` states
    drawn uniformly from that skill's buffer (ties: lowest buffer index)."""
    Z = buffers.n_skill
    cand = []
    for z in range(Z):
        idx = buffers.skill_states[z]
        if len(idx) == 0:
            raise ValueError(f"skill {z} has an empty buffer")
        if len(idx) > subsample:
            idx = np.sort(rng.choice(idx, size=subsample, replace=False))
        cand.append(idx)
    union = np.unique(np.concatenate(cand))
    table = uncertainty_table(buffers.pool_raw[union], m_now, m_past, prev_targets, s0, Z)
    pos = {int(p): i for i, p in enumerate(union)}
    states, indices = [], []
    for z in range(Z):
        cols = [pos[int(p)] for p in cand[z]]
        best = int(cand[z][int(np.argmax(table[z, cols]))])
        indices.append(best)
        states.append(buffers.pool_raw[best].copy())
    return SkillTargets(states, indices, [np.asarray(p) for p in prev_targets])


# --- policy objectives ---------------------------------------------------------

@dataclass
class ObjectiveResult:
    value: float        # diversity objective (or its ablation)
    entropy: float      # mean -log pi of the sampled own-skill actions
    grad: np.ndarray    # gradient of value + lambda_h * entropy w.r.t. policy params


def policy_objective(policy: SquashedGaussianPolicy, clf: Classifier, emb: np.ndarray, env, z: np.ndarray,
                     s1: np.ndarray, s2: np.ndarray, noise: np.ndarray, lambda_h: float,
                     mode: str = "leads") -> ObjectiveResult:
    """Batch objective and its policy gradient; classifier weights stay fixed.

    ``noise`` has shape (B, Z, action_dim): row ``[b, z']`` drives the
    reparameterized action of skill z' at ``s1[b]``. In ``leads`` mode each
    element contributes log(m_z / (1 + sum_z' m_z')); in ``diayn-ablation``
    mode only log m_z, using the own-skill noise.
    """
    z = np.asarray(z, dtype=int)
    B = len(z)
    Z = emb.shape[0]
    A = policy.action_dim
    obs1 = env.encode(s1)
    obs2 = env.encode(s2)
    if mode == "leads":
        rows_obs1 = np.repeat(obs1, Z, axis=0)
        rows_obs2 = np.repeat(obs2, Z, axis=0)
        rows_z = np.tile(np.arange(Z), B)
        rows_noise = noise.reshape(B * Z, A)
        own = np.arange(B) * Z + z
    elif mode == "diayn-ablation":
        rows_obs1, rows_obs2, rows_z = obs1, obs2, z
        rows_noise = noise[np.arange(B), z]
        own = np.arange(B)
    else:
        raise ValueError(f"unknown objective {mode!r}")

    a, logp, pcache = policy.sample_cache(rows_obs1, emb[rows_z], rows_noise)
    x = Classifier.inputs(rows_obs1, a, rows_obs2, emb[rows_z])
    f, ccache = clf.net.forward_cache(x)
    f = f[:, 0]
    g_f = np.zeros_like(f)
    if mode == "leads":
        F = f.reshape(B, Z)
        f_own = F[np.arange(B), z]
        others = F.copy()
        others[np.arange(B), z] = -np.inf
        log_rest = np.logaddexp.reduce(np.concatenate([np.zeros((B, 1)), others], axis=1), axis=1)
        per = -np.logaddexp(0.0, log_rest - f_own)  # = f_own - log(1 + sum_z' e^f)
        log_denom = np.logaddexp.reduce(np.concatenate([np.zeros((B, 1)), F], axis=1), axis=1)
        gF = -np.exp(F - log_denom[:, None])
        gF[np.arange(B), z] += 1.0
        g_f[:] = (gF / B).ravel()
    else:
        per = f
        g_f[:] = 1.0 / B
    value = float(per.mean())
    if not np.isfinite(value):
        raise NonFiniteError(f"policy objective became {value}")
    if mode == "leads":
        assert value < 0.0, "diversity objective must stay negative"
    entropy = float(-logp[own].mean())
    _, g_x = clf.net.backward(ccache, g_f[:, None], need_params=False)
    od = obs1.shape[1]
    g_a = g_x[:, od:od + A]
    g_logp = np.zeros(len(logp))
    if lambda_h != 0.0:
        g_logp[own] = -lambda_h / B
    grad = policy.backward(pcache, g_a, g_logp if lambda_h != 0.0 else None)
    return ObjectiveResult(value, entropy, grad)


def leads_objective(policy, clf, emb, env, z, s1, targets, noise, lambda_h: float = 0.0) -> ObjectiveResult:
    return policy_objective(policy, clf, emb, env, z, s1, targets, noise, lambda_h, "leads")


def diayn_ablation_objective(policy, clf, emb, env, z, s1, s2, noise, lambda_h: float = 0.0) -> ObjectiveResult:
    return policy_objective(policy, clf, emb, env, z, s1, s2, noise, lambda_h, "diayn-ablation")


def entropy_bonus(policy: SquashedGaussianPolicy, emb: np.ndarray, env, z, s1, noise) -> tuple[float, np.ndarray]:
    """Mean -log pi(a|s1, z) over reparameterized samples and its gradient.
    ``noise`` has shape (B, action_dim)."""
    z = np.asarray(z, dtype=int)
    _, logp, cache = policy.sample_cache(env.encode(s1), emb[z], noise)
    grad = policy.backward(cache, None, np.full(len(z), -1.0 / len(z)))
    return float(-logp.mean()), grad


# --- epoch loop ----------------------------------------------------------------

@dataclass
class EpochReport:
    epoch: int
    samples: int
    targets: list[np.ndarray] | None
    objective: float
    entropy: float
    cells: int
    fraction: float
    clf_loss: float
    epoch_cells: list[set[int]] = field(repr=False, default_factory=list)

    CSV_HEADER = ("epoch", "samples", "objective", "entropy", "clf_loss", "cells", "fraction")

    def csv_row(self) -> list[str]:
        return [str(self.epoch), str(self.samples), f"{self.objective:.10g}", f"{self.entropy:.10g}",
                f"{self.clf_loss:.10g}", str(self.cells), f"{self.fraction:.6f}"]


class Leads:
    """All mutable training state: models, optimizers, buffers, archive,
    targets, coverage, counters and the run's random stream."""

    def __init__(self, env, hp: HyperParams | None = None, seed: int = 0, objective: str = "leads",
                 policy_hidden: Sequence[int] = (256, 256), classifier_hidden: Sequence[int] = (256, 128)):
        if objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}")
        if getattr(env, "discrete_actions", False):
            raise ValueError("the neural policy needs a continuous-action environment")
        self.hp = hp = hp or HyperParams()
        self.env = StepCounter(env)
        self.objective = objective
        self.rng = np.random.default_rng(seed)
        self.emb = skill_embeddings(hp.n_skill, hp.z_dim, self.rng)
        self.policy = SquashedGaussianPolicy(env.obs_dim, hp.z_dim, env.action_dim, policy_hidden, rng=self.rng)
        self.clf = Classifier(env.obs_dim, env.action_dim, hp.z_dim, classifier_hidden, rng=self.rng)
        self.target_clf = self.clf.copy()
        self.policy_opt = Adam(hp.alpha_theta, self.policy.params.size)
        self.clf_opt = Adam(hp.alpha_clearning, self.clf.params.size)
        self.archive = SsmArchive(hp.n_archive)
        self.buffers = SkillBuffers(hp.n_skill)
        s0 = env.s0
        self.prev_targets = [s0.copy() for _ in range(hp.n_skill)]
        self.targets: SkillTargets | None = None
        reach = reachable_cells(env.spec, hp.grid_resolution) if isinstance(env, MazeEnv) else None
        self.grid = CoverageGrid(hp.n_skill, hp.grid_resolution, env.feature_bounds, reach)
        self.curve = CoverageCurve()
        self.epoch = 0
        self.samples = 0
        self.refresh_steps = 0

    # actions ---------------------------------------------------------------
    def act(self, state: np.ndarray, skill: int, rng: np.random.Generator) -> np.ndarray:
        noise = rng.standard_normal((1, self.policy.action_dim))
        a, _ = self.policy.sample(self.env.encode(state[None]), self.emb[skill], noise)
        return a[0]

    def _sample_encoded(self, raw_states: np.ndarray, skills: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        noise = rng.standard_normal((len(raw_states), self.policy.action_dim))
        a, _ = self.policy.sample(self.env.encode(raw_states), self.emb[np.asarray(skills)], noise)
        return self.env.encode_actions(a)

    def m_function(self, clf: Classifier, rng: np.random.Generator | None = None) -> MFn:
        return neural_m(clf, self.policy, self.emb, self.env, self.hp.k_actions, rng or self.rng)

    # phases ----------------------------------------------------------------
    def collect(self) -> int:
        hp = self.hp
        self.buffers.reset()
        offset = (self.epoch * hp.n_episode) % hp.n_skill
        steps = 0
        for e in range(hp.n_episode):
            skill = (offset + e) % hp.n_skill
            ep = rollout(self.env, self.act, skill, self.env.horizon, self.rng)
            self.buffers.add(ep)
            self.grid.update(ep, self.env.featurize_batch)
            steps += len(ep)
        self.buffers.finalize(self.env)
        return steps

    def _snapshot(self):
        return (self.policy.params.copy(), self.clf.params.copy(), self.target_clf.params.copy(),
                dataclasses.replace(self.policy_opt, m=self.policy_opt.m.copy(), v=self.policy_opt.v.copy()),
                dataclasses.replace(self.clf_opt, m=self.clf_opt.m.copy(), v=self.clf_opt.v.copy()))

    def _restore(self, snap) -> None:
        self.policy.params[...] = snap[0]
        self.clf.params[...] = snap[1]
        self.target_clf.params[...] = snap[2]
        self.policy_opt, self.clf_opt = snap[3], snap[4]

    def train_epoch(self) -> EpochReport:
        snap = self._snapshot()
        try:
            return self._train_epoch()
        except (NonFiniteError, AssertionError):
            self._restore(snap)
            raise

    def _train_epoch(self) -> EpochReport:
        hp, rng = self.hp, self.rng
        self.epoch += 1
        before = self.env.count

        # (1) collect
        steps = self.collect()
        assert self.env.count - before == steps
        self.samples += steps
        counted = self.env.count

        # (2) fit the successor measure of the current policy
        losses = fit_onpolicy(self.clf, self.clf_opt, self.buffers, self.emb, hp.gamma,
                              hp.n_sgd_clearning, hp.batch_clearning, rng)
        snapshot = self.clf.copy()

        # (3) targets from the current measure and the archive of past epochs
        if self.objective == "leads":
            m_past = [self.m_function(c) for c in self.archive.classifiers()]
            self.targets = select_targets(self.buffers, self.m_function(self.clf), m_past, self.prev_targets,
                                          self.env.s0, hp.target_subsample, rng)
            self.prev_targets = [s.copy() for s in self.targets.states]
        self.archive.push(self.epoch, snapshot)

        # (4) policy improvement with off-policy refresh of the classifier
        self.target_clf.params[...] = self.clf.params
        values, entropies = [], []
        for _ in range(hp.n_sgd_actor):
            z = rng.integers(hp.n_skill, size=hp.batch_loss)
            s1 = self._sample_skill_states(z)
            if self.objective == "leads":
                s2 = np.stack([self.targets.states[k] for k in z])
            else:
                s2 = self._sample_skill_states(z)
            noise = rng.standard_normal((hp.batch_loss, hp.n_skill, self.policy.action_dim))
            res = policy_objective(self.policy, self.clf, self.emb, self.env, z, s1, s2, noise,
                                   hp.lambda_h, self.objective)
            self.policy_opt.step(self.policy.params, res.grad, ascent=True)
            values.append(res.value)
            entropies.append(res.entropy)
            refresh_offpolicy(self.clf, self.clf_opt, self.target_clf, self.buffers, self.emb,
                              self._sample_encoded, hp.gamma, hp.lambda_clearning, hp.batch_clearning, rng)
            self.refresh_steps += 1
            if self.refresh_steps % hp.target_sync == 0:
                self.target_clf.params[...] = self.clf.params
        assert self.env.count == counted, "policy and classifier updates must not touch the environment"

        self.grid.check_union()
        self.curve.append(self.samples, self.grid.n_cells, self.grid.fraction)
        epoch_cells = [set() for _ in range(hp.n_skill)]
        for z, eps in enumerate(self.buffers.episodes):
            for ep in eps:
                epoch_cells[z] |= set(self.grid.cells_of(self.env.featurize_batch(ep.states)).tolist())
        return EpochReport(
            epoch=self.epoch,
            samples=self.samples,
            targets=None if self.objective != "leads" else [t.copy() for t in self.targets.states],
            objective=float(np.mean(values)) if values else float("nan"),
            entropy=float(np.mean(entropies)) if entropies else float("nan"),
            cells=self.grid.n_cells,
            fraction=self.grid.fraction,
            clf_loss=float(np.mean(losses)) if losses else float("nan"),
            epoch_cells=epoch_cells,
        )

    def _sample_skill_states(self, z: np.ndarray) -> np.ndarray:
        out = np.empty((len(z), self.buffers.pool_raw.shape[1]))
        for k in range(self.hp.n_skill):
            mask = z == k
            if mask.any():
                pool = self.buffers.skill_states[k]
                out[mask] = self.buffers.pool_raw[pool[self.rng.integers(len(pool), size=int(mask.sum()))]]
        return out

    # fields for heatmaps -----------------------------------------------------
    def grid_fields(self) -> dict[str, np.ndarray]:
        """m(s0, ., z) and u(., z) at cell centers of the coverage grid (2-D state envs only)."""
        if self.env.state_dim != 2:
            return {}
        g = self.grid.resolution
        lo, hi = self.grid.lo, self.grid.hi
        centers = lo + (np.stack(np.meshgrid(np.arange(g), np.arange(g)), axis=-1).reshape(-1, 2) + 0.5) \
            * (hi - lo) / g  # row-major over (iy, ix): meshgrid gives (ix, iy) pairs
        rng = np.random.default_rng(0)
        m_now = self.m_function(self.clf, rng)
        ssm = np.stack([m_now(self.env.s0, centers, z) for z in range(self.hp.n_skill)])
        m_past = [self.m_function(c, rng) for c in self.archive.classifiers()[:-1]]
        u = uncertainty_table(centers, m_now, m_past, self.prev_targets, self.env.s0, self.hp.n_skill)
        return {"ssm": ssm.reshape(-1, g, g), "uncertainty": u.reshape(-1, g, g)}
