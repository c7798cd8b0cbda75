"""Neural successor-ratio fidelity on small gridworlds with fixed tabular
skills, measured against the exact classifier fixed point."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .clearning import Classifier, SkillBuffers, fit_onpolicy, skill_embeddings
from .envs import Episode, GridSpec, GridWorld, rollout
from .nn import Adam
from .oracle import buffer_log_ratio

# up, right, down, left
DEFAULT_SKILLS = np.array([[0.1, 0.4, 0.4, 0.1], [0.4, 0.1, 0.1, 0.4]])


def tabular_policies(grid: GridWorld, action_probs: np.ndarray = DEFAULT_SKILLS) -> np.ndarray:
    """State-independent action distributions broadcast to (Z, S, 4)."""
    probs = np.asarray(action_probs, dtype=float)
    return np.repeat(probs[:, None, :], grid.n_states, axis=1)


def tabular_episodes(grid: GridWorld, policies: np.ndarray, per_skill: int, rng: np.random.Generator,
                     horizon: int | None = None) -> list[Episode]:
    horizon = horizon or grid.horizon
    out = []
    for _ in range(per_skill):
        for z in range(policies.shape[0]):
            def act(s, skill, r, _z=z):
                return np.array([float(r.choice(4, p=policies[_z, int(s[0])]))])
            out.append(rollout(grid, act, z, horizon, rng))
    return out


def visited_tuples(buffers: SkillBuffers) -> np.ndarray:
    """Unique (skill, s1, a, s2) index tuples where s2 follows the transition
    (s1, a) later in the same episode; rows of an int array."""
    rows = set()
    for per_skill in buffers.episodes:
        for ep in per_skill:
            cells = ep.states[:, 0].astype(int)
            acts = ep.actions[:, 0].astype(int)
            for t in range(len(ep)):
                for s2 in set(cells[t + 1:].tolist()):
                    rows.add((ep.skill, int(cells[t]), int(acts[t]), s2))
    return np.array(sorted(rows), dtype=np.int64)


def logit_errors(clf: Classifier, emb: np.ndarray, grid: GridWorld, tuples: np.ndarray,
                 target: np.ndarray) -> np.ndarray:
    """|f - target| at each tuple; ``target`` has shape (Z, S, A, S)."""
    z, s1, a, s2 = tuples.T
    f = clf.logits(grid.encode(s1), grid.encode_actions(a), grid.encode(s2), emb[z])
    return np.abs(f - target[z, s1, a, s2])


@dataclass
class FidelityResult:
    median_error: float
    n_tuples: int
    losses: list[float]
    clf: Classifier
    emb: np.ndarray
    buffers: SkillBuffers
    tuples: np.ndarray
    target: np.ndarray


def gridworld_fidelity(steps: int = 2000, seed: int = 0, size: int = 5, gamma: float = 0.95,
                       episodes_per_skill: int = 100, horizon: int = 50,
                       action_probs: np.ndarray = DEFAULT_SKILLS, batch: int = 1024, lr: float = 5e-4,
                       hidden=(256, 128), z_dim: int = 20) -> FidelityResult:
    """Fit the classifier on-policy for ``steps`` steps on fixed skills in a
    ``size`` x ``size`` open grid (start in the centre) and report the median
    logit error over visited tuples."""
    rng = np.random.default_rng(seed)
    grid = GridWorld(GridSpec(size, size, s0=(size * size) // 2, horizon=horizon))
    policies = tabular_policies(grid, action_probs)
    buffers = SkillBuffers(policies.shape[0])
    for ep in tabular_episodes(grid, policies, episodes_per_skill, rng, horizon):
        buffers.add(ep)
    buffers.finalize(grid)
    emb = skill_embeddings(policies.shape[0], z_dim, rng)
    clf = Classifier(grid.obs_dim, grid.action_obs_dim, z_dim, hidden, rng=rng)
    opt = Adam(lr, clf.params.size)
    losses = fit_onpolicy(clf, opt, buffers, emb, gamma, steps, batch, rng)
    target = buffer_log_ratio(grid.to_mdp(gamma), policies, horizon)
    tuples = visited_tuples(buffers)
    err = logit_errors(clf, emb, grid, tuples, target)
    return FidelityResult(float(np.median(err)), len(tuples), losses, clf, emb, buffers, tuples, target)
