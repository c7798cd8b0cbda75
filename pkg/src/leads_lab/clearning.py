"""Successor-state-measure estimation by classification (C-learning).

A logit network f(s1, a, s2, z) is trained to tell future states of the
anchor (s1, a, z) apart from states drawn from the marginal of all skills;
at the balanced optimum exp(f) is the density ratio p_future / p_marginal.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .envs import Episode
from .nn import Adam, DenseNet, NonFiniteError

MAX_RESAMPLE = 16
WEIGHT_CLIP = 20.0


def skill_embeddings(n_skill: int, z_dim: int, rng: np.random.Generator) -> np.ndarray:
    """Fixed unit-norm Gaussian skill descriptors, one row per skill."""
    for _ in range(100):
        emb = rng.standard_normal((n_skill, z_dim))
        emb /= np.linalg.norm(emb, axis=1, keepdims=True)
        if n_skill < 2:
            return emb
        d = np.linalg.norm(emb[:, None] - emb[None], axis=2)
        if d[~np.eye(n_skill, dtype=bool)].min() > 0.1:
            return emb
    raise RuntimeError("could not draw well-separated skill embeddings")


class Classifier:
    """Logit network over ``[s1, a, s2, z]``; hidden layers relu, scalar output."""

    def __init__(self, obs_dim: int, act_dim: int, z_dim: int, hidden: Sequence[int] = (256, 128),
                 rng: np.random.Generator | None = None, params: np.ndarray | None = None):
        self.obs_dim, self.act_dim, self.z_dim = int(obs_dim), int(act_dim), int(z_dim)
        self.hidden = tuple(int(h) for h in hidden)
        sizes = [2 * self.obs_dim + self.act_dim + self.z_dim, *self.hidden, 1]
        self.net = DenseNet(sizes, ["relu"] * len(self.hidden) + ["linear"], rng=rng, params=params)

    @property
    def params(self) -> np.ndarray:
        return self.net.params

    @property
    def shape(self) -> list[int]:
        return [self.obs_dim, self.act_dim, self.z_dim, *self.hidden]

    @classmethod
    def from_shape(cls, shape: Sequence[int], params: np.ndarray | None = None) -> "Classifier":
        return cls(shape[0], shape[1], shape[2], hidden=shape[3:], params=params)

    def copy(self) -> "Classifier":
        return Classifier.from_shape(self.shape, self.params.copy())

    @staticmethod
    def inputs(s1, a, s2, z) -> np.ndarray:
        parts = [np.atleast_2d(np.asarray(p, dtype=np.float64)) for p in (s1, a, s2, z)]
        n = max(p.shape[0] for p in parts)
        parts = [np.broadcast_to(p, (n, p.shape[1])) for p in parts]
        return np.concatenate(parts, axis=1)

    def logits(self, s1, a, s2, z) -> np.ndarray:
        return self.net.forward(self.inputs(s1, a, s2, z))[:, 0]


def m_eval(clf: Classifier, s1, a, s2, z_emb) -> np.ndarray:
    """Estimated successor density ratio exp(f)."""
    return np.exp(clf.logits(s1, a, s2, z_emb))


def m_bar(clf: Classifier, sample_actions: Callable[[np.ndarray, int], np.ndarray], s1, s2, z_emb,
          skill: int, k: int = 8) -> np.ndarray:
    """exp(f) averaged over ``k`` actions drawn at ``s1`` for ``skill``.

    ``sample_actions(s1_obs_repeated, skill)`` returns encoded actions for
    each row. ``s2`` may hold several states; the same k actions are used for
    all of them.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    s1 = np.atleast_2d(np.asarray(s1, dtype=float))
    s2 = np.atleast_2d(np.asarray(s2, dtype=float))
    acts = sample_actions(np.repeat(s1, k, axis=0), skill)
    n2 = s2.shape[0]
    x = Classifier.inputs(np.repeat(s1, k * n2, axis=0), np.repeat(acts, n2, axis=0),
                          np.tile(s2, (k, 1)), z_emb)
    return np.exp(clf.net.forward(x)[:, 0]).reshape(k, n2).mean(axis=0)


# --- buffers -------------------------------------------------------------------

@dataclass
class SkillBuffers:
    """Per-skill episodes of the current epoch, flattened on ``finalize``.

    The marginal pool holds every state of every stored episode (initial
    state, successors and terminal state).
    """

    n_skill: int
    episodes: list[list[Episode]] = field(default_factory=list)

    def __post_init__(self):
        self.reset()

    def reset(self) -> None:
        self.episodes = [[] for _ in range(self.n_skill)]
        self._ready = False

    def add(self, episode: Episode) -> None:
        if len(episode) < 1:
            raise ValueError("cannot store an empty episode")
        self.episodes[episode.skill].append(episode)
        self._ready = False

    def finalize(self, env) -> "SkillBuffers":
        eps = [e for per_skill in self.episodes for e in per_skill]
        if not eps:
            raise ValueError("buffers are empty")
        raw, skills_of_state, offsets = [], [], []
        t_idx, ep_of, a_list = [], [], []
        pos = 0
        for i, e in enumerate(eps):
            offsets.append(pos)
            raw.append(e.states)
            skills_of_state.append(np.full(len(e.states), e.skill))
            t_idx.append(np.arange(len(e)))
            ep_of.append(np.full(len(e), i))
            a_list.append(e.actions)
            pos += len(e.states)
        self.env = env
        self.pool_raw = np.concatenate(raw)
        self.pool_obs = env.encode(self.pool_raw)
        self.pool_skill = np.concatenate(skills_of_state)
        self.ep_offset = np.array(offsets)
        self.ep_length = np.array([len(e) for e in eps])
        self.ep_skill = np.array([e.skill for e in eps])
        self.tr_t = np.concatenate(t_idx)
        self.tr_ep = np.concatenate(ep_of)
        self.tr_skill = self.ep_skill[self.tr_ep]
        self.tr_state = self.ep_offset[self.tr_ep] + self.tr_t  # pool index of s_t
        self.tr_action = env.encode_actions(np.concatenate(a_list))
        self.skill_states = [np.flatnonzero(self.pool_skill == z) for z in range(self.n_skill)]
        self._ready = True
        return self

    def _need(self):
        if not self._ready:
            raise RuntimeError("call finalize() after adding episodes")

    @property
    def n_transitions(self) -> int:
        self._need()
        return len(self.tr_t)

    @property
    def n_states(self) -> int:
        self._need()
        return len(self.pool_raw)

    def future_indices(self, anchors: np.ndarray, gamma: float, rng: np.random.Generator) -> np.ndarray:
        """Pool indices of geometric-offset future states for transition anchors."""
        self._need()
        return self.ep_offset[self.tr_ep[anchors]] + future_offsets(
            self.tr_t[anchors], self.ep_length[self.tr_ep[anchors]], gamma, rng)

    def sample_marginal(self, rng: np.random.Generator, size: int | None = None):
        """Pool indices drawn uniformly over all stored states (a scalar when size is None)."""
        self._need()
        if self.n_states == 0:
            raise ValueError("buffers are empty")
        return rng.integers(self.n_states, size=size)

    def next_index(self, anchors: np.ndarray) -> np.ndarray:
        return self.tr_state[anchors] + 1


def future_offsets(t: np.ndarray, length: np.ndarray, gamma: float, rng: np.random.Generator) -> np.ndarray:
    """State index ``t + 1 + delta`` inside each episode with
    delta ~ Geometric(1 - gamma) on {0, 1, ...}; out-of-episode draws are
    redrawn up to 16 times, then fall back to the final state."""
    t = np.asarray(t)
    length = np.asarray(length)
    if gamma <= 0.0:
        delta = np.zeros((MAX_RESAMPLE, t.size), dtype=np.int64)
    else:
        delta = rng.geometric(1.0 - gamma, size=(MAX_RESAMPLE, t.size)) - 1
    idx = t[None, :] + 1 + delta
    ok = idx <= length[None, :]
    first = np.argmax(ok, axis=0)
    chosen = idx[first, np.arange(t.size)]
    return np.where(ok.any(axis=0), chosen, length)


def sample_positive(episode: Episode, t: int, gamma: float, rng: np.random.Generator) -> np.ndarray:
    """Future state of step ``t``: zero offset is the successor ``states[t + 1]``."""
    if len(episode) == 0:
        raise ValueError("empty episode")
    if not 0 <= t < len(episode):
        raise ValueError(f"step {t} outside episode of length {len(episode)}")
    i = future_offsets(np.array([t]), np.array([len(episode)]), gamma, rng)[0]
    return episode.states[i]


def sample_marginal(buffers: SkillBuffers, rng: np.random.Generator) -> np.ndarray:
    return buffers.pool_raw[buffers.sample_marginal(rng)]


# --- training ------------------------------------------------------------------

def _bce_grad(f: np.ndarray, labels: np.ndarray, weights: np.ndarray) -> tuple[float, np.ndarray]:
    """Weighted logistic loss sum and its gradient w.r.t. the logits."""
    # log(1 + e^{-f}) for label 1, log(1 + e^{f}) for label 0
    signed = np.where(labels > 0.5, -f, f)
    loss = float(np.sum(weights * np.logaddexp(0.0, signed)))
    sig = 0.5 * (1.0 + np.tanh(0.5 * f))
    return loss, weights * (sig - labels)


def _apply(clf: Classifier, opt: Adam, x: np.ndarray, labels: np.ndarray, weights: np.ndarray) -> float:
    f, cache = clf.net.forward_cache(x)
    loss, g = _bce_grad(f[:, 0], labels, weights)
    if not np.isfinite(loss):
        raise NonFiniteError(f"classifier loss became {loss}")
    grad, _ = clf.net.backward(cache, g[:, None], need_input=False)
    opt.step(clf.params, grad)
    return loss


def onpolicy_batch(buffers: SkillBuffers, emb: np.ndarray, gamma: float, batch: int, rng: np.random.Generator):
    """Balanced classification batch of ``batch`` examples: one future
    positive and one marginal negative for each of ``batch // 2`` anchor
    transitions. Returns ``(inputs, labels)``."""
    batch = max(batch // 2, 1)
    anchors = rng.integers(buffers.n_transitions, size=batch)
    pos = buffers.future_indices(anchors, gamma, rng)
    neg = buffers.sample_marginal(rng, size=batch)
    s1 = buffers.pool_obs[buffers.tr_state[anchors]]
    a = buffers.tr_action[anchors]
    z = emb[buffers.tr_skill[anchors]]
    x = np.concatenate([
        Classifier.inputs(s1, a, buffers.pool_obs[pos], z),
        Classifier.inputs(s1, a, buffers.pool_obs[neg], z),
    ])
    labels = np.concatenate([np.ones(batch), np.zeros(batch)])
    return x, labels


def fit_onpolicy(clf: Classifier, opt: Adam, buffers: SkillBuffers, emb: np.ndarray, gamma: float,
                 n_steps: int = 256, batch: int = 1024, rng: np.random.Generator | None = None) -> list[float]:
    """Monte-Carlo C-learning on the current buffers; returns mean losses."""
    rng = rng if rng is not None else np.random.default_rng(0)
    losses = []
    for _ in range(n_steps):
        x, labels = onpolicy_batch(buffers, emb, gamma, batch, rng)
        w = np.full(len(labels), 1.0 / len(labels))
        losses.append(_apply(clf, opt, x, labels, w))
    return losses


def refresh_offpolicy(clf: Classifier, opt: Adam, target: Classifier, buffers: SkillBuffers, emb: np.ndarray,
                      sample_actions: Callable[[np.ndarray, np.ndarray, np.random.Generator], np.ndarray],
                      gamma: float, lam: float = 0.5, batch: int = 1024,
                      rng: np.random.Generator | None = None) -> float:
    """One temporal-difference C-learning step that reuses stored transitions.

    Positives: a Monte-Carlo future sample (weight ``lam``), the successor
    state (weight ``(1 - lam)(1 - gamma)``) and a marginal sample reweighted
    by the clipped target-network ratio at the successor under the current
    policy (weight ``(1 - lam) gamma w``). One marginal negative per anchor.
    ``batch // 2`` anchors are drawn, matching the on-policy anchor count.
    ``sample_actions(raw_states, skills, rng)`` returns encoded actions.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    batch = max(batch // 2, 1)
    anchors = rng.integers(buffers.n_transitions, size=batch)
    skills = buffers.tr_skill[anchors]
    z = emb[skills]
    s1 = buffers.pool_obs[buffers.tr_state[anchors]]
    a = buffers.tr_action[anchors]
    nxt = buffers.next_index(anchors)
    mc = buffers.future_indices(anchors, gamma, rng)
    s_f = buffers.sample_marginal(rng, size=batch)
    s_r = buffers.sample_marginal(rng, size=batch)

    a_next = sample_actions(buffers.pool_raw[nxt], skills, rng)
    f_t = target.logits(buffers.pool_obs[nxt], a_next, buffers.pool_obs[s_f], z)
    w = np.clip(np.exp(np.minimum(f_t, 50.0)), 0.0, WEIGHT_CLIP)

    blocks = [mc, nxt, s_f, s_r]
    x = np.concatenate([Classifier.inputs(s1, a, buffers.pool_obs[b], z) for b in blocks])
    labels = np.concatenate([np.ones(3 * batch), np.zeros(batch)])
    weights = np.concatenate([
        np.full(batch, lam),
        np.full(batch, (1.0 - lam) * (1.0 - gamma)),
        (1.0 - lam) * gamma * w,
        np.ones(batch),
    ]) / batch
    return _apply(clf, opt, x, labels, weights)
