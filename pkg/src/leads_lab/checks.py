"""Named suites of exact tabular checks, shared by the CLI and the tests."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import oracle


@dataclass
class Check:
    name: str
    measured: float
    expected: float
    tol: float
    passed: bool
    relation: str = "=="

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"[{status}] {self.name}: measured={self.measured:.12g} {self.relation} "
                f"expected={self.expected:.12g} (tol {self.tol:g})")


def _eq(name, measured, expected, tol) -> Check:
    return Check(name, measured, expected, tol, abs(measured - expected) <= tol)


def _le(name, lhs, rhs, tol=0.0) -> Check:
    return Check(name, lhs, rhs, tol, lhs <= rhs + tol, "<=")


def random_instances(n: int, seed: int, max_states: int = 16, max_actions: int = 4, n_skills: int = 3):
    """Random (mdp, policies) pairs with gamma drawn from {0.5, 0.9, 0.95}."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        S = int(rng.integers(2, max_states + 1))
        A = int(rng.integers(1, max_actions + 1))
        gamma = float(rng.choice([0.5, 0.9, 0.95]))
        mdp = oracle.random_mdp(rng, S, A, gamma, sparsity=float(rng.choice([0.0, 0.5])))
        mdp = oracle.FiniteMdp(mdp.P, gamma, int(rng.integers(S)))
        pols = oracle.random_policies(rng, n_skills, S, A, concentration=float(rng.choice([0.3, 1.0])))
        out.append((mdp, pols))
    return out


def suite_mi_ambiguity() -> list[Check]:
    z1, z2 = oracle.ambiguity_sets()
    checks = [
        _eq("MI of Dirac skill set", oracle.exact_mi(z1), math.log(4), 1e-12),
        _eq("MI of two-state skill set", oracle.exact_mi(z2), math.log(4), 1e-12),
        _eq("MI of shared occupancy", oracle.exact_mi(np.tile(z2.mean(0), (4, 1))), 0.0, 1e-12),
    ]
    mdp, pols = oracle.absorbing_skill_mdp()
    occ = oracle.occupancies(mdp, pols)
    checks.append(_le("Jensen bound below MI (absorbing skills)", oracle.jensen_bound(mdp, pols), oracle.exact_mi(occ)))
    return checks


def suite_bounds(n: int = 20, seed: int = 1) -> list[Check]:
    checks = []
    for i, (mdp, pols) in enumerate(random_instances(n, seed)):
        b4 = oracle.jensen_bound(mdp, pols)
        b5 = oracle.diversity_bound(mdp, pols)
        checks.append(_le(f"instance {i}: diversity bound <= Jensen bound", b5, b4))
        gaps = oracle.jensen_gaps(mdp, pols)
        worst = float(np.nanmin(gaps))
        checks.append(Check(f"instance {i}: pointwise log-expectation dominance", worst, 0.0, 1e-12,
                            worst >= -1e-12, ">="))
        mi = oracle.exact_mi(oracle.occupancies(mdp, pols))
        checks.append(_le(f"instance {i}: Jensen bound <= MI", b4, mi, 1e-12))
    return checks


def suite_kl_decomposition(n: int = 20, seed: int = 2) -> list[Check]:
    rng = np.random.default_rng(seed)
    checks = []
    for i in range(n):
        S = int(rng.integers(3, 13))
        A = int(rng.integers(2, 5))
        mdp = oracle.random_mdp(rng, S, A, float(rng.choice([0.5, 0.9, 0.95])))
        Z = int(rng.integers(1, 5))
        now = oracle.random_policies(rng, Z, S, A)
        archive = [oracle.random_policies(rng, Z, S, A) for _ in range(int(rng.integers(1, 4)))]
        res = oracle.kl_decomposition_check(mdp, now, int(rng.integers(Z)), archive)
        checks.append(_eq(f"instance {i}: KL vs weighted exploration score", res.lhs, res.rhs, 1e-9))
    return checks


def suite_ssm_convergence(n: int = 20, seed: int = 3) -> list[Check]:
    checks = []
    for i, (mdp, pols) in enumerate(random_instances(n, seed, n_skills=1)):
        M = oracle.exact_ssm(mdp, pols, 0).m
        T = oracle.truncation_horizon(mdp.gamma, 1e-13)
        series = oracle.power_series_ssm(mdp, pols, 0, T)
        checks.append(_eq(f"instance {i}: inverse vs power series (max abs diff)",
                          float(np.max(np.abs(M - series))), 0.0, 1e-10))
        checks.append(_eq(f"instance {i}: row sums vs 1/(1-gamma)",
                          float(np.max(np.abs(M.sum(1) - 1.0 / (1.0 - mdp.gamma)))), 0.0, 1e-9))
    return checks


def _fd(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    flat = x.reshape(-1)
    g = np.zeros(flat.size)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def coordinate_rel_err(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    """|a - n| / max(|a|, |n|, floor) per coordinate; the floor keeps
    coordinates that are zero up to rounding from dividing noise by noise."""
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)


def suite_gradients(seed: int = 0, batch: int = 6) -> list[Check]:
    """Policy gradient of objective + entropy bonus against central differences,
    on width-8 networks in the Easy maze, for both objectives."""
    from .clearning import Classifier, skill_embeddings
    from .envs import make_env
    from .leads import policy_objective
    from .nn import SquashedGaussianPolicy

    rng = np.random.default_rng(seed)
    env = make_env("easy")
    n_skill, z_dim, lam = 3, 4, 0.05
    emb = skill_embeddings(n_skill, z_dim, rng)
    pol = SquashedGaussianPolicy(env.obs_dim, z_dim, env.action_dim, (8, 8), rng=rng)
    clf = Classifier(env.obs_dim, env.action_dim, z_dim, (8, 8), rng=rng)
    z = rng.integers(n_skill, size=batch)
    s1 = rng.uniform(-0.9, 0.9, size=(batch, 2))
    s2 = rng.uniform(-0.9, 0.9, size=(batch, 2))
    noise = rng.standard_normal((batch, n_skill, env.action_dim))
    checks = []
    for mode in ("leads", "diayn-ablation"):
        def total():
            r = policy_objective(pol, clf, emb, env, z, s1, s2, noise, lam, mode)
            return r.value + lam * r.entropy
        grad = policy_objective(pol, clf, emb, env, z, s1, s2, noise, lam, mode).grad
        err = coordinate_rel_err(grad, _fd(total, pol.params))
        checks.append(_le(f"{mode}: worst per-coordinate relative error over {err.size} weights",
                          float(err.max()), 1e-4))
    return checks


def tabular_m(ssms: np.ndarray):
    """An m(start, states, skill) function backed by exact successor measures,
    for environments whose raw state is a single cell index."""
    def m(start, states, skill):
        cells = np.atleast_2d(states)[:, 0].astype(int)
        return ssms[skill, int(np.asarray(start).reshape(-1)[0]), cells]
    return m


def suite_uncertainty(n: int = 10, seed: int = 4) -> list[Check]:
    """Neural-side uncertainty and target selection fed exact successor
    measures, compared with the tabular score and an exhaustive argmax."""
    from .clearning import SkillBuffers
    from .envs import GridSpec, GridWorld, rollout
    from .leads import select_targets, uncertainty_table

    rng = np.random.default_rng(seed)
    checks = []
    for i in range(n):
        side = int(rng.integers(3, 6))
        grid = GridWorld(GridSpec(side, side, s0=int(rng.integers(side * side)), horizon=8))
        mdp = grid.to_mdp(float(rng.choice([0.5, 0.9, 0.95])))
        Z, S = 3, grid.n_states
        pols = oracle.random_policies(rng, Z, S, 4, concentration=0.5)
        ssm = lambda p: np.stack([oracle.exact_ssm(mdp, p, k, normalized=True).m for k in range(Z)])
        now = ssm(pols)
        archive = [ssm(oracle.random_policies(rng, Z, S, 4)) for _ in range(int(rng.integers(0, 3)))]
        prev = [int(c) for c in rng.integers(S, size=Z)]
        s0 = grid.spec.s0
        raw_prev = [np.array([float(c)]) for c in prev]
        table = uncertainty_table(np.arange(S, dtype=float)[:, None], tabular_m(now),
                                  [tabular_m(a) for a in archive], raw_prev, grid.s0, Z)
        exact = np.array([[oracle.exact_uncertainty(now, archive, prev, s, k, s0) for s in range(S)]
                          for k in range(Z)])
        checks.append(_eq(f"instance {i}: max |neural - exact uncertainty|",
                          float(np.max(np.abs(table - exact))), 0.0, 1e-9))

        buffers = SkillBuffers(Z)
        for k in range(Z):
            for _ in range(2):
                def act(s, skill, r, _k=k):
                    return np.array([float(r.choice(4, p=pols[_k, int(s[0])]))])
                buffers.add(rollout(grid, act, k, grid.horizon, rng))
        buffers.finalize(grid)
        sel = select_targets(buffers, tabular_m(now), [tabular_m(a) for a in archive], raw_prev, grid.s0,
                             subsample=buffers.n_states, rng=rng)
        agree = 0
        for k in range(Z):
            idx = buffers.skill_states[k]
            cells = buffers.pool_raw[idx, 0].astype(int)
            best = int(idx[int(np.argmax(exact[k, cells]))])
            agree += int(buffers.pool_raw[best, 0] == sel.states[k][0])
        checks.append(_eq(f"instance {i}: skills whose target matches the exhaustive argmax", agree, Z, 0))
    return checks


SUITES = {
    "mi-ambiguity": suite_mi_ambiguity,
    "bounds": suite_bounds,
    "kl-decomposition": suite_kl_decomposition,
    "ssm-convergence": suite_ssm_convergence,
    "gradients": suite_gradients,
    "uncertainty": suite_uncertainty,
}


def run_suite(name: str) -> list[Check]:
    try:
        return SUITES[name]()
    except KeyError:
        raise ValueError(f"unknown suite {name!r}; choose from {', '.join(SUITES)}") from None
