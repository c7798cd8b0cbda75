"""Exact tabular computations: successor state measures, occupancies, mutual
information, both lower bounds, the target-state uncertainty score and the
KL decomposition of its exploration term.

Ratio-valued quantities (bounds, uncertainty) use the density-ratio
convention shared with the neural classifier: normalized successor measure
divided by the all-skill state marginal.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

EPS = 1e-8


@dataclass(frozen=True)
class FiniteMdp:
    P: np.ndarray  # (n_states, n_actions, n_states)
    gamma: float
    s0: int = 0

    def __post_init__(self):
        P = np.asarray(self.P, dtype=float)
        object.__setattr__(self, "P", P)
        if P.ndim != 3 or P.shape[0] != P.shape[2]:
            raise ValueError(f"transition tensor must be (S, A, S), got {P.shape}")
        if np.any(P < 0) or np.max(np.abs(P.sum(axis=2) - 1.0)) > 1e-12:
            raise ValueError("transition rows must be probability vectors")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        if not 0 <= self.s0 < P.shape[0]:
            raise ValueError("s0 out of range")

    @property
    def n_states(self) -> int:
        return self.P.shape[0]

    @property
    def n_actions(self) -> int:
        return self.P.shape[1]

    def to_json(self) -> str:
        return json.dumps({
            "n_states": self.n_states,
            "n_actions": self.n_actions,
            "gamma": self.gamma,
            "s0": self.s0,
            "P": [float(x).hex() for x in self.P.ravel()],
        })

    @classmethod
    def from_json(cls, text: str) -> "FiniteMdp":
        raw = json.loads(text)
        P = np.array([float.fromhex(x) for x in raw["P"]]).reshape(
            raw["n_states"], raw["n_actions"], raw["n_states"])
        return cls(P, raw["gamma"], raw["s0"])

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "FiniteMdp":
        return cls.from_json(Path(path).read_text())


def random_mdp(rng: np.random.Generator, n_states: int, n_actions: int, gamma: float,
               sparsity: float = 0.0) -> FiniteMdp:
    """Dirichlet transition rows, optionally with a fraction of zeroed entries."""
    P = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    if sparsity > 0:
        mask = rng.random(P.shape) < sparsity
        idx = rng.integers(n_states, size=(n_states, n_actions))
        mask[np.arange(n_states)[:, None], np.arange(n_actions)[None, :], idx] = False
        P = np.where(mask, 0.0, P)
        P /= P.sum(axis=2, keepdims=True)
    return FiniteMdp(P, gamma, 0)


def random_policies(rng: np.random.Generator, n_skills: int, n_states: int, n_actions: int,
                    concentration: float = 1.0) -> np.ndarray:
    """Stochastic policy set of shape (n_skills, n_states, n_actions)."""
    return rng.dirichlet(np.full(n_actions, concentration), size=(n_skills, n_states))


def check_policies(policies: np.ndarray, mdp: FiniteMdp) -> np.ndarray:
    policies = np.asarray(policies, dtype=float)
    if policies.ndim != 3 or policies.shape[1:] != (mdp.n_states, mdp.n_actions):
        raise ValueError(f"policy set must be (Z, {mdp.n_states}, {mdp.n_actions}), got {policies.shape}")
    if np.any(policies < 0) or np.max(np.abs(policies.sum(axis=2) - 1.0)) > 1e-12:
        raise ValueError("policy rows must be probability vectors")
    return policies


@dataclass(frozen=True)
class SsmMatrix:
    m: np.ndarray
    normalized: bool
    gamma: float

    def row_sums(self) -> np.ndarray:
        return self.m.sum(axis=1)


def policy_kernel(mdp: FiniteMdp, pi_z: np.ndarray) -> np.ndarray:
    """State-to-state kernel P_pi[s, s'] = sum_a pi(a|s) P[s, a, s']."""
    return np.einsum("sa,sat->st", pi_z, mdp.P)


def exact_ssm(mdp: FiniteMdp, policies: np.ndarray, skill: int, normalized: bool = False) -> SsmMatrix:
    """M = (I - gamma P_pi)^-1, optionally scaled by (1 - gamma)."""
    policies = check_policies(policies, mdp)
    Ppi = policy_kernel(mdp, policies[skill])
    A = np.eye(mdp.n_states) - mdp.gamma * Ppi
    M = np.linalg.solve(A, np.eye(mdp.n_states))
    assert np.all(np.isfinite(M)), "singular successor system"
    if normalized:
        M = (1.0 - mdp.gamma) * M
    return SsmMatrix(M, normalized, mdp.gamma)


def truncation_horizon(gamma: float, tol: float) -> int:
    """Smallest T with gamma^T / (1 - gamma) <= tol."""
    if gamma == 0.0:
        return 1
    return max(1, math.ceil(math.log(tol * (1.0 - gamma)) / math.log(gamma)))


def power_series_ssm(mdp: FiniteMdp, policies: np.ndarray, skill: int, T: int) -> np.ndarray:
    """sum_{t < T} gamma^t P_pi^t, accumulated term by term."""
    Ppi = policy_kernel(mdp, np.asarray(policies)[skill])
    term = np.eye(mdp.n_states)
    total = np.zeros_like(term)
    for _ in range(T):
        total += term
        term = mdp.gamma * (term @ Ppi)
    return total


def occupancies(mdp: FiniteMdp, policies: np.ndarray) -> np.ndarray:
    """Normalized discounted occupancy from s0 per skill, shape (Z, S).

    Solves the transposed linear system for one row instead of forming the
    full successor matrix.
    """
    policies = check_policies(policies, mdp)
    out = np.empty((policies.shape[0], mdp.n_states))
    e0 = np.zeros(mdp.n_states)
    e0[mdp.s0] = 1.0
    for z in range(policies.shape[0]):
        Ppi = policy_kernel(mdp, policies[z])
        out[z] = (1.0 - mdp.gamma) * np.linalg.solve((np.eye(mdp.n_states) - mdp.gamma * Ppi).T, e0)
    return out


def _uniform(n: int) -> np.ndarray:
    return np.full(n, 1.0 / n)


def exact_mi(occ: np.ndarray, p_z: np.ndarray | None = None) -> float:
    """I(S; Z) = sum_z p(z) sum_s p(s|z) log(p(s|z) / p(s)) with 0 log 0 = 0."""
    occ = np.asarray(occ, dtype=float)
    p_z = _uniform(occ.shape[0]) if p_z is None else np.asarray(p_z, dtype=float)
    p_s = p_z @ occ
    total = 0.0
    for z in range(occ.shape[0]):
        mask = occ[z] > 0
        total += p_z[z] * float(np.sum(occ[z, mask] * np.log(occ[z, mask] / p_s[mask])))
    return total


def ratio_ssms(mdp: FiniteMdp, policies: np.ndarray, p_z: np.ndarray | None = None):
    """Density-ratio successor measures ``M_norm[z][s1, s2] / p(s2)``.

    Returns ``(ratios (Z, S, S), occupancies (Z, S), marginal (S,))``.
    Columns of states with zero marginal are set to zero.
    """
    policies = check_policies(policies, mdp)
    Z = policies.shape[0]
    p_z = _uniform(Z) if p_z is None else np.asarray(p_z, dtype=float)
    norm = np.stack([exact_ssm(mdp, policies, z, normalized=True).m for z in range(Z)])
    occ = norm[:, mdp.s0, :]
    marginal = p_z @ occ
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(marginal > 0, norm / marginal, 0.0)
    return ratios, occ, marginal


def jensen_bound(mdp: FiniteMdp, policies: np.ndarray, p_z: np.ndarray | None = None) -> float:
    """E_{z, s2 ~ rho_z, s1 ~ rho_z}[log m(s1, s2, z)] by exhaustive summation."""
    ratios, occ, _ = ratio_ssms(mdp, policies, p_z)
    p_z = _uniform(occ.shape[0]) if p_z is None else np.asarray(p_z, dtype=float)
    logm = np.log(np.maximum(ratios, EPS))
    w = occ[:, :, None] * occ[:, None, :]  # rho(s1) rho(s2)
    return float(np.sum(p_z[:, None, None] * np.where(w > 0, w * logm, 0.0)))


def diversity_bound(mdp: FiniteMdp, policies: np.ndarray, p_z: np.ndarray | None = None) -> float:
    """As ``jensen_bound`` with integrand log(m / (1 + sum_z' m'))."""
    ratios, occ, _ = ratio_ssms(mdp, policies, p_z)
    p_z = _uniform(occ.shape[0]) if p_z is None else np.asarray(p_z, dtype=float)
    floored = np.maximum(ratios, EPS)
    denom = 1.0 + floored.sum(axis=0)
    integrand = np.log(floored) - np.log(denom)[None]
    w = occ[:, :, None] * occ[:, None, :]
    return float(np.sum(p_z[:, None, None] * np.where(w > 0, w * integrand, 0.0)))


def diversity_bound_loops(mdp: FiniteMdp, policies: np.ndarray, p_z: np.ndarray | None = None) -> float:
    """Loop-by-loop summation of the diversity bound, from power-series
    successor measures. Independent of the vectorized path above."""
    policies = np.asarray(policies, dtype=float)
    Z, S = policies.shape[0], mdp.n_states
    p_z = _uniform(Z) if p_z is None else np.asarray(p_z, dtype=float)
    T = truncation_horizon(mdp.gamma, 1e-14)
    norm = [(1.0 - mdp.gamma) * power_series_ssm(mdp, policies, z, T) for z in range(Z)]
    occ = [norm[z][mdp.s0] for z in range(Z)]
    marg = [sum(p_z[z] * occ[z][s] for z in range(Z)) for s in range(S)]
    total = 0.0
    for z in range(Z):
        for s2 in range(S):
            for s1 in range(S):
                w = occ[z][s1] * occ[z][s2]
                if w == 0.0:
                    continue
                ms = [max(norm[k][s1][s2] / marg[s2], EPS) for k in range(Z)]
                total += p_z[z] * w * math.log(ms[z] / (1.0 + sum(ms)))
    return total


def jensen_gaps(mdp: FiniteMdp, policies: np.ndarray, p_z: np.ndarray | None = None) -> np.ndarray:
    """Per (z, s2) gap ``log E_{s1~rho_z}[m] - E_{s1~rho_z}[log m]`` (NaN off support)."""
    ratios, occ, _ = ratio_ssms(mdp, policies, p_z)
    floored = np.maximum(ratios, EPS)
    Z, S = occ.shape
    gaps = np.full((Z, S), np.nan)
    for z in range(Z):
        for s2 in range(S):
            if occ[z, s2] <= 0:
                continue
            col = floored[z, :, s2]
            gaps[z, s2] = np.log(occ[z] @ col) - occ[z] @ np.log(col)
    return gaps


def occupancy_consistency_gap(mdp: FiniteMdp, policies: np.ndarray) -> np.ndarray:
    """||rho_z - rho_z M_norm||_1 per skill: how far the occupancy is from
    being reproduced by averaging the successor measure over itself."""
    policies = check_policies(policies, mdp)
    out = []
    for z in range(policies.shape[0]):
        M = exact_ssm(mdp, policies, z, normalized=True).m
        rho = M[mdp.s0]
        out.append(float(np.abs(rho - rho @ M).sum()))
    return np.array(out)


def exact_uncertainty(current: np.ndarray, archive: list[np.ndarray], prev_targets, s: int, z: int,
                      s0: int = 0) -> float:
    """Target-state score for state ``s`` under skill ``z``.

    ``current`` and each archive entry are successor measures of shape
    (Z, S, S). ``prev_targets`` holds one state per skill (None means s0).
    """
    current = np.asarray(current, dtype=float)
    Z = current.shape[0]
    prev = [s0 if p is None else int(p) for p in (prev_targets if prev_targets is not None else [None] * Z)]

    def m(ssm, start, zz):
        return max(float(ssm[zz, start, s]), EPS)

    if archive:
        denom = max(sum(float(past[zz, s0, s]) for past in archive for zz in range(Z)), EPS)
    else:
        denom = 1.0
    u = math.log(m(current, s0, z) / denom)
    for zz in range(Z):
        if zz == z:
            continue
        u += math.log(m(current, prev[z], z) / m(current, prev[zz], zz))
        u += math.log(m(current, s0, z) / m(current, s0, zz))
    return u


def uncertainty_table(current: np.ndarray, archive: list[np.ndarray], prev_targets, s0: int = 0) -> np.ndarray:
    """Vectorized score for every (skill, state); shape (Z, S)."""
    current = np.maximum(np.asarray(current, dtype=float), EPS)
    Z, S, _ = current.shape
    prev = np.array([s0 if p is None else int(p) for p in prev_targets])
    if archive:
        denom = np.maximum(sum(np.asarray(a)[:, s0, :].sum(axis=0) for a in archive), EPS)
    else:
        denom = np.ones(S)
    from_s0 = np.log(current[:, s0, :])  # (Z, S)
    from_prev = np.log(current[np.arange(Z), prev, :])  # (Z, S)
    u = from_s0 - np.log(denom)[None]
    u += (Z - 1) * (from_prev + from_s0) - (from_prev.sum(axis=0) - from_prev) - (from_s0.sum(axis=0) - from_s0)
    return u


@dataclass
class KlCheck:
    lhs: float
    rhs: float
    support_ok: bool


def kl_decomposition_check(mdp: FiniteMdp, policies: np.ndarray, skill: int, archive_policies: list[np.ndarray],
                           p_z: np.ndarray | None = None) -> KlCheck:
    """Compare KL(rho_n^z || sum_k rho_k) computed from occupancies with the
    occupancy-weighted sum of the exploration score computed from full
    successor matrices (row s0, normalized, skill-weighted by p(z))."""
    if not archive_policies:
        raise ValueError("archive must be non-empty")
    policies = check_policies(policies, mdp)
    Z = policies.shape[0]
    p_z = _uniform(Z) if p_z is None else np.asarray(p_z, dtype=float)

    # route 1: occupancy vectors from the transposed solve
    rho = occupancies(mdp, policies)[skill]
    mix = sum(p_z @ occupancies(mdp, pk) for pk in archive_policies)
    support_ok = bool(np.all(mix[rho > 0] > 0))
    mask = (rho > 0) & (mix > 0)
    lhs = float(np.sum(rho[mask] * np.log(rho[mask] / mix[mask])))

    # route 2: rows of the full successor matrices
    s0 = mdp.s0
    m_now = exact_ssm(mdp, policies, skill, normalized=True).m[s0]
    denom = np.zeros(mdp.n_states)
    for pk in archive_policies:
        for zz in range(Z):
            denom += p_z[zz] * exact_ssm(mdp, pk, zz, normalized=True).m[s0]
    mask2 = (m_now > 0) & (denom > 0)
    rhs = float(np.sum(m_now[mask2] * np.log(m_now[mask2] / denom[mask2])))
    return KlCheck(lhs, rhs, support_ok)


# --- fixtures from the introductory ambiguity example -------------------------

def ambiguity_sets(n_cells: int = 16) -> tuple[np.ndarray, np.ndarray]:
    """Occupancies of the two four-skill sets on a 4x4 grid: one set with a
    Dirac per skill on neighbouring cells, one with each skill uniform over
    two distant cells."""
    z1 = np.zeros((4, n_cells))
    for z, cell in enumerate((5, 6, 9, 10)):
        z1[z, cell] = 1.0
    z2 = np.zeros((4, n_cells))
    for z, cells in enumerate(((5, 12), (6, 15), (9, 0), (10, 3))):
        z2[z, list(cells)] = 0.5
    return z1, z2


def absorbing_skill_mdp(gamma: float = 0.9, n_targets: int = 4) -> tuple[FiniteMdp, np.ndarray]:
    """Start state 0 with one action per absorbing target state; skill z
    always picks action z. Occupancies are (1-gamma) on s0, gamma on target z."""
    S = n_targets + 1
    P = np.zeros((S, n_targets, S))
    for a in range(n_targets):
        P[0, a, a + 1] = 1.0
        for s in range(1, S):
            P[s, a, s] = 1.0
    pols = np.zeros((n_targets, S, n_targets))
    for z in range(n_targets):
        pols[z, :, z] = 1.0
    return FiniteMdp(P, gamma, 0), pols


# --- fixed point of the sampled classifier -------------------------------------

def buffer_log_ratio(mdp: FiniteMdp, policies: np.ndarray, horizon: int, max_resample: int = 16) -> np.ndarray:
    """Exact Bayes-optimal logit of the balanced future-vs-marginal classifier
    trained on buffers of fixed-length episodes, shape (Z, S, A, S).

    Matches the sampling of the neural trainer: every skill contributes the
    same number of ``horizon``-step episodes from s0 (no termination); an
    anchor is a uniform transition (t < horizon); its positive is the state at
    t + 1 + delta with delta ~ Geometric(1 - gamma), redrawn up to
    ``max_resample`` times when it falls past the episode end and otherwise
    replaced by the final state; a negative is a uniform pool state (all
    horizon + 1 states of every episode). Entries with zero positive
    probability are -inf; anchors never visited are NaN.
    """
    policies = check_policies(policies, mdp)
    Z, S = policies.shape[0], mdp.n_states
    H, g = int(horizon), mdp.gamma
    if H < 1:
        raise ValueError("horizon must be >= 1")
    pos = []
    marg = np.zeros(S)
    for z in range(Z):
        Ppi = policy_kernel(mdp, policies[z])
        d = np.zeros((H + 1, S))  # state distribution at each step
        d[0, mdp.s0] = 1.0
        for t in range(H):
            d[t + 1] = d[t] @ Ppi
        marg += d.mean(axis=0) / Z
        powers = np.empty((H, S, S))
        powers[0] = np.eye(S)
        for j in range(1, H):
            powers[j] = powers[j - 1] @ Ppi
        # future kernel after the taken action, for an anchor at step t
        G = np.empty((H, S, S))
        for t in range(H):
            n = H - t
            k = np.arange(n)  # delta
            if g == 0.0:
                w = (k == 0).astype(float)
            else:
                q = 1.0 - g ** n
                miss = (1.0 - q) ** max_resample
                w = (1.0 - miss) * (1.0 - g) * g ** k / q
                w[-1] += miss
            G[t] = np.tensordot(w, powers[:n], axes=1)
        per_s1 = np.einsum("ts,tuv->suv", d[:H], G)
        with np.errstate(divide="ignore", invalid="ignore"):
            pos.append(np.einsum("sau,suv->sav", mdp.P, per_s1) / d[:H].sum(axis=0)[:, None, None])
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.log(np.stack(pos)) - np.log(marg)[None, None, None, :]
