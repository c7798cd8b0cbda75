from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from leads_lab import oracle
from leads_lab.oracle import FiniteMdp


@st.composite
def instances(draw, max_states=8, max_actions=3, max_skills=3):
    seed = draw(st.integers(0, 2**32 - 1))
    S = draw(st.integers(2, max_states))
    A = draw(st.integers(1, max_actions))
    Z = draw(st.integers(1, max_skills))
    gamma = draw(st.sampled_from([0.0, 0.5, 0.9, 0.95]))
    rng = np.random.default_rng(seed)
    mdp = oracle.random_mdp(rng, S, A, gamma, sparsity=draw(st.sampled_from([0.0, 0.6])))
    return mdp, oracle.random_policies(rng, Z, S, A, concentration=draw(st.sampled_from([0.2, 1.0])))


def test_mi_of_both_ambiguity_sets_is_log4():
    z1, z2 = oracle.ambiguity_sets()
    assert oracle.exact_mi(z1) == pytest.approx(math.log(4), abs=1e-12)
    assert oracle.exact_mi(z2) == pytest.approx(math.log(4), abs=1e-12)


def test_absorbing_mdp_closed_form():
    gamma = 0.9
    mdp, pols = oracle.absorbing_skill_mdp(gamma, 4)
    occ = oracle.occupancies(mdp, pols)
    expected = np.zeros((4, 5))
    expected[:, 0] = 1 - gamma
    expected[np.arange(4), np.arange(1, 5)] = gamma
    np.testing.assert_allclose(occ, expected, atol=1e-14)
    # marginal puts (1-gamma) on s0 and gamma/4 on each target
    mi = gamma * math.log(4)
    assert oracle.exact_mi(occ) == pytest.approx(mi, abs=1e-12)


def test_two_state_ssm_by_hand():
    # deterministic swap: M = [[1, g], [g, 1]] / (1 - g^2)
    g = 0.5
    P = np.array([[[0.0, 1.0]], [[1.0, 0.0]]])
    mdp = FiniteMdp(P, g)
    M = oracle.exact_ssm(mdp, np.ones((1, 2, 1)), 0).m
    np.testing.assert_allclose(M, np.array([[1, g], [g, 1]]) / (1 - g * g), atol=1e-15)


def test_validation_errors():
    with pytest.raises(ValueError):
        FiniteMdp(np.full((2, 1, 2), 0.6), 0.9)
    with pytest.raises(ValueError):
        FiniteMdp(np.full((2, 1, 2), 0.5), 1.0)
    mdp = FiniteMdp(np.full((2, 1, 2), 0.5), 0.9)
    with pytest.raises(ValueError):
        oracle.exact_ssm(mdp, np.full((1, 2, 1), 0.7), 0)


def test_mdp_json_roundtrip_is_bit_exact(tmp_path):
    mdp = oracle.random_mdp(np.random.default_rng(0), 5, 3, 0.95)
    mdp.save(tmp_path / "m.json")
    back = FiniteMdp.load(tmp_path / "m.json")
    assert np.array_equal(back.P, mdp.P) and back.gamma == mdp.gamma


def test_truncation_horizon_tail():
    for g in (0.5, 0.9, 0.95):
        T = oracle.truncation_horizon(g, 1e-10)
        assert g ** T / (1 - g) <= 1e-10
        assert g ** (T - 1) / (1 - g) > 1e-10


@settings(max_examples=60, deadline=None)
@given(inst=instances())
def test_ssm_inverse_equals_power_series(inst):
    mdp, pols = inst
    T = oracle.truncation_horizon(mdp.gamma, 1e-13)
    for z in range(pols.shape[0]):
        M = oracle.exact_ssm(mdp, pols, z)
        np.testing.assert_allclose(M.m, oracle.power_series_ssm(mdp, pols, z, T), atol=1e-10)
        assert np.all(M.m >= -1e-15)
        np.testing.assert_allclose(M.row_sums(), 1 / (1 - mdp.gamma), rtol=1e-12)
        norm = oracle.exact_ssm(mdp, pols, z, normalized=True)
        np.testing.assert_allclose(norm.row_sums(), 1.0, atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(inst=instances())
def test_bounds_ordering_and_mi_range(inst):
    mdp, pols = inst
    occ = oracle.occupancies(mdp, pols)
    mi = oracle.exact_mi(occ)
    assert -1e-12 <= mi <= math.log(pols.shape[0]) + 1e-12
    b4 = oracle.jensen_bound(mdp, pols)
    b5 = oracle.diversity_bound(mdp, pols)
    assert b5 <= b4
    assert b4 <= mi + 1e-12
    assert np.nanmin(oracle.jensen_gaps(mdp, pols)) >= -1e-12


@settings(max_examples=40, deadline=None)
@given(inst=instances(max_states=6))
def test_vectorized_bound_matches_loop_oracle(inst):
    mdp, pols = inst
    assert oracle.diversity_bound(mdp, pols) == pytest.approx(oracle.diversity_bound_loops(mdp, pols), abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(inst=instances())
def test_occupancies_are_ssm_rows(inst):
    mdp, pols = inst
    occ = oracle.occupancies(mdp, pols)
    for z in range(pols.shape[0]):
        np.testing.assert_allclose(occ[z], oracle.exact_ssm(mdp, pols, z, normalized=True).m[mdp.s0], atol=1e-12)
    np.testing.assert_allclose(occ.sum(1), 1.0, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(inst=instances(), n_arch=st.integers(0, 3), seed=st.integers(0, 1000))
def test_uncertainty_table_matches_scalar_loops(inst, n_arch, seed):
    mdp, pols = inst
    rng = np.random.default_rng(seed)
    Z, S = pols.shape[0], mdp.n_states
    cur = np.stack([oracle.exact_ssm(mdp, pols, z, normalized=True).m for z in range(Z)])
    arch = []
    for _ in range(n_arch):
        p = oracle.random_policies(rng, Z, S, mdp.n_actions)
        arch.append(np.stack([oracle.exact_ssm(mdp, p, z, normalized=True).m for z in range(Z)]))
    prev = [int(x) for x in rng.integers(S, size=Z)]
    table = oracle.uncertainty_table(cur, arch, prev, mdp.s0)
    for z in range(Z):
        for s in range(S):
            assert table[z, s] == pytest.approx(oracle.exact_uncertainty(cur, arch, prev, s, z, mdp.s0), abs=1e-9)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_kl_decomposition_full_support(seed):
    rng = np.random.default_rng(seed)
    S, A = int(rng.integers(2, 9)), int(rng.integers(2, 4))
    mdp = oracle.random_mdp(rng, S, A, 0.9)
    pols = oracle.random_policies(rng, 2, S, A)
    arch = [oracle.random_policies(rng, 2, S, A)]
    res = oracle.kl_decomposition_check(mdp, pols, 0, arch)
    assert res.support_ok
    assert res.lhs == pytest.approx(res.rhs, abs=1e-9)


def test_kl_against_itself_is_zero():
    rng = np.random.default_rng(4)
    mdp = oracle.random_mdp(rng, 6, 2, 0.9)
    pols = oracle.random_policies(rng, 1, 6, 2)
    res = oracle.kl_decomposition_check(mdp, pols, 0, [pols])
    assert abs(res.lhs) < 1e-12 and abs(res.rhs) < 1e-12


def test_occupancy_consistency_gap_is_reported_and_nonnegative():
    rng = np.random.default_rng(0)
    mdp = oracle.random_mdp(rng, 6, 2, 0.9)
    d = oracle.occupancy_consistency_gap(mdp, oracle.random_policies(rng, 3, 6, 2))
    assert d.shape == (3,) and np.all(d >= 0)
