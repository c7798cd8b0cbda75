from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from leads_lab.nn import (Adam, CheckpointError, DenseNet, NonFiniteError, SquashedGaussianPolicy, load_checkpoint,
                          log1m_tanh_sq, save_checkpoint)


def fd_grad(f, x, h=1e-5):
    """Central differences of scalar ``f()`` w.r.t. array ``x``, perturbed in place."""
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
    return g.reshape(x.shape)


def rel_err(a, b):
    return np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-8)


@pytest.mark.parametrize("act", ["relu", "tanh", "sigmoid", "linear"])
def test_dense_backward_matches_finite_differences(act):
    rng = np.random.default_rng(0)
    net = DenseNet([3, 5, 2], [act, "linear"], rng=rng)
    x = rng.normal(size=(4, 3))
    w = rng.normal(size=(4, 2))
    out, cache = net.forward_cache(x)
    g_p, g_x = net.backward(cache, w)
    assert rel_err(g_p, fd_grad(lambda: float(np.sum(net.forward(x) * w)), net.params)) <= 1e-4
    assert rel_err(g_x, fd_grad(lambda: float(np.sum(net.forward(x) * w)), x)) <= 1e-4


def test_backward_can_skip_parts():
    rng = np.random.default_rng(1)
    net = DenseNet([3, 4, 1], ["relu", "linear"], rng=rng)
    _, cache = net.forward_cache(rng.normal(size=(5, 3)))
    full_p, full_x = net.backward(cache, np.ones((5, 1)))
    p_only, none_x = net.backward(cache, np.ones((5, 1)), need_input=False)
    none_p, x_only = net.backward(cache, np.ones((5, 1)), need_params=False)
    assert none_x is None and none_p is None
    np.testing.assert_array_equal(p_only, full_p)
    np.testing.assert_array_equal(x_only, full_x)


def test_single_row_input_is_squeezed():
    net = DenseNet([2, 3], ["tanh"], rng=np.random.default_rng(0))
    out, cache = net.forward_cache(np.array([0.1, 0.2]))
    assert out.shape == (3,)
    _, gx = net.backward(cache, np.ones(3))
    assert gx.shape == (2,)


def test_policy_gradient_matches_finite_differences():
    rng = np.random.default_rng(2)
    pol = SquashedGaussianPolicy(2, 3, 2, hidden=(8, 8), rng=rng)
    obs = rng.normal(size=(6, 2))
    z = rng.normal(size=(6, 3))
    noise = rng.normal(size=(6, 2))
    wa = rng.normal(size=(6, 2))
    wl = rng.normal(size=6)

    def f():
        a, lp = pol.sample(obs, z, noise)
        return float(np.sum(a * wa) + np.sum(lp * wl))

    _, _, cache = pol.sample_cache(obs, z, noise)
    assert rel_err(pol.backward(cache, wa, wl), fd_grad(f, pol.params)) <= 1e-4


def test_log_std_clamp_blocks_gradient():
    pol = SquashedGaussianPolicy(1, 1, 1, hidden=(4,), rng=np.random.default_rng(0))
    pol.log_std_head.params[-1] = -50.0  # bias far below the floor
    _, _, cache = pol.sample_cache(np.ones((3, 1)), np.ones((3, 1)), np.ones((3, 1)))
    g = pol.backward(cache, None, np.ones(3))
    n_head = pol.log_std_head.params.size
    np.testing.assert_array_equal(g[-n_head:], 0.0)
    mu, ls = pol.distribution(np.ones((1, 1)), np.ones((1, 1)))
    assert ls[0, 0] == pol.LOG_STD_MIN


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_policy_density_integrates_to_one(seed):
    rng = np.random.default_rng(seed)
    pol = SquashedGaussianPolicy(2, 2, 2, hidden=(8,), rng=rng)
    obs, z = rng.normal(size=(1, 2)), rng.normal(size=(1, 2))
    mu, ls = pol.distribution(obs, z)
    # integrate over u = atanh(a) where the change of variables is smooth
    n = 801
    axes = [np.linspace(mu[0, i] - 9 * np.exp(ls[0, i]), mu[0, i] + 9 * np.exp(ls[0, i]), n) for i in range(2)]
    U1, U2 = np.meshgrid(*axes, indexing="ij")
    U = np.stack([U1.ravel(), U2.ravel()], axis=1)
    A = np.tanh(U)
    keep = np.all(np.abs(A) < 1.0, axis=1)
    jac = np.exp(log1m_tanh_sq(U).sum(axis=1))
    dens = np.zeros(len(U))
    dens[keep] = np.exp(pol.log_prob(np.repeat(obs, keep.sum(), 0), z, A[keep])) * jac[keep]
    total = np.trapezoid(np.trapezoid(dens.reshape(n, n), axes[1], axis=1), axes[0])
    assert total == pytest.approx(1.0, abs=1e-3)


def test_sample_logprob_agrees_with_log_prob():
    rng = np.random.default_rng(3)
    pol = SquashedGaussianPolicy(2, 2, 2, hidden=(8,), rng=rng)
    obs, z = rng.normal(size=(5, 2)), rng.normal(size=(5, 2))
    a, lp = pol.sample(obs, z, 0.3 * rng.normal(size=(5, 2)))
    np.testing.assert_allclose(pol.log_prob(obs, z, a), lp, atol=1e-8)


@settings(max_examples=100, deadline=None)
@given(u=st.floats(-30, 30))
def test_log1m_tanh_sq_is_stable(u):
    v = log1m_tanh_sq(np.array([u]))[0]
    assert np.isfinite(v)
    if abs(u) < 5:
        assert v == pytest.approx(np.log(1 - np.tanh(u) ** 2), rel=1e-9, abs=1e-12)


def test_adam_step_against_hand_computation():
    p = np.array([1.0, -2.0])
    g = np.array([0.5, -0.1])
    opt = Adam(0.1, 2)
    opt.step(p, g)
    # first bias-corrected step moves each coordinate by lr * sign(g)
    np.testing.assert_allclose(p, [0.9, -1.9], atol=1e-7)
    opt.step(p, g, ascent=True)
    np.testing.assert_allclose(p, [1.0, -2.0], atol=1e-7)


def test_adam_rejects_non_finite_gradients():
    opt = Adam(0.1, 2)
    with pytest.raises(NonFiniteError):
        opt.step(np.zeros(2), np.array([np.nan, 0.0]))
    assert opt.t == 0


def test_adam_minimizes_a_quadratic():
    p = np.array([3.0, -4.0])
    opt = Adam(0.05, 2)
    for _ in range(2000):
        opt.step(p, 2 * p)
    assert np.max(np.abs(p)) < 1e-2


def test_checkpoint_roundtrip_is_bit_exact(tmp_path):
    pol = SquashedGaussianPolicy(2, 3, 2, hidden=(5, 4), rng=np.random.default_rng(0))
    path = tmp_path / "p.ckpt"
    save_checkpoint(path, "policy", pol.shape, pol.params, 7)
    ck = load_checkpoint(path)
    assert ck.tag == "policy" and ck.epoch == 7 and ck.shape == pol.shape
    assert ck.params.tobytes() == pol.params.tobytes()
    back = SquashedGaussianPolicy.from_shape(ck.shape, ck.params)
    np.testing.assert_array_equal(back.params, pol.params)


@pytest.mark.parametrize("damage", ["truncate", "magic", "nan", "empty", "missing"])
def test_corrupted_checkpoints_name_the_file(tmp_path, damage):
    path = tmp_path / "c.ckpt"
    save_checkpoint(path, "classifier", [1, 2], np.arange(6, dtype=float), 1)
    data = bytearray(path.read_bytes())
    if damage == "truncate":
        path.write_bytes(bytes(data[:-3]))
    elif damage == "magic":
        data[0] ^= 0xFF
        path.write_bytes(bytes(data))
    elif damage == "nan":
        path.write_bytes(bytes(data[:-8]) + np.array([np.nan]).tobytes())
    elif damage == "empty":
        path.write_bytes(b"")
    else:
        path.unlink()
    with pytest.raises(CheckpointError, match="c.ckpt"):
        load_checkpoint(path)
