"""Small dense networks with hand-written reverse mode, Adam, and a
skill-conditioned tanh-squashed Gaussian policy.

Every model keeps all of its parameters in one flat float64 vector; layer
weights are views into it, so optimizers and checkpoints work on the flat
vector directly.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)
ACTIVATIONS = ("relu", "tanh", "sigmoid", "linear")


class NonFiniteError(FloatingPointError):
    """Raised when a loss, gradient or parameter stops being finite."""


class CheckpointError(ValueError):
    pass


def _layer_shapes(sizes: Sequence[int]) -> list[tuple[int, int]]:
    return list(zip(sizes[:-1], sizes[1:]))


def n_params_for(sizes: Sequence[int]) -> int:
    return sum(i * o + o for i, o in _layer_shapes(sizes))


def _activate(name: str, x: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(x, 0.0)
    if name == "tanh":
        return np.tanh(x)
    if name == "sigmoid":
        return 0.5 * (1.0 + np.tanh(0.5 * x))
    return x


def _activation_grad(name: str, pre: np.ndarray, out: np.ndarray, dout: np.ndarray) -> np.ndarray:
    if name == "relu":
        return dout * (pre > 0.0)
    if name == "tanh":
        return dout * (1.0 - out * out)
    if name == "sigmoid":
        return dout * out * (1.0 - out)
    return dout


class DenseNet:
    """Fully connected network ``y = act(x @ W + b)`` per layer.

    ``params`` may be passed in to make the network a view on a slice of a
    larger parameter vector (used by the policy).
    """

    def __init__(
        self,
        sizes: Sequence[int],
        activations: Sequence[str],
        rng: np.random.Generator | None = None,
        params: np.ndarray | None = None,
    ):
        sizes = [int(s) for s in sizes]
        if len(sizes) < 2 or any(s < 1 for s in sizes):
            raise ValueError(f"bad layer sizes {sizes}")
        if len(activations) != len(sizes) - 1:
            raise ValueError("need one activation per layer")
        for a in activations:
            if a not in ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r}")
        self.sizes = sizes
        self.activations = list(activations)
        n = n_params_for(sizes)
        if params is None:
            params = np.zeros(n)
        elif params.shape != (n,) or params.dtype != np.float64:
            raise ValueError(f"parameter buffer must be float64 of length {n}")
        self.params = params
        self.layers: list[tuple[np.ndarray, np.ndarray]] = []
        offset = 0
        for fan_in, fan_out in _layer_shapes(sizes):
            w = params[offset:offset + fan_in * fan_out].reshape(fan_in, fan_out)
            offset += fan_in * fan_out
            b = params[offset:offset + fan_out]
            offset += fan_out
            self.layers.append((w, b))
        if rng is not None:
            self.init_params(rng)

    def init_params(self, rng: np.random.Generator) -> None:
        # fan-in scaled uniform weights, zero biases
        for w, b in self.layers:
            bound = 1.0 / np.sqrt(w.shape[0])
            w[...] = rng.uniform(-bound, bound, size=w.shape)
            b[...] = 0.0

    @property
    def in_dim(self) -> int:
        return self.sizes[0]

    @property
    def out_dim(self) -> int:
        return self.sizes[-1]

    def _check_input(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.in_dim:
            raise ValueError(f"input has dimension {x.shape[-1]}, network expects {self.in_dim}")
        return x

    def forward(self, x: np.ndarray) -> np.ndarray:
        h = self._check_input(x)
        for (w, b), act in zip(self.layers, self.activations):
            h = _activate(act, h @ w + b)
        return h

    __call__ = forward

    def forward_cache(self, x: np.ndarray):
        """Forward pass that also returns what ``backward`` needs."""
        h = self._check_input(x)
        squeeze = h.ndim == 1
        if squeeze:
            h = h[None, :]
        cache = [h]
        for (w, b), act in zip(self.layers, self.activations):
            pre = h @ w + b
            h = _activate(act, pre)
            cache.append((pre, h))
        out = h[0] if squeeze else h
        return out, (squeeze, cache)

    def backward(self, cache, dout: np.ndarray, need_params: bool = True, need_input: bool = True):
        """Reverse pass. Returns ``(grad_params, grad_input)``.

        ``grad_params`` is None when ``need_params`` is False and
        ``grad_input`` is None when ``need_input`` is False; each skips the
        corresponding matrix products.
        """
        squeeze, layers = cache
        g = np.asarray(dout, dtype=np.float64)
        if squeeze:
            g = g[None, :]
        grad = np.zeros_like(self.params) if need_params else None
        offset = len(self.params)
        for i in range(len(self.layers) - 1, -1, -1):
            w, b = self.layers[i]
            pre, out = layers[i + 1]
            h_in = layers[i] if i == 0 else layers[i][1]
            g = _activation_grad(self.activations[i], pre, out, g)
            nw = w.size
            nb = b.size
            if need_params:
                grad[offset - nb:offset] = g.sum(axis=0)
                grad[offset - nb - nw:offset - nb] = (h_in.T @ g).ravel()
            offset -= nw + nb
            if i == 0 and not need_input:
                return grad, None
            g = g @ w.T
        return grad, (g[0] if squeeze else g)

    def copy(self) -> "DenseNet":
        return DenseNet(self.sizes, self.activations, params=self.params.copy())


@dataclass
class Adam:
    """Bias-corrected adaptive-moment optimizer over a flat parameter vector."""

    lr: float
    n_params: int
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: np.ndarray = field(default=None, repr=False)
    v: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.m is None:
            self.m = np.zeros(self.n_params)
        if self.v is None:
            self.v = np.zeros(self.n_params)

    def step(self, params: np.ndarray, grad: np.ndarray, ascent: bool = False) -> None:
        if grad.shape != params.shape or params.shape != self.m.shape:
            raise ValueError("gradient, parameter and moment shapes differ")
        if not np.all(np.isfinite(grad)):
            bad = int(np.count_nonzero(~np.isfinite(grad)))
            raise NonFiniteError(f"{bad} non-finite gradient entries at optimizer step {self.t + 1}")
        self.t += 1
        self.m *= self.beta1
        self.m += (1.0 - self.beta1) * grad
        self.v *= self.beta2
        self.v += (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1 ** self.t)
        v_hat = self.v / (1.0 - self.beta2 ** self.t)
        update = self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
        if ascent:
            params += update
        else:
            params -= update


def log1m_tanh_sq(u: np.ndarray) -> np.ndarray:
    """Stable ``log(1 - tanh(u)**2)``."""
    return 2.0 * (np.log(2.0) - u - np.logaddexp(0.0, -2.0 * u))


class SquashedGaussianPolicy:
    """pi(a | s, z): trunk MLP on [state, skill embedding], a tanh mean head
    and a clamped linear log-std head; ``a = tanh(mu + sigma * noise)``."""

    LOG_STD_MIN = -5.0
    LOG_STD_MAX = 2.0

    def __init__(
        self,
        state_dim: int,
        z_dim: int,
        action_dim: int,
        hidden: Sequence[int] = (256, 256),
        rng: np.random.Generator | None = None,
        params: np.ndarray | None = None,
    ):
        self.state_dim = int(state_dim)
        self.z_dim = int(z_dim)
        self.action_dim = int(action_dim)
        self.hidden = tuple(int(h) for h in hidden)
        trunk_sizes = [self.state_dim + self.z_dim, *self.hidden]
        head_sizes = [self.hidden[-1], self.action_dim]
        n_trunk = n_params_for(trunk_sizes)
        n_head = n_params_for(head_sizes)
        n = n_trunk + 2 * n_head
        if params is None:
            params = np.zeros(n)
        elif params.shape != (n,):
            raise ValueError(f"policy expects {n} parameters, got {params.shape}")
        self.params = params
        self.trunk = DenseNet(trunk_sizes, ["relu"] * len(self.hidden), params=params[:n_trunk])
        self.mean_head = DenseNet(head_sizes, ["tanh"], params=params[n_trunk:n_trunk + n_head])
        self.log_std_head = DenseNet(head_sizes, ["linear"], params=params[n_trunk + n_head:])
        if rng is not None:
            for net in (self.trunk, self.mean_head, self.log_std_head):
                net.init_params(rng)

    @property
    def shape(self) -> list[int]:
        return [self.state_dim, self.z_dim, self.action_dim, *self.hidden]

    @classmethod
    def from_shape(cls, shape: Sequence[int], params: np.ndarray | None = None) -> "SquashedGaussianPolicy":
        return cls(shape[0], shape[1], shape[2], hidden=shape[3:], params=params)

    def copy(self) -> "SquashedGaussianPolicy":
        return SquashedGaussianPolicy.from_shape(self.shape, self.params.copy())

    def _inputs(self, obs, z_emb) -> np.ndarray:
        obs = np.atleast_2d(np.asarray(obs, dtype=np.float64))
        z_emb = np.atleast_2d(np.asarray(z_emb, dtype=np.float64))
        if z_emb.shape[0] != obs.shape[0]:
            z_emb = np.broadcast_to(z_emb, (obs.shape[0], z_emb.shape[1]))
        return np.concatenate([obs, z_emb], axis=1)

    def distribution(self, obs, z_emb) -> tuple[np.ndarray, np.ndarray]:
        """Pre-squash mean and clamped log-std, each ``(batch, action_dim)``."""
        h = self.trunk.forward(self._inputs(obs, z_emb))
        mu = self.mean_head.forward(h)
        log_std = np.clip(self.log_std_head.forward(h), self.LOG_STD_MIN, self.LOG_STD_MAX)
        return mu, log_std

    def sample(self, obs, z_emb, noise) -> tuple[np.ndarray, np.ndarray]:
        a, logp, _ = self.sample_cache(obs, z_emb, noise)
        return a, logp

    def sample_cache(self, obs, z_emb, noise):
        """Reparameterized sample. Returns ``(actions, log_probs, cache)``."""
        x = self._inputs(obs, z_emb)
        noise = np.atleast_2d(np.asarray(noise, dtype=np.float64))
        if noise.shape != (x.shape[0], self.action_dim):
            raise ValueError(f"noise shape {noise.shape} does not match ({x.shape[0]}, {self.action_dim})")
        h, trunk_cache = self.trunk.forward_cache(x)
        mu, mean_cache = self.mean_head.forward_cache(h)
        raw, std_cache = self.log_std_head.forward_cache(h)
        log_std = np.clip(raw, self.LOG_STD_MIN, self.LOG_STD_MAX)
        std = np.exp(log_std)
        u = mu + std * noise
        a = np.tanh(u)
        logp = np.sum(-0.5 * noise * noise - log_std - HALF_LOG_2PI - log1m_tanh_sq(u), axis=1)
        cache = (trunk_cache, mean_cache, std_cache, raw, std, noise, a)
        return a, logp, cache

    def backward(self, cache, g_action: np.ndarray | None, g_logp: np.ndarray | None) -> np.ndarray:
        """Gradient of ``sum(g_action * a) + sum(g_logp * logp)`` w.r.t. params."""
        trunk_cache, mean_cache, std_cache, raw, std, noise, a = cache
        g_u = np.zeros_like(a)
        g_ls = np.zeros_like(a)
        if g_action is not None:
            g_u += g_action * (1.0 - a * a)
        if g_logp is not None:
            g_lp = np.asarray(g_logp, dtype=np.float64)[:, None]
            # d logp / du = 2 tanh(u); d logp / dlog_std = -1 (direct term)
            g_u += g_lp * 2.0 * a
            g_ls -= g_lp
        g_ls += g_u * std * noise
        g_ls *= (raw > self.LOG_STD_MIN) & (raw < self.LOG_STD_MAX)
        grad_mean, g_h1 = self.mean_head.backward(mean_cache, g_u)
        grad_std, g_h2 = self.log_std_head.backward(std_cache, g_ls)
        grad_trunk, _ = self.trunk.backward(trunk_cache, g_h1 + g_h2, need_input=False)
        return np.concatenate([grad_trunk, grad_mean, grad_std])

    def log_prob(self, obs, z_emb, actions) -> np.ndarray:
        """Density of given actions in (-1, 1); used for quadrature checks."""
        mu, log_std = self.distribution(obs, z_emb)
        a = np.atleast_2d(np.asarray(actions, dtype=np.float64))
        u = np.arctanh(a)
        z = (u - mu) / np.exp(log_std)
        return np.sum(-0.5 * z * z - log_std - HALF_LOG_2PI - log1m_tanh_sq(u), axis=1)


# --- checkpoints -------------------------------------------------------------
# layout: magic | u32 version | u32 tag length | tag utf-8 | i64 epoch |
#         u32 n_shape | n_shape * u32 | u64 n_params | n_params * f64   (all little-endian)

MAGIC = b"LEADSCK\x00"
CHECKPOINT_VERSION = 1


@dataclass
class Checkpoint:
    tag: str
    epoch: int
    shape: list[int]
    params: np.ndarray


def save_checkpoint(path, tag: str, shape: Sequence[int], params: np.ndarray, epoch: int) -> None:
    path = Path(path)
    tag_b = tag.encode("utf-8")
    header = MAGIC + struct.pack("<II", CHECKPOINT_VERSION, len(tag_b)) + tag_b
    header += struct.pack("<qI", int(epoch), len(shape)) + struct.pack(f"<{len(shape)}I", *shape)
    header += struct.pack("<Q", params.size)
    try:
        path.write_bytes(header + np.ascontiguousarray(params, dtype="<f8").tobytes())
    except OSError as exc:
        raise OSError(f"cannot write checkpoint {path}: {exc}") from exc


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"{path}: cannot read checkpoint ({exc})") from exc
    try:
        if data[:8] != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
        pos = 8
        version, tag_len = struct.unpack_from("<II", data, pos)
        pos += 8
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
        tag = data[pos:pos + tag_len].decode("utf-8")
        pos += tag_len
        epoch, n_shape = struct.unpack_from("<qI", data, pos)
        pos += 12
        shape = list(struct.unpack_from(f"<{n_shape}I", data, pos))
        pos += 4 * n_shape
        (n_params,) = struct.unpack_from("<Q", data, pos)
        pos += 8
    except (struct.error, UnicodeDecodeError) as exc:
        raise CheckpointError(f"{path}: truncated or corrupted header ({exc})") from exc
    if len(data) - pos != 8 * n_params:
        raise CheckpointError(
            f"{path}: expected {8 * n_params} parameter bytes, found {len(data) - pos}"
        )
    params = np.frombuffer(data, dtype="<f8", count=n_params, offset=pos).astype(np.float64)
    if not np.all(np.isfinite(params)):
        raise CheckpointError(f"{path}: non-finite parameters")
    return Checkpoint(tag, int(epoch), shape, params)
