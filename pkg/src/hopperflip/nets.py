"""Dense networks with hand-rolled reverse-mode gradients, plus Adam.

The topologies here are tiny and fixed (a few dense layers with a leaky
rectifier), so explicit forward/backward passes are simpler and faster than
pulling in an autodiff framework, and they make the finite-difference
gradient checks in the test suite straightforward.
"""

from __future__ import annotations

import math

import numpy as np

LEAKY_SLOPE = 0.01


def orthogonal(rng: np.random.Generator, rows: int, cols: int, gain: float) -> np.ndarray:
    a = rng.normal(size=(max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return np.ascontiguousarray(gain * q[:rows, :cols])


class Mlp:
    """Fully connected stack: hidden layers use LeakyReLU, output is linear."""

    def __init__(self, sizes: list[int], rng: np.random.Generator, out_gain: float = 1.0):
        self.sizes = list(sizes)
        self.weights = []
        self.biases = []
        for i in range(len(sizes) - 1):
            gain = math.sqrt(2.0) if i < len(sizes) - 2 else out_gain
            self.weights.append(orthogonal(rng, sizes[i + 1], sizes[i], gain))
            self.biases.append(np.zeros(sizes[i + 1]))

    def forward(self, x: np.ndarray):
        """x is (batch, in); returns (batch, out) and the backprop cache."""
        acts = [x]
        pre = []
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w.T + b
            pre.append(z)
            h = z if i == last else np.where(z > 0, z, LEAKY_SLOPE * z)
            acts.append(h)
        return h, (acts, pre)

    def backward(self, cache, dy: np.ndarray):
        """Gradients of sum(dy * output) w.r.t. parameters and input."""
        acts, pre = cache
        grads_w = [None] * len(self.weights)
        grads_b = [None] * len(self.weights)
        delta = dy
        for i in range(len(self.weights) - 1, -1, -1):
            if i != len(self.weights) - 1:
                delta = delta * np.where(pre[i] > 0, 1.0, LEAKY_SLOPE)
            grads_w[i] = delta.T @ acts[i]
            grads_b[i] = delta.sum(axis=0)
            delta = delta @ self.weights[i]
        return grads_w, grads_b, delta

    def named_params(self, prefix: str) -> dict[str, np.ndarray]:
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"{prefix}.w{i}"] = w
            out[f"{prefix}.b{i}"] = b
        return out

    def named_grads(self, prefix: str, grads_w, grads_b) -> dict[str, np.ndarray]:
        out = {}
        for i, (gw, gb) in enumerate(zip(grads_w, grads_b)):
            out[f"{prefix}.w{i}"] = gw
            out[f"{prefix}.b{i}"] = gb
        return out


class GaussianPolicy:
    """Diagonal Gaussian head over a dense trunk; log-std is a free parameter."""

    LOG_STD_MIN = -4.0
    LOG_STD_MAX = 1.0

    def __init__(self, obs_dim: int, act_dim: int, hidden, rng, init_log_std: float = -0.5):
        self.net = Mlp([obs_dim] + list(hidden) + [act_dim], rng, out_gain=0.01)
        self.log_std = np.full(act_dim, float(init_log_std))
        self.act_dim = act_dim
        self.obs_dim = obs_dim

    def clamp_log_std(self):
        np.clip(self.log_std, self.LOG_STD_MIN, self.LOG_STD_MAX, out=self.log_std)

    def forward(self, obs: np.ndarray):
        if obs.shape[-1] != self.obs_dim:
            raise ValueError(f"policy expects {self.obs_dim} inputs, got {obs.shape[-1]}")
        if not all(np.all(np.isfinite(w)) for w in self.net.weights):
            raise FloatingPointError("non-finite policy parameters")
        mean, cache = self.net.forward(np.atleast_2d(obs))
        return mean, cache

    def sample(self, obs: np.ndarray, rng: np.random.Generator):
        mean, _ = self.forward(obs)
        std = np.exp(self.log_std)
        eps = rng.standard_normal(mean.shape)
        action = mean + std * eps
        return action, self.log_prob(action, mean)

    def log_prob(self, action: np.ndarray, mean: np.ndarray) -> np.ndarray:
        std = np.exp(self.log_std)
        z = (action - mean) / std
        return (-0.5 * (z * z).sum(axis=-1) - self.log_std.sum()
                - 0.5 * self.act_dim * math.log(2.0 * math.pi))

    def log_prob_grads(self, action, mean):
        """d logp / d mean and d logp / d log_std, elementwise per sample."""
        std = np.exp(self.log_std)
        z = (action - mean) / std
        return z / std, z * z - 1.0

    def entropy(self) -> float:
        return float(self.log_std.sum() + 0.5 * self.act_dim * (1.0 + math.log(2.0 * math.pi)))

    def named_params(self):
        out = self.net.named_params("pi")
        out["pi.log_std"] = self.log_std
        return out


class DualCritic:
    """Two architecturally independent value towers over the same input:
    one predicts the motion-reward return, the other the barrier return."""

    def __init__(self, obs_dim: int, hidden, rng):
        self.motion = Mlp([obs_dim] + list(hidden) + [1], rng, out_gain=1.0)
        self.barrier = Mlp([obs_dim] + list(hidden) + [1], rng, out_gain=1.0)
        self.obs_dim = obs_dim

    def forward(self, obs: np.ndarray):
        obs = np.atleast_2d(obs)
        vm, cm = self.motion.forward(obs)
        vb, cb = self.barrier.forward(obs)
        return vm[:, 0], vb[:, 0], (cm, cb)

    def named_params(self):
        out = self.motion.named_params("vm")
        out.update(self.barrier.named_params("vb"))
        return out


class Estimator:
    """Predicts the privileged state from the actor observation; trained by
    regression alongside the policy, its output feeds the policy input."""

    def __init__(self, obs_dim: int, out_dim: int, hidden, rng):
        self.net = Mlp([obs_dim] + list(hidden) + [out_dim], rng, out_gain=1.0)
        self.obs_dim = obs_dim
        self.out_dim = out_dim

    def forward(self, obs: np.ndarray):
        return self.net.forward(np.atleast_2d(obs))

    def predict(self, obs: np.ndarray) -> np.ndarray:
        return self.forward(obs)[0]

    def named_params(self):
        return self.net.named_params("est")


class Adam:
    """Adam over a dict of named parameter arrays (updated in place)."""

    def __init__(self, params: dict[str, np.ndarray], lr: float = 3e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for k, g in grads.items():
            p = self.params[k]
            m = self.m[k]
            v = self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)


def clip_grad_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    total = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if max_norm > 0.0 and total > max_norm:
        scale = max_norm / (total + 1e-12)
        for g in grads.values():
            g *= scale
    return total
