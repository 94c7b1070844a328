"""Policy optimization: clipped-surrogate updates on a Gaussian policy with a
dual-headed value function and a concurrent privileged-state estimator.

The actor only sees deployable observations plus the estimator's guess of the
privileged state; the critic sees the true privileged state. Motion and
barrier rewards get separate value heads and separate advantage estimates,
normalized and summed with equal weight for the policy gradient.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .actuator import MorEnvelope, PdGains
from .env import ACTOR_OBS_DIM, PRIVILEGED_OBS_DIM, EnvConfig, HopperEnv
from .model import HopperModel
from .nets import Adam, DualCritic, Estimator, GaussianPolicy, clip_grad_norm

ACT_DIM = 3
POLICY_IN_DIM = ACTOR_OBS_DIM + PRIVILEGED_OBS_DIM

# fixed per-channel scaling of the policy/critic/estimator inputs; brings the
# fast channels (rates) to roughly unit magnitude
OBS_SCALE = np.concatenate([
    np.full(3, 1.0),    # gravity direction
    np.full(3, 0.25),   # body angular velocity
    np.full(3, 1.0),    # joint positions
    np.full(3, 0.10),   # joint velocities
    np.full(6, 1.0),    # action history
    np.full(9, 1.0),    # position-error history
    np.full(9, 0.10),   # velocity history
    np.full(2, 1.0),    # phase encoding
])
PRIV_SCALE = 0.5


@dataclass
class LearnConfig:
    """Optimization hyperparameters; everything is config-overridable."""

    gamma: float = 0.99
    lam: float = 0.95
    clip_eps: float = 0.2
    lr: float = 3e-4
    epochs: int = 4
    minibatch: int = 512
    entropy_coef: float = 0.005
    value_coef: float = 0.5
    estimator_coef: float = 1.0
    grad_clip: float = 1.0
    init_log_std: float = -0.5
    n_envs: int = 64
    rollout_steps: int = 100
    iterations: int = 300
    eval_every: int = 5
    checkpoint_every: int = 100
    hidden_policy: tuple = (256, 128, 64)
    hidden_critic: tuple = (256, 128, 64)
    hidden_estimator: tuple = (256, 128)


@dataclass
class RolloutBatch:
    """One collection phase across all environments, time-major."""

    actor_obs: np.ndarray      # (T, N, 38)
    priv: np.ndarray           # (T, N, 3) true privileged state
    actions: np.ndarray        # (T, N, 3)
    log_prob: np.ndarray       # (T, N)
    rew_motion: np.ndarray     # (T, N)
    rew_barrier: np.ndarray    # (T, N)
    dones: np.ndarray          # (T, N)
    values_motion: np.ndarray  # (T+1, N)
    values_barrier: np.ndarray  # (T+1, N)
    adv_motion: np.ndarray | None = None
    adv_barrier: np.ndarray | None = None
    ret_motion: np.ndarray | None = None
    ret_barrier: np.ndarray | None = None

    def __post_init__(self):
        t, n = self.rew_motion.shape
        assert self.actor_obs.shape[:2] == (t, n)
        assert self.values_motion.shape == (t + 1, n)


class ReturnNormalizer:
    """Running scale of one head's returns; the critic regresses the scaled
    target so Adam-sized steps can track the barrier head's large offsets."""

    def __init__(self):
        self.mean = 0.0
        self.var = 1.0
        self.count = 1e-4

    def update(self, returns: np.ndarray) -> None:
        flat = returns.ravel()
        n = flat.size
        mean, var = float(flat.mean()), float(flat.var())
        delta = mean - self.mean
        total = self.count + n
        self.mean += delta * n / total
        self.var = (self.var * self.count + var * n
                    + delta * delta * self.count * n / total) / total
        self.count = total

    @property
    def std(self) -> float:
        return max(math.sqrt(self.var), 1e-6)

    def normalize(self, x):
        return (x - self.mean) / self.std

    def denormalize(self, x):
        return x * self.std + self.mean

    def state(self) -> dict:
        return {"mean": self.mean, "var": self.var, "count": self.count}

    def load(self, state: dict) -> None:
        self.mean, self.var, self.count = state["mean"], state["var"], state["count"]


class Agent:
    """Policy, dual critic, estimator, and their optimizer state."""

    def __init__(self, cfg: LearnConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.policy = GaussianPolicy(POLICY_IN_DIM, ACT_DIM, cfg.hidden_policy, rng,
                                     init_log_std=cfg.init_log_std)
        self.critic = DualCritic(POLICY_IN_DIM, cfg.hidden_critic, rng)
        self.estimator = Estimator(ACTOR_OBS_DIM, PRIVILEGED_OBS_DIM,
                                   cfg.hidden_estimator, rng)
        self.ret_norm_motion = ReturnNormalizer()
        self.ret_norm_barrier = ReturnNormalizer()
        self.params = {}
        self.params.update(self.policy.named_params())
        self.params.update(self.critic.named_params())
        self.params.update(self.estimator.named_params())
        self.opt = Adam(self.params, lr=cfg.lr)

    def policy_input(self, actor_obs: np.ndarray, priv_estimate: np.ndarray) -> np.ndarray:
        return np.concatenate([np.atleast_2d(actor_obs) * OBS_SCALE,
                               np.atleast_2d(priv_estimate) * PRIV_SCALE], axis=-1)

    def critic_input(self, actor_obs: np.ndarray, priv_true: np.ndarray) -> np.ndarray:
        return np.concatenate([np.atleast_2d(actor_obs) * OBS_SCALE,
                               np.atleast_2d(priv_true) * PRIV_SCALE], axis=-1)

    def act(self, actor_obs: np.ndarray, rng: np.random.Generator):
        est = self.estimator.predict(np.atleast_2d(actor_obs) * OBS_SCALE)
        actions, logp = self.policy.sample(self.policy_input(actor_obs, est), rng)
        return actions, logp, est

    def act_mean(self, actor_obs: np.ndarray) -> np.ndarray:
        est = self.estimator.predict(np.atleast_2d(actor_obs) * OBS_SCALE)
        mean, _ = self.policy.forward(self.policy_input(actor_obs, est))
        return mean

    def values(self, actor_obs: np.ndarray, priv_true: np.ndarray):
        """Value estimates in raw return units (heads predict scaled returns)."""
        vm, vb, _ = self.critic.forward(self.critic_input(actor_obs, priv_true))
        return self.ret_norm_motion.denormalize(vm), self.ret_norm_barrier.denormalize(vb)


def gae(rewards: np.ndarray, values: np.ndarray, dones: np.ndarray,
        gamma: float, lam: float) -> tuple[np.ndarray, np.ndarray]:
    """Generalized advantage estimation; episode boundaries reset the recursion.

    rewards/dones are (T, ...) and values (T+1, ...): the trailing value row
    bootstraps the unfinished tail.
    """
    if not (0.0 <= gamma <= 1.0 and 0.0 <= lam <= 1.0):
        raise ValueError("gamma and lam must lie in [0, 1]")
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    dones = np.asarray(dones, dtype=float)
    t_len = rewards.shape[0]
    adv = np.zeros_like(rewards)
    carry = np.zeros_like(rewards[0])
    for t in range(t_len - 1, -1, -1):
        alive = 1.0 - dones[t]
        delta = rewards[t] + gamma * values[t + 1] * alive - values[t]
        carry = delta + gamma * lam * alive * carry
        adv[t] = carry
    return adv, adv + values[:t_len]


def _normalize(x: np.ndarray) -> np.ndarray:
    return (x - x.mean()) / (x.std() + 1e-8)


def ppo_update(agent: Agent, batch: RolloutBatch, rng: np.random.Generator) -> dict:
    """One optimization phase over the batch; returns loss statistics.

    The two advantage streams are normalized independently and summed with
    equal weight to form the surrogate; value heads regress their own
    returns; the estimator regresses the true privileged state from the
    actor observation (no policy gradient flows into it).
    """
    cfg = agent.cfg
    t_len, n_env = batch.rew_motion.shape
    total = t_len * n_env
    obs = batch.actor_obs.reshape(total, -1)
    priv = batch.priv.reshape(total, -1)
    actions = batch.actions.reshape(total, -1)
    logp_old = batch.log_prob.reshape(total)
    adv = _normalize(batch.adv_motion.reshape(total)) \
        + _normalize(batch.adv_barrier.reshape(total))
    agent.ret_norm_motion.update(batch.ret_motion)
    agent.ret_norm_barrier.update(batch.ret_barrier)
    ret_m = agent.ret_norm_motion.normalize(batch.ret_motion.reshape(total))
    ret_b = agent.ret_norm_barrier.normalize(batch.ret_barrier.reshape(total))

    stats = {"pi_loss": 0.0, "v_loss_motion": 0.0, "v_loss_barrier": 0.0,
             "est_loss": 0.0, "entropy": agent.policy.entropy(), "approx_kl": 0.0,
             "clip_frac": 0.0, "grad_norm": 0.0}
    n_updates = 0

    for _ in range(cfg.epochs):
        order = rng.permutation(total)
        for start in range(0, total, cfg.minibatch):
            idx = order[start:start + cfg.minibatch]
            if idx.size < 2:
                continue
            b = idx.size
            obs_scaled = obs[idx] * OBS_SCALE

            est_out, est_cache = agent.estimator.forward(obs_scaled)
            est_err = est_out - priv[idx]
            est_loss = 0.5 * float((est_err * est_err).sum(axis=1).mean())

            pi_in = np.concatenate([obs_scaled, est_out * PRIV_SCALE], axis=1)
            mean, pi_cache = agent.policy.forward(pi_in)
            logp_new = agent.policy.log_prob(actions[idx], mean)
            ratio = np.exp(np.clip(logp_new - logp_old[idx], -20.0, 20.0))
            adv_b = adv[idx]
            surr1 = ratio * adv_b
            surr2 = np.clip(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps) * adv_b
            pi_loss = -float(np.minimum(surr1, surr2).mean())
            unclipped = surr1 <= surr2 + 1e-12

            v_in = np.concatenate([obs_scaled, priv[idx] * PRIV_SCALE], axis=1)
            vm, vb, (cm, cb) = agent.critic.forward(v_in)
            v_loss_m = 0.5 * float(((vm - ret_m[idx]) ** 2).mean())
            v_loss_b = 0.5 * float(((vb - ret_b[idx]) ** 2).mean())

            loss = (pi_loss + cfg.value_coef * (v_loss_m + v_loss_b)
                    + cfg.estimator_coef * est_loss
                    - cfg.entropy_coef * agent.policy.entropy())
            if not math.isfinite(loss):
                raise RuntimeError(
                    f"non-finite loss (pi={pi_loss}, vm={v_loss_m}, vb={v_loss_b}, "
                    f"est={est_loss}); aborting update")

            # policy gradient through the surrogate
            dlogp = np.where(unclipped, -ratio * adv_b, 0.0) / b
            dmu_dlogp, dls_dlogp = agent.policy.log_prob_grads(actions[idx], mean)
            dmean = dlogp[:, None] * dmu_dlogp
            dlog_std = (dlogp[:, None] * dls_dlogp).sum(axis=0) - cfg.entropy_coef
            gw, gb, _ = agent.policy.net.backward(pi_cache, dmean)
            grads = agent.policy.net.named_grads("pi", gw, gb)
            grads["pi.log_std"] = dlog_std

            gw, gb, _ = agent.critic.motion.backward(
                cm, (cfg.value_coef * (vm - ret_m[idx]) / b)[:, None])
            grads.update(agent.critic.motion.named_grads("vm", gw, gb))
            gw, gb, _ = agent.critic.barrier.backward(
                cb, (cfg.value_coef * (vb - ret_b[idx]) / b)[:, None])
            grads.update(agent.critic.barrier.named_grads("vb", gw, gb))

            gw, gb, _ = agent.estimator.net.backward(
                est_cache, cfg.estimator_coef * est_err / b)
            grads.update(agent.estimator.net.named_grads("est", gw, gb))

            # clip per network so a large value-regression burn-in cannot
            # starve the policy gradient of its share of the step
            gnorm = 0.0
            for prefix in ("pi", "vm", "vb", "est"):
                group = {k: g for k, g in grads.items() if k.startswith(prefix + ".")}
                gnorm = max(gnorm, clip_grad_norm(group, cfg.grad_clip))
            agent.opt.step(grads)
            agent.policy.clamp_log_std()

            stats["pi_loss"] += pi_loss
            stats["v_loss_motion"] += v_loss_m
            stats["v_loss_barrier"] += v_loss_b
            stats["est_loss"] += est_loss
            stats["approx_kl"] += float((logp_old[idx] - logp_new).mean())
            stats["clip_frac"] += float((~unclipped).mean())
            stats["grad_norm"] += gnorm
            n_updates += 1

    for key in ("pi_loss", "v_loss_motion", "v_loss_barrier", "est_loss",
                "approx_kl", "clip_frac", "grad_norm"):
        stats[key] /= max(n_updates, 1)
    stats["entropy"] = agent.policy.entropy()
    return stats


def collect_rollout(agent: Agent, envs: list[HopperEnv], obs: np.ndarray,
                    priv: np.ndarray, rng: np.random.Generator,
                    steps: int) -> tuple[RolloutBatch, np.ndarray, np.ndarray, dict]:
    """Step every environment ``steps`` times; episodes reset inline."""
    n = len(envs)
    batch = RolloutBatch(
        actor_obs=np.zeros((steps, n, ACTOR_OBS_DIM)),
        priv=np.zeros((steps, n, PRIVILEGED_OBS_DIM)),
        actions=np.zeros((steps, n, ACT_DIM)),
        log_prob=np.zeros((steps, n)),
        rew_motion=np.zeros((steps, n)),
        rew_barrier=np.zeros((steps, n)),
        dones=np.zeros((steps, n)),
        values_motion=np.zeros((steps + 1, n)),
        values_barrier=np.zeros((steps + 1, n)),
    )
    ep_returns, ep_lengths = [], []
    aerial_cav = []
    for t in range(steps):
        batch.actor_obs[t] = obs
        batch.priv[t] = priv
        vm, vb = agent.values(obs, priv)
        batch.values_motion[t] = vm
        batch.values_barrier[t] = vb
        actions, logp, _ = agent.act(obs, rng)
        batch.actions[t] = actions
        batch.log_prob[t] = logp
        for i, env in enumerate(envs):
            o, p, rew, done, info = env.step(actions[i])
            batch.rew_motion[t, i] = rew.r_motion
            batch.rew_barrier[t, i] = rew.r_barrier
            batch.dones[t, i] = float(done)
            sched = env.schedule
            if sched.phi_jump <= info["phase"] < sched.phi_land:
                aerial_cav.append(rew.r_cav)
            if done:
                ep_lengths.append(env._step_count)
                o, p = env.reset()
            obs[i] = o
            priv[i] = p
    vm, vb = agent.values(obs, priv)
    batch.values_motion[-1] = vm
    batch.values_barrier[-1] = vb
    info = {
        "mean_ep_len": float(np.mean(ep_lengths)) if ep_lengths else float(steps),
        "aerial_cav_raw": float(np.mean(aerial_cav)) if aerial_cav else 0.0,
    }
    return batch, obs, priv, info


def evaluate(agent: Agent, env: HopperEnv, episodes: int = 1,
             keep_steps: bool = False) -> list[dict]:
    """Deterministic (mean-action) rollouts; returns per-episode summaries,
    optionally with the full per-step record list attached."""
    out = []
    for _ in range(episodes):
        obs, priv = env.reset()
        pitches, rows = [], []
        ret_m = ret_b = 0.0
        flight_run = best_flight = 0
        peak_cav = -np.inf
        peak_load = 0.0
        done = False
        while not done:
            action = agent.act_mean(obs)[0]
            obs, priv, rew, done, info = env.step(action)
            ret_m += rew.r_motion
            ret_b += rew.r_barrier
            pitches.append(info["base_pitch"])
            axis_cav = float(env.weights.flip_axis @ info["cav"])
            peak_cav = max(peak_cav, axis_cav)
            peak_load = max(peak_load, float(np.abs(info["tau_load"]).max()))
            if info["flight"]:
                flight_run += 1
                best_flight = max(best_flight, flight_run)
            else:
                flight_run = 0
            if keep_steps:
                rows.append({"info": info, "reward": rew})
        unwrapped = np.unwrap(pitches)
        summary = {
            "return_motion": ret_m, "return_barrier": ret_b,
            "net_pitch_deg": math.degrees(unwrapped[-1] - unwrapped[0]),
            "peak_cav": peak_cav, "max_flight_s": best_flight * env.config.dt_control,
            "peak_tau_load": peak_load, "steps": len(pitches),
        }
        if keep_steps:
            summary["rows"] = rows
        out.append(summary)
    return out


# ---------------------------------------------------------------------------
# checkpoints: JSON documents of named arrays plus run metadata


def save_checkpoint(agent: Agent, path: str, meta: dict) -> None:
    doc = {"schema_version": 1, "meta": meta,
           "return_normalizers": {"motion": agent.ret_norm_motion.state(),
                                  "barrier": agent.ret_norm_barrier.state()},
           "params": {k: {"shape": list(v.shape), "data": v.ravel().tolist()}
                      for k, v in agent.params.items()}}
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(doc, fh)
    os.replace(tmp, path)


def load_checkpoint(agent: Agent, path: str) -> dict:
    with open(path) as fh:
        doc = json.load(fh)
    params = doc["params"]
    missing = set(agent.params) - set(params)
    extra = set(params) - set(agent.params)
    if missing or extra:
        raise ValueError(f"checkpoint/config mismatch: missing={sorted(missing)} "
                         f"unexpected={sorted(extra)}")
    for name, target in agent.params.items():
        entry = params[name]
        if tuple(entry["shape"]) != target.shape:
            raise ValueError(f"checkpoint shape mismatch for {name}: "
                             f"{entry['shape']} vs {list(target.shape)}")
        target[:] = np.asarray(entry["data"], dtype=float).reshape(target.shape)
    norms = doc.get("return_normalizers")
    if norms:
        agent.ret_norm_motion.load(norms["motion"])
        agent.ret_norm_barrier.load(norms["barrier"])
    return doc.get("meta", {})


def train(learn_cfg: LearnConfig, env_cfg: EnvConfig, model: HopperModel | None,
          envelopes: tuple[MorEnvelope, ...] | None, gains: PdGains | None,
          out_dir: str, seed: int, on_iteration=None) -> dict:
    """Full training loop: collect, update, periodically evaluate/checkpoint.

    Writes ``metrics.csv`` and checkpoint JSONs under ``out_dir``; returns a
    summary with the final evaluation statistics. ``on_iteration``, when
    given, receives (iteration, stats_row) after every iteration.
    """
    from .config import MetricsWriter  # local import: config builds on learn

    os.makedirs(out_dir, exist_ok=True)
    root = np.random.default_rng(seed)
    env_seeds = root.integers(0, 2**31 - 1, size=learn_cfg.n_envs)
    agent_rng = np.random.default_rng(root.integers(0, 2**31 - 1))
    sample_rng = np.random.default_rng(root.integers(0, 2**31 - 1))
    update_rng = np.random.default_rng(root.integers(0, 2**31 - 1))
    eval_seed = int(root.integers(0, 2**31 - 1))

    kwargs = {}
    if model is not None:
        kwargs["model"] = model
    if envelopes is not None:
        kwargs["envelopes"] = envelopes
    if gains is not None:
        kwargs["gains"] = gains
    envs = [HopperEnv(replace_seed(env_cfg, int(s)), **kwargs) for s in env_seeds]
    eval_env = HopperEnv(replace_seed(env_cfg.nominal(), eval_seed), **kwargs)

    agent = Agent(learn_cfg, agent_rng)
    obs = np.zeros((learn_cfg.n_envs, ACTOR_OBS_DIM))
    priv = np.zeros((learn_cfg.n_envs, PRIVILEGED_OBS_DIM))
    for i, env in enumerate(envs):
        obs[i], priv[i] = env.reset()

    metrics_path = os.path.join(out_dir, "metrics.csv")
    writer = MetricsWriter(metrics_path, seed)
    steps_total = 0
    last_eval = {}
    try:
        for it in range(learn_cfg.iterations):
            batch, obs, priv, roll_info = collect_rollout(
                agent, envs, obs, priv, sample_rng, learn_cfg.rollout_steps)
            steps_total += learn_cfg.rollout_steps * learn_cfg.n_envs
            batch.adv_motion, batch.ret_motion = gae(
                batch.rew_motion, batch.values_motion, batch.dones,
                learn_cfg.gamma, learn_cfg.lam)
            batch.adv_barrier, batch.ret_barrier = gae(
                batch.rew_barrier, batch.values_barrier, batch.dones,
                learn_cfg.gamma, learn_cfg.lam)
            stats = ppo_update(agent, batch, update_rng)

            row = {
                "iteration": it, "steps_total": steps_total,
                "mean_return_motion": float(batch.rew_motion.sum(axis=0).mean()),
                "mean_return_barrier": float(batch.rew_barrier.sum(axis=0).mean()),
                "mean_ep_len": roll_info["mean_ep_len"],
                "rollout_aerial_cav_raw": roll_info["aerial_cav_raw"],
                **stats,
            }
            if it % learn_cfg.eval_every == 0:
                ev = evaluate(agent, eval_env, episodes=1)[0]
                last_eval = {
                    "eval_aerial_cav_raw": _aerial_cav_of(agent, eval_env),
                    "eval_net_pitch_deg": ev["net_pitch_deg"],
                    "eval_peak_cav": ev["peak_cav"],
                    "eval_max_flight_s": ev["max_flight_s"],
                    "eval_peak_tau_load": ev["peak_tau_load"],
                }
                row.update(last_eval)
            writer.write(row)
            if on_iteration is not None:
                on_iteration(it, row)
            if learn_cfg.checkpoint_every and (it + 1) % learn_cfg.checkpoint_every == 0:
                save_checkpoint(agent, os.path.join(out_dir, f"ckpt_iter{it + 1}.json"),
                                _meta(learn_cfg, env_cfg, seed, it + 1))
    except Exception:
        save_checkpoint(agent, os.path.join(out_dir, "ckpt_abort.json"),
                        _meta(learn_cfg, env_cfg, seed, -1))
        raise
    finally:
        writer.close()

    save_checkpoint(agent, os.path.join(out_dir, "ckpt_final.json"),
                    _meta(learn_cfg, env_cfg, seed, learn_cfg.iterations))
    final_eval = evaluate(agent, eval_env, episodes=3)
    return {"agent": agent, "final_eval": final_eval, "metrics_path": metrics_path,
            "last_eval": last_eval}


def _aerial_cav_of(agent: Agent, env: HopperEnv) -> float:
    """Mean raw aerial-phase reward term over one deterministic episode."""
    obs, _ = env.reset()
    vals = []
    done = False
    while not done:
        action = agent.act_mean(obs)[0]
        obs, _, rew, done, info = env.step(action)
        if env.schedule.phi_jump <= info["phase"] < env.schedule.phi_land:
            vals.append(rew.r_cav)
    return float(np.mean(vals)) if vals else 0.0


def _meta(learn_cfg: LearnConfig, env_cfg: EnvConfig, seed: int, iteration: int) -> dict:
    return {"seed": seed, "iteration": iteration,
            "hidden_policy": list(learn_cfg.hidden_policy),
            "hidden_critic": list(learn_cfg.hidden_critic),
            "hidden_estimator": list(learn_cfg.hidden_estimator),
            "aerial_reward_mode": env_cfg.aerial_reward_mode,
            "use_mor": env_cfg.use_mor, "use_load_reg": env_cfg.use_load_reg}


def replace_seed(cfg: EnvConfig, seed: int) -> EnvConfig:
    from dataclasses import replace
    return replace(cfg, seed=seed)
