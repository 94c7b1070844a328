"""Episode management: randomized resets, control-rate stepping, observations.

One control step runs dt_control / dt_sim physics substeps. Per substep the
joint torque pipeline is PD -> Coulomb friction -> operating-region clip (or
the static box when the envelope is disabled), and contact-induced joint
loads accumulate for the transmission pathway. Episodes end at the phase
horizon, on a fall outside the landing phase, or by probabilistic overload
termination when load regularization is active.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels as _k
from .actuator import DEFAULT_ENVELOPES, DEFAULT_GAINS, MorEnvelope, PdGains
from .model import (GeneralizedState, HopperModel, SimulationDivergedError,
                    default_model, scaled_model)
from .rewards import (AerialMode, PhaseSchedule, RewardBreakdown, RewardWeights,
                      aerial_reward_variant, barrier_terms, compose, motion_terms)
from .transmission import LoadAccumulator, overload_termination

ACTOR_OBS_DIM = 38
PRIVILEGED_OBS_DIM = 3


@dataclass(frozen=True)
class EnvConfig:
    """Timing, randomization ranges, noise scales, and ablation flags.

    Defaults reproduce the training setup: uniform scaling of masses and
    inertias, COM shifts, PD gain scaling, joint friction, ground friction
    and restitution, plus uniform observation noise per channel group.
    """

    dt_sim: float = 0.002
    dt_control: float = 0.02
    seed: int = 0
    # domain randomization (uniform ranges)
    mass_scale_range: tuple[float, float] = (0.85, 1.15)
    inertia_scale_range: tuple[float, float] = (0.85, 1.15)
    com_shift_max: float = 0.03
    pd_scale_range: tuple[float, float] = (0.9, 1.1)
    joint_friction_max: tuple[float, float, float] = (0.7, 1.0, 1.0)
    ground_friction_range: tuple[float, float] = (0.5, 0.9)
    restitution_range: tuple[float, float] = (0.0, 0.2)
    reset_joint_noise: float = 0.05
    # observation noise (uniform half-widths)
    noise_gravity: float = 0.07
    noise_ang_vel: float = 0.10
    noise_joint_pos: float = 0.05
    noise_joint_vel: float = 0.50
    noise_pos_hist: float = 0.05
    noise_vel_hist: float = 0.10
    # ablation flags
    use_mor: bool = True
    use_load_reg: bool = True
    aerial_reward_mode: str = "cav"
    # termination
    overload_threshold: float = 45.0
    fall_height: float = 0.15
    # action-to-target mapping
    action_clip: float = 1.5
    # history sampling: 3 samples spaced 0.06 s cover the 0.18 s window
    history_spacing_steps: int = 3
    history_samples: int = 3

    def __post_init__(self):
        n = self.dt_control / self.dt_sim
        if abs(n - round(n)) > 1e-9 or round(n) < 1:
            raise ValueError("dt_control must be an integer multiple of dt_sim")
        AerialMode(self.aerial_reward_mode)

    @property
    def substeps(self) -> int:
        return int(round(self.dt_control / self.dt_sim))

    def nominal(self) -> "EnvConfig":
        """Collapsed randomization and zero observation noise (evaluation)."""
        return replace(
            self, mass_scale_range=(1.0, 1.0), inertia_scale_range=(1.0, 1.0),
            com_shift_max=0.0, pd_scale_range=(1.0, 1.0),
            joint_friction_max=(0.0, 0.0, 0.0), ground_friction_range=(0.7, 0.7),
            restitution_range=(0.0, 0.0), noise_gravity=0.0, noise_ang_vel=0.0,
            noise_joint_pos=0.0, noise_joint_vel=0.0, noise_pos_hist=0.0,
            noise_vel_hist=0.0)


@dataclass(frozen=True)
class ReferencePose:
    """Crouch used as PD target origin and reset pose."""

    base_pitch: float
    q: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "q", np.asarray(self.q, dtype=float).reshape(3))


def crouch_reference(model: HopperModel, knee_angle: float = 0.8) -> ReferencePose:
    """Flat-foot crouch with the COM over the foot center.

    With the knee angle fixed, the flat-foot condition ties base pitch to the
    ankle pitch (all three pitch rotations cancel); the remaining ankle angle
    is found by bisection on the COM-over-foot-center condition.
    """
    (masses, jattach, jaxis, com_local, inertia_local, corners, *_r) = model.packed()

    def com_minus_foot_x(q2: float) -> float:
        base_pitch = -(knee_angle + q2)
        quat = np.array([math.cos(base_pitch / 2), 0.0, math.sin(base_pitch / 2), 0.0])
        qj = np.array([knee_angle, q2, 0.0])
        r, p, s, a, c, iw = _k.fk(np.zeros(3), quat, qj, jattach, jaxis,
                                  com_local, inertia_local)
        com_x = float((masses[:, None] * c).sum(axis=0)[0] / masses.sum())
        foot_x = float((p[3] + r[3] @ corners.mean(axis=0))[0])
        return com_x - foot_x

    lo = max(model.joints[1].pos_lo + 0.02, -knee_angle - 0.6)
    hi = min(model.joints[1].pos_hi - 0.02, 0.0)
    flo, fhi = com_minus_foot_x(lo), com_minus_foot_x(hi)
    if flo * fhi > 0:  # no crossing: fall back to the symmetric ankle
        q2 = -knee_angle / 2
    else:
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            fm = com_minus_foot_x(mid)
            if flo * fm <= 0:
                hi, fhi = mid, fm
            else:
                lo, flo = mid, fm
        q2 = 0.5 * (lo + hi)
    return ReferencePose(base_pitch=-(knee_angle + q2), q=np.array([knee_angle, q2, 0.0]))


def randomized_reset(config: EnvConfig, model: HopperModel, reference: ReferencePose,
                     rng: np.random.Generator) -> tuple[GeneralizedState, HopperModel, dict]:
    """Sample a model instance and an initial state per the randomization table.

    The pose is the reference crouch plus a small uniform joint perturbation
    (resampled if it would violate the limits), feet placed on the ground,
    zero velocity.
    """
    mass_scale = rng.uniform(*config.mass_scale_range)
    inertia_scales = rng.uniform(*config.inertia_scale_range, size=3)
    com_shifts = rng.uniform(-config.com_shift_max, config.com_shift_max, size=(3, 3))
    kp_scale = rng.uniform(*config.pd_scale_range, size=3)
    kd_scale = rng.uniform(*config.pd_scale_range, size=3)
    coulomb = rng.uniform(0.0, np.asarray(config.joint_friction_max))
    mu = rng.uniform(*config.ground_friction_range)
    restitution = rng.uniform(*config.restitution_range)

    instance = scaled_model(model, mass_scale=mass_scale, inertia_scales=inertia_scales,
                            com_shifts=com_shifts, friction_mu=mu,
                            damping_scale=1.0 - restitution)

    lo, hi = model.joint_pos_lo, model.joint_pos_hi
    for _ in range(100):
        q = reference.q + rng.uniform(-config.reset_joint_noise,
                                      config.reset_joint_noise, size=3)
        if np.all(q > lo) and np.all(q < hi):
            break
    else:
        q = reference.q.copy()

    # keep the sole flat on the plane: the base orientation absorbs whatever
    # the perturbed ankle/knee angles would do to the foot
    pitch = -(q[0] + q[1])
    roll = -q[2]
    qp = np.array([math.cos(pitch / 2), 0.0, math.sin(pitch / 2), 0.0])
    qr = np.array([math.cos(roll / 2), math.sin(roll / 2), 0.0, 0.0])
    quat = np.array([
        qr[0] * qp[0] - qr[1] * qp[1], qr[0] * qp[1] + qr[1] * qp[0],
        qr[0] * qp[2] - qr[1] * qp[3], qr[0] * qp[3] + qr[1] * qp[2]])
    quat = quat / np.linalg.norm(quat)
    state = GeneralizedState(np.zeros(3), quat, np.zeros(6), q, np.zeros(3))
    # drop the base so the corners sit at (capped) static spring compression,
    # which avoids a foot-slap load transient on the first few substeps
    (masses, jattach, jaxis, com_local, inertia_local, corners, *_r) = instance.packed()
    r, p, s, a, c, iw = _k.fk(state.base_position, quat, q, jattach, jaxis,
                              com_local, inertia_local)
    lowest = min(float((p[3] + r[3] @ corners[k])[2]) for k in range(4))
    preload = min(instance.total_mass * 9.81 / (4.0 * instance.contact.stiffness), 1e-3)
    state.base_position[2] = -lowest - preload

    draws = {"mass_scale": mass_scale, "inertia_scales": inertia_scales,
             "com_shifts": com_shifts, "kp_scale": kp_scale, "kd_scale": kd_scale,
             "coulomb": coulomb, "ground_friction": mu, "restitution": restitution}
    return state, instance, draws


class HopperEnv:
    """Single environment instance; owns its RNG stream and history buffers."""

    def __init__(self, config: EnvConfig, model: HopperModel | None = None,
                 envelopes: tuple[MorEnvelope, ...] = DEFAULT_ENVELOPES,
                 gains: PdGains = DEFAULT_GAINS,
                 weights: RewardWeights | None = None,
                 schedule: PhaseSchedule | None = None,
                 reference: ReferencePose | None = None):
        self.config = config
        self.base_model = model if model is not None else default_model()
        self.envelopes = tuple(envelopes)
        self.base_gains = gains
        self.schedule = schedule if schedule is not None else PhaseSchedule()
        self.reference = (reference if reference is not None
                          else crouch_reference(self.base_model))
        self.weights = (weights if weights is not None
                        else RewardWeights(theta0=self.reference.q))
        self.rng = np.random.default_rng(config.seed)
        self.mode = AerialMode(config.aerial_reward_mode)
        # stacked envelope arrays for the vectorized per-substep clip
        self._tau_cur = np.array([e.tau_cur for e in self.envelopes])
        self._omega_max = np.array([e.omega_max for e in self.envelopes])
        self._beta = np.array([e.beta for e in self.envelopes])
        self._vel_limit = self.base_model.joint_vel_limit
        self.model: HopperModel | None = None
        self._episode_active = False

    # ------------------------------------------------------------------
    # episode control

    def reset(self) -> tuple[np.ndarray, np.ndarray]:
        state, instance, draws = randomized_reset(
            self.config, self.base_model, self.reference, self.rng)
        self.model = instance
        self._packed = instance.packed()
        self._pos = state.base_position.copy()
        self._quat = state.base_orientation.copy()
        self._qj = state.q.copy()
        self._u = np.zeros(9)
        self._t = 0.0
        self._step_count = 0
        self.gains = PdGains(kp=self.base_gains.kp * draws["kp_scale"],
                             kd=self.base_gains.kd * draws["kd_scale"])
        self._coulomb = draws["coulomb"]
        self.last_draws = draws
        n_hist = self.config.history_samples * self.config.history_spacing_steps
        self._err_hist = np.zeros((n_hist + 1, 3))
        self._vel_hist = np.zeros((n_hist + 1, 3))
        self._action_prev = np.zeros(3)
        self._action_prev2 = np.zeros(3)
        self._contact_prev = self._contact_flags()
        self._episode_active = True
        return self.observe()

    @property
    def state(self) -> GeneralizedState:
        return GeneralizedState(self._pos.copy(), self._quat.copy(),
                                self._u[0:6].copy(), self._qj.copy(),
                                self._u[6:9].copy(), self._t)

    def _clip_torque(self, tau: np.ndarray, omega: np.ndarray) -> np.ndarray:
        if self.config.use_mor:
            upper = np.minimum(self._tau_cur,
                               np.maximum(0.0, self._beta * (self._omega_max - omega)))
            lower = -np.minimum(self._tau_cur,
                                np.maximum(0.0, self._beta * (self._omega_max + omega)))
        else:
            upper = np.where(omega > self._vel_limit, 0.0, self._tau_cur)
            lower = np.where(omega < -self._vel_limit, 0.0, -self._tau_cur)
        return np.clip(tau, lower, upper)

    def _contact_flags(self) -> np.ndarray:
        (masses, jattach, jaxis, com_local, inertia_local, corners,
         kn, cd, mu, vslip, _g) = self._packed
        active, *_rest = _k.contacts(self._pos, self._quat, self._qj, self._u,
                                     jattach, jaxis, com_local, inertia_local,
                                     corners, kn, cd, mu, vslip)
        return active.copy()

    def step(self, action: np.ndarray):
        """Advance one control interval.

        Returns (actor_obs, privileged_obs, RewardBreakdown, done, info).
        """
        if not self._episode_active:
            raise RuntimeError("episode is over; call reset()")
        cfg = self.config
        action = np.asarray(action, dtype=float).reshape(3)
        q_target = self.reference.q + np.clip(action, -cfg.action_clip, cfg.action_clip)
        (masses, jattach, jaxis, com_local, inertia_local, corners,
         kn, cd, mu, vslip, grav) = self._packed

        phase = self._t
        acc = LoadAccumulator(cfg.substeps)
        impulse_sum = np.zeros(3)
        tau_cmd_sum = np.zeros(3)
        tau_applied_sum = np.zeros(3)
        pitch_rate_sum = 0.0
        qdot_prev_ctrl = self._u[6:9].copy()

        for _ in range(cfg.substeps):
            qd = self._u[6:9]
            tau_pd = self.gains.kp * (q_target - self._qj) - self.gains.kd * qd
            th = np.tanh(qd / 0.05)
            tau_fric = tau_pd - self._coulomb * th
            tau = self._clip_torque(tau_fric, qd)
            tau_cmd_sum += tau_pd
            tau_applied_sum += tau
            # PD derivative gain and the Coulomb regularization slope go into
            # the implicitly integrated joint damping (explicit-unstable here)
            kd_eff = self.gains.kd + self._coulomb * (1.0 - th * th) / 0.05
            out = _k.step_kernel(self._pos, self._quat, self._qj, self._u, tau,
                                 cfg.dt_sim, masses, jattach, jaxis, com_local,
                                 inertia_local, corners, kn, cd, mu, vslip, grav,
                                 kd_eff)
            self._pos, self._quat, self._qj, self._u = out[0], out[1], out[2], out[3]
            active, force, point, jac = out[4], out[5], out[6], out[7]
            tau_inst = np.zeros(3)
            for k in range(4):
                if active[k] > 0.0:
                    gen = jac[k].T @ force[k]
                    tau_inst += gen[6:9]
                    impulse_sum += force[k] * cfg.dt_sim
            acc.add(tau_inst)
            pitch_rate_sum += self._u[1]
            self._t += cfg.dt_sim

        if not (np.all(np.isfinite(self._pos)) and np.all(np.isfinite(self._u))
                and np.all(np.isfinite(self._quat))):
            self._episode_active = False
            raise SimulationDivergedError(
                f"episode aborted: non-finite dynamics at t={self._t:.3f}s "
                f"(step {self._step_count})")

        self._step_count += 1
        tau_load = acc.finalize()
        tau_applied = tau_applied_sum / cfg.substeps
        contact_now = self._contact_flags()

        com, pmom, lmom, icom, mtot = self._centroidal_raw()
        w_com = np.linalg.solve(icom, lmom)
        raw_cav = aerial_reward_variant(self.mode, phase, w_com, lmom,
                                        self._u[0:3], self.weights.flip_axis,
                                        self.schedule)

        foot_x, foot_v = self._foot_center()
        motion = motion_terms(
            self.weights, v_xy=self._u[3:5], tau=tau_applied, theta=self._qj,
            thetadot=self._u[6:9], thetadot_prev=qdot_prev_ctrl,
            foot_v_xy=foot_v[0:2], action=action, action_prev=self._action_prev,
            action_prev2=self._action_prev2, contact_state=contact_now,
            contact_state_prev=self._contact_prev, contact_impulse=impulse_sum)
        b_pos, b_vel, b_load = barrier_terms(
            self.weights, self._qj, self._u[6:9], self.base_model.joint_pos_lo,
            self.base_model.joint_pos_hi, self._vel_limit,
            tau_load=tau_load if cfg.use_load_reg else None)
        breakdown = compose(raw_cav, motion, b_pos, b_vel, b_load, self.weights,
                            use_load_barrier=cfg.use_load_reg)

        overload = False
        if cfg.use_load_reg:
            overload = overload_termination(tau_load, cfg.overload_threshold, self.rng)
        timeout = self._t >= self.schedule.episode_len - 1e-9
        fall = (self._pos[2] < cfg.fall_height) and (self._t < self.schedule.phi_land)
        done = timeout or fall or overload
        if done:
            self._episode_active = False

        # roll history buffers
        self._err_hist = np.roll(self._err_hist, 1, axis=0)
        self._vel_hist = np.roll(self._vel_hist, 1, axis=0)
        self._err_hist[0] = q_target - self._qj
        self._vel_hist[0] = self._u[6:9]
        self._action_prev2 = self._action_prev
        self._action_prev = action.copy()
        self._contact_prev = contact_now

        info = {
            "t": self._t, "phase": phase, "cam": lmom, "cav": w_com,
            "i_com_pitch": float(icom[1, 1]), "base_pitch": self._base_pitch(),
            "base_pitch_rate": pitch_rate_sum / cfg.substeps,
            "com_height": float(com[2]), "base_height": float(self._pos[2]),
            "contact_flags": contact_now, "tau_cmd": tau_cmd_sum / cfg.substeps,
            "tau_applied": tau_applied, "tau_load": tau_load,
            "flight": not bool(contact_now.any()), "fall": fall,
            "overload": overload, "timeout": timeout, "q": self._qj.copy(),
            "qdot": self._u[6:9].copy(),
        }
        actor_obs, priv_obs = self.observe()
        return actor_obs, priv_obs, breakdown, done, info

    # ------------------------------------------------------------------
    # observations

    def observe(self) -> tuple[np.ndarray, np.ndarray]:
        """Noisy actor observation (38) and noise-free privileged state (3)."""
        cfg = self.config
        rot = _k.quat_to_rot(self._quat)
        grav_body = rot.T @ np.array([0.0, 0.0, -1.0])
        ang_body = rot.T @ self._u[0:3]
        n = cfg.history_spacing_steps
        idx = [n * (k + 1) - 1 for k in range(cfg.history_samples)]
        err_hist = self._err_hist[idx].ravel()
        vel_hist = self._vel_hist[idx].ravel()
        phase_angle = 2.0 * math.pi * self._t / self.schedule.episode_len

        rng = self.rng

        def noisy(vec, scale):
            if scale == 0.0:
                return np.asarray(vec, dtype=float)
            return np.asarray(vec, dtype=float) + rng.uniform(-scale, scale, size=np.shape(vec))

        actor = np.concatenate([
            noisy(grav_body, cfg.noise_gravity),
            noisy(ang_body, cfg.noise_ang_vel),
            noisy(self._qj, cfg.noise_joint_pos),
            noisy(self._u[6:9], cfg.noise_joint_vel),
            self._action_prev, self._action_prev2,
            noisy(err_hist, cfg.noise_pos_hist),
            noisy(vel_hist, cfg.noise_vel_hist),
            [math.sin(phase_angle), math.cos(phase_angle)],
        ])
        assert actor.shape == (ACTOR_OBS_DIM,)
        priv = self._u[3:6].copy()
        return actor, priv

    # ------------------------------------------------------------------
    # helpers

    def _centroidal_raw(self):
        (masses, jattach, jaxis, com_local, inertia_local, *_r) = self._packed
        r, p, s, a, c, iw = _k.fk(self._pos, self._quat, self._qj, jattach, jaxis,
                                  com_local, inertia_local)
        return _k.centroidal_sums(masses, c, iw, p[0], s, a, self._u)

    def _foot_center(self):
        (masses, jattach, jaxis, com_local, inertia_local, corners, *_r) = self._packed
        r, p, s, a, c, iw = _k.fk(self._pos, self._quat, self._qj, jattach, jaxis,
                                  com_local, inertia_local)
        x = p[3] + r[3] @ corners.mean(axis=0)
        v = _k.point_velocity(x, p[0], s, a, self._u)
        return x, v

    def _base_pitch(self) -> float:
        """Sagittal heading of the body x-axis; wraps at +-pi, no gimbal fold
        for flip-like (mostly planar) rotations."""
        rot = _k.quat_to_rot(self._quat)
        return math.atan2(-rot[2, 0], rot[0, 0])
