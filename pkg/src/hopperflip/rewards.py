"""Reward terms, the relaxed log barrier, and the scalar composition rules.

The step reward has two parts. Motion terms guide behavior: the phase-gated
centroidal term multiplies a basket of exponential regularizers, so spinning
fast in the air amplifies whatever else the policy does well. Barrier terms
softly enforce joint position/velocity limits and (optionally) the contact-
induced transmission load through a C1 relaxed log barrier.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np


class AerialMode(str, enum.Enum):
    """Which rotation quantity the aerial-phase reward maximizes."""

    CAV = "cav"   # centroidal angular velocity along the flip axis
    CAM = "cam"   # centroidal angular momentum along the flip axis
    BAV = "bav"   # base angular velocity along the flip axis


@dataclass(frozen=True)
class PhaseSchedule:
    """Episode phase boundaries in seconds: takeoff / aerial / landing."""

    phi_jump: float = 0.5
    phi_land: float = 1.05
    episode_len: float = 2.0

    def __post_init__(self):
        if not 0.0 < self.phi_jump < self.phi_land < self.episode_len:
            raise ValueError("phase boundaries must satisfy 0 < jump < land < end")


@dataclass(frozen=True)
class RewardWeights:
    """Coefficients, diagonal joint weights, and barrier margins.

    The aerial term's weight ``w_cav`` is applied in :func:`compose`, so
    phase-term functions return the raw clipped value.
    """

    w_cav: float = 3.0
    flip_axis: np.ndarray = field(default_factory=lambda: np.array([0.0, 1.0, 0.0]))
    w_tau: np.ndarray = field(default_factory=lambda: np.array([0.5, 2.0, 2.0]))
    w_p: np.ndarray = field(default_factory=lambda: np.array([0.5, 1.0, 1.0]))
    w_v: np.ndarray = field(default_factory=lambda: np.array([0.5, 2.0, 2.0]))
    w_a: np.ndarray = field(default_factory=lambda: np.array([0.5, 2.0, 2.0]))
    theta0: np.ndarray = field(default_factory=lambda: np.zeros(3))
    # (coefficient, rate) pairs of the exponential terms
    c_lin: float = 0.10
    k_lin: float = 1.0
    c_tau: float = 0.10
    k_tau: float = 5e-3
    c_p: float = 0.10
    k_p: float = 5e-2
    c_v: float = 0.20
    k_v: float = 5e-3
    c_a: float = 0.20
    k_a: float = 1e-3
    c_slip: float = 0.10
    k_slip: float = 0.2
    c_act: float = 0.20
    k_act: float = 0.18
    c_cs: float = 0.10
    k_cs: float = 1.0
    c_ci: float = 0.20
    k_ci: float = 100.0
    # barrier margins
    delta_pos: float = 0.08
    delta_vel: float = 2.0
    delta_load: float = 1.0
    load_bound: float = 30.0

    def __post_init__(self):
        axis = np.asarray(self.flip_axis, dtype=float).reshape(3)
        n = np.linalg.norm(axis)
        if n == 0.0:
            raise ValueError("flip axis must be nonzero")
        object.__setattr__(self, "flip_axis", axis / n)
        for name in ("w_tau", "w_p", "w_v", "w_a", "theta0"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float).reshape(3))


@dataclass
class RewardBreakdown:
    """Per-term values for one control step plus the composed scalars."""

    r_cav: float = 0.0   # raw phase term, before the w_cav weight
    r_lin: float = 0.0
    r_tau: float = 0.0
    r_p: float = 0.0
    r_v: float = 0.0
    r_a: float = 0.0
    r_slip: float = 0.0
    r_act: float = 0.0
    r_cs: float = 0.0
    r_ci: float = 0.0
    b_pos: float = 0.0
    b_vel: float = 0.0
    b_load: float = 0.0
    r_motion: float = 0.0
    r_barrier: float = 0.0

    MOTION_TERMS = ("r_lin", "r_tau", "r_p", "r_v", "r_a", "r_slip", "r_act", "r_cs", "r_ci")

    @property
    def total(self) -> float:
        return self.r_motion + self.r_barrier

    def motion_sum(self) -> float:
        return float(sum(getattr(self, k) for k in self.MOTION_TERMS))


def relaxed_log_barrier(x: float, lo: float, hi: float, delta: float) -> float:
    """C1 two-sided soft barrier: log inside the margin, quadratic outside.

    b(x) = f(x - lo) + f(hi - x) with f(z) = log z for z >= delta and
    f(z) = log(delta) - ((z - 2 delta)^2 / delta^2 - 1) / 2 below.
    """
    if delta <= 0.0:
        raise ValueError("delta must be positive")
    if not lo < hi:
        raise ValueError("bounds must satisfy lo < hi")
    return _barrier_one_side(x - lo, delta) + _barrier_one_side(hi - x, delta)


def _barrier_one_side(z: float, delta: float) -> float:
    if z >= delta:
        return math.log(z)
    t = (z - 2.0 * delta) / delta
    return math.log(delta) - 0.5 * (t * t - 1.0)


def r_cav(phase: float, w_com: np.ndarray, L_com: np.ndarray, axis: np.ndarray,
          sched: PhaseSchedule) -> float:
    """Raw centroidal phase term: 0 in takeoff, clipped axis CAV in the air,
    residual-momentum penalty in landing. Half-open phase intervals."""
    return aerial_reward_variant(AerialMode.CAV, phase, w_com, L_com, None, axis, sched)


def aerial_reward_variant(mode: AerialMode, phase: float, w_com: np.ndarray,
                          L_com: np.ndarray, base_ang_vel: np.ndarray | None,
                          axis: np.ndarray, sched: PhaseSchedule) -> float:
    """Phase term with a swappable aerial quantity (comparison ablation).

    Takeoff and landing segments are identical across modes; only the aerial
    segment changes: CAV uses axis . w_com, CAM uses axis . L_com, BAV uses
    the axis component of the base angular velocity. All three share the
    [-0.1, 10] clip.
    """
    mode = AerialMode(mode)
    if not 0.0 <= phase < sched.episode_len:
        raise ValueError(f"phase {phase} outside [0, {sched.episode_len})")
    if phase < sched.phi_jump:
        return 0.0
    if phase < sched.phi_land:
        if mode is AerialMode.CAV:
            val = float(np.dot(axis, w_com))
        elif mode is AerialMode.CAM:
            val = float(np.dot(axis, L_com))
        else:
            if base_ang_vel is None:
                raise ValueError("BAV mode needs the base angular velocity")
            val = float(np.dot(axis, base_ang_vel))
        return max(min(val, 10.0), -0.1)
    return -0.5 * min(float(np.linalg.norm(L_com)), 2.5)


def motion_terms(weights: RewardWeights, *, v_xy, tau, theta, thetadot, thetadot_prev,
                 foot_v_xy, action, action_prev, action_prev2, contact_state,
                 contact_state_prev, contact_impulse) -> RewardBreakdown:
    """Evaluate the nine exponential motion regularizers.

    ``contact_impulse`` is the 3-vector impulse summed over corners within
    the control step; ``contact_state`` the 4 corner touch flags as 0/1.
    """
    w = weights
    out = RewardBreakdown()
    out.r_lin = w.c_lin * math.exp(-w.k_lin * float(np.dot(v_xy, v_xy)))
    wt = w.w_tau * np.asarray(tau)
    out.r_tau = w.c_tau * math.exp(-w.k_tau * float(np.linalg.norm(wt)))
    wp = w.w_p * (np.asarray(theta) - w.theta0)
    out.r_p = w.c_p * math.exp(-w.k_p * float(np.dot(wp, wp)))
    wv = w.w_v * np.asarray(thetadot)
    out.r_v = w.c_v * math.exp(-w.k_v * float(np.dot(wv, wv)))
    wa = w.w_a * (np.asarray(thetadot) - np.asarray(thetadot_prev))
    out.r_a = w.c_a * math.exp(-w.k_a * float(np.dot(wa, wa)))
    out.r_slip = w.c_slip * math.exp(-w.k_slip * float(np.dot(foot_v_xy, foot_v_xy)))
    da = np.asarray(action) - 2.0 * np.asarray(action_prev) + np.asarray(action_prev2)
    out.r_act = w.c_act * math.exp(-w.k_act * float(np.dot(da, da)))
    dc = np.asarray(contact_state, dtype=float) - np.asarray(contact_state_prev, dtype=float)
    out.r_cs = w.c_cs * math.exp(-w.k_cs * float(np.dot(dc, dc)))
    lam = np.asarray(contact_impulse)
    out.r_ci = w.c_ci * math.exp(-w.k_ci * float(np.dot(lam, lam)))
    return out


def barrier_terms(weights: RewardWeights, theta, thetadot, pos_lo, pos_hi, vel_limit,
                  tau_load=None) -> tuple[float, float, float]:
    """Joint position/velocity barriers plus the optional load barrier."""
    b_pos = sum(relaxed_log_barrier(float(theta[j]), float(pos_lo[j]), float(pos_hi[j]),
                                    weights.delta_pos) for j in range(3))
    b_vel = sum(relaxed_log_barrier(float(thetadot[j]), -float(vel_limit[j]),
                                    float(vel_limit[j]), weights.delta_vel) for j in range(3))
    b_load = 0.0
    if tau_load is not None:
        b_load = sum(relaxed_log_barrier(float(tau_load[j]), -weights.load_bound,
                                         weights.load_bound, weights.delta_load)
                     for j in range(3))
    return float(b_pos), float(b_vel), float(b_load)


def compose(raw_cav: float, motion: RewardBreakdown, b_pos: float, b_vel: float,
            b_load: float, weights: RewardWeights, use_load_barrier: bool) -> RewardBreakdown:
    """Assemble the step reward: the weighted phase term multiplies the motion
    basket, barriers add up (load barrier only when its pathway is enabled)."""
    out = motion
    out.r_cav = float(raw_cav)
    out.b_pos = float(b_pos)
    out.b_vel = float(b_vel)
    out.b_load = float(b_load) if use_load_barrier else 0.0
    out.r_motion = (1.0 + weights.w_cav * out.r_cav) * out.motion_sum()
    out.r_barrier = out.b_pos + out.b_vel + out.b_load
    return out
