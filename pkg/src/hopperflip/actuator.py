"""Joint-level actuation: PD law, motor operating region, joint friction.

The operating region of each motor is a trapezoid in the torque-speed plane:
a flat soft current limit (thermal) cut by a voltage line whose available
drive torque falls off linearly with speed as back-EMF eats the bus voltage.
Braking quadrants keep the full current-limited torque. ``box_clip`` is the
naive alternative (constant torque box, drive zeroed past the speed limit)
used by the no-envelope ablation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class MorEnvelope:
    """Trapezoidal torque-speed envelope of one actuator.

    tau_cur: soft current limit, N*m
    omega_max: speed at which the voltage line reaches zero drive torque, rad/s
    beta: voltage line slope, N*m per rad/s
    """

    tau_cur: float
    omega_max: float
    beta: float

    def __post_init__(self):
        if not (self.tau_cur > 0 and self.omega_max > 0 and self.beta > 0):
            raise ValueError("envelope parameters must be positive")
        if self.beta * self.omega_max < self.tau_cur:
            raise ValueError("degenerate envelope: voltage line never reaches the current limit")

    def upper(self, omega):
        """Max drive torque at speed omega (elementwise)."""
        return np.minimum(self.tau_cur, np.maximum(0.0, self.beta * (self.omega_max - omega)))

    def lower(self, omega):
        return -np.minimum(self.tau_cur, np.maximum(0.0, self.beta * (self.omega_max + omega)))


# corner speeds chosen so the voltage line meets the current limit well below
# the zero-torque speed; values are plausible for this robot class and are
# overridable through the model config
DEFAULT_ENVELOPES = (
    MorEnvelope(tau_cur=45.0, omega_max=12.0, beta=45.0 / 8.0),   # knee: corner at 4 rad/s
    MorEnvelope(tau_cur=30.0, omega_max=14.0, beta=30.0 / 9.0),   # ankle pitch: corner at 5
    MorEnvelope(tau_cur=30.0, omega_max=14.0, beta=30.0 / 9.0),   # ankle roll
)


@dataclass(frozen=True)
class PdGains:
    """Proportional/derivative gains of the low-level joint controller."""

    kp: np.ndarray
    kd: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "kp", np.asarray(self.kp, dtype=float).reshape(3))
        object.__setattr__(self, "kd", np.asarray(self.kd, dtype=float).reshape(3))
        if np.any(self.kp < 0) or np.any(self.kd < 0):
            raise ValueError("gains must be nonnegative")


DEFAULT_GAINS = PdGains(kp=(100.0, 60.0, 60.0), kd=(2.0, 1.0, 1.0))


def pd_torque(gains: PdGains, q_target, q, qdot) -> np.ndarray:
    """tau = Kp (q* - q) - Kd qdot, componentwise."""
    return gains.kp * (np.asarray(q_target) - np.asarray(q)) - gains.kd * np.asarray(qdot)


def mor_clip(env: MorEnvelope, tau_cmd, omega):
    """Clamp a commanded torque into the feasible operating region at speed omega.

    Accepts scalars or broadcastable arrays; idempotent.
    """
    return np.clip(tau_cmd, env.lower(omega), env.upper(omega))


def box_clip(tau_cmd, omega, tau_max: float, omega_limit: float):
    """Static box constraint: |tau| <= tau_max, and no drive torque that would
    push the joint further past its speed limit (braking stays available)."""
    upper = np.where(omega > omega_limit, 0.0, tau_max)
    lower = np.where(omega < -omega_limit, 0.0, -tau_max)
    return np.clip(tau_cmd, lower, upper)


def joint_friction(tau_net, qdot, coulomb, smoothing: float = 0.05) -> np.ndarray:
    """Subtract smooth-saturated Coulomb friction opposing the joint rate.

    ``smoothing`` is the rate scale (rad/s) of the tanh regularization; the
    friction magnitude never exceeds ``coulomb``.
    """
    coulomb = np.asarray(coulomb, dtype=float)
    if np.any(coulomb < 0):
        raise ValueError("coulomb friction must be nonnegative")
    return np.asarray(tau_net) - coulomb * np.tanh(np.asarray(qdot) / smoothing)
