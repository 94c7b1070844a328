"""Rigid-body model of the one-leg hopper and its time integration.

The robot is a 3-link chain: a heavy thigh acting as the floating base, a
calf behind a knee pitch joint, and a flat foot behind serial ankle pitch and
roll joints (the two ankle joints share one anchor through a massless
carrier). Ground contact is a compliant spring-damper at the four corners of
the foot plate with smooth-saturated Coulomb friction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels as _k

GRAVITY_DEFAULT = (0.0, 0.0, -9.81)

# physical constants of the platform
THIGH_MASS = 7.60
CALF_MASS = 3.89
FOOT_MASS = 0.96
THIGH_LENGTH = 0.35
CALF_LENGTH = 0.41
FOOT_HEIGHT = 0.08
FOOT_PLATE_LENGTH = 0.20
FOOT_PLATE_WIDTH = 0.10

JOINT_NAMES = ("knee_pitch", "ankle_pitch", "ankle_roll")
JOINT_POS_LO = (-0.4, -0.873, -0.4)
JOINT_POS_HI = (2.15, 0.698, 0.4)
JOINT_VEL_LIMIT = (8.0, 12.0, 12.0)


class SimulationDivergedError(RuntimeError):
    """Raised when integration produces a non-finite state."""


def _cuboid_inertia(mass: float, dx: float, dy: float, dz: float) -> np.ndarray:
    c = mass / 12.0
    return np.diag([c * (dy * dy + dz * dz), c * (dx * dx + dz * dz), c * (dx * dx + dy * dy)])


@dataclass(frozen=True)
class LinkParams:
    """Mass, COM offset (link frame), inertia about the COM, and length to the child joint."""

    mass: float
    com_offset: np.ndarray
    inertia: np.ndarray
    length: float

    def __post_init__(self):
        object.__setattr__(self, "com_offset", np.asarray(self.com_offset, dtype=float))
        object.__setattr__(self, "inertia", np.asarray(self.inertia, dtype=float))
        if self.mass <= 0.0:
            raise ValueError("link mass must be positive")
        if not np.allclose(self.inertia, self.inertia.T):
            raise ValueError("inertia must be symmetric")
        ev = np.linalg.eigvalsh(self.inertia)
        if ev[0] <= 0.0:
            raise ValueError("inertia must be positive definite")
        # principal moments of a physical body satisfy the triangle inequalities
        a, b, c = np.sort(ev)
        if a + b < c * (1.0 - 1e-9):
            raise ValueError("inertia violates the triangle inequality")


@dataclass(frozen=True)
class JointParams:
    """Revolute joint: unit axis in the parent frame plus position/velocity limits."""

    name: str
    axis: np.ndarray
    pos_lo: float
    pos_hi: float
    vel_limit: float

    def __post_init__(self):
        axis = np.asarray(self.axis, dtype=float)
        n = np.linalg.norm(axis)
        if n == 0.0:
            raise ValueError("joint axis must be nonzero")
        object.__setattr__(self, "axis", axis / n)
        if not self.pos_lo < self.pos_hi:
            raise ValueError("joint limits must satisfy lo < hi")


@dataclass(frozen=True)
class ContactParams:
    """Compliant plane-contact constants.

    ``damping_scale`` maps bounce randomization onto the damper: an episode
    restitution sample e in [0, 0.2] is applied as damping_scale = 1 - e
    (less dissipation = livelier impacts).
    """

    stiffness: float = 3.0e4
    damping_ratio: float = 0.7
    damping_scale: float = 1.0
    friction_mu: float = 0.7
    slip_velocity: float = 0.02


@dataclass(frozen=True)
class HopperModel:
    """Immutable kinematic/inertial description of the hopper.

    Shareable across environments; all dynamics operations are pure functions
    of (model, state).
    """

    links: tuple[LinkParams, LinkParams, LinkParams]
    joints: tuple[JointParams, JointParams, JointParams]
    foot_corners: np.ndarray
    gravity: np.ndarray = field(default_factory=lambda: np.array(GRAVITY_DEFAULT))
    contact: ContactParams = field(default_factory=ContactParams)

    def __post_init__(self):
        object.__setattr__(self, "foot_corners", np.asarray(self.foot_corners, dtype=float).reshape(4, 3))
        object.__setattr__(self, "gravity", np.asarray(self.gravity, dtype=float).reshape(3))

    @property
    def total_mass(self) -> float:
        return sum(l.mass for l in self.links)

    @property
    def joint_pos_lo(self) -> np.ndarray:
        return np.array([j.pos_lo for j in self.joints])

    @property
    def joint_pos_hi(self) -> np.ndarray:
        return np.array([j.pos_hi for j in self.joints])

    @property
    def joint_vel_limit(self) -> np.ndarray:
        return np.array([j.vel_limit for j in self.joints])

    def packed(self) -> tuple:
        """Plain-array view consumed by the jitted kernels (4-body expansion).

        Cached on first use; the model is immutable so the cache never stales.
        """
        cached = self.__dict__.get("_packed")
        if cached is not None:
            return cached
        thigh, calf, foot = self.links
        masses = np.array([thigh.mass, calf.mass, 0.0, foot.mass])
        com_local = np.stack([thigh.com_offset, calf.com_offset, np.zeros(3), foot.com_offset])
        inertia_local = np.stack([thigh.inertia, calf.inertia, np.zeros((3, 3)), foot.inertia])
        jattach = np.stack([
            np.array([0.0, 0.0, -thigh.length]),
            np.array([0.0, 0.0, -calf.length]),
            np.zeros(3),
        ])
        jaxis = np.stack([j.axis for j in self.joints])
        damping = (self.contact.damping_ratio * self.contact.damping_scale
                   * np.sqrt(self.contact.stiffness * foot.mass))
        out = (masses, jattach, jaxis, com_local, inertia_local,
               np.ascontiguousarray(self.foot_corners), self.contact.stiffness,
               damping, self.contact.friction_mu, self.contact.slip_velocity,
               np.ascontiguousarray(self.gravity))
        object.__setattr__(self, "_packed", out)
        return out


@dataclass
class GeneralizedState:
    """Floating-base pose/twist plus joint positions/velocities.

    ``base_twist`` is (angular, linear) in the world frame; the quaternion is
    wxyz body-to-world and is renormalized after every step.
    """

    base_position: np.ndarray
    base_orientation: np.ndarray
    base_twist: np.ndarray
    q: np.ndarray
    qdot: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        self.base_position = np.asarray(self.base_position, dtype=float).reshape(3)
        self.base_orientation = np.asarray(self.base_orientation, dtype=float).reshape(4)
        self.base_twist = np.asarray(self.base_twist, dtype=float).reshape(6)
        self.q = np.asarray(self.q, dtype=float).reshape(3)
        self.qdot = np.asarray(self.qdot, dtype=float).reshape(3)

    def generalized_velocity(self) -> np.ndarray:
        return np.concatenate([self.base_twist, self.qdot])

    def copy(self) -> "GeneralizedState":
        return GeneralizedState(self.base_position.copy(), self.base_orientation.copy(),
                                self.base_twist.copy(), self.q.copy(), self.qdot.copy(), self.t)

    @staticmethod
    def rest(base_position=(0.0, 0.0, 0.9), base_orientation=(1.0, 0.0, 0.0, 0.0),
             q=(0.0, 0.0, 0.0)) -> "GeneralizedState":
        return GeneralizedState(np.asarray(base_position, float), np.asarray(base_orientation, float),
                                np.zeros(6), np.asarray(q, float), np.zeros(3))


@dataclass
class ContactRecord:
    """One foot-corner contact: impulses, point, and the 3x9 point Jacobian."""

    point: np.ndarray
    normal_impulse: float
    tangential_impulse: np.ndarray
    jacobian: np.ndarray
    active: bool

    def impulse(self) -> np.ndarray:
        """World-frame 3-vector impulse (tangential x/y, normal z)."""
        return np.array([self.tangential_impulse[0], self.tangential_impulse[1],
                         self.normal_impulse])


def default_model() -> HopperModel:
    """Hopper with the published masses/lengths and cuboid-default inertias."""
    thigh = LinkParams(THIGH_MASS, [0.0, 0.0, -THIGH_LENGTH / 2],
                       _cuboid_inertia(THIGH_MASS, 0.16, 0.16, THIGH_LENGTH), THIGH_LENGTH)
    calf = LinkParams(CALF_MASS, [0.0, 0.0, -CALF_LENGTH / 2],
                      _cuboid_inertia(CALF_MASS, 0.08, 0.08, CALF_LENGTH), CALF_LENGTH)
    foot = LinkParams(FOOT_MASS, [0.0, 0.0, -FOOT_HEIGHT / 2],
                      _cuboid_inertia(FOOT_MASS, FOOT_PLATE_LENGTH, FOOT_PLATE_WIDTH, FOOT_HEIGHT),
                      FOOT_HEIGHT)
    joints = tuple(
        JointParams(name, axis, lo, hi, vl)
        for name, axis, lo, hi, vl in zip(
            JOINT_NAMES,
            ([0.0, 1.0, 0.0], [0.0, 1.0, 0.0], [1.0, 0.0, 0.0]),
            JOINT_POS_LO, JOINT_POS_HI, JOINT_VEL_LIMIT)
    )
    hx, hy = FOOT_PLATE_LENGTH / 2, FOOT_PLATE_WIDTH / 2
    corners = np.array([[hx, hy, -FOOT_HEIGHT], [hx, -hy, -FOOT_HEIGHT],
                        [-hx, hy, -FOOT_HEIGHT], [-hx, -hy, -FOOT_HEIGHT]])
    return HopperModel(links=(thigh, calf, foot), joints=joints, foot_corners=corners)


def mass_matrix(model: HopperModel, state: GeneralizedState) -> np.ndarray:
    """9x9 generalized inertia via the composite-rigid-body algorithm."""
    masses, jattach, jaxis, com_local, inertia_local, *_rest = model.packed()
    r, p, s, a, c, iw = _k.fk(state.base_position, state.base_orientation, state.q,
                              jattach, jaxis, com_local, inertia_local)
    io = _k._spatial_inertias_origin(masses, c, iw)
    ic = _k._composites(io)
    phi = _k._phi_columns(p[0], s, a)
    return _k.crba(phi, ic)


def bias_forces(model: HopperModel, state: GeneralizedState) -> np.ndarray:
    """Coriolis + gravity bias c(q, qd) with M qdd = tau_gen + J^T F - c."""
    masses, jattach, jaxis, com_local, inertia_local, *_ = model.packed()
    _, p, s, a, c, iw = _k.fk(state.base_position, state.base_orientation, state.q,
                              jattach, jaxis, com_local, inertia_local)
    io = _k._spatial_inertias_origin(masses, c, iw)
    phi = _k._phi_columns(p[0], s, a)
    return _k.rnea_bias(phi, io, state.generalized_velocity(), model.gravity)


def _records_from_arrays(active, force, point, jac, dt_sim) -> list[ContactRecord]:
    out = []
    for k in range(4):
        on = bool(active[k] > 0.0)
        lam = force[k] * dt_sim if on else np.zeros(3)
        out.append(ContactRecord(point=point[k].copy(), normal_impulse=float(lam[2]),
                                 tangential_impulse=lam[0:2].copy(), jacobian=jac[k].copy(),
                                 active=on))
    return out


def contact_resolve(model: HopperModel, state: GeneralizedState, friction_mu: float,
                    dt_sim: float) -> list[ContactRecord]:
    """Evaluate the compliant contact law; impulses are force * dt_sim."""
    if dt_sim <= 0.0:
        raise ValueError("dt_sim must be positive")
    (masses, jattach, jaxis, com_local, inertia_local, corners,
     kn, cd, _mu, vslip, _g) = model.packed()
    active, force, point, jac, _pen = _k.contacts(
        state.base_position, state.base_orientation, state.q, state.generalized_velocity(),
        jattach, jaxis, com_local, inertia_local, corners, kn, cd, friction_mu, vslip)
    return _records_from_arrays(active, force, point, jac, dt_sim)


def step(model: HopperModel, state: GeneralizedState, joint_torques: np.ndarray,
         dt_sim: float, joint_damping: np.ndarray | None = None,
         ) -> tuple[GeneralizedState, list[ContactRecord]]:
    """Advance one simulation substep; returns the new state and the contacts
    (evaluated at the pre-step state) whose impulses acted during the step.

    ``joint_damping`` adds an implicitly integrated viscous term on the
    actuated joints (used for the PD derivative gain, which is explicit-
    unstable on the light foot at this timestep). The matching explicit
    -kd*qdot contribution must already be part of ``joint_torques``.
    """
    if dt_sim <= 0.0:
        raise ValueError("dt_sim must be positive")
    tau = np.asarray(joint_torques, dtype=float).reshape(3)
    if not np.all(np.isfinite(tau)):
        raise ValueError("joint torques must be finite")
    kd = np.zeros(3) if joint_damping is None else np.asarray(joint_damping, float).reshape(3)
    (masses, jattach, jaxis, com_local, inertia_local, corners,
     kn, cd, mu, vslip, grav) = model.packed()
    pos, quat, qj, u, active, force, point, jac, _pen = _k.step_kernel(
        state.base_position, state.base_orientation, state.q, state.generalized_velocity(),
        tau, dt_sim, masses, jattach, jaxis, com_local, inertia_local, corners,
        kn, cd, mu, vslip, grav, kd)
    if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(quat))
            and np.all(np.isfinite(qj)) and np.all(np.isfinite(u))):
        raise SimulationDivergedError(f"non-finite state at t={state.t + dt_sim:.4f}s")
    new = GeneralizedState(pos, quat, u[0:6], qj, u[6:9], state.t + dt_sim)
    return new, _records_from_arrays(active, force, point, jac, dt_sim)


def foot_sole_center(model: HopperModel, state: GeneralizedState) -> tuple[np.ndarray, np.ndarray]:
    """World position and velocity of the center of the foot sole."""
    (masses, jattach, jaxis, com_local, inertia_local, corners, *_r) = model.packed()
    r, p, s, a, c, iw = _k.fk(state.base_position, state.base_orientation, state.q,
                              jattach, jaxis, com_local, inertia_local)
    x = p[3] + r[3] @ corners.mean(axis=0)
    v = _k.point_velocity(x, p[0], s, a, state.generalized_velocity())
    return x, v


def foot_corner_heights(model: HopperModel, state: GeneralizedState) -> np.ndarray:
    (masses, jattach, jaxis, com_local, inertia_local, corners, *_r) = model.packed()
    r, p, *_ = _k.fk(state.base_position, state.base_orientation, state.q,
                     jattach, jaxis, com_local, inertia_local)
    return np.array([(p[3] + r[3] @ corners[k])[2] for k in range(4)])


# ---------------------------------------------------------------------------
# JSON model documents
#
# {
#   "schema_version": 1,
#   "gravity": [0, 0, -9.81],
#   "links": {"thigh": {"mass", "length", "com_offset", "inertia"}, "calf": ..., "foot": ...},
#   "joints": {"knee_pitch": {"axis", "pos_limits", "vel_limit"}, ...},
#   "foot_corners": [[x, y, z] * 4],
#   "contact": {"stiffness", "damping_ratio", "friction_mu", "slip_velocity"}
# }
# Missing sections fall back to the defaults above.
# ---------------------------------------------------------------------------

def model_to_dict(model: HopperModel) -> dict:
    return {
        "schema_version": 1,
        "gravity": model.gravity.tolist(),
        "links": {
            name: {
                "mass": link.mass,
                "length": link.length,
                "com_offset": link.com_offset.tolist(),
                "inertia": link.inertia.tolist(),
            }
            for name, link in zip(("thigh", "calf", "foot"), model.links)
        },
        "joints": {
            j.name: {"axis": j.axis.tolist(), "pos_limits": [j.pos_lo, j.pos_hi],
                     "vel_limit": j.vel_limit}
            for j in model.joints
        },
        "foot_corners": model.foot_corners.tolist(),
        "contact": {
            "stiffness": model.contact.stiffness,
            "damping_ratio": model.contact.damping_ratio,
            "friction_mu": model.contact.friction_mu,
            "slip_velocity": model.contact.slip_velocity,
        },
    }


def model_from_dict(doc: dict) -> HopperModel:
    base = default_model()
    links = list(base.links)
    for idx, name in enumerate(("thigh", "calf", "foot")):
        if name in doc.get("links", {}):
            d = doc["links"][name]
            old = links[idx]
            links[idx] = LinkParams(
                mass=d.get("mass", old.mass),
                com_offset=d.get("com_offset", old.com_offset),
                inertia=d.get("inertia", old.inertia),
                length=d.get("length", old.length),
            )
    joints = list(base.joints)
    for idx, j in enumerate(base.joints):
        if j.name in doc.get("joints", {}):
            d = doc["joints"][j.name]
            lo, hi = d.get("pos_limits", [j.pos_lo, j.pos_hi])
            joints[idx] = JointParams(j.name, d.get("axis", j.axis), lo, hi,
                                      d.get("vel_limit", j.vel_limit))
    contact = base.contact
    if "contact" in doc:
        d = doc["contact"]
        contact = ContactParams(
            stiffness=d.get("stiffness", contact.stiffness),
            damping_ratio=d.get("damping_ratio", contact.damping_ratio),
            friction_mu=d.get("friction_mu", contact.friction_mu),
            slip_velocity=d.get("slip_velocity", contact.slip_velocity),
        )
    return HopperModel(
        links=tuple(links), joints=tuple(joints),
        foot_corners=doc.get("foot_corners", base.foot_corners),
        gravity=doc.get("gravity", base.gravity), contact=contact)


def load_model(path: str) -> HopperModel:
    with open(path) as fh:
        return model_from_dict(json.load(fh))


def save_model(model: HopperModel, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(model_to_dict(model), fh, indent=2)


def scaled_model(model: HopperModel, mass_scale: float = 1.0,
                 inertia_scales=(1.0, 1.0, 1.0), com_shifts=None,
                 friction_mu: float | None = None,
                 damping_scale: float | None = None) -> HopperModel:
    """Randomization helper: scaled masses/inertias, shifted COMs, contact overrides."""
    if com_shifts is None:
        com_shifts = np.zeros((3, 3))
    links = tuple(
        LinkParams(mass=link.mass * mass_scale,
                   com_offset=link.com_offset + com_shifts[i],
                   inertia=link.inertia * inertia_scales[i],
                   length=link.length)
        for i, link in enumerate(model.links)
    )
    contact = replace(
        model.contact,
        friction_mu=model.contact.friction_mu if friction_mu is None else friction_mu,
        damping_scale=model.contact.damping_scale if damping_scale is None else damping_scale,
    )
    return HopperModel(links=links, joints=model.joints, foot_corners=model.foot_corners,
                       gravity=model.gravity, contact=contact)
