"""Centroidal momentum quantities: COM, 6D momentum, locked inertia, CAV.

The centroidal angular velocity w_com = I_com^-1 L_com is the rotation rate
of the equivalent joints-locked rigid body; in free flight L_com is constant
while I_com changes with configuration, so folding the leg speeds the body
up. That mechanism is what the aerial reward rides on.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import _kernels as _k
from .model import GeneralizedState, HopperModel

log = logging.getLogger(__name__)


@dataclass
class CentroidalState:
    """COM position, momenta, locked inertia and centroidal velocities.

    Invariants: I_com symmetric positive definite, L_com = I_com @ w_com and
    p_com = total_mass * v_com (both by construction here).
    """

    com: np.ndarray
    p_com: np.ndarray
    L_com: np.ndarray
    I_com: np.ndarray
    v_com: np.ndarray
    w_com: np.ndarray


def centroidal_state(model: HopperModel, state: GeneralizedState) -> CentroidalState:
    """Per-link momentum summation referred to the instantaneous COM."""
    (masses, jattach, jaxis, com_local, inertia_local, *_rest) = model.packed()
    _, p, s, a, c, iw = _k.fk(state.base_position, state.base_orientation, state.q,
                              jattach, jaxis, com_local, inertia_local)
    com, pmom, lmom, icom, mtot = _k.centroidal_sums(
        masses, c, iw, p[0], s, a, state.generalized_velocity())
    if log.isEnabledFor(logging.DEBUG):
        ev = np.linalg.eigvalsh(icom)
        log.debug("I_com condition number %.3e", ev[-1] / ev[0])
    w_com = np.linalg.solve(icom, lmom)
    return CentroidalState(com=com, p_com=pmom, L_com=lmom, I_com=icom,
                           v_com=pmom / mtot, w_com=w_com)


def cmm(model: HopperModel, state: GeneralizedState) -> np.ndarray:
    """Centroidal momentum matrix A(q), 6x9, with
    [p_com; L_com] = A(q) @ [base twist; joint rates]."""
    (masses, jattach, jaxis, com_local, inertia_local, *_rest) = model.packed()
    _, p, s, a, c, iw = _k.fk(state.base_position, state.base_orientation, state.q,
                              jattach, jaxis, com_local, inertia_local)
    io = _k._spatial_inertias_origin(masses, c, iw)
    ic = _k._composites(io)
    phi = _k._phi_columns(p[0], s, a)
    mtot = masses.sum()
    com = (masses[:, None] * c).sum(axis=0) / mtot
    return _k.cmm_from_composite(ic, phi, com)
