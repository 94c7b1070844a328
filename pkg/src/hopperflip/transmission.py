"""Contact-induced joint load: estimation, barrier, and overload termination.

Landing impacts push force through the foot into the gear train. The
instantaneous joint-space load is the contact impulse mapped through the
contact Jacobian transpose and divided by the sim timestep; averaging its
absolute value over one control interval gives the load figure that the
barrier regularizes and the termination rule watches.
"""

from __future__ import annotations

import numpy as np

from .model import ContactRecord
from .rewards import relaxed_log_barrier

LOAD_BOUND = 30.0
LOAD_DELTA = 1.0


def instantaneous_load(contacts: list[ContactRecord], dt_sim: float) -> np.ndarray:
    """Actuated-joint torques induced by the current contact impulses.

    Computes sum(J^T lambda) / dt_sim over active contacts and returns the
    three actuated rows of the 9-row generalized result.
    """
    if dt_sim <= 0.0:
        raise ValueError("dt_sim must be positive")
    out = np.zeros(9)
    for rec in contacts:
        if not rec.active:
            continue
        out += rec.jacobian.T @ rec.impulse()
    return out[6:9] / dt_sim


class LoadAccumulator:
    """Running mean of |tau_inst| over the substeps of one control interval."""

    def __init__(self, substeps: int):
        if substeps <= 0:
            raise ValueError("substeps must be positive")
        self.substeps = substeps
        self.sum_abs_tau = np.zeros(3)
        self.count = 0

    def add(self, tau_inst: np.ndarray) -> None:
        if self.count >= self.substeps:
            raise RuntimeError("accumulator already holds a full control interval")
        self.sum_abs_tau += np.abs(np.asarray(tau_inst, dtype=float).reshape(3))
        self.count += 1

    def finalize(self) -> np.ndarray:
        """Componentwise mean of absolute loads; rejects partial intervals."""
        if self.count != self.substeps:
            raise RuntimeError(f"finalize after {self.count}/{self.substeps} substeps")
        return self.sum_abs_tau / self.substeps

    def reset(self) -> None:
        self.sum_abs_tau[:] = 0.0
        self.count = 0


def accumulate_and_finalize(tau_inst_per_substep) -> np.ndarray:
    """Convenience wrapper: feed a full control interval, return tau_load."""
    seq = list(tau_inst_per_substep)
    acc = LoadAccumulator(len(seq))
    for tau in seq:
        acc.add(tau)
    return acc.finalize()


def load_barrier(tau_load: np.ndarray, bound: float = LOAD_BOUND,
                 delta: float = LOAD_DELTA) -> float:
    """Relaxed log barrier on each actuated joint's load, summed."""
    tau_load = np.asarray(tau_load, dtype=float).reshape(3)
    return float(sum(relaxed_log_barrier(float(t), -bound, bound, delta) for t in tau_load))


def overload_termination(tau_load: np.ndarray, threshold: float,
                         rng: np.random.Generator) -> bool:
    """Coin-flip termination on strict threshold exceedance of any component.

    A hard stop would make every early overload fatal and kill exploration; a
    fair coin keeps some of those episodes alive while still charging a
    realistic expected cost for loads that would wreck the gear train.
    """
    if threshold <= 0.0:
        raise ValueError("threshold must be positive")
    if np.any(np.abs(np.asarray(tau_load, dtype=float)) > threshold):
        return bool(rng.random() < 0.5)
    return False
