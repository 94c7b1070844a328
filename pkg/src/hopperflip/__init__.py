"""One-leg hopper front-flip sandbox.

A desk-scale rigid-body simulation of a 3-joint monopod with compliant foot
contact, the centroidal-rotation reward family, four-quadrant motor operating
region limits, contact-induced transmission load accounting, and a
from-scratch policy-gradient learner for discovering front flips.
"""

from .actuator import (DEFAULT_ENVELOPES, DEFAULT_GAINS, MorEnvelope, PdGains,
                       box_clip, joint_friction, mor_clip, pd_torque)
from .centroidal import CentroidalState, centroidal_state, cmm
from .env import EnvConfig, HopperEnv, ReferencePose, crouch_reference
from .model import (ContactParams, ContactRecord, GeneralizedState, HopperModel,
                    JointParams, LinkParams, SimulationDivergedError, bias_forces,
                    contact_resolve, default_model, load_model, mass_matrix,
                    save_model, step)
from .rewards import (AerialMode, PhaseSchedule, RewardBreakdown, RewardWeights,
                      aerial_reward_variant, compose, motion_terms, r_cav,
                      relaxed_log_barrier)
from .transmission import (LoadAccumulator, accumulate_and_finalize,
                           instantaneous_load, load_barrier, overload_termination)

__version__ = "0.1.0"
