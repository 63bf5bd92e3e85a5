"""Time-slotted LEO satellite network simulator with a learned per-hop resource manager."""

from .constellation import (ConfigurationError, ConstellationSpec, SatelliteId, TopologySnapshot,
                            build_constellation, neighbor_roles, propagate)
from .traffic import Outcome, RequestRuntime, ServiceRequest, generate_batch, merge_carryover
from .netsim import DelayBreakdown, SimParams, SlotLedger, admit_hop, adjudicate, hop_delay, step_slot
from .features import NONE, Observation, build_observation, phased_reward
from .policy import PolicyParameters, load_checkpoint, save_checkpoint
from .experiments import ExperimentConfig, evaluate, load_config, run_episode, train

__version__ = "0.1.0"
