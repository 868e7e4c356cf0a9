"""UAV network simulator with DDPG training for proactive self-regulation of lineup changes."""
from .scenario import ConfigError, ScenarioConfig, load_scenario, save_scenario
from .env import UAVNetworkEnv
from .ddpg import ActorPolicy, DDPGAgent
from .apc import run_training
from .evaluation import (brute_force_placement, passive_baseline, run_policy,
                         select_checkpoint, smooth_curve, transition_gain)

__all__ = ["ConfigError", "ScenarioConfig", "load_scenario", "save_scenario", "UAVNetworkEnv",
           "ActorPolicy", "DDPGAgent", "run_training", "brute_force_placement", "passive_baseline",
           "run_policy", "select_checkpoint", "smooth_curve", "transition_gain"]
__version__ = "0.1.0"
