from .base import MultiAgentEnv, StepResult
from .coopnav import CoopNavConfig, CoopNavEnv, CoopNavState, coopnav_observe, coopnav_reset, coopnav_step
from .predprey import PredPreyConfig, PredPreyEnv, PredPreyState, predprey_reset, predprey_step
from .survival import (
    NUM_ACTIONS,
    OBS_DIM,
    SurvivalConfig,
    SurvivalEnv,
    SurvivalState,
    build_observation,
    observe_all,
    survival_reset,
    survival_step,
)

ENVIRONMENTS = {"coopnav": CoopNavEnv, "predprey": PredPreyEnv, "survival": SurvivalEnv}

__all__ = [
    "ENVIRONMENTS",
    "CoopNavConfig",
    "CoopNavEnv",
    "CoopNavState",
    "MultiAgentEnv",
    "NUM_ACTIONS",
    "OBS_DIM",
    "PredPreyConfig",
    "PredPreyEnv",
    "PredPreyState",
    "StepResult",
    "SurvivalConfig",
    "SurvivalEnv",
    "SurvivalState",
    "build_observation",
    "coopnav_observe",
    "coopnav_reset",
    "coopnav_step",
    "observe_all",
    "predprey_reset",
    "predprey_step",
    "survival_reset",
    "survival_step",
]
