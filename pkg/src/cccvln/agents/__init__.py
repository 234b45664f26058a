from .common import SUMMARY_DIM, CounterfactualEnv, ModelConfig, Rollout
from .creator import CounterfactualScene, Creator, Critic, Discriminator, gate_vector
from .follower import LOWLEVEL, PANORAMIC, Follower, moves_from_nodes, to_lowlevel
from .speaker import Speaker, instruction

__all__ = [
    "SUMMARY_DIM", "CounterfactualEnv", "ModelConfig", "Rollout", "CounterfactualScene", "Creator",
    "Critic", "Discriminator", "gate_vector", "LOWLEVEL", "PANORAMIC", "Follower", "moves_from_nodes",
    "to_lowlevel", "Speaker", "instruction",
]
