from .types import PpoConfig, RolloutBatch, Transition
from .policies import Critic, FilmPolicy, gaussian_entropy, gaussian_log_prob, params_hash
from .latents import CallableLatent, EncoderLatents, FixedLatent, NoLatent, ZeroLatent
from .gae import gae
from .rollout import SwingTask, WalkerTask, collect_rollout
from .ppo import PpoLearner, ppo_losses
from .offline import (
    OfflineConfig,
    batch_to_transitions,
    load_transitions,
    pretrain_critic_offline,
    save_transitions,
)
from .evaluate import evaluate_policy

__all__ = [
    "PpoConfig",
    "RolloutBatch",
    "Transition",
    "Critic",
    "FilmPolicy",
    "gaussian_entropy",
    "gaussian_log_prob",
    "params_hash",
    "CallableLatent",
    "EncoderLatents",
    "FixedLatent",
    "NoLatent",
    "ZeroLatent",
    "gae",
    "WalkerTask",
    "SwingTask",
    "collect_rollout",
    "PpoLearner",
    "ppo_losses",
    "OfflineConfig",
    "batch_to_transitions",
    "load_transitions",
    "pretrain_critic_offline",
    "save_transitions",
    "evaluate_policy",
]
