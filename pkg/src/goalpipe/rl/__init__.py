from .rewards import (
    Trajectory,
    best_in_trajectory,
    gcrl_reward,
    make_distilled_embed,
    make_exact_embed,
    raw_score_reward,
    trajectory_scores,
    vlm_return,
    vlm_reward,
)
from .policy import PolicyNet, PolicySpec, load_policy, save_policy
from .ppo import PPOHyper, PolicyArtifact, gae_advantages, ppo_train, rollout
from .evaluate import EvalArtifacts, evaluate_lca

__all__ = [
    "Trajectory", "best_in_trajectory", "gcrl_reward", "make_distilled_embed",
    "make_exact_embed", "raw_score_reward", "trajectory_scores", "vlm_return",
    "vlm_reward", "PolicyNet", "PolicySpec", "load_policy", "save_policy",
    "PPOHyper", "PolicyArtifact", "gae_advantages", "ppo_train", "rollout",
    "EvalArtifacts", "evaluate_lca",
]
