"""Reward functions, trajectories, and score-based episode metrics.

Two reward families drive the agents: a distance-difference reward for the
goal-conditioned agent, and score-difference rewards (exact or surrogate) for
the query-conditioned baselines. Both telescope: the undiscounted episode sum
equals an endpoint difference.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import Query
from ..distill import DistilledModel
from ..env import DEFAULT_VIEWS, Action, SceneEncoder, State, config_of, step
from ..errors import Misaligned


@dataclass
class Trajectory:
    """Fixed-horizon episode record.

    configs[t] is the configuration of the state in which actions[t] was
    taken; postultimate_config belongs to the state after the last action.
    scores optionally caches per-configuration similarity scores (length
    T + 1: in-trajectory configs plus the postultimate one).
    """

    configs: np.ndarray             # (T, 7)
    velocities: np.ndarray          # (T, 7)
    actions: np.ndarray             # (T, 5)
    rewards: np.ndarray             # (T,)
    postultimate_config: np.ndarray  # (7,)
    scores: np.ndarray | None = None

    def __len__(self) -> int:
        return self.configs.shape[0]

    def all_configs(self) -> np.ndarray:
        return np.concatenate([self.configs, self.postultimate_config[None, :]])


def make_exact_embed(encoder: SceneEncoder | None = None, views=DEFAULT_VIEWS):
    """Embedding function backed by the exact multiview encoder."""
    enc = encoder or SceneEncoder()
    return lambda configs: enc.config_embedding_many(configs, views, check=False)


def make_distilled_embed(model: DistilledModel):
    """Embedding function backed by the surrogate model (inference mode)."""
    return lambda configs: model.forward(configs)


def gcrl_reward(s: State, a: Action, goal: np.ndarray) -> float:
    """Distance progress toward a goal configuration over one transition."""
    goal = np.asarray(goal, dtype=np.float64)
    before = float(np.linalg.norm(config_of(s) - goal))
    after = float(np.linalg.norm(config_of(step(s, a)) - goal))
    return before - after


def vlm_reward(s: State, a: Action, query: Query, embed_fn) -> float:
    """Score difference across one transition: S(next) - S(current)."""
    q_now = config_of(s)[None, :]
    q_next = config_of(step(s, a))[None, :]
    emb = embed_fn(np.concatenate([q_now, q_next]))
    scores = emb @ query.embedding
    return float(scores[1] - scores[0])


def raw_score_reward(s: State, a: Action, query: Query, embed_fn) -> float:
    """Undifferenced score of the current configuration (ablation reward)."""
    emb = embed_fn(config_of(s)[None, :])
    return float(emb[0] @ query.embedding)


def trajectory_scores(traj: Trajectory, query: Query, embed_fn) -> np.ndarray:
    """Compute (and cache) per-configuration scores, postultimate included."""
    emb = embed_fn(traj.all_configs())
    traj.scores = emb @ query.embedding
    return traj.scores


def vlm_return(traj: Trajectory, gamma: float) -> float:
    """Discounted sum of time-differenced scores. Requires cached scores."""
    if traj.scores is None:
        raise Misaligned("trajectory has no cached scores; call trajectory_scores")
    s = traj.scores
    diffs = s[1:] - s[:-1]
    weights = gamma ** np.arange(len(traj))
    return float(weights @ diffs)


def best_in_trajectory(traj: Trajectory, query: Query, embed_fn) -> float:
    """Maximum score over the in-trajectory configurations (postultimate
    excluded, matching the metric definition)."""
    if traj.scores is None:
        trajectory_scores(traj, query, embed_fn)
    return float(np.max(traj.scores[:-1]))
