"""Clipped-surrogate PPO with GAE, and single-episode rollouts.

The trainer collects fixed-size buffers from a lockstep batch of
environments, computes generalized advantage estimates, and performs several
epochs of minibatch updates with AdamW, linear learning-rate annealing,
entropy bonus and global gradient-norm clipping. Everything is deterministic
given the seed.

Task conditioning and rewards are tied together: a GCRL agent's task vector
is its goal configuration (distance-difference reward); MTRL/STRL task
vectors are unit query embeddings (score-difference or raw-score rewards
through a supplied embedding function).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .. import nn
from ..core import Query
from ..dataset import ConfigDataset
from ..env import HORIZON, Action, State, VecEnv, config_of, reset, step
from ..errors import ConfigInvalid, Misaligned
from .policy import PolicyNet, PolicySpec
from .rewards import Trajectory


@dataclass
class PPOHyper:
    clip: float = 0.2
    gamma: float = 0.999
    gae_lambda: float = 0.95
    epochs: int = 10
    lr: float = 5e-4
    anneal_lr: bool = True
    grad_norm_clip: float = 0.5
    entropy_coef: float = 2.5e-2
    value_coef: float = 0.5
    weight_decay: float = 0.01
    update_timesteps: int = 8192
    minibatch: int = 2048
    n_envs: int = 32
    total_steps: int = 2_000_000

    def validate(self):
        pos = ["gamma", "gae_lambda", "epochs", "lr", "grad_norm_clip",
               "value_coef", "update_timesteps", "minibatch", "n_envs"]
        for name in pos:
            if getattr(self, name) <= 0:
                raise ConfigInvalid(f"{name} must be positive")
        if not 0.0 < self.clip < 1.0:
            raise ConfigInvalid("clip must lie in (0, 1)")
        if self.entropy_coef < 0 or self.weight_decay < 0 or self.total_steps < 0:
            raise ConfigInvalid("negative coefficient")
        if self.update_timesteps % self.n_envs != 0:
            raise ConfigInvalid("update_timesteps must divide by n_envs")


@dataclass
class PolicyArtifact:
    spec: PolicySpec
    net: PolicyNet
    hyper: PPOHyper
    reward_spec: str
    meta: dict = field(default_factory=dict)


def gae_advantages(rewards, values, dones, last_values, gamma, lam):
    """Generalized advantage estimation over a (T, E) buffer.

    dones[t] marks transitions that ended an episode; bootstrapping is
    masked across them. Returns (advantages, returns)."""
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=np.float64)
    T = rewards.shape[0]
    adv = np.zeros_like(rewards)
    lastgaelam = np.zeros_like(np.atleast_1d(last_values), dtype=np.float64)
    for t in reversed(range(T)):
        next_values = values[t + 1] if t < T - 1 else np.asarray(last_values)
        nonterminal = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_values * nonterminal - values[t]
        lastgaelam = delta + gamma * lam * nonterminal * lastgaelam
        adv[t] = lastgaelam
    return adv, adv + values


class _TaskSampler:
    """Draws per-episode task vectors for each agent kind."""

    def __init__(self, kind: str, task_source, rng: np.random.Generator):
        self.kind = kind
        self.rng = rng
        if kind == "GCRL":
            if not isinstance(task_source, ConfigDataset):
                raise ConfigInvalid("GCRL task source must be a ConfigDataset")
            self.pool = task_source.configs
        elif kind == "MTRL":
            queries = list(task_source)
            if not queries:
                raise ConfigInvalid("MTRL needs a non-empty query list")
            self.pool = np.stack([q.embedding for q in queries])
        elif kind == "STRL":
            if not isinstance(task_source, Query):
                raise ConfigInvalid("STRL task source must be a single Query")
            self.pool = task_source.embedding[None, :]
        else:
            raise ConfigInvalid(f"unknown kind {kind!r}")

    def sample(self) -> np.ndarray:
        i = int(self.rng.integers(self.pool.shape[0]))
        return self.pool[i].copy()


def _batch_scores(embed_fn, configs: np.ndarray, tasks: np.ndarray) -> np.ndarray:
    emb = embed_fn(configs)
    return np.einsum("ij,ij->i", emb, tasks)


def ppo_train(
    kind: str,
    reward_spec: str,
    task_source,
    hyper: PPOHyper,
    seed: int,
    embed_fn=None,
    spec: PolicySpec | None = None,
    progress: bool = False,
) -> PolicyArtifact:
    """Train a policy of the given kind.

    reward_spec: "distance" (goal progress), "score-diff" (time-differenced
    query score via embed_fn), or "score-raw" (undifferenced ablation).
    """
    hyper.validate()
    if reward_spec not in ("distance", "score-diff", "score-raw"):
        raise ConfigInvalid(f"unknown reward_spec {reward_spec!r}")
    if reward_spec != "distance" and embed_fn is None:
        raise ConfigInvalid("score rewards need an embedding function")
    if kind == "GCRL" and reward_spec != "distance":
        raise ConfigInvalid("GCRL trains on the distance reward")

    spec = spec or PolicySpec(kind=kind)
    net = PolicyNet(spec, seed=seed)
    rng = np.random.default_rng([seed, 1])
    sampler = _TaskSampler(kind, task_source, np.random.default_rng([seed, 2]))
    opt = nn.AdamW(net.params, lr=hyper.lr, weight_decay=hyper.weight_decay,
                   decay_mask=net.decay_mask())

    E = hyper.n_envs
    steps_per_iter = hyper.update_timesteps // E
    n_iters = hyper.total_steps // hyper.update_timesteps
    venv = VecEnv(E, seed=seed)
    tasks = np.stack([sampler.sample() for _ in range(E)])
    need_scores = reward_spec in ("score-diff", "score-raw")
    if need_scores:
        prev_scores = _batch_scores(embed_fn, venv.configs, tasks)

    obs_dim, act_dim = spec.obs_dim, spec.act_dim
    has_task = spec.task_dim > 0
    t_start = time.perf_counter()
    for it in range(n_iters):
        frac = 1.0 - it / n_iters if hyper.anneal_lr and n_iters > 1 else 1.0
        lr_now = hyper.lr * frac

        obs_buf = np.empty((steps_per_iter, E, obs_dim))
        task_buf = np.empty((steps_per_iter, E, spec.task_dim)) if has_task else None
        act_buf = np.empty((steps_per_iter, E, act_dim))
        logp_buf = np.empty((steps_per_iter, E))
        val_buf = np.empty((steps_per_iter, E))
        rew_buf = np.empty((steps_per_iter, E))
        done_buf = np.empty((steps_per_iter, E))

        for t in range(steps_per_iter):
            obs = venv.observations()
            task_in = tasks if has_task else None
            actions, logp, values = net.act(obs, task_in, rng)
            prev_cfg = venv.configs.copy()
            next_cfg, dones = venv.step(actions)

            if reward_spec == "distance":
                d0 = np.linalg.norm(prev_cfg - tasks, axis=1)
                d1 = np.linalg.norm(next_cfg - tasks, axis=1)
                rewards = d0 - d1
            else:
                next_scores = _batch_scores(embed_fn, next_cfg, tasks)
                if reward_spec == "score-diff":
                    rewards = next_scores - prev_scores
                else:
                    rewards = prev_scores.copy()
                prev_scores = next_scores

            obs_buf[t] = obs
            if has_task:
                task_buf[t] = tasks
            act_buf[t] = actions
            logp_buf[t] = logp
            val_buf[t] = values
            rew_buf[t] = rewards
            done_buf[t] = dones

            done_idx = np.flatnonzero(dones)
            if done_idx.size:
                for i in done_idx:
                    tasks[i] = sampler.sample()
                if need_scores:
                    prev_scores[done_idx] = _batch_scores(
                        embed_fn, venv.configs[done_idx], tasks[done_idx]
                    )

        _, last_values, _ = net.forward(
            venv.observations(), tasks if has_task else None
        )
        adv, ret = gae_advantages(rew_buf, val_buf, done_buf, last_values,
                                  hyper.gamma, hyper.gae_lambda)

        N = steps_per_iter * E
        flat_obs = obs_buf.reshape(N, obs_dim)
        flat_task = task_buf.reshape(N, spec.task_dim) if has_task else None
        flat_act = act_buf.reshape(N, act_dim)
        flat_logp = logp_buf.reshape(N)
        flat_adv = adv.reshape(N)
        flat_ret = ret.reshape(N)

        for _ in range(hyper.epochs):
            order = rng.permutation(N)
            for start in range(0, N, hyper.minibatch):
                mb = order[start:start + hyper.minibatch]
                _ppo_minibatch_step(net, opt, hyper, lr_now,
                                    flat_obs[mb],
                                    flat_task[mb] if has_task else None,
                                    flat_act[mb], flat_logp[mb],
                                    flat_adv[mb], flat_ret[mb])
        if progress and (it % 10 == 0 or it == n_iters - 1):
            mean_ep_rew = rew_buf.sum() / max(done_buf.sum(), 1.0)
            print(f"[ppo {kind}] iter {it + 1}/{n_iters} "
                  f"ep_reward~{mean_ep_rew:.4f} "
                  f"elapsed {time.perf_counter() - t_start:.0f}s", flush=True)

    meta = {
        "kind": kind,
        "total_steps": n_iters * hyper.update_timesteps,
        "seed": seed,
        "train_seconds": time.perf_counter() - t_start,
    }
    return PolicyArtifact(spec, net, hyper, reward_spec, meta)


def _ppo_minibatch_step(net, opt, hyper, lr_now, obs, task, actions,
                        logp_old, adv, ret):
    n = obs.shape[0]
    std_adv = adv.std()
    norm_adv = (adv - adv.mean()) / (std_adv + 1e-8)

    mean, value, cache = net.forward(obs, task)
    log_std = net.params["log_std"]
    inv_var = np.exp(-2.0 * log_std)
    diff = actions - mean
    logp = -0.5 * np.sum(diff * diff * inv_var + 2.0 * log_std,
                         axis=1) - 0.5 * actions.shape[1] * np.log(2.0 * np.pi)
    ratio = np.exp(logp - logp_old)
    surr1 = ratio * norm_adv
    surr2 = np.clip(ratio, 1.0 - hyper.clip, 1.0 + hyper.clip) * norm_adv

    # gradient flows through ratio only where the unclipped branch is active
    unclipped = surr1 <= surr2
    dlogp = -(unclipped * ratio * norm_adv) / n
    dmean = dlogp[:, None] * diff * inv_var
    dlogstd = np.sum(dlogp[:, None] * (diff * diff * inv_var - 1.0), axis=0)

    dvalue = hyper.value_coef * 2.0 * (value - ret) / n
    dlogstd = dlogstd - hyper.entropy_coef  # entropy bonus, per action dim

    grads = net.backward(cache, dmean, dvalue, dlogstd)
    nn.clip_grads_(grads, hyper.grad_norm_clip)
    opt.step(grads, lr=lr_now)


def rollout(
    net: PolicyNet,
    env_seed: int,
    conditioning: np.ndarray | None = None,
    reward_fn=None,
    deterministic: bool = True,
) -> Trajectory:
    """Roll one fixed-horizon episode.

    conditioning is the task vector (goal configuration or query embedding),
    or None for STRL. reward_fn(prev_config, next_config) fills the reward
    channel; zero rewards otherwise. Deterministic given (net params,
    env_seed, deterministic flag)."""
    if net.spec.task_dim > 0:
        if conditioning is None:
            raise Misaligned(f"{net.spec.kind} rollout needs conditioning")
        task = np.asarray(conditioning, dtype=np.float64)[None, :]
    else:
        task = None
    act_rng = None if deterministic else np.random.default_rng([env_seed, 3])

    st = reset(env_seed)
    T = HORIZON
    configs = np.empty((T, 7))
    velocities = np.empty((T, 7))
    actions = np.empty((T, net.spec.act_dim))
    rewards = np.zeros(T)
    for t in range(T):
        obs = np.concatenate([st.config, st.velocities, [st.timestep / HORIZON]])
        act, _, _ = net.act(obs[None, :], task, act_rng,
                            deterministic=deterministic)
        a = np.clip(act[0], -1.0, 1.0)
        nxt = step(st, Action.from_array(a))
        configs[t] = st.config
        velocities[t] = st.velocities
        actions[t] = a
        if reward_fn is not None:
            rewards[t] = reward_fn(st.config, nxt.config)
        st = nxt
    return Trajectory(configs, velocities, actions, rewards,
                      postultimate_config=config_of(st))


def gcrl_distance_reward_fn(goal: np.ndarray):
    goal = np.asarray(goal, dtype=np.float64)

    def fn(prev_cfg, next_cfg):
        return float(np.linalg.norm(prev_cfg - goal) - np.linalg.norm(next_cfg - goal))

    return fn
