"""Policy/value networks for the three agent kinds.

A shared task encoder embeds the task variables (goal configuration or query
embedding) into a 16-dim vector; separate policy and value heads consume the
state concatenated with that embedding. The single-task agent has no task
encoder. Actions follow a diagonal Gaussian with a state-independent
learnable log standard deviation; the environment clamps sampled actions at
its own boundary.

All math is float64 numpy with hand-written backward passes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import nn
from ..errors import ConfigInvalid, Misaligned
from ..fileio import read_gpol, write_gpol

LOG_2PI = np.log(2.0 * np.pi)

OBS_DIM = 15  # 7 config + 7 velocity + normalized timestep
ACT_DIM = 5   # 4 torques + grip

TASK_DIMS = {"GCRL": 7, "MTRL": 64, "STRL": 0}


@dataclass(frozen=True)
class PolicySpec:
    kind: str  # GCRL | MTRL | STRL
    obs_dim: int = OBS_DIM
    act_dim: int = ACT_DIM
    task_dim: int = -1  # -1: derive from kind
    task_widths: tuple[int, ...] = (64, 64)
    task_embed_dim: int = 16
    head_widths: tuple[int, ...] = (64, 64)

    def __post_init__(self):
        if self.kind not in TASK_DIMS:
            raise ConfigInvalid(f"unknown policy kind {self.kind!r}")
        if self.task_dim < 0:
            object.__setattr__(self, "task_dim", TASK_DIMS[self.kind])
        if self.kind == "STRL" and self.task_dim != 0:
            raise ConfigInvalid("STRL takes no task conditioning")
        if self.kind != "STRL" and self.task_dim == 0:
            raise ConfigInvalid(f"{self.kind} needs task conditioning")


def _mlp_params(rng, name, dims, out_scale=1.0):
    params = {}
    for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
        scale = out_scale if i == len(dims) - 2 else 1.0
        params[f"{name}_w{i}"] = nn.linear_init(rng, a, b, scale)
        params[f"{name}_b{i}"] = np.zeros(b)
    return params


def _mlp_forward(params, name, x, n_layers):
    acts = [x]
    pre = []
    for i in range(n_layers):
        z = acts[-1] @ params[f"{name}_w{i}"] + params[f"{name}_b{i}"]
        pre.append(z)
        acts.append(nn.gelu(z) if i < n_layers - 1 else z)
    return acts[-1], (acts, pre)


def _mlp_backward(params, name, cache, dout, grads, n_layers):
    acts, pre = cache
    d = dout
    for i in reversed(range(n_layers)):
        grads[f"{name}_w{i}"] = acts[i].T @ d
        grads[f"{name}_b{i}"] = d.sum(axis=0)
        if i > 0:
            d = (d @ params[f"{name}_w{i}"].T) * nn.gelu_grad(pre[i - 1])
        else:
            d = d @ params[f"{name}_w{i}"].T
    return d  # gradient w.r.t. the MLP input


class PolicyNet:
    def __init__(self, spec: PolicySpec, seed: int = 0):
        self.spec = spec
        rng = np.random.default_rng(seed)
        self.params: dict[str, np.ndarray] = {}
        if spec.task_dim > 0:
            dims = (spec.task_dim, *spec.task_widths, spec.task_embed_dim)
            self.params.update(_mlp_params(rng, "te", dims))
            self._te_layers = len(dims) - 1
            feat_dim = spec.obs_dim + spec.task_embed_dim
        else:
            self._te_layers = 0
            feat_dim = spec.obs_dim
        pi_dims = (feat_dim, *spec.head_widths, spec.act_dim)
        vf_dims = (feat_dim, *spec.head_widths, 1)
        self.params.update(_mlp_params(rng, "pi", pi_dims, out_scale=0.01))
        self.params.update(_mlp_params(rng, "vf", vf_dims))
        self.params["log_std"] = np.zeros(spec.act_dim)
        self._pi_layers = len(pi_dims) - 1
        self._vf_layers = len(vf_dims) - 1

    def decay_mask(self) -> dict[str, bool]:
        return {k: "_w" in k for k in self.params}

    # -- forward ------------------------------------------------------------
    def _features(self, obs, task):
        obs = np.atleast_2d(np.asarray(obs, dtype=np.float64))
        te_cache = None
        if self.spec.task_dim > 0:
            task = np.atleast_2d(np.asarray(task, dtype=np.float64))
            if task.shape[1] != self.spec.task_dim:
                raise Misaligned(
                    f"task dim {task.shape[1]}, expected {self.spec.task_dim}"
                )
            emb, te_cache = _mlp_forward(self.params, "te", task, self._te_layers)
            feat = np.concatenate([obs, emb], axis=1)
        else:
            feat = obs
        return feat, te_cache

    def forward(self, obs, task=None):
        """Returns (action_mean, value, cache)."""
        feat, te_cache = self._features(obs, task)
        mean, pi_cache = _mlp_forward(self.params, "pi", feat, self._pi_layers)
        value, vf_cache = _mlp_forward(self.params, "vf", feat, self._vf_layers)
        cache = {"te": te_cache, "pi": pi_cache, "vf": vf_cache}
        return mean, value[:, 0], cache

    def backward(self, cache, dmean, dvalue, dlog_std):
        """Parameter gradients from upstream gradients on mean, value and
        log_std. Returns a grads dict matching self.params."""
        grads: dict[str, np.ndarray] = {}
        dfeat = _mlp_backward(self.params, "pi", cache["pi"], dmean, grads,
                              self._pi_layers)
        dfeat = dfeat + _mlp_backward(self.params, "vf", cache["vf"],
                                      dvalue[:, None], grads, self._vf_layers)
        if self.spec.task_dim > 0:
            demb = dfeat[:, self.spec.obs_dim:]
            _mlp_backward(self.params, "te", cache["te"], demb, grads,
                          self._te_layers)
        grads["log_std"] = np.asarray(dlog_std, dtype=np.float64)
        return grads

    # -- action distribution -------------------------------------------------
    def act(self, obs, task=None, rng: np.random.Generator | None = None,
            deterministic: bool = False):
        """Sample actions; returns (actions, log_probs, values)."""
        mean, value, _ = self.forward(obs, task)
        if deterministic or rng is None:
            actions = mean.copy()
        else:
            std = np.exp(self.params["log_std"])
            actions = mean + std * rng.standard_normal(mean.shape)
        return actions, self.log_prob(mean, actions), value

    def log_prob(self, mean, actions):
        log_std = self.params["log_std"]
        inv_var = np.exp(-2.0 * log_std)
        diff = actions - mean
        return -0.5 * np.sum(
            diff * diff * inv_var + 2.0 * log_std + LOG_2PI, axis=1
        )

    def entropy(self) -> float:
        return float(np.sum(self.params["log_std"] + 0.5 * (LOG_2PI + 1.0)))

    # -- persistence ----------------------------------------------------------
    def _ordered_keys(self):
        return sorted(self.params.keys())

    def save(self, path):
        write_gpol(path, [self.params[k] for k in self._ordered_keys()])

    @classmethod
    def load(cls, path, spec: PolicySpec) -> "PolicyNet":
        net = cls(spec)
        arrays = read_gpol(path)
        keys = net._ordered_keys()
        if len(arrays) != len(keys):
            raise Misaligned(
                f"checkpoint holds {len(arrays)} arrays, expected {len(keys)}"
            )
        for k, arr in zip(keys, arrays):
            net.params[k] = arr.reshape(net.params[k].shape).astype(np.float64)
        return net


def save_policy(path, net: PolicyNet):
    net.save(path)


def load_policy(path, spec: PolicySpec) -> PolicyNet:
    return PolicyNet.load(path, spec)
