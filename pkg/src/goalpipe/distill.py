"""Differentiable surrogate of the multiview configuration embedding.

A residual MLP (input 7 -> `blocks` residual blocks of `width` -> output d)
with batch normalization and GeLU, trained with AdamW on an MSE embedding
loss. Outputs are deliberately unnormalized: the targets are multiview means
whose norm is at most 1.

Gradients (with respect to both parameters and the input configuration) are
exact reverse-mode, computed in float64. All gradient consumers (goal
finetuning, diversity optimization) use inference mode, where normalization
layers are folded to their running statistics and the model is a pure
deterministic function.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .env import CONFIG_DIM
from .errors import EmptyDataset, Misaligned, NonFiniteInput
from .fileio import read_gpol, write_gpol

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


@dataclass
class DistillHyper:
    width: int = 128
    blocks: int = 4
    lr: float = 1e-3
    weight_decay: float = 0.01
    batch_size: int = 256
    dropout: float = 0.01
    epochs: int = 30
    holdout_fraction: float = 0.1
    seed: int = 0
    eval_query_count: int = 16


@dataclass
class TrainReport:
    epochs: int
    final_train_mse: float
    heldout_embedding_rmse: float
    heldout_score_rmse: float

    def as_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "final_train_mse": self.final_train_mse,
            "heldout_embedding_rmse": self.heldout_embedding_rmse,
            "heldout_score_rmse": self.heldout_score_rmse,
        }


class DistilledModel:
    """Residual MLP with exact reverse-mode gradients.

    Block layout: norm -> linear -> GeLU -> (dropout in train mode) ->
    linear -> add. The output layer starts at zero so an untrained model
    predicts the zero embedding.
    """

    def __init__(self, dim_in: int = CONFIG_DIM, dim_out: int = 64,
                 width: int = 128, blocks: int = 4, seed: int = 0):
        self.dim_in = int(dim_in)
        self.dim_out = int(dim_out)
        self.width = int(width)
        self.blocks = int(blocks)
        rng = np.random.default_rng(seed)
        w = self.width
        self.params: dict[str, np.ndarray] = {
            "w_in": nn.linear_init(rng, self.dim_in, w),
            "b_in": np.zeros(w),
        }
        self.state: dict[str, np.ndarray] = {}
        for i in range(self.blocks):
            self.params[f"gamma{i}"] = np.ones(w)
            self.params[f"beta{i}"] = np.zeros(w)
            self.state[f"mean{i}"] = np.zeros(w)
            self.state[f"var{i}"] = np.ones(w)
            self.params[f"w1_{i}"] = nn.linear_init(rng, w, w)
            self.params[f"b1_{i}"] = np.zeros(w)
            self.params[f"w2_{i}"] = nn.linear_init(rng, w, w)
            self.params[f"b2_{i}"] = np.zeros(w)
        self.params["w_out"] = np.zeros((w, self.dim_out))
        self.params["b_out"] = np.zeros(self.dim_out)

    # -- serialization order ------------------------------------------------
    def _array_items(self):
        items = [("w_in", self.params), ("b_in", self.params)]
        for i in range(self.blocks):
            items += [
                (f"gamma{i}", self.params), (f"beta{i}", self.params),
                (f"mean{i}", self.state), (f"var{i}", self.state),
                (f"w1_{i}", self.params), (f"b1_{i}", self.params),
                (f"w2_{i}", self.params), (f"b2_{i}", self.params),
            ]
        items += [("w_out", self.params), ("b_out", self.params)]
        return items

    def decay_mask(self) -> dict[str, bool]:
        return {k: k.startswith("w") for k in self.params}

    def save(self, path):
        write_gpol(path, [store[k] for k, store in self._array_items()])

    @classmethod
    def load(cls, path, dim_in: int = CONFIG_DIM, dim_out: int = 64,
             width: int = 128, blocks: int = 4) -> "DistilledModel":
        model = cls(dim_in, dim_out, width, blocks)
        arrays = read_gpol(path)
        items = model._array_items()
        if len(arrays) != len(items):
            raise Misaligned(
                f"checkpoint holds {len(arrays)} arrays, model needs {len(items)}"
            )
        for (name, store), arr in zip(items, arrays):
            target = store[name]
            store[name] = arr.reshape(target.shape).astype(np.float64)
        return model

    # -- forward ------------------------------------------------------------
    def _check_input(self, Q: np.ndarray) -> np.ndarray:
        Q = np.atleast_2d(np.asarray(Q, dtype=np.float64))
        if Q.shape[1] != self.dim_in:
            raise Misaligned(f"input dim {Q.shape[1]}, expected {self.dim_in}")
        if not np.all(np.isfinite(Q)):
            raise NonFiniteInput("non-finite configuration input")
        return Q

    def forward(self, Q: np.ndarray, mode: str = "infer",
                dropout_rng: np.random.Generator | None = None) -> np.ndarray:
        out, _ = self._forward_cached(self._check_input(Q), mode, dropout_rng,
                                      update_stats=(mode == "train"))
        return out

    def forward_single(self, q: np.ndarray) -> np.ndarray:
        return self.forward(np.asarray(q)[None, :])[0]

    def _forward_cached(self, Q, mode, dropout_rng=None, update_stats=False,
                        dropout_p: float = 0.0):
        p = self.params
        cache = {"x": Q, "mode": mode, "blocks": []}
        h = Q @ p["w_in"] + p["b_in"]
        for i in range(self.blocks):
            blk = {"h_in": h}
            if mode == "train":
                mu = h.mean(axis=0)
                var = h.var(axis=0)
                if update_stats:
                    self.state[f"mean{i}"] *= 1.0 - BN_MOMENTUM
                    self.state[f"mean{i}"] += BN_MOMENTUM * mu
                    self.state[f"var{i}"] *= 1.0 - BN_MOMENTUM
                    self.state[f"var{i}"] += BN_MOMENTUM * var
            else:
                mu = self.state[f"mean{i}"]
                var = self.state[f"var{i}"]
            istd = 1.0 / np.sqrt(var + BN_EPS)
            xh = (h - mu) * istd
            xb = xh * p[f"gamma{i}"] + p[f"beta{i}"]
            a = xb @ p[f"w1_{i}"] + p[f"b1_{i}"]
            g = nn.gelu(a)
            drop_mask = None
            if mode == "train" and dropout_p > 0.0 and dropout_rng is not None:
                drop_mask = (dropout_rng.random(g.shape) >= dropout_p) / (1.0 - dropout_p)
                g = g * drop_mask
            z = g @ p[f"w2_{i}"] + p[f"b2_{i}"]
            blk.update(istd=istd, xh=xh, xb=xb, a=a, g=g, drop_mask=drop_mask)
            cache["blocks"].append(blk)
            h = h + z
        cache["h_out"] = h
        out = h @ p["w_out"] + p["b_out"]
        return out, cache

    # -- backward -----------------------------------------------------------
    def _backward(self, cache, dout, want_param_grads=True, want_input_grad=True):
        p = self.params
        train_mode = cache["mode"] == "train"
        grads: dict[str, np.ndarray] = {}
        if want_param_grads:
            grads["w_out"] = cache["h_out"].T @ dout
            grads["b_out"] = dout.sum(axis=0)
        dh = dout @ p["w_out"].T
        for i in reversed(range(self.blocks)):
            blk = cache["blocks"][i]
            dz = dh
            if want_param_grads:
                grads[f"w2_{i}"] = blk["g"].T @ dz
                grads[f"b2_{i}"] = dz.sum(axis=0)
            dg = dz @ p[f"w2_{i}"].T
            if blk["drop_mask"] is not None:
                dg = dg * blk["drop_mask"]
            da = dg * nn.gelu_grad(blk["a"])
            if want_param_grads:
                grads[f"w1_{i}"] = blk["xb"].T @ da
                grads[f"b1_{i}"] = da.sum(axis=0)
            dxb = da @ p[f"w1_{i}"].T
            if want_param_grads:
                grads[f"gamma{i}"] = (dxb * blk["xh"]).sum(axis=0)
                grads[f"beta{i}"] = dxb.sum(axis=0)
            dxh = dxb * p[f"gamma{i}"]
            if train_mode:
                n = dxh.shape[0]
                dh_bn = (blk["istd"] / n) * (
                    n * dxh - dxh.sum(axis=0)
                    - blk["xh"] * (dxh * blk["xh"]).sum(axis=0)
                )
            else:
                dh_bn = dxh * blk["istd"]
            dh = dh + dh_bn
        if want_param_grads:
            grads["w_in"] = cache["x"].T @ dh
            grads["b_in"] = dh.sum(axis=0)
        dx = dh @ p["w_in"].T if want_input_grad else None
        return grads, dx

    def grad(self, q: np.ndarray, upstream: np.ndarray):
        """Exact gradients of upstream . forward(q) in inference mode.

        Returns (param_grads, input_grad) for a single configuration.
        """
        upstream = np.asarray(upstream, dtype=np.float64)
        if upstream.shape != (self.dim_out,):
            raise Misaligned(f"upstream shape {upstream.shape}, expected ({self.dim_out},)")
        if not np.all(np.isfinite(upstream)):
            raise NonFiniteInput("non-finite upstream vector")
        Q = self._check_input(q)
        _, cache = self._forward_cached(Q, "infer")
        grads, dx = self._backward(cache, upstream[None, :])
        return grads, dx[0]

    def input_grads(self, Q: np.ndarray, upstream: np.ndarray) -> np.ndarray:
        """Batched inference-mode input gradients.

        upstream may be one (d,) vector shared by all rows or an (n, d) array
        of per-row vectors. Returns (n, dim_in).
        """
        Q = self._check_input(Q)
        upstream = np.asarray(upstream, dtype=np.float64)
        if upstream.ndim == 1:
            upstream = np.broadcast_to(upstream, (Q.shape[0], self.dim_out))
        _, cache = self._forward_cached(Q, "infer")
        _, dx = self._backward(cache, upstream, want_param_grads=False)
        return dx

    def value_and_input_grads(self, Q: np.ndarray, upstream: np.ndarray):
        """Like input_grads but also returns the forward outputs."""
        Q = self._check_input(Q)
        upstream = np.asarray(upstream, dtype=np.float64)
        if upstream.ndim == 1:
            upstream = np.broadcast_to(upstream, (Q.shape[0], self.dim_out))
        out, cache = self._forward_cached(Q, "infer")
        _, dx = self._backward(cache, upstream, want_param_grads=False)
        return out, dx


def _as_aligned_arrays(configs, embeddings):
    Q = np.asarray(configs, dtype=np.float64)
    E = np.asarray(embeddings, dtype=np.float64)
    if Q.ndim != 2 or E.ndim != 2 or Q.shape[0] != E.shape[0]:
        raise Misaligned(f"configs {Q.shape} vs embeddings {E.shape}")
    if Q.shape[0] == 0:
        raise EmptyDataset("no samples")
    return Q, E


def _chunked_forward(model: DistilledModel, Q: np.ndarray, chunk: int = 2048):
    outs = [model.forward(Q[i:i + chunk]) for i in range(0, Q.shape[0], chunk)]
    return np.concatenate(outs, axis=0)


def train(configs, embeddings, hyper: DistillHyper = DistillHyper()):
    """Distill exact embeddings into a surrogate model.

    Deterministic given (data, hyper): shuffling, init, dropout and the
    holdout split all derive from hyper.seed. Returns the trained model (in
    inference mode) and a report on a held-out split.
    """
    Q, E = _as_aligned_arrays(configs, embeddings)
    n = Q.shape[0]
    rng = np.random.default_rng(hyper.seed)
    model = DistilledModel(Q.shape[1], E.shape[1], hyper.width, hyper.blocks,
                           seed=hyper.seed)

    n_hold = int(round(n * hyper.holdout_fraction))
    n_hold = min(max(n_hold, 0), n - 1)
    perm = rng.permutation(n)
    hold_idx, train_idx = perm[:n_hold], perm[n_hold:]
    if train_idx.size == 0:
        raise EmptyDataset("holdout fraction leaves no training data")

    opt = nn.AdamW(model.params, lr=hyper.lr, weight_decay=hyper.weight_decay,
                   decay_mask=model.decay_mask())
    dropout_rng = np.random.default_rng(hyper.seed + 1)
    bs = hyper.batch_size
    for _ in range(hyper.epochs):
        order = rng.permutation(train_idx)
        for start in range(0, order.size, bs):
            idx = order[start:start + bs]
            xb, yb = Q[idx], E[idx]
            pred, cache = model._forward_cached(
                xb, "train", dropout_rng, update_stats=True,
                dropout_p=hyper.dropout)
            dout = 2.0 * (pred - yb) / pred.size
            grads, _ = model._backward(cache, dout, want_input_grad=False)
            opt.step(grads)

    pred_train = _chunked_forward(model, Q[train_idx])
    final_mse = float(np.mean((pred_train - E[train_idx]) ** 2))

    eval_rng = np.random.default_rng([hyper.seed, 2**20 + 7])
    raw = eval_rng.standard_normal((hyper.eval_query_count, E.shape[1]))
    queries = raw / np.linalg.norm(raw, axis=1, keepdims=True)
    if n_hold > 0:
        emb_rmse, score_rmse = _rmse(model, Q[hold_idx], E[hold_idx], queries)
    else:
        emb_rmse = score_rmse = float("nan")
    return model, TrainReport(hyper.epochs, final_mse, emb_rmse, score_rmse)


def _rmse(model, Q, E, queries):
    pred = _chunked_forward(model, Q)
    emb_rmse = float(np.sqrt(np.mean((pred - E) ** 2)))
    score_err = (pred - E) @ np.asarray(queries, dtype=np.float64).T
    score_rmse = float(np.sqrt(np.mean(score_err**2)))
    return emb_rmse, score_rmse


def evaluate(model: DistilledModel, configs, embeddings, queries) -> TrainReport:
    """Embedding RMSE (normalized by sample and component counts) and score
    RMSE over configs x queries for an arbitrary evaluation set."""
    Q, E = _as_aligned_arrays(configs, embeddings)
    qarr = np.asarray(
        [q.embedding if hasattr(q, "embedding") else q for q in queries],
        dtype=np.float64,
    )
    if qarr.ndim != 2 or qarr.shape[1] != E.shape[1]:
        raise Misaligned(f"queries shape {qarr.shape} vs embedding dim {E.shape[1]}")
    emb_rmse, score_rmse = _rmse(model, Q, E, qarr)
    return TrainReport(0, emb_rmse**2, emb_rmse, score_rmse)
