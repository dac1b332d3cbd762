"""Configuration dataset generators, the embedding-diversity loop, and
dataset/store persistence.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import distill as distill_mod
from .distill import DistilledModel, DistillHyper
from .env import (
    CONFIG_DIM,
    CUBE_X_MAX,
    CUBE_X_MIN,
    DEFAULT_VIEWS,
    HORIZON,
    IDX_CUBE_THETA,
    IDX_CUBE_X,
    IDX_CUBE_Y,
    JOINT_HI,
    JOINT_LO,
    Action,
    SceneEncoder,
    admissibility_violations,
    project_many,
    reset,
    step,
)
from .errors import BatchTooSmall, CountMismatch, EmptyDataset
from .fileio import read_matrix, write_matrix

# random-policy episodes start with a widened cube-height distribution so the
# dataset contains raised-cube scenes a noisy default reset would rarely visit
RANDOM_POLICY_CUBE_Y_RANGE = (0.15, 1.0)

UNIFORM_CUBE_Y_RANGE = (0.15, 2.0)

# fixed internal batch for embedding computation: row results must not depend
# on how callers chunk the dataset, and BLAS kernels are only row-stable at
# fixed operand shapes
_EMBED_BLOCK = 256


class Provenance(enum.Enum):
    RANDOM_POLICY = "RandomPolicy"
    UNIFORM = "Uniform"
    DIVERSITY = "Diversity"


@dataclass
class ConfigDataset:
    configs: np.ndarray  # (n, 7) float64
    provenance: Provenance | None = None
    seed: int | None = None

    def __post_init__(self):
        self.configs = np.atleast_2d(np.asarray(self.configs, dtype=np.float64))
        if self.configs.shape[0] == 0:
            raise EmptyDataset("dataset must hold at least one configuration")
        if self.configs.shape[1] != CONFIG_DIM:
            raise CountMismatch(f"configs have dim {self.configs.shape[1]}")

    def __len__(self) -> int:
        return self.configs.shape[0]

    def validate_admissible(self) -> None:
        for i, q in enumerate(self.configs):
            bad = admissibility_violations(q)
            if bad:
                raise CountMismatch(f"row {i} inadmissible: {', '.join(bad)}")


@dataclass
class EmbeddingStore:
    embeddings: np.ndarray  # (n, d) float32 storage

    def __post_init__(self):
        self.embeddings = np.atleast_2d(np.asarray(self.embeddings, dtype=np.float32))
        if self.embeddings.shape[0] == 0:
            raise EmptyDataset("store must hold at least one row")

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]

    def __len__(self) -> int:
        return self.embeddings.shape[0]


def check_aligned(ds: ConfigDataset, store: EmbeddingStore) -> None:
    if len(ds) != len(store):
        raise CountMismatch(f"dataset rows {len(ds)} vs store rows {len(store)}")


def sample_random_policy(n: int, seed: int) -> ConfigDataset:
    """Configurations visited by uniformly random actions.

    Episodes reset from `reset(seed + episode_index)`; every visited
    configuration (including each episode's initial one) is collected until n
    are gathered.
    """
    if n < 1:
        raise EmptyDataset("need n >= 1")
    configs = np.empty((n, CONFIG_DIM))
    count = 0
    episode = 0
    while count < n:
        st = reset(seed + episode, cube_y_range=RANDOM_POLICY_CUBE_Y_RANGE)
        configs[count] = st.config
        count += 1
        act_rng = np.random.default_rng([seed, episode])
        for _ in range(HORIZON):
            if count >= n:
                break
            act = Action(
                torques=act_rng.uniform(-1.0, 1.0, size=4),
                grip=float(act_rng.uniform(-1.0, 1.0)),
            )
            st = step(st, act)
            configs[count] = st.config
            count += 1
        episode += 1
    return ConfigDataset(configs, Provenance.RANDOM_POLICY, seed)


def sample_uniform(n: int, seed: int) -> ConfigDataset:
    """Per-dimension uniform draws over the admissible bounds, projected."""
    if n < 1:
        raise EmptyDataset("need n >= 1")
    rng = np.random.default_rng(seed)
    Q = np.empty((n, CONFIG_DIM))
    Q[:, :4] = rng.uniform(JOINT_LO, JOINT_HI, size=(n, 4))
    Q[:, IDX_CUBE_X] = rng.uniform(CUBE_X_MIN, CUBE_X_MAX, size=n)
    Q[:, IDX_CUBE_Y] = rng.uniform(*UNIFORM_CUBE_Y_RANGE, size=n)
    Q[:, IDX_CUBE_THETA] = rng.uniform(-np.pi, np.pi, size=n)
    return ConfigDataset(project_many(Q), Provenance.UNIFORM, seed)


def diversity_loss(embeddings: np.ndarray) -> float:
    """Mean over rows of the maximum pairwise cosine to any other row."""
    U = _normalized_rows(np.asarray(embeddings, dtype=np.float64))
    S = U @ U.T
    np.fill_diagonal(S, -np.inf)
    return float(np.mean(S.max(axis=1)))


def _normalized_rows(E: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(E, axis=1, keepdims=True)
    return E / np.maximum(norms, 1e-12)


def diversity_optimize(
    batch: np.ndarray,
    model: DistilledModel,
    steps: int,
    lr: float,
) -> np.ndarray:
    """Projected gradient descent on the mean max-pairwise-cosine of the
    surrogate embeddings.

    The gradient flows through both arguments of each row's selected maximum
    (ties resolved to the lowest index). Every step ends with a projection
    onto the admissible set. Deterministic.
    """
    Q = np.atleast_2d(np.asarray(batch, dtype=np.float64)).copy()
    n = Q.shape[0]
    if n < 2:
        raise BatchTooSmall("diversity loss needs at least two configurations")
    for _ in range(steps):
        emb = model.forward(Q)
        norms = np.maximum(np.linalg.norm(emb, axis=1, keepdims=True), 1e-12)
        U = emb / norms
        S = U @ U.T
        np.fill_diagonal(S, -np.inf)
        j_star = np.argmax(S, axis=1)  # first max = lowest index on ties
        dU = np.zeros_like(U)
        rows = np.arange(n)
        np.add.at(dU, rows, U[j_star] / n)
        np.add.at(dU, j_star, U[rows] / n)
        # through the row normalization: d(emb/|emb|)
        demb = (dU - U * np.sum(dU * U, axis=1, keepdims=True)) / norms
        grad_q = model.input_grads(Q, demb)
        Q = project_many(Q - lr * grad_q)
    return Q


def _embed_rows(Q: np.ndarray, views, encoder: SceneEncoder) -> np.ndarray:
    """Multiview embeddings computed in fixed-size blocks.

    The fixed block shape makes every row's float64 result independent of the
    dataset's length and of any outer chunking, so chunked and sequential
    runs agree bitwise.
    """
    Q = np.atleast_2d(np.asarray(Q, dtype=np.float64))
    n = Q.shape[0]
    out = np.empty((n, encoder.dim))
    for start in range(0, n, _EMBED_BLOCK):
        block = Q[start:start + _EMBED_BLOCK]
        if block.shape[0] < _EMBED_BLOCK:
            pad = np.repeat(block[-1:], _EMBED_BLOCK - block.shape[0], axis=0)
            padded = np.concatenate([block, pad], axis=0)
            out[start:start + block.shape[0]] = encoder.config_embedding_many(
                padded, views
            )[: block.shape[0]]
        else:
            out[start:start + _EMBED_BLOCK] = encoder.config_embedding_many(
                block, views
            )
    return out


def embed_dataset(
    ds: ConfigDataset,
    views=DEFAULT_VIEWS,
    encoder: SceneEncoder | None = None,
    chunk_rows: int | None = None,
) -> EmbeddingStore:
    """Exact multiview embedding store aligned with a dataset.

    chunk_rows only groups internally fixed-size blocks for scheduling;
    the numerical output is identical for any value.
    """
    if encoder is None:
        encoder = SceneEncoder()
    if chunk_rows is not None and chunk_rows < 1:
        raise CountMismatch("chunk_rows must be positive")
    emb = _embed_rows(ds.configs, views, encoder)
    return EmbeddingStore(emb.astype(np.float32))


def build_diversity_dataset(
    target: int,
    seed: int,
    distill_hyper: DistillHyper,
    encoder: SceneEncoder | None = None,
    views=DEFAULT_VIEWS,
    batch_n: int = 2048,
    steps: int = 100,
    lr: float = 0.05,
    seed_fraction: float = 0.2,
) -> tuple[ConfigDataset, EmbeddingStore]:
    """Embedding-diversity dataset loop.

    Seeds with random-policy configurations, then repeatedly: train a
    surrogate on everything so far, draw a batch without replacement, spread
    its surrogate embeddings apart with projected gradient descent, compute
    the batch's exact embeddings, and append.
    """
    if encoder is None:
        encoder = SceneEncoder()
    seed_count = max(2, int(round(target * seed_fraction)))
    if target < seed_count:
        raise EmptyDataset(f"target {target} below seed-set size {seed_count}")
    base = sample_random_policy(seed_count, seed)
    configs = base.configs
    embs = _embed_rows(configs, views, encoder)

    round_idx = 0
    while configs.shape[0] < target:
        hyper = DistillHyper(**{**distill_hyper.__dict__,
                                "seed": distill_hyper.seed + round_idx})
        model, _ = distill_mod.train(configs, embs, hyper)
        remaining = target - configs.shape[0]
        m = max(2, min(batch_n, remaining))
        rng = np.random.default_rng([seed, round_idx, 2])
        idx = rng.choice(configs.shape[0], size=m, replace=False)
        batch = diversity_optimize(configs[idx], model, steps, lr)
        batch = batch[:remaining]
        new_embs = _embed_rows(batch, views, encoder)
        configs = np.concatenate([configs, batch], axis=0)
        embs = np.concatenate([embs, new_embs], axis=0)
        round_idx += 1

    ds = ConfigDataset(configs, Provenance.DIVERSITY, seed)
    return ds, EmbeddingStore(embs.astype(np.float32))


def save_configs(ds: ConfigDataset, path) -> None:
    write_matrix(path, b"GCFG", ds.configs)


def load_configs(path) -> ConfigDataset:
    return ConfigDataset(read_matrix(path, b"GCFG").astype(np.float64))


def save_store(store: EmbeddingStore, path) -> None:
    write_matrix(path, b"GEMB", store.embeddings)


def load_store(path) -> EmbeddingStore:
    return EmbeddingStore(read_matrix(path, b"GEMB"))
