"""Query-to-goal pipeline: retrieve -> finetune -> select.

Retrieval is an exact brute-force top-k over precomputed store rows.
Finetuning runs per-candidate Adam ascent on the surrogate score with a
projection after every step; candidates never interact, and the internal
batch is padded to a fixed shape so that finetuning a list is bitwise
identical to finetuning each element alone. Selection re-scores the
finetuned configurations with the exact multiview encoder.
"""

from __future__ import annotations

import enum
import time
from dataclasses import dataclass

import numpy as np

from .core import Query, score_many
from .dataset import ConfigDataset, EmbeddingStore, check_aligned
from .distill import DistilledModel
from .env import (
    DEFAULT_VIEWS,
    SceneEncoder,
    admissibility_violations,
    project_many,
)
from .errors import (
    DimensionMismatch,
    EmptyCandidates,
    InadmissibleConfiguration,
    KOutOfRange,
)

FINETUNE_BLOCK = 256
ADAM_BETA1, ADAM_BETA2, ADAM_EPS = 0.9, 0.999, 1e-8


class Origin(enum.Enum):
    RETRIEVED = "Retrieved"
    FINETUNED = "Finetuned"
    SELECTED = "Selected"


@dataclass
class RetrievalResult:
    indices: np.ndarray  # (k,) distinct dataset indices
    scores: np.ndarray   # (k,) non-increasing; ties broken by ascending index


@dataclass
class GoalCandidate:
    config: np.ndarray
    surrogate_score: float
    exact_score: float | None = None
    origin: Origin = Origin.RETRIEVED


def retrieve_topk(store: EmbeddingStore, query: Query, k: int) -> RetrievalResult:
    """Exact top-k of row . query over all store rows (brute force)."""
    n = len(store)
    if not 1 <= k <= n:
        raise KOutOfRange(f"k={k} outside [1, {n}]")
    if store.dim != query.dim:
        raise DimensionMismatch(f"store dim {store.dim} vs query dim {query.dim}")
    scores = score_many(store.embeddings, query)
    order = np.argsort(-scores, kind="stable")[:k]
    return RetrievalResult(indices=order, scores=scores[order])


def _pad_block(Q: np.ndarray) -> np.ndarray:
    pad = FINETUNE_BLOCK - Q.shape[0]
    if pad == 0:
        return Q
    return np.concatenate([Q, np.repeat(Q[-1:], pad, axis=0)], axis=0)


def finetune(
    candidates,
    query: Query,
    model: DistilledModel,
    steps: int = 80,
    lr: float = 0.02,
) -> list[GoalCandidate]:
    """Per-candidate projected Adam ascent on the surrogate score."""
    Q = np.atleast_2d(np.asarray(candidates, dtype=np.float64))
    for i, q in enumerate(Q):
        bad = admissibility_violations(q)
        if bad:
            raise InadmissibleConfiguration(f"candidate {i}: {', '.join(bad)}")
    m = Q.shape[0]
    out_configs = np.empty_like(Q)
    out_scores = np.empty(m)
    z = query.embedding
    for start in range(0, m, FINETUNE_BLOCK):
        block = Q[start:start + FINETUNE_BLOCK]
        real = block.shape[0]
        q_blk = _pad_block(block).copy()
        m1 = np.zeros_like(q_blk)
        m2 = np.zeros_like(q_blk)
        for t in range(1, steps + 1):
            grad = model.input_grads(q_blk, z)
            m1 = ADAM_BETA1 * m1 + (1.0 - ADAM_BETA1) * grad
            m2 = ADAM_BETA2 * m2 + (1.0 - ADAM_BETA2) * grad * grad
            mhat = m1 / (1.0 - ADAM_BETA1**t)
            vhat = m2 / (1.0 - ADAM_BETA2**t)
            q_blk = project_many(q_blk + lr * mhat / (np.sqrt(vhat) + ADAM_EPS))
        final = model.forward(q_blk) @ z
        out_configs[start:start + real] = q_blk[:real]
        out_scores[start:start + real] = final[:real]
    return [
        GoalCandidate(out_configs[i], float(out_scores[i]), None, Origin.FINETUNED)
        for i in range(m)
    ]


def select_best(
    candidates: list[GoalCandidate],
    query: Query,
    views=DEFAULT_VIEWS,
    encoder: SceneEncoder | None = None,
) -> GoalCandidate:
    """Exact multiview scoring of every candidate; returns the argmax (ties
    by list order) with origin Selected. Fills exact_score on all inputs."""
    if len(candidates) == 0:
        raise EmptyCandidates("no candidates to select from")
    if encoder is None:
        encoder = SceneEncoder()
    configs = np.stack([c.config for c in candidates])
    exact = encoder.config_embedding_many(configs, views) @ query.embedding
    for cand, s in zip(candidates, exact):
        cand.exact_score = float(s)
    best = int(np.argmax(exact))
    chosen = candidates[best]
    return GoalCandidate(chosen.config.copy(), chosen.surrogate_score,
                         chosen.exact_score, Origin.SELECTED)


@dataclass
class GoalOptions:
    k: int = 256
    steps: int = 80
    lr: float = 0.02
    stop_after: str = "select"  # retrieve | finetune | select


def generate_goal(
    query: Query,
    store: EmbeddingStore,
    dataset: ConfigDataset,
    model: DistilledModel | None,
    options: GoalOptions = GoalOptions(),
    views=DEFAULT_VIEWS,
    encoder: SceneEncoder | None = None,
) -> tuple[GoalCandidate, dict]:
    """Compose the three stages, honoring options.stop_after.

    Diagnostics record per-stage best scores and wall-clock milliseconds.
    Store rows hold exact embeddings, so retrieval scores are exact scores.
    """
    if options.stop_after not in ("retrieve", "finetune", "select"):
        raise KOutOfRange(f"stop_after={options.stop_after!r}")
    check_aligned(dataset, store)
    diagnostics: dict[str, dict] = {}

    t0 = time.perf_counter()
    rr = retrieve_topk(store, query, options.k)
    top_configs = dataset.configs[rr.indices]
    best_surrogate = None
    if model is not None:
        best_surrogate = float(np.max(model.forward(top_configs) @ query.embedding))
    diagnostics["retrieve"] = {
        "best_surrogate": best_surrogate,
        "best_exact": float(rr.scores[0]),
        "millis": (time.perf_counter() - t0) * 1e3,
    }
    retrieved = GoalCandidate(
        top_configs[0].copy(),
        surrogate_score=(
            float(model.forward(top_configs[:1])[0] @ query.embedding)
            if model is not None else float(rr.scores[0])
        ),
        exact_score=float(rr.scores[0]),
        origin=Origin.RETRIEVED,
    )
    if options.stop_after == "retrieve":
        return retrieved, diagnostics

    if model is None:
        raise EmptyCandidates("finetuning requires a surrogate model")
    t0 = time.perf_counter()
    fts = finetune(top_configs, query, model, options.steps, options.lr)
    surrogates = np.array([c.surrogate_score for c in fts])
    best_ft = int(np.argmax(surrogates))
    diagnostics["finetune"] = {
        "best_surrogate": float(surrogates[best_ft]),
        "best_exact": None,
        "millis": (time.perf_counter() - t0) * 1e3,
    }
    if options.stop_after == "finetune":
        return fts[best_ft], diagnostics

    t0 = time.perf_counter()
    selected = select_best(fts, query, views, encoder)
    diagnostics["select"] = {
        "best_surrogate": float(surrogates[best_ft]),
        "best_exact": selected.exact_score,
        "millis": (time.perf_counter() - t0) * 1e3,
    }
    return selected, diagnostics
