"""Score algebra on embeddings.

All similarity math runs in float64; bulk embedding storage elsewhere uses
float32. Per-view embeddings are unit vectors; a multiview embedding is the
plain (unnormalized) mean of its views, so that its dot product with a unit
query equals the mean of the per-view cosines.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, EmptyViewList, ZeroVector

DEFAULT_DIM = 64
UNIT_NORM_TOL = 1e-6


def normalize(v: np.ndarray) -> np.ndarray:
    """Scale a vector to unit L2 norm. Raises ZeroVector for (near-)zero input."""
    v = np.asarray(v, dtype=np.float64)
    n = float(np.linalg.norm(v))
    if n <= 1e-12:
        raise ZeroVector(f"cannot normalize vector with norm {n}")
    return v / n


def is_unit(v: np.ndarray, tol: float = UNIT_NORM_TOL) -> bool:
    return abs(float(np.linalg.norm(np.asarray(v, dtype=np.float64))) - 1.0) <= tol


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Dot product of two unit vectors."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatch(f"shapes {a.shape} vs {b.shape}")
    return float(a @ b)


def multiview_embed(views: list[np.ndarray] | np.ndarray) -> np.ndarray:
    """Mean of per-view unit embeddings.

    Deliberately not renormalized: score(multiview_embed(V), q) must equal the
    mean of the per-view cosines exactly.
    """
    if len(views) == 0:
        raise EmptyViewList("need at least one view embedding")
    arr = np.asarray(views, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionMismatch(f"expected list of vectors, got shape {arr.shape}")
    dims = {v.shape[-1] for v in (arr,)}
    if len(dims) != 1:
        raise DimensionMismatch("view embeddings differ in dimension")
    return arr.mean(axis=0)


@dataclass(frozen=True)
class Query:
    """A named unit query embedding (stand-in for an encoded text prompt)."""

    name: str
    embedding: np.ndarray

    def __post_init__(self):
        emb = np.asarray(self.embedding, dtype=np.float64)
        if not is_unit(emb):
            raise ZeroVector(f"query {self.name!r} embedding is not unit-norm")
        object.__setattr__(self, "embedding", emb)

    @property
    def dim(self) -> int:
        return int(self.embedding.shape[0])


def score(config_embedding: np.ndarray, query: Query) -> float:
    """Configuration-query similarity: dot of a (possibly sub-unit) embedding
    with a unit query embedding."""
    emb = np.asarray(config_embedding, dtype=np.float64)
    if emb.shape != query.embedding.shape:
        raise DimensionMismatch(
            f"embedding dim {emb.shape} vs query dim {query.embedding.shape}"
        )
    return float(emb @ query.embedding)


def score_many(config_embeddings: np.ndarray, query: Query) -> np.ndarray:
    """Vectorized score over rows of an (n, d) embedding matrix, in float64."""
    embs = np.asarray(config_embeddings, dtype=np.float64)
    if embs.ndim != 2 or embs.shape[1] != query.dim:
        raise DimensionMismatch(
            f"embedding matrix shape {embs.shape} vs query dim {query.dim}"
        )
    return embs @ query.embedding
