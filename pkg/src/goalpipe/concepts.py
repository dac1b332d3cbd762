"""Sources of query embeddings.

The concept library replaces textual task descriptions: 16 handcrafted
target configurations whose normalized exact embeddings act as queries with
known ground truth, plus 16 composite concepts (normalized means of two
handcrafted embeddings) that have no exactly realizable configuration. A
seeded shuffle assigns a 50/50 train/test split for the multi-task agent.

remote_embed bridges to an external text encoder over HTTP.
"""

from __future__ import annotations

import json
import urllib.error
import urllib.request
from dataclasses import dataclass

import numpy as np

from .core import Query, normalize
from .env import DEFAULT_VIEWS, SceneEncoder, admissibility_violations, project
from .errors import BadResponse, DimensionMismatch, UnknownConcept, Unreachable


@dataclass
class ConceptEntry:
    name: str
    embedding: np.ndarray            # unit float64
    source_config: np.ndarray | None  # (7,) for handcrafted, None for composites
    split: str                        # "train" | "test"


@dataclass
class ConceptLibrary:
    entries: list[ConceptEntry]

    def __post_init__(self):
        names = [e.name for e in self.entries]
        if len(set(names)) != len(names):
            raise UnknownConcept("duplicate concept names")
        self._by_name = {e.name: e for e in self.entries}

    def names(self) -> list[str]:
        return [e.name for e in self.entries]

    def split_names(self, split: str) -> list[str]:
        return [e.name for e in self.entries if e.split == split]

    def lookup(self, name: str) -> Query:
        entry = self._by_name.get(name)
        if entry is None:
            raise UnknownConcept(f"no concept named {name!r}")
        return Query(name=entry.name, embedding=entry.embedding)

    def queries(self, split: str | None = None) -> list[Query]:
        return [self.lookup(n) for n in
                (self.names() if split is None else self.split_names(split))]

    def __len__(self) -> int:
        return len(self.entries)


# name -> (joint angles, cube pose); every pose is admissible by construction
_HANDCRAFTED: list[tuple[str, tuple[float, float, float, float], tuple[float, float, float]]] = [
    ("home",            (0.0, 0.0, 0.0, 0.0),            (0.8, 0.2, 0.0)),
    ("reach-up",        (np.pi / 2, 0.0, 0.0, 0.0),      (0.8, 0.2, 0.0)),
    ("reach-down",      (-np.pi / 2, 0.0, 0.0, 0.0),     (0.8, 0.2, 0.0)),
    ("arm-left",        (np.pi, 0.0, 0.0, 0.0),          (0.8, 0.2, 0.0)),
    ("arm-folded",      (0.0, 2.4, -2.4, 2.4),           (0.8, 0.2, 0.0)),
    ("hook-up",         (np.pi / 2, -1.2, -1.2, 0.0),    (0.8, 0.2, 0.0)),
    ("crane",           (1.0, -0.5, -0.5, -0.5),         (1.2, 0.2, 0.0)),
    ("zigzag",          (0.0, 1.2, -1.2, 1.2),           (0.8, 0.2, 0.0)),
    ("tip-on-cube",     (np.pi / 4, 0.0, 0.0, 0.0),      (np.sqrt(2.0), np.sqrt(2.0), 0.0)),
    ("cube-far-right",  (0.0, 0.0, 0.0, 0.0),            (2.0, 0.2, 0.0)),
    ("cube-far-left",   (0.0, 0.0, 0.0, 0.0),            (-2.0, 0.2, 0.0)),
    ("cube-high",       (np.pi / 2, 0.0, 0.0, 0.0),      (0.5, 1.8, 0.0)),
    ("cube-tilted",     (0.0, 0.0, 0.0, 0.0),            (1.0, 0.5, np.pi / 4)),
    ("arm-up-cube-left", (np.pi / 2, 0.5, 0.0, 0.0),     (-1.2, 0.2, 0.0)),
    ("wave",            (np.pi / 2, 0.9, 0.9, 0.0),      (0.8, 0.2, 0.0)),
    ("reach-forward-low", (-np.pi / 6, 0.3, 0.3, 0.0),   (1.5, 0.2, 0.0)),
]


def handcrafted_configs() -> dict[str, np.ndarray]:
    out = {}
    for name, joints, cube in _HANDCRAFTED:
        q = project(np.array([*joints, *cube], dtype=np.float64))
        out[name] = q
    return out


def build_concepts(
    seed: int,
    encoder: SceneEncoder | None = None,
    views=DEFAULT_VIEWS,
) -> ConceptLibrary:
    """32 concepts: 16 handcrafted (with source configs) + 16 composites."""
    if encoder is None:
        encoder = SceneEncoder()
    rng = np.random.default_rng(seed)
    entries: list[ConceptEntry] = []
    base_embeddings: dict[str, np.ndarray] = {}
    for name, q in handcrafted_configs().items():
        emb = normalize(encoder.config_embedding(q, views))
        base_embeddings[name] = emb
        entries.append(ConceptEntry(name, emb, q, split="train"))

    names = list(base_embeddings)
    pairs: set[tuple[int, int]] = set()
    while len(pairs) < 16:
        i, j = sorted(rng.choice(len(names), size=2, replace=False).tolist())
        pairs.add((int(i), int(j)))
    for i, j in sorted(pairs):
        a, b = names[i], names[j]
        emb = normalize(0.5 * (base_embeddings[a] + base_embeddings[b]))
        entries.append(ConceptEntry(f"{a}+{b}", emb, None, split="train"))

    order = rng.permutation(len(entries))
    for rank, idx in enumerate(order):
        entries[idx].split = "train" if rank < len(entries) // 2 else "test"
    return ConceptLibrary(entries)


def save_concepts(lib: ConceptLibrary, path) -> None:
    payload = [
        {
            "name": e.name,
            "embedding": e.embedding.tolist(),
            "source_config": None if e.source_config is None
            else e.source_config.tolist(),
            "split": e.split,
        }
        for e in lib.entries
    ]
    with open(path, "w") as f:
        json.dump(payload, f)


def load_concepts(path) -> ConceptLibrary:
    with open(path) as f:
        payload = json.load(f)
    entries = []
    for item in payload:
        src = item.get("source_config")
        src_arr = None if src is None else np.asarray(src, dtype=np.float64)
        if src_arr is not None:
            bad = admissibility_violations(src_arr)
            if bad:
                raise UnknownConcept(
                    f"concept {item['name']!r} source inadmissible: {', '.join(bad)}"
                )
        entries.append(ConceptEntry(
            name=item["name"],
            embedding=np.asarray(item["embedding"], dtype=np.float64),
            source_config=src_arr,
            split=item.get("split", "train"),
        ))
    return ConceptLibrary(entries)


def remote_embed(endpoint: str, text: str, dim: int | None = None,
                 timeout: float = 5.0) -> Query:
    """POST {"text": ...} to an embedding endpoint; expects
    {"embedding": [...]}; normalizes the result. One retry on transport
    failure."""
    payload = json.dumps({"text": text}).encode()
    body = None
    last_err: Exception | None = None
    for _ in range(2):
        req = urllib.request.Request(
            endpoint, data=payload,
            headers={"Content-Type": "application/json"}, method="POST",
        )
        try:
            with urllib.request.urlopen(req, timeout=timeout) as resp:
                body = resp.read()
            break
        except urllib.error.HTTPError as err:
            raise BadResponse(f"HTTP {err.code} from {endpoint}") from err
        except (urllib.error.URLError, TimeoutError, OSError) as err:
            last_err = err
    if body is None:
        raise Unreachable(f"{endpoint}: {last_err}")
    try:
        data = json.loads(body)
    except json.JSONDecodeError as err:
        raise BadResponse(f"non-JSON body from {endpoint}") from err
    if not isinstance(data, dict) or "embedding" not in data:
        raise BadResponse("response lacks an 'embedding' field")
    try:
        vec = np.asarray(data["embedding"], dtype=np.float64)
    except (TypeError, ValueError) as err:
        raise BadResponse("embedding is not a numeric vector") from err
    if vec.ndim != 1 or (dim is not None and vec.shape[0] != dim):
        raise DimensionMismatch(
            f"embedding shape {vec.shape}, expected ({dim},)"
        )
    return Query(name=text, embedding=normalize(vec))
