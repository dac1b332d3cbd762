"""Evaluation harness comparing goal-conditioned variants against the
query-conditioned baselines over a concept library.

Variants:
  GCRL-R / GCRL-D   goal retrieved from the random-policy / diversity store
  GCRL-F / GCRL-S   diversity retrieval plus finetuning (surrogate argmax) /
                    plus exact-score selection
  MTRL-train/test   query-conditioned agent on its own / held-out split
  STRL              per-concept single-task agents

All rollouts use mode (deterministic) actions and shared per-concept episode
seeds so variants see identical initial states. The report also records the
measured surrogate-vs-exact embedding speed ratio.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from ..concepts import ConceptLibrary
from ..core import Query
from ..dataset import ConfigDataset, EmbeddingStore, sample_uniform
from ..distill import DistilledModel
from ..env import DEFAULT_VIEWS, SceneEncoder
from ..errors import MissingArtifact
from ..goalgen import GoalOptions, finetune, retrieve_topk, select_best
from .policy import PolicyNet
from .ppo import PolicyArtifact, rollout
from .rewards import make_distilled_embed, make_exact_embed, trajectory_scores, vlm_return

ALL_VARIANTS = ("GCRL-R", "GCRL-D", "GCRL-F", "GCRL-S",
                "MTRL-train", "MTRL-test", "STRL")
METRICS = ("exact_return", "approx_return", "exact_best", "approx_best")


@dataclass
class EvalArtifacts:
    model: DistilledModel
    gcrl: PolicyArtifact | None = None
    mtrl: PolicyArtifact | None = None
    strl: dict[str, PolicyArtifact] = field(default_factory=dict)
    random_ds: ConfigDataset | None = None
    random_store: EmbeddingStore | None = None
    diversity_ds: ConfigDataset | None = None
    diversity_store: EmbeddingStore | None = None
    encoder: SceneEncoder | None = None
    views: tuple = DEFAULT_VIEWS
    goal_options: GoalOptions = field(default_factory=GoalOptions)

    def __post_init__(self):
        if self.encoder is None:
            self.encoder = SceneEncoder()


def measure_embedding_speed(model: DistilledModel, encoder: SceneEncoder,
                            views=DEFAULT_VIEWS, batch: int = 256,
                            reps: int = 10) -> dict:
    """Best-of-reps wall time for batch embedding evaluation, both routes."""
    Q = sample_uniform(batch, seed=123).configs
    model.forward(Q)  # warm up
    t_model = min(
        _timed(lambda: model.forward(Q)) for _ in range(reps)
    )
    encoder.config_embedding_many(Q, views, check=False)
    t_exact = min(
        _timed(lambda: encoder.config_embedding_many(Q, views, check=False))
        for _ in range(max(3, reps // 2))
    )
    return {
        "batch": batch,
        "distilled_ms": t_model * 1e3,
        "exact_ms": t_exact * 1e3,
        "exact_over_distilled": t_exact / t_model,
    }


def _timed(fn) -> float:
    t0 = time.perf_counter()
    fn()
    return time.perf_counter() - t0


def _require(value, what: str):
    if value is None:
        raise MissingArtifact(f"evaluation needs {what}")
    return value


class _GoalCache:
    """Per-concept goal configurations for the GCRL variants; the finetuning
    batch is shared between the F and S variants."""

    def __init__(self, arts: EvalArtifacts):
        self.arts = arts
        self._cache: dict[tuple[str, str], np.ndarray] = {}

    def goal(self, variant: str, query: Query) -> np.ndarray:
        key = (variant, query.name)
        if key in self._cache:
            return self._cache[key]
        arts = self.arts
        if variant == "GCRL-R":
            store = _require(arts.random_store, "random-policy store")
            ds = _require(arts.random_ds, "random-policy dataset")
            idx = retrieve_topk(store, query, 1).indices[0]
            goal = ds.configs[idx].copy()
        elif variant == "GCRL-D":
            store = _require(arts.diversity_store, "diversity store")
            ds = _require(arts.diversity_ds, "diversity dataset")
            idx = retrieve_topk(store, query, 1).indices[0]
            goal = ds.configs[idx].copy()
        else:
            goal = self._finetuned_goal(variant, query)
        self._cache[key] = goal
        return goal

    def _finetuned_goal(self, variant: str, query: Query) -> np.ndarray:
        arts = self.arts
        store = _require(arts.diversity_store, "diversity store")
        ds = _require(arts.diversity_ds, "diversity dataset")
        opts = arts.goal_options
        rr = retrieve_topk(store, query, opts.k)
        cands = finetune(ds.configs[rr.indices], query, arts.model,
                         opts.steps, opts.lr)
        best_f = int(np.argmax([c.surrogate_score for c in cands]))
        self._cache[("GCRL-F", query.name)] = cands[best_f].config.copy()
        selected = select_best(cands, query, arts.views, arts.encoder)
        self._cache[("GCRL-S", query.name)] = selected.config.copy()
        return self._cache[(variant, query.name)]


def evaluate_lca(
    variants,
    concepts: ConceptLibrary,
    artifacts: EvalArtifacts,
    episodes: int = 10,
    seed: int = 0,
    gamma: float = 0.999,
) -> dict:
    """Pure function of (checkpoints, concepts, seeds) producing the report."""
    for v in variants:
        if v not in ALL_VARIANTS:
            raise MissingArtifact(f"unknown variant {v!r}")
    embed_exact = make_exact_embed(artifacts.encoder, artifacts.views)
    embed_approx = make_distilled_embed(artifacts.model)
    goal_cache = _GoalCache(artifacts)
    concept_list = list(concepts.entries)
    concept_index = {c.name: i for i, c in enumerate(concept_list)}

    rows = []
    per_variant_concept: dict[str, dict[str, dict]] = {v: {} for v in variants}
    for variant in variants:
        net, kind = _variant_net(variant, artifacts)
        for entry in concept_list:
            if variant == "MTRL-train" and entry.split != "train":
                continue
            if variant == "MTRL-test" and entry.split != "test":
                continue
            if variant == "STRL":
                art = artifacts.strl.get(entry.name)
                if art is None:
                    continue
                net = art.net
            query = concepts.lookup(entry.name)
            if kind == "GCRL":
                conditioning = goal_cache.goal(variant, query)
            elif kind == "MTRL":
                conditioning = query.embedding
            else:
                conditioning = None

            metrics = {m: [] for m in METRICS}
            final_dists = []
            for ep in range(episodes):
                env_seed = _episode_seed(seed, concept_index[entry.name], ep)
                traj = rollout(net, env_seed, conditioning, deterministic=True)
                s_exact = trajectory_scores(traj, query, embed_exact)
                metrics["exact_return"].append(vlm_return(traj, gamma))
                metrics["exact_best"].append(float(np.max(s_exact[:-1])))
                s_approx = trajectory_scores(traj, query, embed_approx)
                metrics["approx_return"].append(vlm_return(traj, gamma))
                metrics["approx_best"].append(float(np.max(s_approx[:-1])))
                if entry.source_config is not None:
                    final_dists.append(float(np.linalg.norm(
                        traj.postultimate_config - entry.source_config)))
            row = {
                "variant": variant,
                "concept": entry.name,
                **{m: float(np.mean(metrics[m])) for m in METRICS},
                "final_goal_distance": (
                    float(np.mean(final_dists)) if final_dists else None
                ),
            }
            rows.append(row)
            per_variant_concept[variant][entry.name] = row

    aggregate = {}
    for variant in variants:
        vrows = list(per_variant_concept[variant].values())
        if not vrows:
            continue
        agg = {m: float(np.mean([r[m] for r in vrows])) for m in METRICS}
        dists = [r["final_goal_distance"] for r in vrows
                 if r["final_goal_distance"] is not None]
        agg["final_goal_distance"] = float(np.mean(dists)) if dists else None
        agg["concepts"] = len(vrows)
        aggregate[variant] = agg

    win_rates = {m: {} for m in METRICS}
    for metric in METRICS:
        for va in variants:
            win_rates[metric][va] = {}
            for vb in variants:
                if va == vb:
                    continue
                shared = set(per_variant_concept[va]) & set(per_variant_concept[vb])
                wins = ties = 0
                for name in shared:
                    a = per_variant_concept[va][name][metric]
                    b = per_variant_concept[vb][name][metric]
                    if a > b:
                        wins += 1
                    elif a == b:
                        ties += 1
                win_rates[metric][va][vb] = {
                    "wins": wins, "ties": ties, "concepts": len(shared),
                }

    return {
        "mode_actions": True,
        "gamma": gamma,
        "episodes": episodes,
        "seed": seed,
        "rows": rows,
        "aggregate": aggregate,
        "win_rates": win_rates,
        "speed": measure_embedding_speed(artifacts.model, artifacts.encoder,
                                         artifacts.views),
    }


def _variant_net(variant: str, artifacts: EvalArtifacts) -> tuple[PolicyNet | None, str]:
    if variant.startswith("GCRL"):
        art = _require(artifacts.gcrl, "a trained GCRL policy")
        return art.net, "GCRL"
    if variant.startswith("MTRL"):
        art = _require(artifacts.mtrl, "a trained MTRL policy")
        return art.net, "MTRL"
    return None, "STRL"


def _episode_seed(seed: int, concept_idx: int, episode: int) -> int:
    return int((seed * 1_000_003 + concept_idx * 1009 + episode) % (2**31))
