"""Shared fixtures.

Expensive artifacts (datasets, trained models, trained policies) are cached
under tests/_cache keyed by their build parameters, so repeated test runs
skip the heavy builds. Caches use full-precision npz files; the public
binary formats get their own round-trip tests.
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np
import pytest

from goalpipe.concepts import build_concepts
from goalpipe.config import RunConfig
from goalpipe.dataset import (
    ConfigDataset,
    EmbeddingStore,
    Provenance,
    build_diversity_dataset,
    embed_dataset,
    sample_random_policy,
    sample_uniform,
)
from goalpipe.distill import DistilledModel, DistillHyper, train
from goalpipe.env import DEFAULT_VIEWS, SceneEncoder

CACHE_DIR = Path(__file__).parent / "_cache"


def cache_path(name: str) -> Path:
    CACHE_DIR.mkdir(exist_ok=True)
    return CACHE_DIR / name


def save_model_npz(model: DistilledModel, path: Path):
    arrays = {f"p_{k}": v for k, v in model.params.items()}
    arrays.update({f"s_{k}": v for k, v in model.state.items()})
    meta = np.array([model.dim_in, model.dim_out, model.width, model.blocks])
    np.savez(path, __meta__=meta, **arrays)


def load_model_npz(path: Path) -> DistilledModel:
    data = np.load(path)
    dim_in, dim_out, width, blocks = data["__meta__"].tolist()
    model = DistilledModel(dim_in, dim_out, width, blocks)
    for k in model.params:
        model.params[k] = data[f"p_{k}"]
    for k in model.state:
        model.state[k] = data[f"s_{k}"]
    return model


@pytest.fixture(scope="session")
def run_cfg() -> RunConfig:
    return RunConfig()


@pytest.fixture(scope="session")
def encoder() -> SceneEncoder:
    return SceneEncoder()


@pytest.fixture(scope="session")
def mini_dataset() -> ConfigDataset:
    """Small uniform dataset for fast unit tests."""
    return sample_uniform(3000, seed=101)


@pytest.fixture(scope="session")
def mini_store(mini_dataset, encoder) -> EmbeddingStore:
    return embed_dataset(mini_dataset, DEFAULT_VIEWS, encoder)


@pytest.fixture(scope="session")
def mini_model(mini_dataset, mini_store) -> DistilledModel:
    """Quickly trained surrogate, disk-cached."""
    path = cache_path("mini_model_v1.npz")
    if path.exists():
        return load_model_npz(path)
    hyper = DistillHyper(epochs=8, seed=5)
    model, _ = train(mini_dataset.configs, mini_store.embeddings, hyper)
    save_model_npz(model, path)
    return model


@pytest.fixture(scope="session")
def concept_lib(encoder):
    return build_concepts(seed=0, encoder=encoder, views=DEFAULT_VIEWS)


# -- full-scale artifacts for the acceptance suite ---------------------------

FULL_DATASET_SIZE = 50_000


def _load_bundle(path: Path):
    data = np.load(path)
    ds = ConfigDataset(data["configs"], Provenance(str(data["provenance"])),
                       int(data["seed"]))
    return ds, EmbeddingStore(data["embeddings"])


def _save_bundle(path: Path, ds: ConfigDataset, store: EmbeddingStore):
    np.savez(path, configs=ds.configs, embeddings=store.embeddings,
             provenance=ds.provenance.value, seed=ds.seed)


@pytest.fixture(scope="session")
def diversity_bundle(run_cfg, encoder):
    path = cache_path(f"diversity_{FULL_DATASET_SIZE}_v1.npz")
    if path.exists():
        return _load_bundle(path)
    hyper = DistillHyper(epochs=run_cfg.dataset.inner_epochs, seed=run_cfg.seed)
    ds, store = build_diversity_dataset(
        FULL_DATASET_SIZE, seed=run_cfg.seed, distill_hyper=hyper,
        encoder=encoder, views=DEFAULT_VIEWS,
        batch_n=run_cfg.dataset.diversity_batch,
        steps=run_cfg.dataset.diversity_steps,
        lr=run_cfg.dataset.diversity_lr,
        seed_fraction=run_cfg.dataset.seed_fraction,
    )
    _save_bundle(path, ds, store)
    return ds, store


@pytest.fixture(scope="session")
def random_bundle(encoder):
    path = cache_path(f"random_{FULL_DATASET_SIZE}_v1.npz")
    if path.exists():
        return _load_bundle(path)
    ds = sample_random_policy(FULL_DATASET_SIZE, seed=0)
    store = embed_dataset(ds, DEFAULT_VIEWS, encoder)
    _save_bundle(path, ds, store)
    return ds, store


@pytest.fixture(scope="session")
def full_model(run_cfg, diversity_bundle):
    """Surrogate trained on the full diversity dataset (the acceptance
    distillation run); the training report is cached alongside."""
    path = cache_path("full_model_v1.npz")
    report_path = cache_path("full_model_report_v1.npz")
    if path.exists() and report_path.exists():
        rep = np.load(report_path)
        return load_model_npz(path), {
            "seconds": float(rep["seconds"]),
            "heldout_embedding_rmse": float(rep["emb_rmse"]),
            "heldout_score_rmse": float(rep["score_rmse"]),
        }
    import time
    ds, store = diversity_bundle
    t0 = time.perf_counter()
    model, report = train(ds.configs, store.embeddings, run_cfg.distill_hyper())
    seconds = time.perf_counter() - t0
    save_model_npz(model, path)
    np.savez(report_path, seconds=seconds,
             emb_rmse=report.heldout_embedding_rmse,
             score_rmse=report.heldout_score_rmse)
    return load_model_npz(path), {
        "seconds": seconds,
        "heldout_embedding_rmse": report.heldout_embedding_rmse,
        "heldout_score_rmse": report.heldout_score_rmse,
    }


def save_policy_npz(net, path: Path, seconds: float):
    np.savez(path, __seconds__=np.array([seconds]), **net.params)


def load_policy_npz(spec, path: Path):
    from goalpipe.rl.policy import PolicyNet
    net = PolicyNet(spec)
    data = np.load(path)
    for k in net.params:
        net.params[k] = data[k]
    return net, float(data["__seconds__"][0])


@pytest.fixture(scope="session")
def gcrl_artifact(run_cfg, diversity_bundle):
    from goalpipe.rl import ppo_train
    from goalpipe.rl.policy import PolicySpec
    from goalpipe.rl.ppo import PolicyArtifact
    spec = PolicySpec(kind="GCRL")
    hyper = run_cfg.ppo_hyper("GCRL")
    path = cache_path("gcrl_policy_v1.npz")
    if path.exists():
        net, seconds = load_policy_npz(spec, path)
        return PolicyArtifact(spec, net, hyper, "distance",
                              {"train_seconds": seconds})
    ds, _ = diversity_bundle
    art = ppo_train("GCRL", "distance", ds, hyper, seed=run_cfg.seed,
                    progress=bool(os.environ.get("GOALPIPE_TEST_PROGRESS")))
    save_policy_npz(art.net, path, art.meta["train_seconds"])
    return art


def _train_mtrl(run_cfg, concept_lib, model, reward, path):
    from goalpipe.rl import ppo_train
    from goalpipe.rl.policy import PolicySpec
    from goalpipe.rl.ppo import PolicyArtifact
    from goalpipe.rl.rewards import make_distilled_embed
    spec = PolicySpec(kind="MTRL")
    hyper = run_cfg.ppo_hyper("MTRL")
    if path.exists():
        net, seconds = load_policy_npz(spec, path)
        return PolicyArtifact(spec, net, hyper, reward,
                              {"train_seconds": seconds})
    art = ppo_train("MTRL", reward, concept_lib.queries("train"), hyper,
                    seed=run_cfg.seed, embed_fn=make_distilled_embed(model),
                    spec=spec,
                    progress=bool(os.environ.get("GOALPIPE_TEST_PROGRESS")))
    save_policy_npz(art.net, path, art.meta["train_seconds"])
    return art


@pytest.fixture(scope="session")
def mtrl_artifact(run_cfg, concept_lib, full_model):
    model, _ = full_model
    return _train_mtrl(run_cfg, concept_lib, model, "score-diff",
                       cache_path("mtrl_policy_v1.npz"))


@pytest.fixture(scope="session")
def mtrl_raw_artifact(run_cfg, concept_lib, full_model):
    model, _ = full_model
    return _train_mtrl(run_cfg, concept_lib, model, "score-raw",
                       cache_path("mtrl_raw_policy_v1.npz"))
