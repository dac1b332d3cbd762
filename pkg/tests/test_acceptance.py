"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Heavy artifacts (the 50k diversity dataset, the fully trained surrogate, the
trained agents) come from session fixtures that cache to tests/_cache, so a
cold run builds everything once and reruns are cheap.
"""

from __future__ import annotations

import time
from contextlib import contextmanager

import numpy as np
import pytest

from goalpipe.core import Query, cosine, multiview_embed, normalize, score
from goalpipe.dataset import EmbeddingStore, embed_dataset, sample_uniform
from goalpipe.distill import DistilledModel
from goalpipe.env import DEFAULT_VIEWS, HOLDOUT_VIEWS
from goalpipe.goalgen import finetune, retrieve_topk, select_best
from goalpipe.rl import (
    EvalArtifacts,
    best_in_trajectory,
    evaluate_lca,
    make_distilled_embed,
    make_exact_embed,
    rollout,
    trajectory_scores,
    vlm_return,
)
from goalpipe.rl.evaluate import measure_embedding_speed
from goalpipe.rl.policy import PolicyNet, PolicySpec
from goalpipe.rl.ppo import gcrl_distance_reward_fn

FRONT = DEFAULT_VIEWS[1]


@contextmanager
def criterion(number: int, name: str):
    try:
        yield
    except BaseException:
        print(f"ACCEPTANCE {number} ({name}): FAIL", flush=True)
        raise
    print(f"ACCEPTANCE {number} ({name}): PASS", flush=True)


def test_01_score_algebra(encoder):
    with criterion(1, "score algebra"):
        rng = np.random.default_rng(100)
        configs = sample_uniform(1000, seed=100).configs
        t0 = time.perf_counter()
        per_view = [encoder.render_features_many(configs, v, check=False)
                    for v in DEFAULT_VIEWS]
        for i in range(1000):
            q = Query("probe", normalize(rng.standard_normal(encoder.dim)))
            views = [pv[i] for pv in per_view]
            lhs = score(multiview_embed(views), q)
            rhs = float(np.mean([cosine(v, q.embedding) for v in views]))
            assert abs(lhs - rhs) <= 1e-9
        assert time.perf_counter() - t0 < 1.0


def test_02_retrieval_exactness():
    with criterion(2, "retrieval exactness"):
        rng = np.random.default_rng(200)
        rows = rng.standard_normal((100_000, 64))
        rows /= np.linalg.norm(rows, axis=1, keepdims=True) * 1.25
        rows[500] = rows[4242]  # force duplicates for the tie rule
        store = EmbeddingStore(rows.astype(np.float32))
        query = Query("probe", normalize(rng.standard_normal(64)))
        t0 = time.perf_counter()
        scores = store.embeddings.astype(np.float64) @ query.embedding
        oracle = sorted(range(len(store)), key=lambda i: (-scores[i], i))
        for k in (1, 16, 256):
            rr = retrieve_topk(store, query, k)
            assert rr.indices.tolist() == oracle[:k]
            assert np.array_equal(rr.scores, scores[oracle[:k]])
        assert time.perf_counter() - t0 < 5.0


def test_03_gradient_fidelity():
    with criterion(3, "gradient fidelity"):
        t0 = time.perf_counter()
        rng = np.random.default_rng(300)
        eps = 1e-5
        worst = 0.0
        for probe in range(50):
            model = DistilledModel(seed=int(rng.integers(1 << 30)))
            for k, v in model.params.items():
                if k == "w_out":
                    model.params[k] = 0.05 * rng.standard_normal(v.shape)
            for i in range(model.blocks):
                model.state[f"mean{i}"] = 0.1 * rng.standard_normal(model.width)
                model.state[f"var{i}"] = 1.0 + 0.3 * rng.random(model.width)
            q = rng.standard_normal(7)
            upstream = rng.standard_normal(model.dim_out)
            grads, dq = model.grad(q, upstream)

            def f(qq=None):
                point = q if qq is None else qq
                return float(model.forward(point[None, :])[0] @ upstream)

            for i in range(7):
                e = np.zeros(7)
                e[i] = eps
                fd = (f(q + e) - f(q - e)) / (2 * eps)
                worst = max(worst, abs(dq[i] - fd) / max(abs(fd), 1e-6))
            names = rng.choice(list(grads), size=3, replace=False)
            for name in names:
                flat = model.params[name].reshape(-1)
                for j in rng.integers(0, flat.size, size=2):
                    orig = flat[j]
                    flat[j] = orig + eps
                    fp = f()
                    flat[j] = orig - eps
                    fm = f()
                    flat[j] = orig
                    fd = (fp - fm) / (2 * eps)
                    g = grads[name].reshape(-1)[j]
                    worst = max(worst, abs(g - fd) / max(abs(fd), 1e-6))
        assert worst <= 1e-4, f"max relative error {worst}"
        assert time.perf_counter() - t0 < 30.0


def test_04_distillation_accuracy(run_cfg, diversity_bundle, full_model):
    with criterion(4, "distillation accuracy"):
        model, info = full_model
        ds, store = diversity_bundle
        assert info["seconds"] <= 600.0, f"training took {info['seconds']:.0f}s"
        assert info["heldout_score_rmse"] <= 0.15
        # zero-model RMSE over the same deterministic holdout split
        hyper = run_cfg.distill_hyper()
        n = len(ds)
        n_hold = min(max(int(round(n * hyper.holdout_fraction)), 0), n - 1)
        hold_idx = np.random.default_rng(hyper.seed).permutation(n)[:n_hold]
        zero_rmse = float(np.sqrt(np.mean(
            store.embeddings[hold_idx].astype(np.float64) ** 2)))
        assert info["heldout_embedding_rmse"] <= 0.2 * zero_rmse, (
            f"emb rmse {info['heldout_embedding_rmse']:.4f} vs "
            f"0.2 x zero-model {zero_rmse:.4f}"
        )


def test_05_finetuning_gain(diversity_bundle, full_model, concept_lib, encoder):
    with criterion(5, "finetuning gain"):
        t0 = time.perf_counter()
        model, _ = full_model
        ds, store = diversity_bundle
        handcrafted = [e.name for e in concept_lib.entries
                       if e.source_config is not None]
        assert len(handcrafted) >= 16
        r_scores, f_scores, s_scores = [], [], []
        for name in handcrafted:
            query = concept_lib.lookup(name)
            rr = retrieve_topk(store, query, 256)
            r_scores.append(float(rr.scores[0]))
            cands = finetune(ds.configs[rr.indices], query, model,
                             steps=80, lr=0.02)
            best_ft = int(np.argmax([c.surrogate_score for c in cands]))
            selected = select_best(cands, query, DEFAULT_VIEWS, encoder)
            f_scores.append(cands[best_ft].exact_score)
            s_scores.append(selected.exact_score)
        r, f, s = map(np.asarray, (r_scores, f_scores, s_scores))
        assert s.mean() >= f.mean() >= r.mean(), (
            f"select {s.mean():.4f} finetune {f.mean():.4f} retrieve {r.mean():.4f}"
        )
        frac_improved = float(np.mean(s - r > 0))
        assert frac_improved >= 0.70, f"select beat retrieve on {frac_improved:.0%}"
        assert time.perf_counter() - t0 < 300.0


def test_06_dataset_sampling_superiority(diversity_bundle, random_bundle,
                                         concept_lib):
    with criterion(6, "dataset-sampling superiority"):
        t0 = time.perf_counter()
        _, div_store = diversity_bundle
        _, rand_store = random_bundle
        div_best, rand_best = [], []
        for query in concept_lib.queries():
            div_best.append(float(retrieve_topk(div_store, query, 1).scores[0]))
            rand_best.append(float(retrieve_topk(rand_store, query, 1).scores[0]))
        assert np.mean(div_best) > np.mean(rand_best), (
            f"diversity {np.mean(div_best):.4f} vs random {np.mean(rand_best):.4f}"
        )
        assert time.perf_counter() - t0 < 120.0


def test_07_multiview_robustness(diversity_bundle, concept_lib, encoder):
    with criterion(7, "multiview robustness"):
        ds, store_3v = diversity_bundle
        store_1v = embed_dataset(ds, (FRONT,), encoder)
        losses_1v, losses_3v = [], []
        for query in concept_lib.queries():
            rr1 = retrieve_topk(store_1v, query, 1)
            rr3 = retrieve_topk(store_3v, query, 1)
            for rr, bucket in ((rr1, losses_1v), (rr3, losses_3v)):
                q = ds.configs[rr.indices[0]]
                heldout = float(np.mean([
                    encoder.render_features(q, v) @ query.embedding
                    for v in HOLDOUT_VIEWS
                ]))
                bucket.append(float(rr.scores[0]) - heldout)
        mean_1v, mean_3v = np.mean(losses_1v), np.mean(losses_3v)
        assert mean_3v <= 0.5 * mean_1v, (
            f"3-view loss {mean_3v:.4f} vs 0.5 x single-view loss {mean_1v:.4f}"
        )


def test_08_lca_ordering(run_cfg, diversity_bundle, random_bundle, full_model,
                         concept_lib, gcrl_artifact, mtrl_artifact):
    with criterion(8, "LCA ordering"):
        model, _ = full_model
        div_ds, div_store = diversity_bundle
        rand_ds, rand_store = random_bundle

        total_train = (gcrl_artifact.meta["train_seconds"]
                       + mtrl_artifact.meta["train_seconds"])
        assert total_train <= 4 * 3600

        artifacts = EvalArtifacts(
            model=model, gcrl=gcrl_artifact, mtrl=mtrl_artifact,
            random_ds=rand_ds, random_store=rand_store,
            diversity_ds=div_ds, diversity_store=div_store,
        )
        report = evaluate_lca(["GCRL-R", "GCRL-D", "GCRL-F"], concept_lib,
                              artifacts, episodes=10, seed=0,
                              gamma=run_cfg.ppo.gamma)
        agg = report["aggregate"]
        assert agg["GCRL-D"]["approx_return"] > agg["GCRL-R"]["approx_return"], (
            f"GCRL-D {agg['GCRL-D']['approx_return']:.4f} vs "
            f"GCRL-R {agg['GCRL-R']['approx_return']:.4f}"
        )
        assert agg["GCRL-F"]["approx_return"] >= agg["GCRL-D"]["approx_return"], (
            f"GCRL-F {agg['GCRL-F']['approx_return']:.4f} vs "
            f"GCRL-D {agg['GCRL-D']['approx_return']:.4f}"
        )
        assert report["speed"]["exact_over_distilled"] > 0  # recorded (see #11)

        # trained goal reaching halves the untrained final distance
        heldout_goals = sample_uniform(64, seed=4096).configs
        untrained = PolicyNet(PolicySpec(kind="GCRL"), seed=run_cfg.seed)
        def mean_final_dist(net):
            dists = []
            for i, g in enumerate(heldout_goals):
                traj = rollout(net, 50_000 + i, g, deterministic=True)
                dists.append(np.linalg.norm(traj.postultimate_config - g))
            return float(np.mean(dists))
        d_trained = mean_final_dist(gcrl_artifact.net)
        d_untrained = mean_final_dist(untrained)
        assert d_trained <= 0.5 * d_untrained, (
            f"trained {d_trained:.3f} vs untrained {d_untrained:.3f}"
        )


def test_09_reward_ablation(run_cfg, full_model, concept_lib, mtrl_artifact,
                            mtrl_raw_artifact):
    with criterion(9, "reward ablation"):
        model, _ = full_model
        embed = make_distilled_embed(model)
        def mean_final_score(art):
            finals = []
            for ci, name in enumerate(concept_lib.split_names("train")):
                query = concept_lib.lookup(name)
                for ep in range(10):
                    traj = rollout(art.net, 90_000 + 97 * ci + ep,
                                   query.embedding, deterministic=True)
                    scores = trajectory_scores(traj, query, embed)
                    finals.append(float(scores[-1]))
            return float(np.mean(finals))
        s_diff = mean_final_score(mtrl_artifact)
        s_raw = mean_final_score(mtrl_raw_artifact)
        assert s_diff > s_raw, f"time-diff {s_diff:.4f} vs raw {s_raw:.4f}"


def test_10_telescoping_and_binomial(encoder, concept_lib):
    with criterion(10, "telescoping identities"):
        rng = np.random.default_rng(1000)
        net = PolicyNet(PolicySpec(kind="GCRL"), seed=1)
        embed_exact = make_exact_embed(encoder, DEFAULT_VIEWS)
        query = concept_lib.lookup("reach-up")
        goal = sample_uniform(1, seed=1001).configs[0]
        err_ratio_num, err_ratio_den = [], []
        for i in range(100):
            traj = rollout(net, int(rng.integers(1 << 30)), goal,
                           reward_fn=gcrl_distance_reward_fn(goal),
                           deterministic=False)
            # distance telescoping
            d0 = np.linalg.norm(traj.configs[0] - goal)
            dT = np.linalg.norm(traj.postultimate_config - goal)
            assert abs(traj.rewards.sum() - (d0 - dT)) <= 1e-9
            # score telescoping at gamma = 1
            s = trajectory_scores(traj, query, embed_exact)
            assert abs(vlm_return(traj, 1.0) - (s[-1] - s[0])) <= 1e-9
            assert best_in_trajectory(traj, query, embed_exact) == np.max(s[:-1])
            # binomial-expansion residual at two discounts
            T = len(traj)
            for gamma, bucket in ((0.99, err_ratio_num), (0.999, err_ratio_den)):
                ret = vlm_return(traj, gamma)
                approx = (gamma ** (T - 1)) * s[T] - s[0] \
                    + (1.0 - gamma) * np.sum(s[1:T])
                bucket.append(abs(ret - approx))
        shrink = np.mean(err_ratio_num) / np.mean(err_ratio_den)
        assert shrink >= 50.0, f"residual shrank only {shrink:.1f}x"


def test_11_speed_report(full_model, encoder):
    with criterion(11, "speed report"):
        model, _ = full_model
        speed = measure_embedding_speed(model, encoder, DEFAULT_VIEWS,
                                        batch=256, reps=20)
        assert speed["distilled_ms"] < 10.0, f"{speed['distilled_ms']:.2f} ms"
        assert speed["exact_over_distilled"] > 0
        print(f"  distilled {speed['distilled_ms']:.2f} ms, "
              f"exact {speed['exact_ms']:.2f} ms, "
              f"ratio {speed['exact_over_distilled']:.1f}x", flush=True)
