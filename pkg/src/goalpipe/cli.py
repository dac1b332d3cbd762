"""Operator entry point.

Every subcommand prints a single JSON result line (indented with --pretty)
and exits 0 on success, 2 on validation/usage errors, 1 on other failures.
The run configuration comes from --config or the GOALPIPE_CONFIG environment
variable; --threads caps BLAS worker threads and must be applied before
numpy loads, so all heavy imports happen inside the handlers.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

_THREAD_ENV_VARS = (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
)


def _apply_threads_early(argv):
    for i, arg in enumerate(argv):
        if arg == "--threads" and i + 1 < len(argv):
            value = argv[i + 1]
        elif arg.startswith("--threads="):
            value = arg.split("=", 1)[1]
        else:
            continue
        if value.isdigit() and int(value) > 0:
            for var in _THREAD_ENV_VARS:
                os.environ[var] = value
        return


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="goalpipe",
        description="Query-to-goal pipeline over the planar arm-and-cube testbed",
    )
    parser.add_argument("--config", default=None,
                        help="RunConfig JSON (default: $GOALPIPE_CONFIG)")
    parser.add_argument("--pretty", action="store_true",
                        help="indent the JSON result")
    parser.add_argument("--threads", type=int, default=None,
                        help="cap BLAS worker threads")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample", help="generate a configuration dataset")
    p.add_argument("--method", required=True,
                   choices=["random-policy", "uniform", "diversity"])
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--store-out", default=None,
                   help="embedding store output (diversity method)")

    p = sub.add_parser("embed", help="compute exact embeddings for a dataset")
    p.add_argument("--configs", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("distill", help="train the surrogate embedding model")
    p.add_argument("--configs", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=None)

    p = sub.add_parser("concepts", help="build the concept library")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("retrieve", help="brute-force top-k retrieval")
    p.add_argument("--store", required=True)
    p.add_argument("--configs", required=True)
    p.add_argument("--concept", required=True)
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--concepts-file", default=None)

    p = sub.add_parser("goal", help="run the retrieve/finetune/select pipeline")
    p.add_argument("--concept", required=True)
    p.add_argument("--stop-after", default="select",
                   choices=["retrieve", "finetune", "select"])
    p.add_argument("--store", default=None)
    p.add_argument("--configs", default=None)
    p.add_argument("--model", default=None)
    p.add_argument("--concepts-file", default=None)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--steps", type=int, default=None)

    for kind in ("gcrl", "mtrl", "strl"):
        p = sub.add_parser(f"train-{kind}", help=f"train the {kind.upper()} agent")
        p.add_argument("--out", required=True)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--steps", type=int, default=None)
        p.add_argument("--progress", action="store_true")
        if kind == "gcrl":
            p.add_argument("--configs", default=None,
                           help="goal pool dataset (.gcfg)")
        else:
            p.add_argument("--concepts-file", default=None)
            p.add_argument("--model", default=None)
        if kind == "mtrl":
            p.add_argument("--reward", default="time-diff",
                           choices=["time-diff", "raw"])
        if kind == "strl":
            p.add_argument("--concept", required=True)

    p = sub.add_parser("eval", help="evaluate agent variants over concepts")
    p.add_argument("--variants", required=True,
                   help="comma-separated, e.g. GCRL-D,GCRL-R,MTRL-test")
    p.add_argument("--episodes", type=int, default=10)
    p.add_argument("--out", required=True)
    p.add_argument("--concepts-file", default=None)
    p.add_argument("--model", default=None)
    p.add_argument("--gcrl", default=None)
    p.add_argument("--mtrl", default=None)
    p.add_argument("--random-configs", default=None)
    p.add_argument("--random-store", default=None)
    p.add_argument("--diversity-configs", default=None)
    p.add_argument("--diversity-store", default=None)
    p.add_argument("--seed", type=int, default=None)
    return parser


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    _apply_threads_early(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    from .errors import ConfigInvalid, GoalpipeError, UnknownConcept, UsageError

    try:
        from .config import load_runconfig
        cfg = load_runconfig(args.config or os.environ.get("GOALPIPE_CONFIG"))
        result = _HANDLERS[args.command](args, cfg)
        print(json.dumps(result, indent=2 if args.pretty else None))
        return 0
    except (ConfigInvalid, UsageError, UnknownConcept) as err:
        print(json.dumps({"error": str(err), "kind": type(err).__name__}),
              file=sys.stderr)
        return 2
    except (GoalpipeError, FileNotFoundError) as err:
        print(json.dumps({"error": str(err), "kind": type(err).__name__}),
              file=sys.stderr)
        return 1


def _seed(args, cfg) -> int:
    return cfg.seed if getattr(args, "seed", None) is None else args.seed


def _load_model(cfg, path):
    from .distill import DistilledModel
    from .env import CONFIG_DIM
    return DistilledModel.load(path, CONFIG_DIM, cfg.env.embedding_dim,
                               cfg.distill.width, cfg.distill.blocks)


def _concepts(cfg, path):
    from .concepts import load_concepts
    return load_concepts(path or cfg.artifact("concepts.json"))


def cmd_sample(args, cfg):
    from . import dataset as ds_mod
    seed = _seed(args, cfg)
    if args.method == "random-policy":
        ds = ds_mod.sample_random_policy(args.n, seed)
    elif args.method == "uniform":
        ds = ds_mod.sample_uniform(args.n, seed)
    else:
        hyper = cfg.distill_hyper(seed=seed, epochs=cfg.dataset.inner_epochs)
        ds, store = ds_mod.build_diversity_dataset(
            args.n, seed, hyper, cfg.encoder(), cfg.views(),
            batch_n=cfg.dataset.diversity_batch,
            steps=cfg.dataset.diversity_steps,
            lr=cfg.dataset.diversity_lr,
            seed_fraction=cfg.dataset.seed_fraction,
        )
        store_out = args.store_out or str(args.out).rsplit(".", 1)[0] + ".gemb"
        ds_mod.save_store(store, store_out)
    ds_mod.save_configs(ds, args.out)
    result = {"command": "sample", "method": args.method, "seed": seed,
              "count": len(ds), "out": str(args.out)}
    if args.method == "diversity":
        result["store_out"] = store_out
    return result


def cmd_embed(args, cfg):
    from . import dataset as ds_mod
    ds = ds_mod.load_configs(args.configs)
    store = ds_mod.embed_dataset(ds, cfg.views(), cfg.encoder())
    ds_mod.save_store(store, args.out)
    return {"command": "embed", "rows": len(store), "dim": store.dim,
            "out": str(args.out)}


def cmd_distill(args, cfg):
    from . import dataset as ds_mod
    from .distill import train
    ds = ds_mod.load_configs(args.configs)
    store = ds_mod.load_store(args.embeddings)
    ds_mod.check_aligned(ds, store)
    hyper = cfg.distill_hyper(epochs=args.epochs)
    model, report = train(ds.configs, store.embeddings, hyper)
    model.save(args.out)
    return {"command": "distill", "out": str(args.out), **report.as_dict()}


def cmd_concepts(args, cfg):
    from .concepts import build_concepts, save_concepts
    lib = build_concepts(_seed(args, cfg), cfg.encoder(), cfg.views())
    save_concepts(lib, args.out)
    return {"command": "concepts", "count": len(lib), "names": lib.names(),
            "out": str(args.out)}


def cmd_retrieve(args, cfg):
    from . import dataset as ds_mod
    from .goalgen import retrieve_topk
    store = ds_mod.load_store(args.store)
    ds = ds_mod.load_configs(args.configs)
    ds_mod.check_aligned(ds, store)
    query = _concepts(cfg, args.concepts_file).lookup(args.concept)
    rr = retrieve_topk(store, query, args.k)
    return {
        "command": "retrieve", "concept": args.concept, "k": args.k,
        "indices": rr.indices.tolist(),
        "scores": rr.scores.tolist(),
        "top_config": ds.configs[rr.indices[0]].tolist(),
    }


def cmd_goal(args, cfg):
    from . import dataset as ds_mod
    from .goalgen import GoalOptions, generate_goal
    store = ds_mod.load_store(args.store or cfg.artifact("diversity.gemb"))
    ds = ds_mod.load_configs(args.configs or cfg.artifact("diversity.gcfg"))
    ds_mod.check_aligned(ds, store)
    model = None
    if args.stop_after != "retrieve" or args.model:
        model = _load_model(cfg, args.model or cfg.artifact("distill.gpol"))
    query = _concepts(cfg, args.concepts_file).lookup(args.concept)
    options = GoalOptions(
        k=args.k if args.k is not None else cfg.finetune.k,
        steps=args.steps if args.steps is not None else cfg.finetune.steps,
        lr=cfg.finetune.lr,
        stop_after=args.stop_after,
    )
    goal, diagnostics = generate_goal(query, store, ds, model, options,
                                      cfg.views(), cfg.encoder())
    return {
        "command": "goal", "concept": args.concept,
        "stop_after": args.stop_after,
        "config": goal.config.tolist(),
        "surrogate_score": goal.surrogate_score,
        "exact_score": goal.exact_score,
        "origin": goal.origin.value,
        "diagnostics": diagnostics,
    }


def _train_common(args, cfg, kind):
    hyper = cfg.ppo_hyper(kind)
    if args.steps is not None:
        hyper.total_steps = args.steps
    return hyper, _seed(args, cfg)


def cmd_train_gcrl(args, cfg):
    from . import dataset as ds_mod
    from .rl import ppo_train, save_policy
    goals = ds_mod.load_configs(args.configs or cfg.artifact("diversity.gcfg"))
    hyper, seed = _train_common(args, cfg, "GCRL")
    art = ppo_train("GCRL", "distance", goals, hyper, seed,
                    progress=args.progress)
    save_policy(args.out, art.net)
    return {"command": "train-gcrl", "out": str(args.out), **art.meta}


def cmd_train_mtrl(args, cfg):
    from .rl import ppo_train, save_policy
    from .rl.policy import PolicySpec
    from .rl.rewards import make_distilled_embed
    lib = _concepts(cfg, args.concepts_file)
    model = _load_model(cfg, args.model or cfg.artifact("distill.gpol"))
    hyper, seed = _train_common(args, cfg, "MTRL")
    reward = "score-diff" if args.reward == "time-diff" else "score-raw"
    spec = PolicySpec(kind="MTRL", task_dim=cfg.env.embedding_dim)
    art = ppo_train("MTRL", reward, lib.queries("train"), hyper, seed,
                    embed_fn=make_distilled_embed(model), spec=spec,
                    progress=args.progress)
    save_policy(args.out, art.net)
    return {"command": "train-mtrl", "reward": args.reward,
            "out": str(args.out), **art.meta}


def cmd_train_strl(args, cfg):
    from .rl import ppo_train, save_policy
    from .rl.rewards import make_distilled_embed
    lib = _concepts(cfg, args.concepts_file)
    model = _load_model(cfg, args.model or cfg.artifact("distill.gpol"))
    hyper, seed = _train_common(args, cfg, "STRL")
    query = lib.lookup(args.concept)
    art = ppo_train("STRL", "score-diff", query, hyper, seed,
                    embed_fn=make_distilled_embed(model),
                    progress=args.progress)
    save_policy(args.out, art.net)
    return {"command": "train-strl", "concept": args.concept,
            "out": str(args.out), **art.meta}


def cmd_eval(args, cfg):
    from . import dataset as ds_mod
    from .goalgen import GoalOptions
    from .rl import EvalArtifacts, evaluate_lca, load_policy
    from .rl.policy import PolicySpec
    from .rl.ppo import PolicyArtifact

    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    lib = _concepts(cfg, args.concepts_file)
    model = _load_model(cfg, args.model or cfg.artifact("distill.gpol"))

    def maybe_policy(path, default_name, kind, task_dim=-1):
        p = path or cfg.artifact(default_name)
        if not os.path.exists(p):
            return None
        spec = PolicySpec(kind=kind, task_dim=task_dim)
        net = load_policy(p, spec)
        return PolicyArtifact(spec, net, cfg.ppo_hyper(kind), "eval")

    def maybe_dataset(cpath, spath, cname, sname):
        cp = cpath or cfg.artifact(cname)
        sp = spath or cfg.artifact(sname)
        if not (os.path.exists(cp) and os.path.exists(sp)):
            return None, None
        ds = ds_mod.load_configs(cp)
        store = ds_mod.load_store(sp)
        ds_mod.check_aligned(ds, store)
        return ds, store

    random_ds, random_store = maybe_dataset(
        args.random_configs, args.random_store, "random.gcfg", "random.gemb")
    div_ds, div_store = maybe_dataset(
        args.diversity_configs, args.diversity_store,
        "diversity.gcfg", "diversity.gemb")
    strl = {}
    if "STRL" in variants:
        for entry in lib.entries:
            p = cfg.artifact(f"strl-{entry.name}.gpol")
            if os.path.exists(p):
                spec = PolicySpec(kind="STRL")
                strl[entry.name] = PolicyArtifact(
                    spec, load_policy(p, spec), cfg.ppo_hyper("STRL"), "eval")

    artifacts = EvalArtifacts(
        model=model,
        gcrl=maybe_policy(args.gcrl, "gcrl.gpol", "GCRL"),
        mtrl=maybe_policy(args.mtrl, "mtrl.gpol", "MTRL",
                          task_dim=cfg.env.embedding_dim),
        strl=strl,
        random_ds=random_ds, random_store=random_store,
        diversity_ds=div_ds, diversity_store=div_store,
        encoder=cfg.encoder(), views=cfg.views(),
        goal_options=GoalOptions(k=cfg.finetune.k, steps=cfg.finetune.steps,
                                 lr=cfg.finetune.lr),
    )
    report = evaluate_lca(variants, lib, artifacts, episodes=args.episodes,
                          seed=_seed(args, cfg), gamma=cfg.ppo.gamma)
    with open(args.out, "w") as f:
        json.dump(report, f, indent=2)
    return {"command": "eval", "variants": variants,
            "episodes": args.episodes, "out": str(args.out),
            "aggregate": report["aggregate"], "speed": report["speed"]}


_HANDLERS = {
    "sample": cmd_sample,
    "embed": cmd_embed,
    "distill": cmd_distill,
    "concepts": cmd_concepts,
    "retrieve": cmd_retrieve,
    "goal": cmd_goal,
    "train-gcrl": cmd_train_gcrl,
    "train-mtrl": cmd_train_mtrl,
    "train-strl": cmd_train_strl,
    "eval": cmd_eval,
}


if __name__ == "__main__":
    sys.exit(main())
