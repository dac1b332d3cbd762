import json
import struct

import numpy as np
import pytest

from goalpipe.cli import main
from goalpipe.concepts import build_concepts, save_concepts
from goalpipe.dataset import embed_dataset, sample_uniform, save_configs, save_store


def run_cli(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


@pytest.fixture(scope="module")
def workdir(tmp_path_factory, encoder, mini_model):
    """Small artifact directory for CLI plumbing tests."""
    root = tmp_path_factory.mktemp("cliwork")
    ds = sample_uniform(300, seed=5)
    store = embed_dataset(ds, encoder=encoder)
    save_configs(ds, root / "diversity.gcfg")
    save_store(store, root / "diversity.gemb")
    lib = build_concepts(0, encoder)
    save_concepts(lib, root / "concepts.json")
    mini_model.save(root / "distill.gpol")
    cfg = {"paths": {"artifacts": str(root)}}
    cfg_path = root / "run.json"
    cfg_path.write_text(json.dumps(cfg))
    return root, cfg_path


class TestSample:
    def test_uniform_writes_header_count(self, capsys, tmp_path):
        out = tmp_path / "a.gcfg"
        code, stdout, _ = run_cli(capsys, "sample", "--method", "uniform",
                                  "--n", "10", "--seed", "0", "--out", str(out))
        assert code == 0
        result = json.loads(stdout)
        assert result["count"] == 10
        raw = out.read_bytes()
        version, dim, count = struct.unpack("<IIQ", raw[4:20])
        assert (raw[:4], dim, count) == (b"GCFG", 7, 10)

    def test_single_json_line(self, capsys, tmp_path):
        out = tmp_path / "b.gcfg"
        code, stdout, _ = run_cli(capsys, "sample", "--method", "random-policy",
                                  "--n", "5", "--seed", "1", "--out", str(out))
        assert code == 0
        lines = [l for l in stdout.splitlines() if l.strip()]
        assert len(lines) == 1
        json.loads(lines[0])


class TestExitCodes:
    def test_unknown_subcommand_is_2(self, capsys):
        code, _, _ = run_cli(capsys, "frobnicate")
        assert code == 2

    def test_missing_required_flag_is_2(self, capsys):
        code, _, _ = run_cli(capsys, "sample", "--method", "uniform")
        assert code == 2

    def test_invalid_config_is_2(self, capsys, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"unknown_section": 1}))
        code, _, err = run_cli(capsys, "--config", str(bad), "concepts",
                               "--out", str(tmp_path / "c.json"))
        assert code == 2
        assert "unknown" in err

    def test_bad_config_value_is_2(self, capsys, tmp_path):
        bad = tmp_path / "bad2.json"
        bad.write_text(json.dumps({"env": {"horizon": 7}}))
        code, _, _ = run_cli(capsys, "--config", str(bad), "concepts",
                             "--out", str(tmp_path / "c.json"))
        assert code == 2

    def test_missing_file_is_1(self, capsys, tmp_path):
        code, _, _ = run_cli(capsys, "embed", "--configs",
                             str(tmp_path / "nope.gcfg"),
                             "--out", str(tmp_path / "o.gemb"))
        assert code == 1

    def test_unknown_concept_is_2(self, capsys, workdir):
        root, cfg = workdir
        code, _, _ = run_cli(capsys, "--config", str(cfg), "goal",
                             "--concept", "definitely-not-a-concept",
                             "--stop-after", "retrieve")
        assert code == 2


class TestCommands:
    def test_concepts(self, capsys, tmp_path):
        out = tmp_path / "c.json"
        code, stdout, _ = run_cli(capsys, "concepts", "--out", str(out),
                                  "--seed", "0")
        assert code == 0
        assert json.loads(stdout)["count"] == 32
        assert out.exists()

    def test_embed_then_retrieve(self, capsys, tmp_path, workdir):
        root, cfg = workdir
        code, stdout, _ = run_cli(
            capsys, "--config", str(cfg), "retrieve",
            "--store", str(root / "diversity.gemb"),
            "--configs", str(root / "diversity.gcfg"),
            "--concept", "reach-up", "--k", "3")
        assert code == 0
        result = json.loads(stdout)
        assert len(result["indices"]) == 3
        assert result["scores"] == sorted(result["scores"], reverse=True)

    def test_retrieve_matches_library_call(self, capsys, workdir):
        # CLI output must equal the direct library composition
        from goalpipe.concepts import load_concepts
        from goalpipe.dataset import load_configs, load_store
        from goalpipe.goalgen import retrieve_topk
        root, cfg = workdir
        code, stdout, _ = run_cli(
            capsys, "--config", str(cfg), "retrieve",
            "--store", str(root / "diversity.gemb"),
            "--configs", str(root / "diversity.gcfg"),
            "--concept", "wave", "--k", "2")
        assert code == 0
        lib = load_concepts(root / "concepts.json")
        store = load_store(root / "diversity.gemb")
        ds = load_configs(root / "diversity.gcfg")
        rr = retrieve_topk(store, lib.lookup("wave"), 2)
        expected = json.dumps({
            "command": "retrieve", "concept": "wave", "k": 2,
            "indices": rr.indices.tolist(),
            "scores": rr.scores.tolist(),
            "top_config": ds.configs[rr.indices[0]].tolist(),
        })
        assert stdout.strip() == expected

    def test_goal_stop_after_retrieve_matches_library(self, capsys, workdir):
        from goalpipe.concepts import load_concepts
        from goalpipe.dataset import load_configs, load_store
        from goalpipe.distill import DistilledModel
        from goalpipe.goalgen import GoalOptions, generate_goal
        root, cfg = workdir
        code, stdout, _ = run_cli(capsys, "--config", str(cfg), "goal",
                                  "--concept", "reach-up",
                                  "--stop-after", "retrieve")
        assert code == 0
        result = json.loads(stdout)
        lib = load_concepts(root / "concepts.json")
        store = load_store(root / "diversity.gemb")
        ds = load_configs(root / "diversity.gcfg")
        model = DistilledModel.load(root / "distill.gpol")
        goal, _ = generate_goal(lib.lookup("reach-up"), store, ds, model,
                                GoalOptions(stop_after="retrieve"))
        assert result["config"] == goal.config.tolist()
        assert result["exact_score"] == goal.exact_score
        assert result["origin"] == "Retrieved"

    def test_goal_full_pipeline(self, capsys, workdir):
        root, cfg = workdir
        code, stdout, _ = run_cli(capsys, "--config", str(cfg), "goal",
                                  "--concept", "reach-up",
                                  "--stop-after", "select",
                                  "--k", "4", "--steps", "3")
        assert code == 0
        result = json.loads(stdout)
        assert result["origin"] == "Selected"
        assert set(result["diagnostics"]) == {"retrieve", "finetune", "select"}

    def test_env_var_config(self, capsys, tmp_path, workdir, monkeypatch):
        root, cfg = workdir
        monkeypatch.setenv("GOALPIPE_CONFIG", str(cfg))
        code, stdout, _ = run_cli(capsys, "goal", "--concept", "home",
                                  "--stop-after", "retrieve")
        assert code == 0
        assert json.loads(stdout)["command"] == "goal"

    def test_distill_and_train_smoke(self, capsys, tmp_path, workdir):
        root, cfg = workdir
        model_out = tmp_path / "m.gpol"
        code, stdout, _ = run_cli(
            capsys, "--config", str(cfg), "distill",
            "--configs", str(root / "diversity.gcfg"),
            "--embeddings", str(root / "diversity.gemb"),
            "--out", str(model_out), "--epochs", "1")
        assert code == 0
        assert model_out.exists()

        policy_out = tmp_path / "g.gpol"
        code, stdout, _ = run_cli(
            capsys, "--config", str(cfg), "train-gcrl",
            "--configs", str(root / "diversity.gcfg"),
            "--out", str(policy_out), "--steps", "0")
        assert code == 0
        assert policy_out.exists()

    def test_pretty_flag(self, capsys, tmp_path):
        out = tmp_path / "c2.json"
        code, stdout, _ = run_cli(capsys, "--pretty", "concepts",
                                  "--out", str(out), "--seed", "1")
        assert code == 0
        assert stdout.count("\n") > 1
        json.loads(stdout)
