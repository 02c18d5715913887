import csv

import pytest

from cognisnn.cli import main
from cognisnn.config import RunConfig
from cognisnn.data import PerturbationSpec
from cognisnn.graph import DirectedAcyclicGraph, generate_graph
from cognisnn.checkpoint import load_checkpoint
from cognisnn.network import build_model
from cognisnn.training import evaluate

TINY = ["--n", "5", "--channels", "2", "--size", "8", "--classes", "2", "--samples-per-class", "10",
        "--timesteps", "2", "--epochs", "1", "--batch-size", "4"]


def run(*argv):
    return main([str(a) for a in argv])


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    out = tmp_path_factory.mktemp("train")
    assert run("train", *TINY, "--out", out) == 0
    return out


def test_generate_graph_writes_files(tmp_path):
    assert run("generate-graph", "--gen", "ws", "--n", 9, "--seed", 4, "--out", tmp_path) == 0
    dag = DirectedAcyclicGraph.load(tmp_path / "graph.rga")
    cfg = RunConfig.load(tmp_path / "config.txt")
    assert cfg.graph_seed == 4 and cfg.p == 0.75
    assert dag == generate_graph(cfg.graph_spec())
    assert (tmp_path / "graph.dot").read_text().startswith("digraph")


def test_analyze_pathways_on_diamond(tmp_path):
    DirectedAcyclicGraph(4, ((0, 1), (0, 2), (1, 3), (2, 3))).save(tmp_path / "d.rga")
    assert run("analyze-pathways", "--graph", tmp_path / "d.rga", "--out", tmp_path) == 0
    rows = read_csv(tmp_path / "pathways.csv")
    assert len(rows) == 2
    assert rows[0]["rank"] == "1"
    assert float(rows[0]["bc"]) == max(float(r["bc"]) for r in rows)
    assert {r["nodes"] for r in rows} == {"0-1-3", "0-2-3"}


def test_train_outputs_and_resolved_config(trained):
    rows = read_csv(trained / "metrics.csv")
    assert [r["split"] for r in rows] == ["train", "test"]
    cfg = RunConfig.load(trained / "config.txt")
    assert (cfg.n, cfg.epochs, cfg.t_max, cfg.p) == (5, 1, 1, 0.6)
    assert (trained / "model.ckpt").exists() and (trained / "graph.rga").exists()


def test_config_file_reproduces_run(tmp_path, trained):
    assert run("train", "--config", trained / "config.txt", "--out", tmp_path) == 0
    assert (tmp_path / "metrics.csv").read_bytes() == (trained / "metrics.csv").read_bytes()
    assert (tmp_path / "model.ckpt").read_bytes() == (trained / "model.ckpt").read_bytes()


def test_flags_override_config_file(tmp_path, trained):
    assert run("train", "--config", trained / "config.txt", "--epochs", 2, "--out", tmp_path) == 0
    assert RunConfig.load(tmp_path / "config.txt").epochs == 2
    assert len(read_csv(tmp_path / "metrics.csv")) == 4


def test_train_dgl_runs(tmp_path):
    assert run("train-dgl", *TINY, "--out", tmp_path) == 0
    assert read_csv(tmp_path / "metrics.csv")[-1]["split"] == "test"


def test_continual_reports_both_tasks(tmp_path, trained):
    assert run("continual", "--from", trained / "model.ckpt", "--new-classes", 2, "--out", tmp_path) == 0
    tasks = {(r["split"], r["task"]) for r in read_csv(tmp_path / "metrics.csv")}
    assert {("train", "new"), ("test", "new"), ("test", "old")} <= tasks
    assert (tmp_path / "selection.txt").read_text().strip()


def _reference_eval(trained, **kw):
    cfg = RunConfig.load(trained / "config.txt")
    from cognisnn.data import generate_synthetic

    _, test = generate_synthetic(cfg.task_spec())
    model = build_model(DirectedAcyclicGraph.load(trained / "graph.rga"), cfg.model_config(2, 2))
    model.load_state_dict(load_checkpoint(trained / "model.ckpt"))
    return evaluate(model, test, **kw)


def test_perturb_eval_rho_zero_matches_plain_evaluation(tmp_path, trained):
    assert run("perturb-eval", "--from", trained / "model.ckpt", "--kinds", "salt_pepper,frame_loss",
               "--rhos", "0,8", "--out", tmp_path) == 0
    rows = read_csv(tmp_path / "perturb.csv")
    assert [(r["kind"], r["rho"]) for r in rows] == [("frame_loss", "0"), ("frame_loss", "8"),
                                                     ("salt_pepper", "0"), ("salt_pepper", "8")]
    _, acc = _reference_eval(trained)
    assert all(float(r["accuracy"]) == acc for r in rows if r["rho"] == "0")
    _, acc8 = _reference_eval(trained, perturbation=PerturbationSpec("salt_pepper", 8, 0))
    assert float(rows[3]["accuracy"]) == acc8


def test_perturb_eval_parallel_matches_serial(tmp_path, trained):
    args = ["perturb-eval", "--from", trained / "model.ckpt", "--kinds", "poisson,salt_pepper", "--rhos", "2,6"]
    assert run(*args, "--out", tmp_path / "a") == 0
    assert run(*args, "--jobs", 2, "--out", tmp_path / "b") == 0
    assert (tmp_path / "a" / "perturb.csv").read_bytes() == (tmp_path / "b" / "perturb.csv").read_bytes()


def test_timestep_eval_full_length_matches_plain_evaluation(tmp_path, trained):
    assert run("timestep-eval", "--from", trained / "model.ckpt", "--out", tmp_path) == 0
    rows = read_csv(tmp_path / "timesteps.csv")
    assert [r["timesteps"] for r in rows] == ["1", "2"]
    assert float(rows[-1]["accuracy"]) == _reference_eval(trained)[1]
    assert float(rows[0]["accuracy"]) == _reference_eval(trained, timesteps=1)[1]


def test_energy_fixture(tmp_path, capsys):
    assert run("energy", "--fixture", "--out", tmp_path) == 0
    assert "n_mac=0 n_ac=36 energy=32.4 pJ" in capsys.readouterr().out
    summary = read_csv(tmp_path / "energy_summary.csv")[0]
    assert (summary["n_mac"], summary["n_ac"]) == ("0", "36")


def test_energy_on_trained_model(tmp_path, trained):
    assert run("energy", "--from", trained / "model.ckpt", "--out", tmp_path) == 0
    per_node = read_csv(tmp_path / "energy.csv")
    summary = read_csv(tmp_path / "energy_summary.csv")[0]
    n_mac = sum(int(r["count"]) for r in per_node if r["op_type"] == "mac")
    assert n_mac == int(summary["n_mac"])


@pytest.mark.parametrize("argv,code", [
    (["train", "--bogus", "1"], 1),
    (["train", "--epochs", "zero"], 1),
    (["continual"], 1),
    (["train", "--config", "/nonexistent/cfg.txt"], 1),
    (["perturb-eval", "--from", "/nonexistent/model.ckpt"], 2),
    (["train", "--train-data", "/nonexistent/events.bin"], 2),
])
def test_exit_codes(tmp_path, argv, code):
    assert run(*argv, "--out", tmp_path) == code


def test_exit_codes_needing_a_model(tmp_path, trained):
    assert run("perturb-eval", "--from", trained / "model.ckpt", "--rhos", 60, "--out", tmp_path) == 2
    assert run("continual", "--from", trained / "model.ckpt", "--k", 99, "--out", tmp_path) == 1


def test_unknown_key_in_config_file(tmp_path):
    bad = tmp_path / "bad.txt"
    bad.write_text("epochs = 1\nlearning_rate = 0.1\n")
    assert run("train", "--config", bad, "--out", tmp_path) == 1
