import json

import pytest

from delta_sim.cli import EXIT_DIVERGED, EXIT_EXCLUDED, EXIT_INPUT, EXIT_OK, main


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    assert main(["gen", "--out", str(out), "--n", "4", "--seed", "7"]) == EXIT_OK
    return out


def test_gen_writes_files_and_manifest(corpus, tmp_path):
    files = sorted(corpus.glob("*.scenario.json"))
    assert len(files) == 4
    manifest = json.loads((corpus / "manifest.json").read_text())
    assert manifest["seed"] == 7 and len(manifest["files"]) == 4
    again = tmp_path / "again"
    assert main(["gen", "--out", str(again), "--n", "4", "--seed", "7"]) == EXIT_OK
    for f in files:
        assert (again / f.name).read_bytes() == f.read_bytes()
    assert (again / "manifest.json").read_bytes() == (corpus / "manifest.json").read_bytes()


def test_gen_usage_errors(tmp_path, capsys):
    assert main(["gen", "--out", str(tmp_path), "--n", "0"]) == EXIT_INPUT
    assert main(["gen", "--out", str(tmp_path), "--template", "nope"]) == EXIT_INPUT
    assert main(["gen"]) == EXIT_INPUT  # --out missing
    assert main(["frobnicate"]) == EXIT_INPUT


def test_eval_replay_is_zero_and_repeatable(corpus, tmp_path, capsys):
    args = ["eval", "--corpus", str(corpus), "--model", "replay", "--k", "2"]
    assert main(args + ["--out", str(tmp_path / "a")]) == EXIT_OK
    assert main(args + ["--out", str(tmp_path / "b"), "--jobs", "2"]) == EXIT_OK
    a = (tmp_path / "a" / "report.json").read_bytes()
    assert a == (tmp_path / "b" / "report.json").read_bytes()
    doc = json.loads(a)
    union = doc["domains"]["union"]
    assert union["delta"]["abs"] == 0.0 and all(c["C_s"] == 0 == c["C_p"] for c in union["confusion"])
    assert doc["config"]["k"] == 2 and len(doc["config"]["corpus_sha256"]) == 64
    assert "union" in capsys.readouterr().out


def test_eval_input_errors(corpus, tmp_path):
    out = str(tmp_path / "r")
    assert main(["eval", "--corpus", str(tmp_path / "missing"), "--out", out]) == EXIT_INPUT
    assert main(["eval", "--corpus", str(corpus), "--out", out, "--model", "nope"]) == EXIT_INPUT
    assert main(["eval", "--corpus", str(corpus), "--out", out, "--k", "0"]) == EXIT_INPUT
    assert main(["eval", "--corpus", str(corpus), "--out", out, "--domains", "elsewhere"]) == EXIT_INPUT
    assert main(["eval", "--corpus", str(corpus)]) == EXIT_INPUT


def test_eval_reports_exclusions_with_exit_2(tmp_path):
    # this corpus has scenarios with no non-ego vehicle in the eval set
    corpus = tmp_path / "c"
    assert main(["gen", "--out", str(corpus), "--n", "6", "--seed", "11"]) == EXIT_OK
    code = main(["eval", "--corpus", str(corpus), "--out", str(tmp_path / "r"), "--model", "aggressive_follower",
                 "--k", "2", "--domains", "eval,causal,union"])
    doc = json.loads((tmp_path / "r" / "report.json").read_text())
    assert code == EXIT_EXCLUDED
    assert doc["excluded"] and all(e["domain"] == "eval" for e in doc["excluded"])
    assert set(doc["domains"]) == {"eval", "causal", "union"}


def test_config_file_and_flag_precedence(corpus, tmp_path):
    cfg = tmp_path / "h.cfg"
    cfg.write_text(f"corpus = {corpus}\nmodel = open_loop\nk = 3\ntau = 0.05\n")
    assert main(["eval", "--config", str(cfg), "--out", str(tmp_path / "r"), "--k", "2"]) == EXIT_OK
    doc = json.loads((tmp_path / "r" / "report.json").read_text())
    assert doc["config"]["k"] == 2 and doc["config"]["tau"] == [0.05] and doc["model"]["name"] == "open_loop"
    cfg.write_text("k = lots\n")
    assert main(["eval", "--config", str(cfg), "--out", str(tmp_path / "r")]) == EXIT_INPUT


def test_train_then_eval(corpus, tmp_path, capsys):
    assert main(["train", "--corpus", str(corpus), "--out", str(tmp_path / "m"), "--epochs", "0"]) == EXIT_OK
    params = json.loads((tmp_path / "m" / "params.json").read_text())
    assert params["accel_weights"] == [0.0] * 7 and params["train_config"]["epochs"] == 0
    assert main(["eval", "--corpus", str(corpus), "--out", str(tmp_path / "r"), "--k", "2",
                 "--model", str(tmp_path / "m")]) == EXIT_OK
    assert json.loads((tmp_path / "r" / "report.json").read_text())["model"]["name"] == "toy"
    assert main(["train", "--corpus", str(corpus), "--out", str(tmp_path / "p.json"), "--epochs", "2",
                 "--p-drop", "0.1"]) == EXIT_OK
    assert "epoch 1 loss" in capsys.readouterr().out
    assert main(["train", "--corpus", str(corpus), "--out", str(tmp_path / "x"), "--p-drop", "1.5"]) == EXIT_INPUT


def test_train_divergence_exit_code(corpus, tmp_path):
    cfg = tmp_path / "h.cfg"
    cfg.write_text("learning_rate = 10\nepochs = 8\n")
    code = main(["train", "--config", str(cfg), "--corpus", str(corpus), "--out", str(tmp_path / "m")])
    assert code == EXIT_DIVERGED
    assert not (tmp_path / "m" / "params.json").exists()


def test_report_command(corpus, tmp_path, capsys):
    assert main(["eval", "--corpus", str(corpus), "--out", str(tmp_path), "--k", "2"]) == EXIT_OK
    capsys.readouterr()
    assert main(["report", "--out", str(tmp_path)]) == EXIT_OK
    assert "union" in capsys.readouterr().out
    assert main(["report", "--out", str(tmp_path / "nothing")]) == EXIT_INPUT
