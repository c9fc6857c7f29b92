import json

import kvconsist as kv

TINY = ["--set", "gen.train=240", "--set", "gen.valid=60", "--set", "gen.test=60", "--set", "gen.keyswap=20"]


def test_help_lists_every_command(cli):
    out = cli("--help").stdout
    for cmd in ("gen", "train", "eval", "predict", "rerank", "kappa", "ablate"):
        assert cmd in out
    for flag in ("--config", "--seed", "--out", "--checkpoint", "--splits"):
        assert flag in out


def test_usage_errors_exit_2(cli):
    assert cli(check=False).returncode == 2
    assert cli("frobnicate", check=False).returncode == 2
    proc = cli("gen", "--no-such-flag", "--out", "x", check=False)
    assert proc.returncode == 2
    assert json.loads(proc.stderr.strip().splitlines()[-1])["error"] == "usage"


def test_runtime_error_is_one_json_line(cli, tmp_path):
    proc = cli("eval", "--checkpoint", tmp_path / "missing", "--splits", tmp_path / "x.jsonl", check=False)
    assert proc.returncode == 1
    lines = proc.stderr.strip().splitlines()
    assert len(lines) == 1
    err = json.loads(lines[0])
    assert err["error"] == "io" and err["message"]


def test_gen_is_deterministic(cli, configs, tmp_path):
    for d in ("a", "b"):
        cli("gen", "--config", configs / "desk.json", *TINY, "--seed", 7, "--out", tmp_path / d)
    for split in ("train", "valid", "test", "keyswap"):
        assert (tmp_path / "a" / f"{split}.jsonl").read_bytes() == (tmp_path / "b" / f"{split}.jsonl").read_bytes()


def test_kappa_of_identical_files(cli, tmp_path):
    labels = tmp_path / "a.labels"
    labels.write_text("ENTAILED\nCONTRADICTED\nIRRELEVANT\nIRRELEVANT\n")
    out = json.loads(cli("kappa", labels, labels).stdout)
    assert out["cohen"] == 1.0
    assert out["fleiss"] == 1.0


def test_train_predict_eval_agree(cli, configs, tmp_path):
    splits, run = tmp_path / "splits", tmp_path / "run"
    cli("gen", "--config", configs / "desk.json", *TINY, "--seed", 4, "--out", splits)
    cli("train", "--config", configs / "desk.json", "--set", "train.stage1_epochs=2", "--set",
        "train.stage2_epochs=1", "--splits", splits, "--out", run)
    report = json.loads((run / "report.json").read_text())

    preds = tmp_path / "pred.jsonl"
    cli("predict", "--checkpoint", run / "checkpoint", "--splits", splits / "test.jsonl", "--out", preds)
    rows = [json.loads(l) for l in preds.read_text().splitlines()]
    assert len(rows) == 60

    direct = json.loads(cli("eval", "--checkpoint", run / "checkpoint", "--splits", splits / "test.jsonl").stdout)
    from_preds = json.loads(cli("eval", "--predictions", preds).stdout)
    assert abs(direct["accuracy"] - report["test_accuracy"]) <= 0.001
    assert from_preds["accuracy"] == direct["accuracy"]

    # The Python model reproduces the CLI's predictions.
    model = kv.Model(run / "checkpoint")
    test = kv.load_dataset(splits / "test.jsonl")
    assert [model.predict(ex)["label"] for ex in test] == [r["label"] for r in rows]

    ranked = [json.loads(l) for l in cli("rerank", "--predictions", preds).stdout.splitlines()]
    assert sorted(r["response"] for r in ranked) == sorted(r["response"] for r in rows)
