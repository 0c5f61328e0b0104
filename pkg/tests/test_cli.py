import json

import pytest

from kdsteal.cli import main
from kdsteal.checkpoint import load_checkpoint
from kdsteal.config import config_schema, dump_config, config_from_dict


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, (json.loads(out.out) if code == 0 else out.err)


@pytest.fixture
def data(tmp_path, capsys):
    path = tmp_path / "d.npz"
    code, out = run(capsys, "gen-data", "--out", path, "--n-classes", 3, "--dim", 4,
                    "--train-per-class", 40, "--test-per-class", 20, "--modes", 2, "--seed", 1)
    assert code == 0 and out["train"] == 120 and out["dim"] == 4
    return path


def test_full_workflow(tmp_path, capsys, data):
    fast = ["--epochs", 2, "--lr", 0.01]
    t, n, ch = tmp_path / "t.ckpt", tmp_path / "n.ckpt", tmp_path / "chain"
    assert run(capsys, "train", "--data", data, "--dims", "4,12,3", "--out", t, *fast)[0] == 0
    assert run(capsys, "kd", "--data", data, "--dims", "4,6,3", "--teacher", t,
               "--out", tmp_path / "k.ckpt", *fast)[0] == 0
    code, out = run(capsys, "nasty", "--data", data, "--reference", t, "--out", n,
                    "--early-stop-acc", 0.99, "--seed", 3, *fast)
    assert code == 0 and 0 <= out["test_accuracy"] <= 1
    code, out = run(capsys, "chain", "--data", data, "--nasty", n, "--k", 3, "--out", ch, *fast)
    assert code == 0 and out["k"] == 3 and len(out["test_accuracy"]) == 3
    assert load_checkpoint(ch / "s1.ckpt").digest() == load_checkpoint(n).digest()
    code, out = run(capsys, "attack", "--method", "htc", "--data", data, "--dims", "4,6,3",
                    "--teacher", n, "--no-label", "--data-fraction", 0.5, "--out", tmp_path / "h.ckpt", *fast)
    assert code == 0 and out["alpha"] == 1.0 and out["train_size"] == 60
    code, out = run(capsys, "attack", "--method", "scm", "--data", data, "--dims", "4,6,3",
                    "--chain", ch, "--k", 2, "--out", tmp_path / "s.ckpt", *fast)
    assert code == 0
    code, out = run(capsys, "defend", "--chain", ch, "--index", 2, "--out", tmp_path / "d2.ckpt")
    assert code == 0
    assert load_checkpoint(tmp_path / "d2.ckpt").digest() == load_checkpoint(ch / "s2.ckpt").digest()
    code, out = run(capsys, "eval", "--data", data, "--model", n, "--reference", t)
    assert code == 0 and out["kl_to_reference"] >= 0 and 1 <= out["mean_peaks"] <= 3


def test_same_seed_same_checkpoint(tmp_path, capsys, data):
    for name in ("a", "b"):
        run(capsys, "train", "--data", data, "--dims", "4,6,3", "--epochs", 2, "--seed", 9,
            "--out", tmp_path / f"{name}.ckpt")
    assert load_checkpoint(tmp_path / "a.ckpt").digest() == load_checkpoint(tmp_path / "b.ckpt").digest()


def test_pipeline_and_report(tmp_path, capsys):
    cfg = config_from_dict({
        "dataset": {"n_classes": 3, "dim": 4, "train_per_class": 30, "test_per_class": 10},
        "teacher_dims": [4, 8, 3], "student_dims": [4, 5, 3],
        "teacher_budget": {"epochs": 2}, "student_budget": {"epochs": 1},
        "data_fractions": [], "chain": {"k": 2}})
    cfg_path = dump_config(cfg, tmp_path / "cfg.yaml")
    out_dir = tmp_path / "run"
    code, out = run(capsys, "pipeline", "--config", cfg_path, "--seeds", 4, "--out", out_dir)
    assert code == 0 and "vanilla" in out["summary"]["median_accuracy"]
    code, out = run(capsys, "report", out_dir / "report.json", "--format", "csv", "--out", tmp_path / "r.csv")
    assert code == 0 and (tmp_path / "r.csv").read_text().startswith("seed,arm,")
    code, out = run(capsys, "report", out_dir / "report.json", "--rerun")
    assert code == 0 and out["rerun_identical"] is True


def test_schema_command(capsys):
    code, out = run(capsys, "schema")
    assert code == 0 and out == json.loads(json.dumps(config_schema()))


def test_exit_code_config_error(tmp_path, capsys, data):
    code, err = run(capsys, "kd", "--data", data, "--teacher", tmp_path / "x.ckpt", "--alpha", 2,
                    "--out", tmp_path / "k.ckpt")
    assert code == 2 and "alpha" in err
    bad = tmp_path / "bad.yaml"
    bad.write_text("seeds: []\n")
    assert run(capsys, "pipeline", "--config", bad, "--out", tmp_path / "o")[0] == 2


def test_exit_code_argparse_usage(capsys):
    with pytest.raises(SystemExit) as info:
        main(["attack", "--method", "fgsm"])
    assert info.value.code == 2


def test_exit_code_format_error(tmp_path, capsys):
    assert run(capsys, "train", "--data", tmp_path / "missing.npz", "--out", tmp_path / "m.ckpt")[0] == 3
    junk = tmp_path / "junk.ckpt"
    junk.write_bytes(b"not a checkpoint at all, really not" * 3)
    assert run(capsys, "defend", "--chain", tmp_path, "--index", 1, "--out", tmp_path / "o.ckpt")[0] == 2
    (tmp_path / "s1.ckpt").write_bytes(junk.read_bytes())
    assert run(capsys, "defend", "--chain", tmp_path, "--index", 1, "--out", tmp_path / "o.ckpt")[0] == 3


def test_exit_code_numeric_failure(tmp_path, capsys, data):
    code, err = run(capsys, "train", "--data", data, "--dims", "4,6,3", "--epochs", 3, "--lr", 1e300,
                    "--out", tmp_path / "m.ckpt")
    assert code == 4 and "layer" in err
