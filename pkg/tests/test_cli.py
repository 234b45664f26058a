import pytest

from cccvln.cli import main

SMALL = ["--set", "hidden=4", "--set", "embed=3", "--set", "n_worlds=3", "--set", "n_unseen_worlds=1",
         "--set", "n_labeled=6", "--set", "m_unlabeled=6", "--set", "n_val_seen=4", "--set", "n_val_unseen=4",
         "--set", "batch_size=2", "--set", "u_batch_size=2", "--set", "iterations=3"]


def test_gen_world_and_data(tmp_path, capsys):
    assert main(["gen-world", "--seed", "3", "--out", str(tmp_path / "w.world")]) == 0
    assert (tmp_path / "w.world").read_text().startswith("ccc-world")
    assert main(["gen-data", "--seed", "1", "--out", str(tmp_path / "d")] + SMALL) == 0
    names = {p.name for p in (tmp_path / "d").iterdir()}
    assert {"labeled.tsv", "unlabeled.tsv", "val_seen.tsv", "val_unseen.tsv", "worlds"} <= names


def test_train_eval_plot_and_banner(tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["train", "--seed", "2", "--mode", "ccc", "--out", str(out)] + SMALL) == 0
    err = capsys.readouterr().err
    assert "threads=1" in err and "# mode = ccc" in err
    for name in ("config.txt", "checkpoint.ckpt", "runlog.csv", "metrics.csv"):
        assert (out / name).is_file()
    assert main(["eval", "--checkpoint", str(out / "checkpoint.ckpt"), "--out", str(tmp_path / "m.csv"),
                 "--split", "val_seen", "--split", "val_unseen"]) == 0
    captured = capsys.readouterr()
    assert "sha256:" in captured.err
    lines = (tmp_path / "m.csv").read_text().splitlines()
    assert lines[0].startswith("split,SR,NE,OR,SPL") and len(lines) == 3
    assert main(["plot", "--runlog", str(out / "runlog.csv"), "--out", str(tmp_path / "svg")]) == 0
    assert any(p.suffix == ".svg" for p in (tmp_path / "svg").iterdir())


def test_resume_reproduces_unbroken_run(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["train", "--seed", "4", "--mode", "ccc", "--out", str(a)] + SMALL) == 0
    assert main(["train", "--seed", "4", "--mode", "ccc", "--out", str(b), "--until", "1"] + SMALL) == 0
    assert main(["train", "--seed", "4", "--mode", "ccc", "--out", str(b), "--resume",
                 str(b / "checkpoint.ckpt")] + SMALL) == 0
    assert (a / "checkpoint.ckpt").read_bytes() == (b / "checkpoint.ckpt").read_bytes()
    assert (a / "runlog.csv").read_text() == (b / "runlog.csv").read_text()


def test_resume_refuses_other_config(tmp_path, capsys):
    out = tmp_path / "r"
    assert main(["train", "--seed", "4", "--out", str(out), "--until", "1"] + SMALL) == 0
    code = main(["train", "--seed", "5", "--out", str(out), "--resume", str(out / "checkpoint.ckpt")] + SMALL)
    assert code == 2 and "different config" in capsys.readouterr().err


def test_oracle_check_passes(capsys):
    assert main(["oracle-check", "--seed", "1"]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and out.count("PASS") >= 4


@pytest.mark.parametrize("argv,code,needle", [
    (["train"], 2, "required"),
    (["nope"], 2, "invalid choice"),
    (["train", "--out", "x", "--set", "lr=abc"], 2, "lr"),
    (["train", "--out", "x", "--set", "bogus=1"], 2, "bogus"),
    (["train", "--out", "x", "--config", "/nonexistent.cfg"], 3, "not found"),
    (["eval", "--checkpoint", "/nonexistent.ckpt", "--out", "m.csv"], 3, "not found"),
    (["plot", "--runlog", "/nonexistent.csv", "--out", "p"], 3, "not found"),
])
def test_exit_codes(argv, code, needle, capsys):
    assert main(argv) == code
    assert needle in capsys.readouterr().err


def test_corrupt_checkpoint_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"not a checkpoint")
    assert main(["eval", "--checkpoint", str(bad), "--out", str(tmp_path / "m.csv")]) == 3


def test_config_file_errors_name_line(tmp_path, capsys):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("lr = 0.1\nhidden = many\n")
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "line 2" in capsys.readouterr().err


def test_bad_thread_setting(monkeypatch, capsys):
    monkeypatch.setenv("CCC_THREADS", "zero")
    assert main(["oracle-check"]) == 2
    assert "CCC_THREADS" in capsys.readouterr().err


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nan_training_exits_numeric(tmp_path, capsys):
    assert main(["train", "--seed", "1", "--out", str(tmp_path / "n"), "--set", "lr=1e308",
                 "--set", "clip_norm=1e308"] + SMALL) == 4
    assert "numeric failure" in capsys.readouterr().err
