import json
import subprocess
import sys

import pytest

from treedec.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, UsageError, main, parse_overrides, resolve_config
from treedec.depgraph import format_conllu, read_conllu
from treedec.model import ModelConfig
from treedec.training import TrainConfig

from conftest import EXAMPLE1_PIECES, EXAMPLE1_SEQUENCE, EXAMPLE1_TREE


def test_execute_example_sequence(tmp_path, capsys):
    (tmp_path / "seq.txt").write_text(EXAMPLE1_SEQUENCE + "\n")
    assert main(["execute", str(tmp_path / "seq.txt"), "-o", str(tmp_path / "out.conllu")]) == EXIT_OK
    trees = read_conllu(tmp_path / "out.conllu")
    assert trees == [EXAMPLE1_TREE]
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["command"] == "execute" and str(tmp_path / "seq.txt") in manifest["inputs"]
    assert {"config", "seed", "revision", "started", "finished"} <= set(manifest)


def test_execute_reports_bad_line(tmp_path, capsys):
    (tmp_path / "seq.txt").write_text(EXAMPLE1_SEQUENCE + "\nLA:det\n")
    assert main(["execute", str(tmp_path / "seq.txt")]) == EXIT_DATA
    assert "line 2" in capsys.readouterr().err


def test_score_identical_files(tmp_path, capsys):
    (tmp_path / "a").write_text("the cat sat on the mat\nhello there world\n")
    for metric in ("bleu", "chrf+"):
        assert main(["score", str(tmp_path / "a"), str(tmp_path / "a"), "--metric", metric]) == EXIT_OK
        assert capsys.readouterr().out.strip() == "100.00"
    assert main(["score", str(tmp_path / "a"), str(tmp_path / "a"), "--per-sentence"]) == EXIT_OK
    rows = [json.loads(line) for line in capsys.readouterr().out.splitlines()]
    assert [r["bleu"] for r in rows] == [100.0, 100.0]


def test_gradcheck_exit_code(capsys):
    assert main(["gradcheck", "--instances", "2"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "FAIL" not in out and "gcn[plain]" in out


def test_usage_and_data_errors(tmp_path, capsys):
    assert main(["score", "--bogus"]) == EXIT_USAGE
    assert main([]) == EXIT_USAGE
    assert main(["nosuch"]) == EXIT_USAGE
    assert main(["score", str(tmp_path / "missing"), str(tmp_path / "missing")]) == EXIT_DATA
    assert main(["maskdump", "parent"]) == EXIT_USAGE
    err = capsys.readouterr().err
    assert "missing" in err


def test_entry_point_exit_code(tmp_path):
    r = subprocess.run([sys.executable, "-m", "treedec", "score", str(tmp_path / "x"), str(tmp_path / "x")],
                       capture_output=True, text=True)
    assert r.returncode == EXIT_DATA and r.stderr


def test_overrides_and_precedence(tmp_path):
    assert parse_overrides(["--lr", "0.5", "--mode=exact", "--seed", "3"]) == {"lr": 0.5, "mode": "exact", "seed": 3}
    with pytest.raises(UsageError):
        parse_overrides(["--lr"])
    (tmp_path / "c.json").write_text(json.dumps({"lr": 0.01, "seed": 5}))
    cfg = resolve_config(TrainConfig, str(tmp_path / "c.json"), {"seed": 9})
    assert (cfg.lr, cfg.seed, cfg.batch_size) == (0.01, 9, TrainConfig().batch_size)
    with pytest.raises(UsageError):
        resolve_config(TrainConfig, None, {"nonsense": 1})


def test_maskdump(capsys):
    assert main(["maskdump", "parent", "--transitions", EXAMPLE1_SEQUENCE]) == EXIT_OK
    out = capsys.readouterr().out
    assert "LA:nsubj" in out and "Jo@@" in out
    assert main(["maskdump", "vanilla", "--d", "3"]) == EXIT_OK
    assert len(capsys.readouterr().out.strip().splitlines()) == 3


def _write_example(tmp_path):
    (tmp_path / "src.txt").write_text("Hans löscht die Kohlen\nHans löscht\n")
    (tmp_path / "tgt.txt").write_text(" ".join(EXAMPLE1_PIECES) + "\nJohn put\n")
    from treedec.depgraph import WordTree
    short = WordTree(("John", "put"), (2, 0), ("nsubj", "root"))
    (tmp_path / "tgt.conllu").write_text(format_conllu([EXAMPLE1_TREE, short]))


def test_oracle_and_reproducibility(tmp_path, capsys):
    _write_example(tmp_path)
    args = ["oracle", "--src", str(tmp_path / "src.txt"), "--tgt", str(tmp_path / "tgt.txt"),
            "--conllu", str(tmp_path / "tgt.conllu")]
    assert main(args + ["-o", str(tmp_path / "a" / "seq.txt")]) == EXIT_OK
    assert main(args + ["-o", str(tmp_path / "b" / "seq.txt")]) == EXIT_OK
    a = (tmp_path / "a" / "seq.txt").read_text()
    assert a.splitlines() == [EXAMPLE1_SEQUENCE, "John put LA:nsubj"]
    assert a == (tmp_path / "b" / "seq.txt").read_text()
    assert json.loads(capsys.readouterr().err.splitlines()[-1])["kept"] == 2


def test_data_directory_env(tmp_path, monkeypatch):
    (tmp_path / "seq.txt").write_text(EXAMPLE1_SEQUENCE + "\n")
    monkeypatch.setenv("TREEDEC_DATA", str(tmp_path))
    monkeypatch.chdir(tmp_path.parent)
    assert main(["execute", "seq.txt", "-o", str(tmp_path / "o.conllu")]) == EXIT_OK


def test_train_and_translate(tmp_path, capsys):
    _write_example(tmp_path)
    run = tmp_path / "run"
    rc = main(["train", "--src", str(tmp_path / "src.txt"), "--tgt", str(tmp_path / "tgt.txt"),
               "--conllu", str(tmp_path / "tgt.conllu"), "--variant", "gcn", "--out", str(run),
               "--d_model", "16", "--n_heads", "2", "--ffn_dim", "32", "--n_enc_blocks", "1", "--n_dec_blocks", "1",
               "--total_steps", "4", "--warmup_steps", "2", "--batch_size", "2", "--eval_every", "2"])
    assert rc == EXIT_OK
    manifest = json.loads((run / "manifest.json").read_text())
    assert manifest["config"]["model"]["variant"] == "gcn" and manifest["config"]["train"]["total_steps"] == 4
    assert len((run / "metrics.jsonl").read_text().splitlines()) >= 2
    rc = main(["translate", "--checkpoint", str(run / "best.ckpt"), "--input", str(tmp_path / "src.txt"),
               "-o", str(tmp_path / "hyp.txt"), "--beam", "2", "--strict",
               "--conllu-output", str(tmp_path / "hyp.conllu"), "--transitions-output", str(tmp_path / "hyp.seq")])
    assert rc == EXIT_OK
    hyps = (tmp_path / "hyp.txt").read_text().splitlines()
    assert len(hyps) == 2
    assert len(read_conllu(tmp_path / "hyp.conllu")) == 2
    assert main(["train", "--src", str(tmp_path / "src.txt"), "--tgt", str(tmp_path / "tgt.txt"),
                 "--conllu", str(tmp_path / "tgt.conllu"), "--out", str(run), "--bogus", "1"]) == EXIT_USAGE


def test_synth_writes_corpus(tmp_path):
    assert main(["synth", "--out", str(tmp_path), "--size", "20", "--seed", "4"]) == EXIT_OK
    assert len((tmp_path / "src.txt").read_text().splitlines()) == 20
    assert json.loads((tmp_path / "manifest.json").read_text())["seed"] == 4
