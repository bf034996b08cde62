import pytest

from conftest import tiny_config
from multires import harness as hz
from multires.cli import main
from multires.data import read_instances
from multires.harness import dump_config


@pytest.fixture
def synth_dirs(tmp_path):
    raw, inst = tmp_path / "raw", tmp_path / "inst"
    assert main(["synth", "--overlap", "0.0", "--days", "4", "--seed", "1", "--events-per-day", "60",
                 "--out", str(raw)]) == 0
    return raw, inst


def _config_file(tmp_path, inst, **run):
    cfg = tiny_config(tmp_path, **run)
    cfg.data.instances = str(inst)
    path = tmp_path / "desk.toml"
    path.write_text(dump_config(cfg))
    return path


def test_synth_writes_day_files(synth_dirs):
    raw, _ = synth_dirs
    assert sorted(p.name for p in raw.iterdir()) == ["day01.txt", "day02.txt", "day03.txt", "day04.txt"]


def test_prep_writes_instances_and_vocab(synth_dirs, tmp_path, capsys):
    raw, inst = synth_dirs
    fixes = tmp_path / "fixes.tsv"
    fixes.write_text("# none needed\n")
    assert main(["prep", "--in", str(raw), "--out", str(inst), "--corrections", str(fixes),
                 "--n-labels", "8"]) == 0
    out = capsys.readouterr().out
    assert "4 days" in out and "layout 1-pair" in out
    days = read_instances(inst / "day02.tsv")
    assert days and all(i.day_id == 2 and len(i.window) == 16 for i in days)
    assert (inst / "vocab.tsv").read_text().startswith("PAD\t0\n")


def test_train_eval_and_run_all(synth_dirs, tmp_path, capsys):
    raw, inst = synth_dirs
    main(["prep", "--in", str(raw), "--out", str(inst), "--n-labels", "8"])
    cfg = _config_file(tmp_path, inst)
    sep, cls = tmp_path / "sep.ckpt", tmp_path / "cls.ckpt"
    assert main(["train-sep", "--config", str(cfg), "--fold", "2", "--out", str(sep)]) == 0
    assert main(["train-cls", "--config", str(cfg), "--fold", "2", "--scenario", "S2S_Sep",
                 "--sep", str(sep), "--out", str(cls)]) == 0
    capsys.readouterr()
    assert main(["eval", "--config", str(cfg), "--fold", "2", "--sep", str(sep), "--cls", str(cls)]) == 0
    out = capsys.readouterr().out
    assert "separation\tbleu" in out and "S2S_Sep\taccuracy" in out
    assert main(["eval", "--config", str(cfg), "--fold", "1", "--cls", str(cls)]) == 4

    reports = tmp_path / "out"
    assert main(["run-all", "--config", str(cfg), "--seed", "7", "--folds", "1", "--out", str(reports)]) == 0
    assert hz.load_config(reports / "config.ini").seed == 7
    capsys.readouterr()
    assert main(["report", "--dir", str(reports)]) == 0
    assert "BiGRU+Q2L" in capsys.readouterr().out


@pytest.mark.parametrize("argv, code", [
    (["prep", "--in", "/nonexistent", "--out", "x"], 3),
    (["run-all", "--config", "/nonexistent.toml"], 3),
    (["report", "--dir", "/nonexistent"], 3),
    (["train-sep", "--fold"], 2),
    (["frobnicate"], 2),
])
def test_exit_codes(argv, code, capsys):
    if code == 2:
        with pytest.raises(SystemExit) as exc:
            main(argv)
        assert exc.value.code == 2
    else:
        assert main(argv) == code
    assert capsys.readouterr().err.strip()


def test_config_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text("[training]\nsep_lr = fast\n")
    assert main(["run-all", "--config", str(bad)]) == 4
    assert capsys.readouterr().err.startswith("config error")


def test_data_error_exit_code(tmp_path, capsys):
    raw = tmp_path / "raw"
    raw.mkdir()
    (raw / "day01.txt").write_text("".join(f"2008-11-10 10:00:0{i} M01 ON {i + 1} 1\n" for i in range(3)))
    assert main(["prep", "--in", str(raw), "--out", str(tmp_path / "inst")]) == 5
    assert "more than two residents" in capsys.readouterr().err


def test_divergence_exit_code(synth_dirs, tmp_path, monkeypatch):
    raw, inst = synth_dirs
    main(["prep", "--in", str(raw), "--out", str(inst), "--n-labels", "8"])

    def boom(*a, **k):
        raise hz.DivergenceError("loss became nan at epoch 0")

    monkeypatch.setattr(hz, "train_seq2res", boom)
    assert main(["train-sep", "--config", str(_config_file(tmp_path, inst)), "--out", str(tmp_path / "s")]) == 6
