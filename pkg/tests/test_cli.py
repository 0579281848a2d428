import re
import shutil

import pytest

from hiertrack import cli
from hiertrack.ingest import read_tracks, save_config
from hiertrack.model import EngineConfig, validate_trackset
from hiertrack.rounding import FlowConstraintError
from hiertrack.scorer import load_weights


def _run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_eval_identical_files(capsys, tiny_dir):
    code, out, _ = _run(capsys, "eval", tiny_dir / "gt.txt", tiny_dir / "gt.txt")
    assert code == 0
    assert re.search(r"^HOTA\s+100\.00$", out, re.M)


def test_eval_kv_format(capsys, tiny_dir):
    code, out, _ = _run(capsys, "eval", tiny_dir / "gt.txt", tiny_dir / "gt.txt", "--format", "kv")
    assert code == 0 and "HOTA=100.000000" in out.splitlines()


def test_track_writes_valid_tracks(capsys, tiny_dir, tmp_path):
    out_file = tmp_path / "t.txt"
    code, out, err = _run(capsys, "track", "--sequence", tiny_dir, "--levels", "4", "--out", out_file)
    assert code == 0, err
    assert "prior logistic scorer" in err
    ts = read_tracks(out_file)
    assert validate_trackset(ts) == []
    assert out.startswith(f"tracks={len(ts)} ")
    code, out, _ = _run(capsys, "eval", out_file, tiny_dir / "gt.txt")
    hota = float(re.search(r"^HOTA\s+([\d.]+)$", out, re.M).group(1))
    assert hota > 90.0


def test_track_from_explicit_files(capsys, tiny_dir, tmp_path):
    code, _, err = _run(capsys, "track", "--det", tiny_dir / "det.txt", "--features", tiny_dir / "features.tsv",
                        "--homography", tiny_dir / "homography.csv", "--out", tmp_path / "t.txt")
    assert code == 0, err


def test_missing_feature_file(capsys, tiny_dir, tmp_path):
    missing = tmp_path / "absent.tsv"
    code, _, err = _run(capsys, "track", "--det", tiny_dir / "det.txt", "--features", missing,
                        "--out", tmp_path / "t.txt")
    assert code == 1 and str(missing) in err


def test_malformed_detection_file(capsys, tiny_dir, tmp_path):
    seq = tmp_path / "seq"
    shutil.copytree(tiny_dir, seq)
    (seq / "det.txt").write_text("1,-1,10,20,-3,60,0.9\n")
    code, _, err = _run(capsys, "track", "--sequence", seq, "--out", tmp_path / "t.txt")
    assert code == 1 and "negative extent at line 1" in err


def test_missing_inputs_is_usage_error(capsys, tmp_path):
    code, _, err = _run(capsys, "track", "--det", "x.txt", "--out", tmp_path / "t.txt")
    assert code == 1 and "--features" in err


def test_internal_failure_exits_two(capsys, tiny_dir, tmp_path, monkeypatch):
    def broken(*a, **k):
        raise FlowConstraintError("node 3 has two successors")

    monkeypatch.setattr(cli, "run_hierarchy", broken)
    code, _, err = _run(capsys, "track", "--sequence", tiny_dir, "--out", tmp_path / "t.txt")
    assert code == 2 and "two successors" in err


def test_mpn_without_weights_is_rejected(capsys, tiny_dir, tmp_path):
    code, _, err = _run(capsys, "track", "--sequence", tiny_dir, "--scorer", "mpn", "--out", tmp_path / "t.txt")
    assert code == 1 and "weights" in err


def test_flags_override_config_file(capsys, tiny_dir, tmp_path):
    save_config(EngineConfig(levels=2), tmp_path / "c.json")
    dump = tmp_path / "dump"
    code, _, _ = _run(capsys, "track", "--sequence", tiny_dir, "--config", tmp_path / "c.json",
                      "--levels", "3", "--debug-graphs", dump, "--out", tmp_path / "t.txt")
    assert code == 0
    levels = {int(p.stem.split("level")[1]) for p in dump.iterdir()}
    assert levels == {1, 2, 3}
    shutil.rmtree(dump)
    _run(capsys, "track", "--sequence", tiny_dir, "--config", tmp_path / "c.json",
         "--debug-graphs", dump, "--out", tmp_path / "t.txt")
    assert {int(p.stem.split("level")[1]) for p in dump.iterdir()} == {1, 2}


def test_gap_table(capsys, tiny_dir):
    code, out, _ = _run(capsys, "gap", "--sequence", tiny_dir, "--steps", "1,5,10,30")
    assert code == 0
    lines = out.splitlines()
    assert lines[0].split() == ["step", "accuracy", "queries"]
    assert [ln.split()[0] for ln in lines[1:]] == ["1", "5", "10", "30"]
    assert float(lines[1].split()[1]) == 100.0


def test_gap_rejects_negative_step(capsys, tiny_dir):
    code, _, err = _run(capsys, "gap", "--sequence", tiny_dir, "--steps", "1,-2")
    assert code == 1 and "non-negative" in err


def test_synth_is_deterministic(capsys, tmp_path):
    for name in ("a", "b"):
        code, out, _ = _run(capsys, "synth", "--preset", "tiny", "--seed", "4", "--out", tmp_path / name)
        assert code == 0 and "identities=2" in out
    for p in (tmp_path / "a").iterdir():
        assert p.read_bytes() == (tmp_path / "b" / p.name).read_bytes()


def test_synth_unknown_preset(capsys, tmp_path):
    code, _, err = _run(capsys, "synth", "--preset", "curling", "--out", tmp_path / "x")
    assert code == 1 and "unknown preset" in err


def test_train_then_track(capsys, tiny_dir, tmp_path):
    weights = tmp_path / "w.json"
    code, out, err = _run(capsys, "train", "--sequence", tiny_dir, "--levels", "3", "--stage-iters", "60",
                          "--epochs", "10", "--lr", "0.05", "--log", tmp_path / "log.tsv", "--out", weights)
    assert code == 0, err
    acc = float(re.search(r"edge_accuracy=([\d.]+)", out).group(1))
    assert acc >= 99.0
    assert load_weights(weights).levels == 3
    assert (tmp_path / "log.tsv").read_text().startswith("iteration\tstage\tloss")
    code, _, err = _run(capsys, "track", "--sequence", tiny_dir, "--levels", "3", "--weights", weights,
                        "--out", tmp_path / "t.txt")
    assert code == 0, err


def test_weights_level_mismatch(capsys, tiny_dir, tmp_path):
    weights = tmp_path / "w.json"
    _run(capsys, "train", "--sequence", tiny_dir, "--levels", "2", "--stage-iters", "5", "--epochs", "1",
         "--out", weights)
    code, _, err = _run(capsys, "track", "--sequence", tiny_dir, "--levels", "4", "--weights", weights,
                        "--out", tmp_path / "t.txt")
    assert code == 1 and "levels" in err


def test_version(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["--version"])
    assert exc.value.code == 0
    assert capsys.readouterr().out.startswith("hiertrack ")
