import hashlib
import json
import struct

import numpy as np
import pytest

from dumkit.cli import EXIT_CONFIG, EXIT_DATA, EXIT_FORMAT, main
from dumkit.data import load_csv
from dumkit.scoring import read_scores
from dumkit.trainer import TrainConfig, init_net, load_checkpoint


def digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


@pytest.fixture
def synth_csv(tmp_path):
    out = tmp_path / "synth.csv"
    assert main(["synth", "--out", str(out), "--d", "4", "--n-in", "300", "--n-out", "20", "--seed", "1"]) == 0
    return out


def train_args(data, out, *extra):
    return ["train", "--data", str(data), "--out", str(out), "--epochs", "2", "--batch-size", "32",
            "--hidden", "16", *extra]


def test_zero_epochs_checkpoint_is_init(tmp_path, synth_csv):
    out = tmp_path / "m.ckpt"
    assert main(train_args(synth_csv, out, "--epochs", "0", "--seed", "5")) == 0
    ckpt = load_checkpoint(out)
    ref = init_net(4, TrainConfig(batch_size=32, hidden=16, seed=5))
    for k, p in ref.params.items():
        assert np.array_equal(ckpt.net.params[k].value, p.value)
    assert (tmp_path / "m.ckpt.loss.csv").read_text() == "epoch,loss\n"


def test_same_seed_identical_artifacts(tmp_path, synth_csv):
    a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    assert main(train_args(synth_csv, a, "--seed", "3")) == 0
    assert main(train_args(synth_csv, b, "--seed", "3")) == 0
    assert digest(a) == digest(b)
    man = json.loads((tmp_path / "a.ckpt.manifest.json").read_text())
    assert man["command"] == "train" and man["seed"] == 3
    assert man["inputs"][str(synth_csv)] == digest(synth_csv)
    assert man["artifacts"][str(a)] == digest(a)


def test_missing_input_is_data_error(tmp_path, capsys):
    assert main(train_args(tmp_path / "nope.csv", tmp_path / "m.ckpt")) == EXIT_DATA
    assert "nope.csv" in capsys.readouterr().err


def test_bad_config_exit_code(tmp_path, synth_csv):
    assert main(train_args(synth_csv, tmp_path / "m.ckpt", "--batch-size", "30", "--m", "4")) == EXIT_CONFIG


def test_version_mismatch_exit_code(tmp_path, synth_csv):
    out = tmp_path / "m.ckpt"
    main(train_args(synth_csv, out))
    raw = bytearray(out.read_bytes())
    raw[8:12] = struct.pack("<I", 7)
    out.write_bytes(bytes(raw))
    code = main(["score", "--data", str(synth_csv), "--model", str(out), "--out", str(tmp_path / "s.csv")])
    assert code == EXIT_FORMAT


def test_eval_perfect_separation(tmp_path, capsys):
    p = tmp_path / "s.csv"
    p.write_text("index,score,label\n0,0.1,0\n1,0.2,0\n2,0.3,0\n3,0.8,1\n4,0.9,1\n")
    assert main(["eval", "--scores", str(p), "--out", str(tmp_path / "r.txt")]) == 0
    out = capsys.readouterr().out
    assert "auroc: 1\n" in out
    record = json.loads(out.splitlines()[-1][len("record: "):])
    assert record["auroc"] == 1.0 and record["n_pos"] == 2


def test_eval_needs_labels(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text("index,score\n0,0.1\n1,0.2\n")
    assert main(["eval", "--scores", str(p)]) == EXIT_DATA


def test_corrupt_zero_sigma_is_identity(tmp_path, synth_csv):
    out = tmp_path / "c.csv"
    assert main(["corrupt", "--data", str(synth_csv), "--out", str(out), "--kind", "gaussian", "--sigma", "0"]) == 0
    assert out.read_text() == synth_csv.read_text()


def test_shift_test_same_file(tmp_path, synth_csv, capsys):
    model = tmp_path / "m.ckpt"
    main(train_args(synth_csv, model))
    capsys.readouterr()
    assert main(["shift-test", "--clean", str(synth_csv), "--suspect", str(synth_csv), "--model", str(model)]) == 0
    rec = json.loads(capsys.readouterr().out.splitlines()[-1][len("record: "):])
    assert rec["t_statistic"] == 0.0 and rec["p_value"] == 1.0 and not rec["shift_detected"]


def test_split_and_baseline(tmp_path, synth_csv):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["split", "--data", str(synth_csv), "--out", str(a), "--out2", str(b), "--frac", "0.25"]) == 0
    assert load_csv(a, "label").n + load_csv(b, "label").n == 320
    s = tmp_path / "knn.csv"
    assert main(["baseline", "--data", str(synth_csv), "--out", str(s), "--method", "iforest", "--trees", "5"]) == 0
    assert len(read_scores(s)) == 320


def test_prepare_with_recipe(tmp_path):
    raw = tmp_path / "raw"
    raw.mkdir()
    (raw / "wdbc.data").write_text("1,M,1.5,2\n2,B,3,4\n3,B,5,6\n")
    out = tmp_path / "w.csv"
    assert main(["prepare", "--recipe", "wdbc", "--data-dir", str(raw), "--out", str(out), "--flip"]) == 0
    b = load_csv(out, "label")
    np.testing.assert_array_equal(b.labels, [1, 0, 0])
    assert main(["prepare", "--recipe", "wdbc", "--data-dir", str(tmp_path), "--out", str(out)]) == EXIT_DATA


def test_full_pipeline(tmp_path):
    data = tmp_path / "d.csv"
    main(["synth", "--out", str(data), "--seed", "0"])
    model, scores = tmp_path / "m.ckpt", tmp_path / "s.csv"
    assert main(["train", "--data", str(data), "--out", str(model), "--epochs", "100", "--hidden", "128"]) == 0
    assert main(["score", "--data", str(data), "--model", str(model), "--out", str(scores)]) == 0
    s = read_scores(scores)
    from dumkit.evaluation import auroc
    assert auroc(s.score, s.label) >= 0.9
