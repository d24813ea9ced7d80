import csv
import io
import json

import numpy as np
import pytest

from cmalab import averaging, cli
from cmalab.schedules import wsd, eta_at


def run(*argv):
    return cli.main([str(a) for a in argv])


def test_help_lists_commands(capsys):
    with pytest.raises(SystemExit):
        run("--help")
    out = capsys.readouterr().out
    for name in ("schedule", "order", "average", "sim", "train", "sweep", "accept"):
        assert name in out


def test_schedule_eval(tmp_path):
    out = tmp_path / "s.csv"
    run("schedule", "eval", "--shape", "wsd_one_sqrt", "--peak-lr", 3e-3, "--end-lr", 1e-5,
        "--total-steps", 100, "--decay-fraction", 0.2, "--out", out)
    rows = list(csv.reader(io.StringIO(out.read_text())))
    assert rows[0] == ["t", "lr"] and len(rows) == 102
    ref = wsd(3e-3, 1e-5, 100, 0.2)
    assert [float(r[1]) for r in rows[1:]] == [eta_at(ref, t) for t in range(101)]


def test_schedule_eval_from_json(tmp_path, capsys):
    (tmp_path / "s.json").write_text(wsd(1.0, 0.1, 10).to_json())
    run("schedule", "eval", "--json", tmp_path / "s.json")
    assert capsys.readouterr().out.splitlines()[-1] == "10,0.1"


def test_order(tmp_path):
    (tmp_path / "s.csv").write_text("0,3\n1,1\n2,2\n")
    run("order", "--scores", tmp_path / "s.csv", "--policy", "ascend", "--out", tmp_path / "p.txt")
    assert (tmp_path / "p.txt").read_text() == "1\n2\n0\n"


def test_average(tmp_path):
    rng = np.random.default_rng(0)
    cks = rng.standard_normal((8, 5))
    paths = []
    for i, c in enumerate(cks):
        p = tmp_path / f"c{i}.bin"
        averaging.save_checkpoint(p, c, 100 * (i + 1))
        paths.append(p)
    run("average", *reversed(paths), "--strategy", "ema", "--alpha", 0.2, "--window", 6, "--out", tmp_path / "avg.bin")
    got, step = averaging.load_checkpoint(tmp_path / "avg.bin")
    assert step == 800
    assert np.array_equal(got, averaging.average(list(cks[-6:]), averaging.EMA(0.2)))
    run("average", *paths, "--strategy", "wma", "--out", tmp_path / "w.bin")
    got, _ = averaging.load_checkpoint(tmp_path / "w.bin")
    assert np.allclose(got, averaging.average(list(cks[-6:]), averaging.wma_from_schedule()))


def test_sim_theory(tmp_path):
    run("sim", "theory", "--strategy", "ascend_wsmd", "--M", 100, "--runs", 4, "--seed", 1,
        "--out", tmp_path / "l.csv", "--trajectory", tmp_path / "t.csv")
    losses = list(csv.DictReader(io.StringIO((tmp_path / "l.csv").read_text())))
    assert [r["run"] for r in losses] == ["0", "1", "2", "3"]
    traj = list(csv.DictReader(io.StringIO((tmp_path / "t.csv").read_text())))
    assert len(traj) == 101 and traj[0]["w1"] == "1.0" and traj[0]["lr"] == ""
    assert float(traj[-1]["lr"]) == pytest.approx(1 / 22)


def test_train_toy(tmp_path):
    cfg = {"task": {"dim": 4, "n_train": 800, "n_val": 50, "seed": 0},
           "train": {"batch_size": 8, "order": "ascend", "checkpoint_interval": 5,
                     "schedule": {"peak_lr": 0.05}, "averaging": {"kind": "ema", "alpha": 0.2}}}
    (tmp_path / "c.json").write_text(json.dumps(cfg))
    run("train", "toy", "--config", tmp_path / "c.json", "--out", tmp_path / "r.csv",
        "--checkpoint-dir", tmp_path / "ck")
    rows = list(csv.DictReader(io.StringIO((tmp_path / "r.csv").read_text())))
    assert len(rows) == 100 and rows[-1]["val_loss"] != ""
    assert len(list((tmp_path / "ck").glob("*.bin"))) == 6


def test_sweep_exit_status(tmp_path):
    good = {"name": "g", "grid": {"order": ["ascend"]}, "seeds": [0],
            "base": {"n_train": 600, "dim": 3, "checkpoint_interval": 2}}
    (tmp_path / "g.json").write_text(json.dumps(good))
    assert run("sweep", "--spec", tmp_path / "g.json", "--workers", 1, "--output-dir", tmp_path / "o") == 0
    bad = dict(good, name="b", grid={"order": ["nope"]})
    (tmp_path / "b.json").write_text(json.dumps(bad))
    assert run("sweep", "--spec", tmp_path / "b.json", "--workers", 1, "--output-dir", tmp_path / "o") == 1


def test_accept_subset(capsys):
    assert run("accept", "--only", 1, 2) == 0
    out = capsys.readouterr().out
    assert "[PASS] 1." in out and "2/2 criteria passed" in out
