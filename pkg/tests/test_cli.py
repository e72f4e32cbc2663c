import csv
import json

import numpy as np
import pytest

from phast import harness as H
from phast.cli import main
from phast.data import read_dataset, write_dataset

TINY_GEN = dict(seed=5, n_train=10, n_val=4)
SMALL = dict(hidden=16, layers=2, rbf_count=8)


@pytest.fixture(scope="module")
def raw(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "g.json").write_text(json.dumps(TINY_GEN))
    assert main(["generate", "--config", str(root / "g.json"), "--out", str(root / "raw")]) == 0
    return root


def experiment(path, data_dir, **kw):
    cfg = {"backbone": SMALL, "epochs": 2, "batch_size": 5, "data": {"path": str(data_dir)}} | kw
    path.write_text(json.dumps(cfg))
    return path


def test_generate_writes_all_splits(raw):
    ds = read_dataset(raw / "raw")
    assert len(ds["train"]) == 10
    assert all(len(ds[s]) == 4 for s in ("val_id", "val_ood_ads", "val_ood_cat", "val_ood_both"))
    assert json.loads((raw / "raw" / "generator.json").read_text())["seed"] == 5


def test_generate_seed_override(raw, tmp_path):
    assert main(["generate", "--config", str(raw / "g.json"), "--seed", "6", "--out", str(tmp_path / "d")]) == 0
    a, b = read_dataset(raw / "raw")["train"][0], read_dataset(tmp_path / "d")["train"][0]
    assert not np.array_equal(a.positions, b.positions)


def test_preprocess_stats(raw):
    out = raw / "rw"
    assert main(["preprocess", "--strategy", "remove-tag0", "--in", str(raw / "raw"), "--out", str(out),
                 "--stats", str(raw / "stats.csv")]) == 0
    rows = list(csv.DictReader(open(raw / "stats.csv")))
    assert len(rows) == 10 + 4 * 4
    for r in rows:
        assert int(r["nodes_after"]) <= int(r["nodes_before"])
        assert int(r["edges_after"]) <= int(r["edges_before"])
    ds = read_dataset(out)
    assert all((s.tags > 0).all() for s in ds["train"])
    assert (out / "train.graphs.npz").exists()


def test_train_eval_bench_flow(raw, tmp_path, capsys):
    cfg = experiment(tmp_path / "e.json", raw / "raw", rewire="remove_tag0")
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "run")]) == 0
    for name in ("best.ckpt", "last.ckpt", "report.json", "metrics.json"):
        assert (tmp_path / "run" / name).exists()
    ckpt = str(tmp_path / "run" / "best.ckpt")
    capsys.readouterr()
    assert main(["eval", "--ckpt", ckpt, "--splits", "all", "--out", str(tmp_path / "base.json")]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 5 and lines[-1].startswith("average E-MAE")
    assert main(["eval", "--ckpt", ckpt, "--splits", "val_id,val_ood_cat",
                 "--baseline", str(tmp_path / "base.json"), "--out", str(tmp_path / "r.json")]) == 0
    rep = H.RunReport.read(tmp_path / "r.json")
    assert set(rep.metrics) == {"val_id", "val_ood_cat"}
    assert main(["bench", "--ckpt", ckpt, "--split", "val_id", "--repeats", "2"]) == 0
    res = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert res["n_samples"] == 4 and res["peak_memory_proxy"] == 0


def test_ablate_flow(raw, tmp_path):
    grid = {"base": {"backbone": SMALL, "epochs": 1, "batch_size": 5, "data": {"path": str(raw / "raw")}},
            "axes": {"rewire": ["none", "remove_tag0"], "energy_head": ["global_sum", "w_final"]}}
    (tmp_path / "grid.json").write_text(json.dumps(grid))
    assert main(["ablate", "--grid", str(tmp_path / "grid.json"), "--out", str(tmp_path / "t.csv")]) == 0
    rows = list(csv.DictReader(open(tmp_path / "t.csv")))
    assert len(rows) == 4 and not any(r["error"] for r in rows)


@pytest.mark.parametrize("argv", [
    ["train", "--config", "{missing}", "--out", "{tmp}/o"],
    ["train", "--config", "{bad}", "--out", "{tmp}/o"],
    ["preprocess", "--strategy", "drop-everything", "--in", "{tmp}", "--out", "{tmp}/o"],
    ["eval", "--ckpt", "{tmp}/none.ckpt"],
])
def test_config_errors_exit_2(argv, tmp_path):
    (tmp_path / "bad.json").write_text(json.dumps({"task": "is2re", "heads": {"force_head": "direct"}}))
    subs = {"{missing}": str(tmp_path / "nope.json"), "{bad}": str(tmp_path / "bad.json"), "{tmp}": str(tmp_path)}
    args = []
    for a in argv:
        for k, v in subs.items():
            a = a.replace(k, v)
        args.append(a)
    assert main(args) == 2


def test_unknown_split_exit_2(raw, tmp_path):
    cfg = experiment(tmp_path / "e.json", raw / "raw", epochs=1)
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "run")]) == 0
    assert main(["eval", "--ckpt", str(tmp_path / "run" / "best.ckpt"), "--splits", "val_mars"]) == 2


def test_divergence_exit_3(raw, tmp_path):
    ds = read_dataset(raw / "raw")
    ds["train"][0] = ds["train"][0].replace(energy=float("inf"))
    write_dataset(ds, tmp_path / "d")
    cfg = experiment(tmp_path / "e.json", tmp_path / "d", epochs=1)
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "run")]) == 3
