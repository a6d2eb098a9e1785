import importlib.util
import json
import pickle
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest
import scipy.sparse as sp

from blissgnn.cli import main
from blissgnn.graph import load_dataset, save_dataset, synthetic_skewed

ROOT = Path(__file__).resolve().parents[1]

SYNTH = {"synthetic_skewed": {"num_nodes": 40, "avg_degree": 4, "norm_skew": 1.0, "seed": 1}}


def write_json(path, obj):
    path.write_text(json.dumps(obj))
    return path


def test_train_writes_outputs(tmp_path, capsys):
    cfg = write_json(tmp_path / "run.json", {"dataset": SYNTH, "steps": 2, "hidden_dim": 4,
                                             "fanouts": [10, 5], "batch_size": 4, "seeds": [0, 1]})
    assert main(["train", "--config", str(cfg)]) == 0
    out = tmp_path / "run_run"
    assert (out / "metrics.csv").is_file() and (out / "summary.json").is_file()
    assert "test f1" in capsys.readouterr().out


def test_train_missing_config(tmp_path, capsys):
    assert main(["train", "--config", str(tmp_path / "absent.json")]) == 1
    err = capsys.readouterr().err
    assert err.startswith("blissgnn train: error:") and "absent.json" in err
    assert "Traceback" not in err


def test_train_bad_field(tmp_path, capsys):
    cfg = write_json(tmp_path / "c.json", {"dataset": SYNTH, "sampler": "FASTGCN"})
    assert main(["train", "--config", str(cfg)]) == 1
    assert "sampler" in capsys.readouterr().err


def test_unknown_subcommand_exits_two():
    with pytest.raises(SystemExit) as exc:
        main(["fly"])
    assert exc.value.code == 2


def test_bench_variance_csv(tmp_path):
    cfg = write_json(tmp_path / "b.json", {"dataset": SYNTH, "fanout": 3, "num_targets": 2,
                                           "rounds": [0, 5], "n_trials": 100})
    assert main(["bench-variance", "--config", str(cfg)]) == 0
    lines = (tmp_path / "b.variance.csv").read_text().splitlines()
    assert lines[0] == "sampler,T,variance,stderr"
    assert [l.split(",")[0] for l in lines[1:]] == ["UNIFORM", "LADIES", "PLADIES", "BLISS", "BLISS"]


def test_inspect_dataset(tmp_path, capsys):
    ds = synthetic_skewed(30, 4, 1.0, 2)
    save_dataset(ds, tmp_path / "d")
    assert main(["inspect-dataset", str(tmp_path / "d")]) == 0
    out = capsys.readouterr().out.splitlines()
    s = ds.summary()
    assert out[0] == f"nodes: {s['num_nodes']}"
    assert out[1] == f"edges: {s['num_edges']}"
    assert out[2] == "classes: 2"


def test_inspect_missing_dir(tmp_path, capsys):
    assert main(["inspect-dataset", str(tmp_path / "nowhere")]) == 1
    assert "inspect-dataset: error" in capsys.readouterr().err


def test_export_plots(tmp_path):
    cfg = write_json(tmp_path / "r.json", {"dataset": SYNTH, "steps": 2, "hidden_dim": 4, "fanouts": [10],
                                           "batch_size": 4, "seeds": [0, 1], "eval_every": 1})
    main(["train", "--config", str(cfg), "--out", str(tmp_path / "o")])
    assert main(["export-plots", str(tmp_path / "o" / "metrics.csv"), "--out", str(tmp_path / "p.csv")]) == 0
    lines = (tmp_path / "p.csv").read_text().splitlines()
    assert lines[0] == "step,split,mean_f1,std_f1,mean_loss,std_loss"
    assert [tuple(l.split(",")[:2]) for l in lines[1:]] == [
        ("1", "train"), ("1", "val"), ("1", "test"), ("2", "train"), ("2", "val"), ("2", "test")]


def test_module_entry_point(tmp_path):
    ds = synthetic_skewed(10, 2, 0.0, 0)
    save_dataset(ds, tmp_path / "d")
    r = subprocess.run([sys.executable, "-m", "blissgnn", "inspect-dataset", str(tmp_path / "d")],
                       capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.startswith("nodes: 10")


def _fake_planetoid(root, name):
    # 6 nodes, 2 classes: 2 training rows, 2 further labelled rows, test nodes 5 and 4
    rng = np.random.default_rng(0)
    f = 3
    allx = sp.csr_matrix(rng.random((4, f)))
    ally = np.eye(2)[[0, 1, 0, 1]]
    tx = sp.csr_matrix(rng.random((2, f)))
    ty = np.eye(2)[[1, 0]]
    parts = {"x": allx[:2], "y": ally[:2], "allx": allx, "ally": ally, "tx": tx, "ty": ty,
             "graph": {0: [1], 1: [0, 2], 2: [1], 3: [4], 4: [3, 5], 5: [4]}}
    root.mkdir()
    for k, v in parts.items():
        with open(root / f"ind.{name}.{k}", "wb") as fh:
            pickle.dump(v, fh)
    (root / f"ind.{name}.test.index").write_text("5\n4\n")
    return allx, tx


def test_convert_planetoid(tmp_path):
    spec = importlib.util.spec_from_file_location("convert_planetoid", ROOT / "scripts" / "convert_planetoid.py")
    mod = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(mod)
    allx, tx = _fake_planetoid(tmp_path / "raw", "cora")
    assert mod.main([str(tmp_path / "raw"), "cora", str(tmp_path / "out")]) == 0
    ds = load_dataset(tmp_path / "out")
    assert ds.num_nodes == 6 and ds.num_classes == 2
    # test rows are stored in index order: node 5 gets the first test row
    np.testing.assert_allclose(ds.features[5], tx.toarray()[0])
    np.testing.assert_allclose(ds.features[4], tx.toarray()[1])
    assert ds.labels.tolist() == [0, 1, 0, 1, 0, 1]
    assert ds.split_nodes("train").tolist() == [0, 1]
    assert ds.split_nodes("test").tolist() == [4, 5]
    assert ds.graph.neighbors(4).tolist() == [3, 4, 5]
