"""Command line entry point: ``blissgnn {train,bench-variance,inspect-dataset,export-plots}``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import harness
from .graph import load_dataset


def _train(args):
    cfg = harness.load_config(args.config, "train")
    out = args.out
    if out is None and cfg.out_dir is None:
        out = Path(args.config).with_suffix("")
        out = out.parent / f"{out.name}_run"
    result = harness.run_experiment(cfg, out_dir=out)
    s = result.summary
    print(f"{s['dataset']} {s['arch']} {s['sampler']}: test f1 {s['test_f1_mean']:.4f} "
          f"± {s['test_f1_std']:.4f} over {len(s['seeds'])} seed(s)")
    return 0


def _bench(args):
    cfg = harness.load_config(args.config, "bench")
    out = args.out
    if out is None and cfg.out is None:
        out = Path(args.config).with_suffix(".variance.csv")
    rows = harness.bench_variance(cfg, out_path=out)
    for name, T, v, se in rows:
        print(f"{name:8s} T={T:<6d} variance={v:.6g} ± {se:.2g}")
    return 0


def _inspect(args):
    s = load_dataset(args.dir).summary()
    print(f"nodes: {s['num_nodes']}")
    print(f"edges: {s['num_edges']}")
    print(f"classes: {s['num_classes']}")
    print(f"features: {s['num_features']}")
    print(f"splits: train {s['num_train']}, val {s['num_val']}, test {s['num_test']}")
    return 0


def _export(args):
    path = Path(args.metrics)
    if not path.is_file():
        raise FileNotFoundError(f"metrics file not found: {path}")
    out = Path(args.out) if args.out else path.with_name(path.stem + "_curves.csv")
    table = harness.export_plots(path, out)
    print(f"wrote {len(table)} rows to {out}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="blissgnn", description="Layer-wise sampling for GNN training.")
    sub = p.add_subparsers(dest="command", required=True)
    t = sub.add_parser("train", help="run a training config")
    t.add_argument("--config", required=True)
    t.add_argument("--out", help="output directory (default: config's out_dir or <config>_run)")
    t.set_defaults(func=_train)
    b = sub.add_parser("bench-variance", help="estimator variance per sampler")
    b.add_argument("--config", required=True)
    b.add_argument("--out", help="output CSV")
    b.set_defaults(func=_bench)
    i = sub.add_parser("inspect-dataset", help="print dataset statistics")
    i.add_argument("dir")
    i.set_defaults(func=_inspect)
    e = sub.add_parser("export-plots", help="aggregate metrics into mean/std curves")
    e.add_argument("metrics")
    e.add_argument("--out", help="output CSV (default: <metrics>_curves.csv)")
    e.set_defaults(func=_export)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # one-line diagnostic instead of a traceback
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"blissgnn {args.command}: error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
