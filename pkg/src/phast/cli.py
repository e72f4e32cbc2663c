"""Command-line entry point: ``phast <subcommand> ...``.

Exit codes: 0 success, 2 configuration error, 3 numerical divergence.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from phast import harness
from phast.data import (SPLITS, VAL_SPLITS, DataFormatError, GeneratorConfig, derive_oracle_params,
                        generate_dataset, read_dataset, write_dataset, write_graphs, write_jsonl)
from phast.graph import GraphBuildConfig
from phast.rewiring import RewireStrategy, rewiring_stats

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED = 0, 2, 3

log = logging.getLogger("phast")


def _generate(args):
    cfg = GeneratorConfig.from_json(args.config) if args.config else GeneratorConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    ds = generate_dataset(cfg, derive_oracle_params(elements=cfg.all_elements()))
    write_dataset(ds, args.out)
    Path(args.out, "generator.json").write_text(json.dumps(cfg.to_dict(), indent=2))
    for split, systems in ds.items():
        log.info("%s: %d systems", split, len(systems))


def _preprocess(args):
    strategy = RewireStrategy.parse(args.strategy)
    build = GraphBuildConfig(cutoff=args.cutoff)
    ds = read_dataset(args.inp)
    if not ds:
        raise harness.ConfigError(f"no dataset files under {args.inp}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for split, systems in ds.items():
        pairs = harness.preprocess(systems, strategy, build)
        write_jsonl([p[0] for p in pairs], out / f"{split}.jsonl")
        write_graphs([p[1] for p in pairs], out / f"{split}.graphs.npz")
        if args.stats:
            stats = rewiring_stats(systems, strategy, build)
            rows += [r | {"split": split} for r in stats.per_sample]
            log.info("%s: %.1f%% atoms, %.1f%% edges remain", split,
                     stats.atoms_remaining_pct, stats.edges_remaining_pct)
    if args.stats:
        import csv
        with open(args.stats, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["split", "sample_id", "nodes_before", "nodes_after",
                                               "edges_before", "edges_after"])
            w.writeheader()
            w.writerows(rows)


def _train(args):
    cfg = harness.ExperimentConfig.from_json(args.config)
    _, report = harness.train(cfg, args.out, log=log.info)
    log.info("average E-MAE %.2f meV", report.average_e_mae_mev)


def _splits(arg):
    if arg == "all":
        return VAL_SPLITS
    names = tuple(s.strip() for s in arg.split(","))
    bad = [s for s in names if s not in SPLITS]
    if bad:
        raise harness.ConfigError(f"unknown splits {bad}")
    return names


def _eval(args):
    report = harness.evaluate(args.ckpt, _splits(args.splits), baseline=args.baseline)
    out = Path(args.out) if args.out else Path(args.ckpt).with_name("eval_report.json")
    report.write(out)
    for m in report.metrics.values():
        print(json.dumps(m))
    line = f"average E-MAE {report.average_e_mae_mev:.2f} meV"
    if report.improvement_pct is not None:
        line += f" ({harness.improvement_label(report.improvement_pct)}, {report.improvement_pct:+.2f}%)"
    print(line)


def _bench(args):
    res = harness.bench(args.ckpt, args.split, args.repeats, rewire_strategy=args.rewire)
    print(json.dumps(res))


def _ablate(args):
    base, axes = harness.load_grid(args.grid)
    rows = harness.ablation(base, axes, args.out, args.runs, log=log.info)
    failed = sum(1 for r in rows if r["error"])
    log.info("%d cells, %d failed", len(rows), failed)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="phast", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic dataset")
    g.add_argument("--config", help="generator config JSON")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int)
    g.set_defaults(func=_generate)

    pp = sub.add_parser("preprocess", help="rewire a dataset and store its graphs")
    pp.add_argument("--strategy", required=True)
    pp.add_argument("--in", dest="inp", required=True)
    pp.add_argument("--out", required=True)
    pp.add_argument("--stats", help="per-sample node/edge counts CSV")
    pp.add_argument("--cutoff", type=float, default=6.0)
    pp.set_defaults(func=_preprocess)

    t = sub.add_parser("train", help="train from an experiment config")
    t.add_argument("--config", required=True)
    t.add_argument("--out", required=True)
    t.set_defaults(func=_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--splits", default="all")
    e.add_argument("--baseline", help="report JSON to compare against")
    e.add_argument("--out")
    e.set_defaults(func=_eval)

    b = sub.add_parser("bench", help="time inference")
    b.add_argument("--ckpt", required=True)
    b.add_argument("--split", default="val_id")
    b.add_argument("--repeats", type=int, default=5)
    b.add_argument("--rewire", help="override the checkpoint's rewiring strategy")
    b.set_defaults(func=_bench)

    a = sub.add_parser("ablate", help="run an ablation grid")
    a.add_argument("--grid", required=True)
    a.add_argument("--out", required=True, help="CSV path (a JSON twin is written next to it)")
    a.add_argument("--runs", help="directory for per-cell checkpoints")
    a.set_defaults(func=_ablate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except harness.DivergenceError as exc:
        log.error("diverged: %s", exc)
        return EXIT_DIVERGED
    except (harness.ConfigError, DataFormatError, FileNotFoundError, ValueError, KeyError) as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
