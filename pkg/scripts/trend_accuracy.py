"""Accuracy trend: baseline (full graph, element embeddings, plain sum) against
the PhAST cell (tag-0 removal, all embeddings, initial-embedding weighting) on
the default synthetic dataset, over several seeds.

    python3 scripts/trend_accuracy.py --out runs/accuracy --seeds 0 1 2
"""

import csv
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from phast import harness as H
from phast.data import GeneratorConfig, generate_dataset, write_dataset
from phast.models import BackboneConfig

from _args import parse


@dataclass
class AccuracyConfig:
    out: str = "runs/accuracy"
    data_dir: str = "runs/data/default"
    seeds: list = field(default_factory=lambda: [0, 1, 2])
    epochs: int = 10
    hidden: int = 32
    rbf_count: int = 16
    backbone: str = "schnet_lite"


def main(cfg: AccuracyConfig):
    data = Path(cfg.data_dir)
    if not (data / "train.jsonl").exists():
        print(f"generating default dataset into {data}")
        write_dataset(generate_dataset(GeneratorConfig()), data)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for seed in cfg.seeds:
        common = dict(data=H.DataConfig(path=str(data)), epochs=cfg.epochs, seed=seed,
                      backbone=BackboneConfig(cfg.backbone, hidden=cfg.hidden, rbf_count=cfg.rbf_count))
        reports = {}
        for name, exp in (("baseline", H.baseline_config(**common)), ("phast", H.phast_config(**common))):
            t0 = time.perf_counter()
            _, reports[name] = H.train(exp, out / f"{name}_seed{seed}")
            print(f"seed {seed} {name}: {reports[name].average_e_mae_mev:.1f} meV "
                  f"({time.perf_counter() - t0:.0f} s)", flush=True)
        base, ph = reports["baseline"], reports["phast"]
        pct = 100.0 * (ph.average_e_mae_mev - base.average_e_mae_mev) / base.average_e_mae_mev
        row = {"seed": seed, "baseline_mev": base.average_e_mae_mev, "phast_mev": ph.average_e_mae_mev,
               "improvement_pct": pct}
        for split in base.metrics:
            row[f"{split}.baseline"] = base.metrics[split]["e_mae_mev"]
            row[f"{split}.phast"] = ph.metrics[split]["e_mae_mev"]
        rows.append(row)
        print(f"seed {seed}: {H.improvement_label(pct)}", flush=True)
    with open(out / "accuracy.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    pcts = [r["improvement_pct"] for r in rows]
    summary = {"config": asdict(cfg), "mean_improvement_pct": float(np.mean(pcts)),
               "phast_wins": sum(p <= 0 for p in pcts), "runs": rows}
    (out / "accuracy.json").write_text(json.dumps(summary, indent=2))
    print(f"mean change {np.mean(pcts):+.2f}%, PhAST better in {summary['phast_wins']}/{len(rows)} seeds")


if __name__ == "__main__":
    main(parse(AccuracyConfig, __doc__.splitlines()[0]))
