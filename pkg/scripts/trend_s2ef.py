"""Force-head trend on the structure-to-energy-and-forces task: gradient
forces on the baseline and PhAST models, then direct forces with no extra
loss, the gradient-target loss and the cosine loss.

    python3 scripts/trend_s2ef.py --variants PhAST-FE Direct Grad --seeds 0 1 2
"""

import csv
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from phast import harness as H
from phast.models import BackboneConfig

from _args import parse


@dataclass
class S2EFConfig:
    out: str = "runs/s2ef"
    variants: list = field(default_factory=lambda: ["FE", "PhAST-FE", "Direct", "Grad", "Cos"])
    seeds: list = field(default_factory=lambda: [0, 1, 2])
    n_train: int = 400
    n_val: int = 100
    data_seed: int = 11
    epochs: int = 30
    hidden: int = 32
    rbf_count: int = 16
    ec_weight: float = 0.1


def variant_config(name: str, cfg: S2EFConfig, seed: int) -> H.ExperimentConfig:
    base = H.baseline_config() if name == "FE" else H.phast_config()
    force = "FE" if name in ("FE", "PhAST-FE") else name
    exp = H.with_force_variant(base, force, ec_weight=cfg.ec_weight)
    return replace(exp, seed=seed, epochs=cfg.epochs, name=name,
                   data=H.DataConfig(generator=dict(seed=cfg.data_seed, n_train=cfg.n_train, n_val=cfg.n_val)),
                   backbone=BackboneConfig(hidden=cfg.hidden, rbf_count=cfg.rbf_count))


def main(cfg: S2EFConfig):
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for seed in cfg.seeds:
        for name in cfg.variants:
            run = out / f"{name}_seed{seed}"
            _, rep = H.train(variant_config(name, cfg, seed), run)
            bench = H.bench(run / "best.ckpt", "val_id", repeats=1)
            vi = rep.metrics["val_id"]
            rows.append({"variant": name, "seed": seed, "avg_e_mae_mev": rep.average_e_mae_mev,
                         "val_id_f_mae": vi["f_mae_mev_per_A"], "val_id_ec_dist": vi["ec_dist"],
                         "val_id_ec_cos": vi["ec_cos"], "peak_tape_nodes": bench["peak_memory_proxy"],
                         "throughput_sps": bench["throughput_sps"]})
            print(json.dumps(rows[-1]), flush=True)
    with open(out / "s2ef.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    (out / "s2ef.json").write_text(json.dumps({"config": asdict(cfg), "runs": rows}, indent=2))


if __name__ == "__main__":
    main(parse(S2EFConfig, __doc__.splitlines()[0]))
