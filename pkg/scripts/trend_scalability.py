"""Scalability trend: time one set of weights on the full graph and on the
tag-0-free graph, for each backbone, and report the speed-up ratios.

    python3 scripts/trend_scalability.py --backbones schnet_lite dimelite --repeats 3
"""

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from phast import harness as H
from phast.data import GeneratorConfig, generate_dataset, write_dataset
from phast.models import BackboneConfig, PhastModel

from _args import parse


@dataclass
class ScalabilityConfig:
    out: str = "runs/scalability.json"
    data_dir: str = "runs/data/default"
    backbones: list = field(default_factory=lambda: ["schnet_lite", "dimelite"])
    split: str = "val_id"
    repeats: int = 3
    hidden: int = 32
    rbf_count: int = 16


def main(cfg: ScalabilityConfig):
    data = Path(cfg.data_dir)
    if not (data / "train.jsonl").exists():
        write_dataset(generate_dataset(GeneratorConfig()), data)
    results = {}
    for kind in cfg.backbones:
        exp = replace(H.phast_config(), data=H.DataConfig(path=str(data)),
                      backbone=BackboneConfig(kind, hidden=cfg.hidden, rbf_count=cfg.rbf_count))
        model = PhastModel(exp.model_config, seed=0)
        runs = {rw: H.bench_model(model, exp, cfg.split, cfg.repeats, rewire_strategy=rw)
                for rw in ("none", "remove_tag0")}
        ratio_time = runs["none"]["inference_time_s"] / runs["remove_tag0"]["inference_time_s"]
        ratio_thr = runs["remove_tag0"]["throughput_sps"] / runs["none"]["throughput_sps"]
        results[kind] = {"runs": runs, "inference_time_ratio": ratio_time, "throughput_ratio": ratio_thr}
        print(f"{kind}: inference time x{ratio_time:.2f}, throughput x{ratio_thr:.2f}", flush=True)
    Path(cfg.out).parent.mkdir(parents=True, exist_ok=True)
    Path(cfg.out).write_text(json.dumps({"config": asdict(cfg), "results": results}, indent=2))


if __name__ == "__main__":
    main(parse(ScalabilityConfig, __doc__.splitlines()[0]))
