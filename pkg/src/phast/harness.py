"""Training, evaluation, benchmarking and ablation on top of the library.

Everything a run needs is described by an :class:`ExperimentConfig`; a run
is fully determined by it (timings excepted).
"""

from __future__ import annotations

import csv
import itertools
import json
import math
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from phast import __version__
from phast import autodiff as ad
from phast.core import SUPERNODE_Z, make_batch
from phast.data import VAL_SPLITS, GeneratorConfig, generate_dataset, read_dataset, read_graphs
from phast.embeddings import EmbeddingConfig
from phast.graph import GraphBuildConfig, worker_count
from phast.losses import (LossWeights, combined_loss, mae_improvement, metric_ec_cos, metric_ec_dist,
                          metric_force_mae, metric_mae)
from phast.models import BackboneConfig, HeadConfig, ModelConfig, PhastModel, load_checkpoint, save_checkpoint
from phast.rewiring import RewireStrategy, rewire

TASKS = ("is2re", "s2ef")
EC_MODES = ("stop_gradient", "exact")


class ConfigError(ValueError):
    """Invalid experiment configuration (CLI exit code 2)."""


class DivergenceError(RuntimeError):
    """Non-finite loss during training (CLI exit code 3)."""


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str = "adam"
    lr: float = 1e-3
    betas: tuple = (0.9, 0.999)
    weight_decay: float = 0.0
    lr_min: float = 1e-5  # end point of the cosine decay
    adam_eps: float = 1e-8

    def __post_init__(self):
        object.__setattr__(self, "betas", tuple(self.betas))
        if self.kind != "adam":
            raise ConfigError(f"unsupported optimizer {self.kind!r}")
        if self.lr <= 0 or self.lr_min < 0 or self.lr_min > self.lr:
            raise ConfigError("need 0 <= lr_min <= lr and lr > 0")
        if len(self.betas) != 2 or not all(0 <= b < 1 for b in self.betas):
            raise ConfigError("betas must be two values in [0, 1)")


@dataclass(frozen=True)
class DataConfig:
    """Either a directory of ``{split}.jsonl`` files or a generator config."""

    path: str | None = None
    generator: dict | None = None
    train_limit: int | None = None
    val_limit: int | None = None

    def generator_config(self) -> GeneratorConfig:
        return GeneratorConfig.from_dict(self.generator or {})

    def key(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def _embeddings_from(value) -> EmbeddingConfig:
    if isinstance(value, EmbeddingConfig):
        return value
    if isinstance(value, str):
        return EmbeddingConfig.variant(value)
    d = dict(value)
    name = d.pop("variant", None)
    return EmbeddingConfig.variant(name, **d) if name else EmbeddingConfig(**d)


@dataclass(frozen=True)
class ExperimentConfig:
    task: str = "is2re"
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    rewire: str = "none"
    embeddings: EmbeddingConfig = field(default_factory=EmbeddingConfig)
    heads: HeadConfig = field(default_factory=HeadConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    batch_size: int = 32
    epochs: int = 30
    seed: int = 0
    data: DataConfig = field(default_factory=DataConfig)
    build: GraphBuildConfig = field(default_factory=GraphBuildConfig)
    ec_mode: str = "stop_gradient"
    name: str = ""

    def __post_init__(self):
        try:
            object.__setattr__(self, "rewire", RewireStrategy.parse(self.rewire).value)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}")
        if self.ec_mode not in EC_MODES:
            raise ConfigError(f"unknown ec_mode {self.ec_mode!r}")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("batch_size must be >= 1 and epochs >= 0")
        if self.loss.energy <= 0:
            raise ConfigError("energy loss weight must be positive")
        if self.task == "is2re":
            if self.heads.force_head != "none":
                raise ConfigError("is2re requires force_head = none")
            if self.loss.force or self.loss.ec_weight:
                raise ConfigError("is2re requires zero force and EC loss weights")
        else:
            if self.heads.force_head == "none":
                raise ConfigError("s2ef requires a force head")
            if self.loss.ec_weight and self.heads.force_head != "direct":
                raise ConfigError("EC losses need a direct force head")
        if abs(self.build.cutoff - self.backbone.cutoff) > 1e-12:
            raise ConfigError("graph cutoff and backbone cutoff differ")

    @property
    def model_config(self) -> ModelConfig:
        return ModelConfig(self.backbone, self.heads, self.embeddings)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        try:
            kw = {}
            for key in ("task", "rewire", "batch_size", "epochs", "seed", "ec_mode", "name"):
                if key in d:
                    kw[key] = d.pop(key)
            if "backbone" in d:
                kw["backbone"] = BackboneConfig(**d.pop("backbone"))
            if "embeddings" in d:
                kw["embeddings"] = _embeddings_from(d.pop("embeddings"))
            if "heads" in d:
                kw["heads"] = HeadConfig(**d.pop("heads"))
            if "loss" in d:
                kw["loss"] = LossWeights(**d.pop("loss"))
            if "optimizer" in d:
                kw["optimizer"] = OptimizerConfig(**d.pop("optimizer"))
            if "data" in d:
                kw["data"] = DataConfig(**d.pop("data"))
            if "build" in d:
                kw["build"] = GraphBuildConfig(**d.pop("build"))
            if d:
                raise ConfigError(f"unknown config keys {sorted(d)}")
            if "build" not in kw and "backbone" in kw:
                kw["build"] = GraphBuildConfig(cutoff=kw["backbone"].cutoff)
            return cls(**kw)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                return cls.from_dict(json.load(fh))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None


def baseline_config(**overrides) -> ExperimentConfig:
    """none + element embedding only + global sum."""
    return replace(ExperimentConfig(), **overrides)


def phast_config(**overrides) -> ExperimentConfig:
    """remove_tag0 + all embeddings + w_init."""
    base = ExperimentConfig(rewire="remove_tag0", embeddings=EmbeddingConfig.variant("all"),
                            heads=HeadConfig("w_init"))
    return replace(base, **overrides)


FORCE_VARIANTS = {
    "FE": dict(force_head="from_energy", ec_kind="none"),
    "Direct": dict(force_head="direct", ec_kind="none"),
    "Grad": dict(force_head="direct", ec_kind="grad_target"),
    "Cos": dict(force_head="direct", ec_kind="cosine"),
}


def with_force_variant(config: ExperimentConfig, variant: str, force_weight: float = 1.0,
                       ec_weight: float = 0.1) -> ExperimentConfig:
    """S2EF version of ``config`` with one of the FE/Direct/Grad/Cos heads."""
    if variant not in FORCE_VARIANTS:
        raise ConfigError(f"unknown force variant {variant!r}")
    v = FORCE_VARIANTS[variant]
    loss = replace(config.loss, force=force_weight, ec_kind=v["ec_kind"],
                   ec=ec_weight if v["ec_kind"] != "none" else 0.0)
    return replace(config, task="s2ef", heads=replace(config.heads, force_head=v["force_head"]), loss=loss)


# ---------------------------------------------------------------------------
# data and preprocessing (cached in-process)

_DATASETS: dict[str, dict] = {}
_PREPROCESSED: dict[tuple, list] = {}


def clear_caches() -> None:
    _DATASETS.clear()
    _PREPROCESSED.clear()


def load_dataset(data: DataConfig) -> dict:
    key = data.key()
    if key not in _DATASETS:
        if data.path:
            ds = read_dataset(data.path)
            if not ds:
                raise ConfigError(f"no dataset files under {data.path}")
        else:
            ds = generate_dataset(data.generator_config())
        if data.train_limit is not None and "train" in ds:
            ds["train"] = ds["train"][:data.train_limit]
        if data.val_limit is not None:
            for s in VAL_SPLITS:
                if s in ds:
                    ds[s] = ds[s][:data.val_limit]
        _DATASETS[key] = ds
    return _DATASETS[key]


def preprocess(systems, strategy, build: GraphBuildConfig, workers: int | None = None) -> list:
    """``[(system, graph)]`` after rewiring, in input order."""
    workers = worker_count() if workers is None else workers
    fn = lambda s: rewire(s, strategy, build)  # noqa: E731
    if workers <= 1 or len(systems) < 2:
        return [fn(s) for s in systems]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, systems))


def _stored_graphs(data: DataConfig, split: str):
    if not data.path:
        return None
    p = Path(data.path) / f"{split}.graphs.npz"
    return read_graphs(p) if p.exists() else None


def prepared_split(config: ExperimentConfig, split: str) -> list:
    data = config.data
    key = (data.key(), split, config.rewire, config.build)
    if key not in _PREPROCESSED:
        ds = load_dataset(data)
        if split not in ds:
            raise ConfigError(f"split {split!r} not available")
        systems = ds[split]
        stored = _stored_graphs(data, split) if config.rewire == "none" else None
        if stored is not None and len(stored) >= len(systems):
            pairs = list(zip(systems, stored[:len(systems)]))
        else:
            pairs = preprocess(systems, config.rewire, config.build)
        _PREPROCESSED[key] = pairs
    return _PREPROCESSED[key]


def batches(pairs, batch_size: int, order=None):
    order = range(len(pairs)) if order is None else order
    order = list(order)
    for start in range(0, len(order), batch_size):
        chunk = [pairs[i] for i in order[start:start + batch_size]]
        yield make_batch([p[0] for p in chunk], [p[1] for p in chunk])


def _energies(batch):
    return np.array([s.energy for s in batch.systems], dtype=np.float64)


def _forces(batch):
    return np.concatenate([s.forces for s in batch.systems])


def _force_mask(batch):
    return batch.atomic_numbers < SUPERNODE_Z


# ---------------------------------------------------------------------------
# optimisation


class Adam:
    def __init__(self, params: dict, config: OptimizerConfig, total_steps: int):
        self.params = params
        self.config = config
        self.total = max(total_steps, 1)
        self.t = 0
        self.m = {k: np.zeros_like(p.value) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.value) for k, p in params.items()}

    def lr(self) -> float:
        c = self.config
        frac = min(self.t / self.total, 1.0)
        return c.lr_min + 0.5 * (c.lr - c.lr_min) * (1.0 + math.cos(math.pi * frac))

    def step(self) -> None:
        c = self.config
        b1, b2 = c.betas
        lr = self.lr()
        self.t += 1
        for k, p in self.params.items():
            g = p.grad
            if c.weight_decay:
                g = g + c.weight_decay * p.value
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            mhat = self.m[k] / (1 - b1 ** self.t)
            vhat = self.v[k] / (1 - b2 ** self.t)
            p.value = p.value - lr * mhat / (np.sqrt(vhat) + c.adam_eps)


def hvp_param_grads(model: PhastModel, batch, direction: np.ndarray, max_step: float = 1e-4) -> dict:
    """``d/dtheta (direction . dE/dx)`` by central differences of parameter
    gradients along ``direction`` in position space.

    This stands in for second-order reverse mode, which the tape does not
    provide. The step is scaled so no atom moves by more than ``max_step``.
    """
    scale = float(np.abs(direction).max()) if direction.size else 0.0
    if scale == 0.0:
        return {k: np.zeros_like(p.value) for k, p in model.params.items()}
    eps = max_step / scale
    out = []
    for sign in (1.0, -1.0):
        saved = {k: p.grad for k, p in model.params.items()}
        model.zero_grad()
        with ad.Tape() as tape:
            e = model.forward(batch, ad.Tensor(batch.positions + sign * eps * direction)).energy
            total = ad.sum_all(e)
        tape.backward(total)
        out.append({k: p.grad for k, p in model.params.items()})
        for k, p in model.params.items():
            p.grad = saved[k]
    return {k: (out[0][k] - out[1][k]) / (2 * eps) for k in out[0]}


def train_step(model: PhastModel, batch, config: ExperimentConfig) -> dict:
    """One gradient evaluation; parameter gradients end up in ``p.grad``."""
    w = config.loss
    head = config.heads.force_head
    y = _energies(batch)
    model.zero_grad()
    if config.task == "is2re":
        with ad.Tape() as tape:
            out = model.forward(batch)
            total, terms = combined_loss(w, out.energy, y)
            tape.backward(total)
        return {k: float(v.value) for k, v in terms.items()} | {"total": float(total.value)}

    F = _forces(batch)
    mask = _force_mask(batch)
    need_grad = head == "from_energy" or (w.ec_weight > 0 and w.ec_kind == "grad_target")
    hvp_dir = None
    with ad.Tape() as tape:
        pos = tape.watch(batch.positions)
        out = model.forward(batch, pos)
        egrad = None
        if need_grad:
            egrad = tape.backward(ad.sum_all(out.energy), retain=True, accumulate=False)[pos]
        if head == "from_energy":
            # forces become a leaf; their adjoint is pushed through dE/dx afterwards
            f_leaf = tape.watch(-egrad)
            total, terms = combined_loss(w, out.energy, y, f_leaf, F, mask, egrad)
            grads = tape.backward(total)
            hvp_dir = -grads[f_leaf]
        else:
            total, terms = combined_loss(w, out.energy, y, out.forces, F, mask, egrad)
            tape.backward(total)
            if config.ec_mode == "exact" and "ec" in terms and w.ec_kind == "grad_target":
                diff = out.forces.value + egrad
                diff[~mask] = 0.0
                norm = mask.sum() if w.ec_normalize == "atom" else 1
                hvp_dir = w.ec_weight * 2.0 * diff / norm
    if hvp_dir is not None:
        extra = hvp_param_grads(model, batch, hvp_dir)
        for k, p in model.params.items():
            p.grad = p.grad + extra[k]
    return {k: float(v.value) for k, v in terms.items()} | {"total": float(total.value)}


# ---------------------------------------------------------------------------
# reports


@dataclass
class RunReport:
    metrics: dict  # split -> metrics record
    average_e_mae_mev: float
    improvement_pct: float | None = None
    improvement_per_split: dict | None = None
    inference_time_s: float | None = None
    throughput_sps: float | None = None
    peak_tape_nodes: int | None = None
    config: dict = field(default_factory=dict)
    history: list = field(default_factory=list)
    version: str = __version__

    def to_dict(self) -> dict:
        return asdict(self)

    def metrics_dict(self) -> dict:
        """Deterministic part of the report (no timings)."""
        return {
            "splits": [self.metrics[s] for s in self.metrics],
            "average_e_mae_mev": self.average_e_mae_mev,
            "improvement_pct": self.improvement_pct,
        }

    def write(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))

    @classmethod
    def read(cls, path) -> "RunReport":
        return cls(**json.loads(Path(path).read_text()))


def improvement_label(pct: float) -> str:
    """Presentation of the signed change: negative MAE change is better."""
    if pct < 0:
        return f"{-pct:.2f}% improvement"
    if pct > 0:
        return f"{pct:.2f}% regression"
    return "no change"


def _split_metrics(model: PhastModel, pairs, split: str, task: str, batch_size: int) -> dict:
    preds, labels = [], []
    f_pred, f_true, grads, masks = [], [], [], []
    for batch in batches(pairs, batch_size):
        labels.append(_energies(batch))
        if task == "is2re":
            e, _, _ = model.predict(batch, forces=False)
            preds.append(e)
            continue
        with ad.Tape() as tape:
            pos = tape.watch(batch.positions)
            out = model.forward(batch, pos)
            total = ad.sum_all(out.energy)
        g = tape.backward(total)[pos]
        preds.append(out.energy.value)
        f_pred.append(-g if out.forces is None else out.forces.value)
        grads.append(g)
        f_true.append(_forces(batch))
        masks.append(_force_mask(batch))
    rec = {
        "split": split,
        "e_mae_mev": metric_mae(np.concatenate(preds), np.concatenate(labels)),
        "f_mae_mev_per_A": None,
        "ec_dist": None,
        "ec_cos": None,
        "n_samples": len(pairs),
    }
    if task == "s2ef":
        fp, ft, g, m = (np.concatenate(a) for a in (f_pred, f_true, grads, masks))
        rec["f_mae_mev_per_A"] = metric_force_mae(fp, ft, m)
        rec["ec_dist"] = metric_ec_dist(fp, g, m)
        rec["ec_cos"] = metric_ec_cos(fp, ft, mask=m)
    return rec


def evaluate_model(model: PhastModel, config: ExperimentConfig, splits=VAL_SPLITS,
                   baseline: RunReport | None = None) -> RunReport:
    metrics = {}
    for split in splits:
        metrics[split] = _split_metrics(model, prepared_split(config, split), split, config.task,
                                        config.batch_size)
    avg = float(np.mean([m["e_mae_mev"] for m in metrics.values()]))
    report = RunReport(metrics=metrics, average_e_mae_mev=avg, config=config.to_dict())
    if baseline is not None:
        report.improvement_pct = mae_improvement(avg, baseline.average_e_mae_mev)
        report.improvement_per_split = {
            s: mae_improvement(metrics[s]["e_mae_mev"], baseline.metrics[s]["e_mae_mev"])
            for s in metrics if s in baseline.metrics
        }
    return report


def config_from_checkpoint(manifest: dict) -> ExperimentConfig:
    return ExperimentConfig.from_dict(manifest["config"])


def evaluate(checkpoint, splits=VAL_SPLITS, baseline: RunReport | str | None = None,
             config: ExperimentConfig | None = None) -> RunReport:
    """Per-split metrics of a saved model plus the cross-split average."""
    model, manifest = load_checkpoint(checkpoint)
    cfg = config or config_from_checkpoint(manifest)
    saved = ModelConfig.from_dict(manifest["model"])
    if cfg.task == "s2ef" and saved.heads.force_head == "none":
        raise ConfigError("s2ef evaluation needs a checkpoint with a force head")
    if cfg.model_config != saved:
        raise ConfigError("experiment config does not match the checkpoint's model")
    if isinstance(baseline, (str, Path)):
        baseline = RunReport.read(baseline)
    return evaluate_model(model, cfg, splits, baseline)


# ---------------------------------------------------------------------------
# training


def _val_e_mae(model, pairs, batch_size) -> float:
    preds, labels = [], []
    for batch in batches(pairs, batch_size):
        preds.append(model.predict(batch, forces=False)[0])
        labels.append(_energies(batch))
    return metric_mae(np.concatenate(preds), np.concatenate(labels))


def fit_normalizers(model: PhastModel, pairs) -> None:
    e = np.array([s.energy for s, _ in pairs], dtype=np.float64)
    model.energy_shift = float(e.mean())
    model.energy_scale = float(e.std()) or 1.0
    f = [s.forces for s, _ in pairs if s.forces is not None]
    if f:
        rms = float(np.sqrt(np.mean(np.concatenate(f) ** 2)))
        model.force_scale = rms or 1.0


def init_model(config: ExperimentConfig, train_pairs) -> PhastModel:
    model = PhastModel(config.model_config, seed=config.seed)
    fit_normalizers(model, train_pairs)
    if config.rewire == RewireStrategy.SUPERNODE_PER_GRAPH.value:
        ds = load_dataset(config.data)["train"]
        model.emb.fill_supernode_row(np.concatenate([s.atomic_numbers[s.tags == 0] for s in ds]))
    return model


def train(config: ExperimentConfig, out_dir=None, log=None, validate_every: int = 1):
    """Returns ``(model, report)``; writes ``last.ckpt``, ``best.ckpt``,
    ``report.json`` and ``metrics.json`` under ``out_dir`` when given."""
    out = Path(out_dir) if out_dir else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    train_pairs = prepared_split(config, "train")
    if not train_pairs:
        raise ConfigError("empty training split")
    ds = load_dataset(config.data)
    val_pairs = prepared_split(config, "val_id") if ds.get("val_id") else None
    model = init_model(config, train_pairs)
    n_batches = math.ceil(len(train_pairs) / config.batch_size)
    opt = Adam(model.params, config.optimizer, config.epochs * n_batches)
    echo = config.to_dict()
    history = []
    best = math.inf
    best_arrays = None
    for epoch in range(config.epochs):
        order = np.random.default_rng([config.seed, epoch]).permutation(len(train_pairs))
        sums = {}
        for step, batch in enumerate(batches(train_pairs, config.batch_size, order)):
            terms = train_step(model, batch, config)
            if not all(math.isfinite(v) for v in terms.values()):
                raise DivergenceError(f"non-finite loss at epoch {epoch} step {step}: {terms}")
            opt.step()
            for k, v in terms.items():
                sums[k] = sums.get(k, 0.0) + v
        rec = {"epoch": epoch, "lr": opt.lr()} | {f"train_{k}": v / n_batches for k, v in sums.items()}
        if val_pairs and ((epoch + 1) % validate_every == 0 or epoch == config.epochs - 1):
            rec["val_id_e_mae_mev"] = _val_e_mae(model, val_pairs, config.batch_size)
            if rec["val_id_e_mae_mev"] < best:
                best = rec["val_id_e_mae_mev"]
                best_arrays = {k: p.value.copy() for k, p in model.params.items()}
                if out:
                    save_checkpoint(model, out / "best.ckpt", echo, {"epoch": epoch})
        history.append(rec)
        if out:
            save_checkpoint(model, out / "last.ckpt", echo, {"epoch": epoch})
        if log:
            log(json.dumps(rec))
    if best_arrays is None or config.epochs == 0:
        if out:
            save_checkpoint(model, out / "best.ckpt", echo, {"epoch": config.epochs - 1})
    else:
        for k, p in model.params.items():
            p.value = best_arrays[k]
    # without validation data the report falls back to the training split
    splits = [s for s in VAL_SPLITS if ds.get(s)] or ["train"]
    report = evaluate_model(model, config, splits)
    report.history = history
    if out:
        report.write(out / "report.json")
        (out / "metrics.json").write_text(json.dumps(report.metrics_dict(), indent=2, sort_keys=True))
    return model, report


# ---------------------------------------------------------------------------
# benchmarking


def bench_model(model: PhastModel, config: ExperimentConfig, split: str = "val_id", repeats: int = 5,
                rewire_strategy=None) -> dict:
    """Median full-split inference time (preprocessing, batching and
    prediction) and median forward-only throughput.

    Raw systems are taken from the in-memory dataset; graph construction
    and rewiring are part of the timed region.
    """
    strategy = config.rewire if rewire_strategy is None else RewireStrategy.parse(rewire_strategy).value
    cfg = replace(config, rewire=strategy)
    systems = load_dataset(cfg.data)[split]
    forces = cfg.heads.force_head != "none"
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        pairs = preprocess(systems, strategy, cfg.build)
        for batch in batches(pairs, cfg.batch_size):
            model.predict(batch, forces=forces)
        times.append(time.perf_counter() - t0)
    prebuilt = list(batches(prepared_split(cfg, split), cfg.batch_size))
    for b in prebuilt:
        model.index(b)
    peak = 0
    rates, fwd_times = [], []
    for _ in range(repeats):
        elapsed = 0.0
        for b in prebuilt:
            t0 = time.perf_counter()
            _, _, nodes = model.predict(b, forces=forces)
            elapsed += time.perf_counter() - t0
            peak = max(peak, nodes)
        fwd_times.append(elapsed)
        rates.append(len(systems) / elapsed)
    return {
        "split": split,
        "rewire": strategy,
        "n_samples": len(systems),
        "inference_time_s": statistics.median(times),
        "throughput_sps": statistics.median(rates),
        "forward_time_s": statistics.median(fwd_times),
        "peak_memory_proxy": peak,
    }


def bench(checkpoint, split: str = "val_id", repeats: int = 5, rewire_strategy=None,
          config: ExperimentConfig | None = None) -> dict:
    model, manifest = load_checkpoint(checkpoint)
    cfg = config or config_from_checkpoint(manifest)
    return bench_model(model, cfg, split, repeats, rewire_strategy)


# ---------------------------------------------------------------------------
# ablation


GRID_AXES = ("rewire", "embeddings", "energy_head", "force_variant")


def expand_grid(base: ExperimentConfig, axes: dict) -> list[dict]:
    """Cartesian product of the axis values; ``cell_config`` applies a cell
    to ``base``."""
    unknown = set(axes) - set(GRID_AXES) - {"seed"}
    if unknown:
        raise ConfigError(f"unknown grid axes {sorted(unknown)}")
    names = [a for a in (*GRID_AXES, "seed") if a in axes]
    cells = []
    for values in itertools.product(*(axes[a] for a in names)):
        cells.append(dict(zip(names, values)))
    return cells


def cell_config(base: ExperimentConfig, cell: dict) -> ExperimentConfig:
    cfg = base
    if "rewire" in cell:
        cfg = replace(cfg, rewire=cell["rewire"])
    if "embeddings" in cell:
        cfg = replace(cfg, embeddings=_embeddings_from(cell["embeddings"]))
    if "energy_head" in cell:
        cfg = replace(cfg, heads=replace(cfg.heads, energy_head=cell["energy_head"]))
    if "force_variant" in cell:
        cfg = with_force_variant(cfg, cell["force_variant"])
    if "seed" in cell:
        cfg = replace(cfg, seed=int(cell["seed"]))
    return cfg


def ablation(base: ExperimentConfig, axes: dict, out_csv=None, out_dir=None, log=None) -> list[dict]:
    """One training run per grid cell. A failing cell yields a row with an
    ``error`` entry instead of stopping the grid."""
    rows = []
    for k, cell in enumerate(expand_grid(base, axes)):
        row = {"cell": k} | {a: cell.get(a) for a in (*GRID_AXES, "seed")}
        try:
            cfg = cell_config(base, cell)
            t0 = time.perf_counter()
            run_dir = Path(out_dir) / f"cell{k:03d}" if out_dir else None
            _, report = train(cfg, run_dir)
            row["train_time_s"] = time.perf_counter() - t0
            row["average_e_mae_mev"] = report.average_e_mae_mev
            for split, m in report.metrics.items():
                for key in ("e_mae_mev", "f_mae_mev_per_A", "ec_dist", "ec_cos"):
                    row[f"{split}.{key}"] = m[key]
            row["error"] = ""
        except Exception as exc:  # noqa: BLE001 - recorded per cell
            row["error"] = f"{type(exc).__name__}: {exc}"
        rows.append(row)
        if log:
            log(json.dumps(row))
    if out_csv:
        keys = []
        for r in rows:
            keys += [k for k in r if k not in keys]
        with open(out_csv, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=keys)
            w.writeheader()
            w.writerows(rows)
        Path(out_csv).with_suffix(".json").write_text(json.dumps(rows, indent=2))
    return rows


def load_grid(path) -> tuple[ExperimentConfig, dict]:
    try:
        spec = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    base = ExperimentConfig.from_dict(spec.get("base", {}))
    return base, dict(spec.get("axes", {}))


__all__ = [
    "ConfigError", "DivergenceError", "OptimizerConfig", "DataConfig", "ExperimentConfig", "RunReport",
    "baseline_config", "phast_config", "with_force_variant", "train", "train_step", "evaluate",
    "evaluate_model", "bench", "bench_model", "ablation", "expand_grid", "load_dataset", "prepared_split",
    "hvp_param_grads", "Adam", "improvement_label", "clear_caches",
]
