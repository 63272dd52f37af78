"""Training loop, AdamW, learning-rate schedule, evaluation and checkpoints."""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from . import geom
from . import numerics as nx
from .data import DIFFICULTIES, DatasetSpec, EvalSample, make_train_sample
from .model import ModelConfig, PoinTr, completion_loss
from .numerics import CheckpointFormatError, load_tensors, save_tensors

METRIC_SCALE = 1000.0
METRIC_KEYS = ("cd_l1", "cd_l2", "fscore", "fidelity")


class NumericalError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lr: float = 0.0005
    weight_decay: float = 0.0005
    batch_size: int = 4
    epochs: int = 1
    steps: int | None = None
    lr_decay_factor: float = 0.76
    lr_decay_every: int = 20
    grad_clip: float = 10.0
    seed: int = 0

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("lr must be non-negative")
        if not 0 < self.lr_decay_factor <= 1:
            raise ValueError("lr_decay_factor must be in (0, 1]")
        if self.batch_size < 1 or self.epochs < 0 or self.lr_decay_every <= 0:
            raise ValueError("batch_size, epochs and lr_decay_every must be positive")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"unknown train config key: {unknown[0]}")
        return cls(**data)


def lr_at(epoch: float, cfg: TrainConfig) -> float:
    """Continuous exponential decay: ``lr * factor ** (epoch / every)``."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return cfg.lr * cfg.lr_decay_factor ** (epoch / cfg.lr_decay_every)


# ---------------------------------------------------------------- optimizer


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adamw_step(params, grads, state: AdamState, lr: float, wd: float,
               beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """Decoupled weight decay Adam, in place on ``params`` (list of Parameters)."""
    state.step += 1
    t = state.step
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    for p, g in zip(params, grads):
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.shape:
            raise nx.DimensionError(f"grad shape {g.shape} vs param {p.name} {p.shape}")
        m = state.m.setdefault(p.name, np.zeros_like(p.data))
        v = state.v.setdefault(p.name, np.zeros_like(p.data))
        if m.shape != p.shape or v.shape != p.shape:
            raise nx.DimensionError(f"optimizer state shape mismatch for {p.name}")
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        update = (m / bc1) / (np.sqrt(v / bc2) + eps)
        if wd:
            p.data *= p.data.dtype.type(1.0 - lr * wd)
        p.data -= (lr * update).astype(p.data.dtype)


def clip_grad_norm(params, max_norm: float) -> float:
    grads = [p.grad for p in params if p.grad is not None]
    total = math.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads))
    if max_norm and total > max_norm:
        scale = max_norm / (total + 1e-12)
        for g in grads:
            g *= g.dtype.type(scale)
    return total


# ---------------------------------------------------------------- training


def _batch_indices(step: int, n_objects: int, cfg: TrainConfig) -> list[int]:
    per_epoch = math.ceil(n_objects / cfg.batch_size)
    epoch, slot = divmod(step, per_epoch)
    order = np.random.default_rng([cfg.seed, epoch, 1]).permutation(n_objects)
    return [int(i) for i in order[slot * cfg.batch_size : (slot + 1) * cfg.batch_size]]


def total_steps(n_objects: int, cfg: TrainConfig) -> int:
    if cfg.steps is not None:
        return cfg.steps
    return cfg.epochs * math.ceil(n_objects / cfg.batch_size)


def train(
    model: PoinTr,
    clouds: list,
    cfg: TrainConfig,
    spec: DatasetSpec,
    state: AdamState | None = None,
    until: int | None = None,
    on_step: Callable[[dict], None] | None = None,
) -> tuple[list[dict], AdamState]:
    """Run optimizer steps ``state.step .. until`` (default: the configured total).

    Every random draw at step t comes from a generator seeded with (seed, t), so a
    resumed run replays the uninterrupted one exactly.
    """
    if not clouds:
        raise ValueError("no training objects")
    state = state or AdamState()
    stop = total_steps(len(clouds), cfg) if until is None else until
    per_epoch = math.ceil(len(clouds) / cfg.batch_size)
    params = model.parameters()
    log = []
    model.train()
    try:
        while state.step < stop:
            step = state.step
            rng = np.random.default_rng([cfg.seed, step, 0])
            model.zero_grad()
            batch = _batch_indices(step, len(clouds), cfg)
            j0_sum = j1_sum = 0.0
            for i in batch:
                partial, gt, _ = make_train_sample(clouds[i], rng, spec)
                result = model(partial, rng)
                if not (np.all(np.isfinite(result.complete.data)) and np.all(np.isfinite(result.coarse_centers.data))):
                    raise NumericalError(f"non-finite prediction at step {step}")
                j, j0, j1 = completion_loss(result, gt, model.cfg.train_norm)
                if not np.isfinite(j.data):
                    raise NumericalError(f"non-finite loss at step {step}")
                nx.backward(nx.mul(j, 1.0 / len(batch)))
                j0_sum += float(j0.data)
                j1_sum += float(j1.data)
            for p in params:
                if p.grad is not None and not np.all(np.isfinite(p.grad)):
                    raise NumericalError(f"non-finite gradient in {p.name} at step {step}")
            clip_grad_norm(params, cfg.grad_clip)
            lr = lr_at(step / per_epoch, cfg)
            with np.errstate(over="ignore", invalid="ignore"):
                adamw_step(params, [p.grad for p in params], state, lr, cfg.weight_decay)
            for p in params:
                if not np.all(np.isfinite(p.data)):
                    raise NumericalError(f"update at step {step} made {p.name} non-finite")
            j0m, j1m = j0_sum / len(batch), j1_sum / len(batch)
            record = {"step": step, "epoch": step // per_epoch, "j0": j0m, "j1": j1m, "j": j0m + j1m, "lr": lr}
            log.append(record)
            if on_step:
                on_step(record)
    finally:
        model.eval()
        model.zero_grad()
    return log, state


def write_log(records: Iterable[dict], path, append: bool = False) -> None:
    with open(path, "a" if append else "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")


def read_log(path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text(encoding="utf-8").splitlines() if line.strip()]


# ---------------------------------------------------------------- evaluation


def model_predictor(model: PoinTr) -> Callable[[EvalSample], np.ndarray]:
    model.eval()

    def predict(sample: EvalSample) -> np.ndarray:
        return model(sample.partial).complete.data

    return predict


def oracle_predictor(sample: EvalSample) -> np.ndarray:
    """Returns the ground truth itself; a ceiling for the metrics."""
    return sample.gt


def sample_metrics(sample: EvalSample, complete) -> dict:
    gt = sample.gt
    return {
        "cd_l1": geom.chamfer(complete, gt, "L1") * METRIC_SCALE,
        "cd_l2": geom.chamfer(complete, gt, "L2") * METRIC_SCALE,
        "fscore": geom.fscore(complete, gt, geom.fscore_threshold(gt)),
        "fidelity": geom.fidelity(sample.partial, complete),
    }


def _mean_metrics(rows: list[dict]) -> dict:
    out = {k: float(np.mean([r[k] for r in rows])) for k in METRIC_KEYS}
    out["count"] = len(rows)
    return out


def evaluate(predict: Callable[[EvalSample], np.ndarray], samples: list[EvalSample]) -> dict:
    """Per-sample metrics aggregated into a category x difficulty grid plus tier summaries."""
    if not samples:
        raise ValueError("empty evaluation set")
    rows = []
    for s in samples:
        m = sample_metrics(s, predict(s))
        m.update(category=s.category, difficulty=s.difficulty)
        rows.append(m)
    grid: dict = {}
    for cat in sorted({r["category"] for r in rows}):
        grid[cat] = {}
        for d in DIFFICULTIES:
            sel = [r for r in rows if r["category"] == cat and r["difficulty"] == d]
            if sel:
                grid[cat][d] = _mean_metrics(sel)
    tiers = {}
    for d in DIFFICULTIES:
        sel = [r for r in rows if r["difficulty"] == d]
        if sel:
            tiers[d] = _mean_metrics(sel)
    summary = {}
    for key, label in (("cd_l2", "cd"), ("cd_l1", "cd_l1")):
        vals = [tiers[d][key] if d in tiers else float("nan") for d in DIFFICULTIES]
        summary[f"{label}_s"], summary[f"{label}_m"], summary[f"{label}_h"] = vals
        summary[f"{label}_avg"] = float(np.mean(vals))
    summary["fscore"] = float(np.mean([r["fscore"] for r in rows]))
    summary["fidelity"] = float(np.mean([r["fidelity"] for r in rows]))
    return {"version": 1, "metric_scale": METRIC_SCALE, "n_samples": len(rows),
            "grid": grid, "tiers": tiers, "summary": summary}


_CELL = {
    "type": "object",
    "required": list(METRIC_KEYS) + ["count"],
    "properties": {**{k: {"type": "number", "minimum": 0} for k in METRIC_KEYS}, "count": {"type": "integer", "minimum": 1}},
}

REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["version", "metric_scale", "n_samples", "grid", "tiers", "summary"],
    "properties": {
        "version": {"const": 1},
        "metric_scale": {"type": "number"},
        "n_samples": {"type": "integer", "minimum": 1},
        "grid": {
            "type": "object",
            "additionalProperties": {
                "type": "object",
                "propertyNames": {"enum": list(DIFFICULTIES)},
                "additionalProperties": _CELL,
            },
        },
        "tiers": {"type": "object", "propertyNames": {"enum": list(DIFFICULTIES)}, "additionalProperties": _CELL},
        "summary": {
            "type": "object",
            "required": ["cd_s", "cd_m", "cd_h", "cd_avg", "cd_l1_s", "cd_l1_m", "cd_l1_h", "cd_l1_avg", "fscore", "fidelity"],
            "additionalProperties": {"type": "number"},
        },
    },
}


def summary_line(report: dict) -> str:
    s = report["summary"]
    return (f"CD-S={s['cd_s']:.4f} CD-M={s['cd_m']:.4f} CD-H={s['cd_h']:.4f} "
            f"CD-Avg={s['cd_avg']:.4f} F-Score@1%={s['fscore']:.4f}")


# ---------------------------------------------------------------- checkpoints


def _text_tensor(text: str) -> np.ndarray:
    return np.frombuffer(text.encode("utf-8"), dtype=np.uint8).astype(np.float32)


def _tensor_text(arr: np.ndarray) -> str:
    return arr.astype(np.uint8).tobytes().decode("utf-8")


def checkpoint_save(model: PoinTr, state: AdamState | None, path, train_cfg: TrainConfig | None = None) -> None:
    tensors = {"meta.model_config": _text_tensor(json.dumps(model.cfg.to_dict(), sort_keys=True))}
    if train_cfg is not None:
        tensors["meta.train_config"] = _text_tensor(json.dumps(train_cfg.to_dict(), sort_keys=True))
    tensors.update(model.state_dict())
    if state is not None:
        tensors["optim.step"] = np.array([state.step], dtype=np.float32)
        for name in sorted(state.m):
            tensors[f"optim.m.{name}"] = state.m[name]
            tensors[f"optim.v.{name}"] = state.v[name]
    save_tensors(tensors, path)


def checkpoint_load(path, cfg: ModelConfig | None = None) -> tuple[PoinTr, AdamState | None, TrainConfig | None]:
    """Rebuild the model (from ``cfg`` or the stored config) and restore weights and optimizer moments."""
    tensors = load_tensors(path)
    if cfg is None:
        if "meta.model_config" not in tensors:
            raise CheckpointFormatError(f"{path}: no stored model config")
        cfg = ModelConfig.from_dict(json.loads(_tensor_text(tensors["meta.model_config"])))
    model = PoinTr(cfg)
    params = {k: v for k, v in tensors.items() if not k.startswith(("meta.", "optim."))}
    model.load_state_dict(params)
    extra = sorted(set(params) - {n for n, _ in model.named_parameters()})
    if extra:
        raise ValueError(f"checkpoint has parameters the model lacks: {extra[:5]}")
    train_cfg = None
    if "meta.train_config" in tensors:
        train_cfg = TrainConfig.from_dict(json.loads(_tensor_text(tensors["meta.train_config"])))
    state = None
    if "optim.step" in tensors:
        state = AdamState(step=int(tensors["optim.step"][0]))
        for name, p in model.named_parameters():
            if f"optim.m.{name}" in tensors:
                state.m[name] = tensors[f"optim.m.{name}"].astype(p.data.dtype)
                state.v[name] = tensors[f"optim.v.{name}"].astype(p.data.dtype)
    return model, state, train_cfg


def parameter_census(path) -> list[tuple[str, tuple, int]]:
    """(name, shape, count) for every model tensor in a checkpoint, skipping meta/optimizer entries."""
    tensors = load_tensors(path)
    return [(k, v.shape, int(v.size)) for k, v in tensors.items() if not k.startswith(("meta.", "optim."))]
