"""Desk-scale experiments: overfitting a handful of synthetic objects, and the geometry-block ablation.

Run as ``python -m pointr.experiments overfit|ablation --out DIR``; each writes a JSON
result and its figures into DIR.
"""

from __future__ import annotations

import argparse
import json
import time
from pathlib import Path

import numpy as np

from . import geom
from .data import desk_spec, eval_samples_for, synthetic_corpus
from .harness import METRIC_SCALE, TrainConfig, evaluate, model_predictor, summary_line, train
from .model import PoinTr, completion_loss, desk_config

OVERFIT_OBJECTS = 8
OVERFIT_STEPS = 300
HEAD, TAIL = 5, 10  # window sizes for "initial" and "final" training loss


def overfit_setup(n_objects: int = OVERFIT_OBJECTS):
    spec = desk_spec(n_objects=n_objects)
    return spec, synthetic_corpus(spec)


def fixed_crop_loss(model: PoinTr, samples) -> float:
    """Mean J over fixed crops with dropout off, so runs can be compared without sampling noise."""
    model.eval()
    total = 0.0
    for s in samples:
        j, _, _ = completion_loss(model(s.partial), s.gt, model.cfg.train_norm)
        total += float(j.data)
    return total / len(samples)


def run_overfit(placement: str = "first", seed: int = 0, steps: int = OVERFIT_STEPS,
                n_objects: int = OVERFIT_OBJECTS, lr: float = 0.0005, on_step=None) -> dict:
    spec, objects = overfit_setup(n_objects)
    model = PoinTr(desk_config(geometry_block_placement=placement), seed=seed)
    cfg = TrainConfig(lr=lr, steps=steps, batch_size=4, seed=seed)
    t0 = time.perf_counter()
    log, _ = train(model, [o.points for o in objects], cfg, spec, on_step=on_step)
    train_seconds = time.perf_counter() - t0
    samples = [s for o in objects for s in eval_samples_for(o.object_id, o.category, o.points, spec)]
    report = evaluate(model_predictor(model), samples)
    sq = [geom.chamfer(model(s.partial).complete.data, s.gt, "L2SQ") * METRIC_SCALE for s in samples]
    js = [r["j"] for r in log]
    return {
        "placement": placement,
        "seed": seed,
        "steps": steps,
        "train_seconds": train_seconds,
        "j_step0": js[0],
        "j_last": js[-1],
        "j_initial": float(np.mean(js[:HEAD])),
        "j_final": float(np.mean(js[-TAIL:])),
        "cd_l2": report["summary"]["cd_avg"],
        "cd_l2sq": float(np.mean(sq)),
        "fscore": report["summary"]["fscore"],
        "fidelity": report["summary"]["fidelity"],
        "fixed_loss": fixed_crop_loss(model, [s for s in samples if s.difficulty == "moderate"]),
        "report": report,
        "log": log,
        "model": model,
        "samples": samples,
    }


def run_ablation(seeds=range(5), steps: int = OVERFIT_STEPS) -> list[dict]:
    """Same seed and budget for placement "first" and the all-vanilla model; lower fixed-crop loss wins."""
    rows = []
    for seed in seeds:
        first = run_overfit("first", seed, steps)
        none = run_overfit("none", seed, steps)
        rows.append({"seed": seed, "first": first["fixed_loss"], "none": none["fixed_loss"],
                     "first_j_final": first["j_final"], "none_j_final": none["j_final"],
                     "win": first["fixed_loss"] <= none["fixed_loss"]})
    return rows


def _public(result: dict) -> dict:
    return {k: v for k, v in result.items() if k not in ("model", "samples", "log", "report")}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="python -m pointr.experiments")
    parser.add_argument("which", choices=("overfit", "ablation"))
    parser.add_argument("--out", required=True)
    parser.add_argument("--steps", type=int, default=OVERFIT_STEPS)
    parser.add_argument("--seeds", type=int, default=5)
    args = parser.parse_args(argv)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    from .plotting import plot_completion, plot_loss, plot_tiers

    if args.which == "overfit":
        res = run_overfit(steps=args.steps)
        (out / "overfit.json").write_text(json.dumps({**_public(res), "report": res["report"]}, indent=2) + "\n")
        plot_loss(res["log"], out / "overfit_loss.png")
        plot_tiers(res["report"], out / "overfit_tiers.png")
        s = res["samples"][0]
        plot_completion(s.partial, res["model"](s.partial).complete.data, out / "overfit_sample.png", gt=s.gt)
        print(summary_line(res["report"]))
        print(f"overfit: j {res['j_initial']:.4f} -> {res['j_final']:.4f} cd_l2={res['cd_l2']:.2f} "
              f"cd_l2sq={res['cd_l2sq']:.2f} seconds={res['train_seconds']:.0f}")
    else:
        rows = run_ablation(range(args.seeds), args.steps)
        (out / "ablation.json").write_text(json.dumps(rows, indent=2) + "\n")
        wins = sum(r["win"] for r in rows)
        print(f"ablation: first wins {wins}/{len(rows)}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
