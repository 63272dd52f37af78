"""Command-line entry point: gen-data, train, eval, complete, inspect.

Exit codes: 0 success, 2 usage/config/format error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import geom
from .data import DatasetSpec, ParseError, desk_spec, load_xyz, open_dataset, save_ply, save_xyz, write_dataset
from .harness import (
    NumericalError,
    TrainConfig,
    checkpoint_load,
    checkpoint_save,
    evaluate,
    model_predictor,
    oracle_predictor,
    parameter_census,
    read_log,
    summary_line,
    train,
    write_log,
)
from .model import PRESETS, ConfigError, ModelConfig, PoinTr
from .numerics import CheckpointFormatError

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3
CONFIG_KEYS = ("preset", "model", "train")


class UsageError(Exception):
    pass


def _echo(kind: str, payload: dict) -> None:
    print(f"{kind} {json.dumps(payload, sort_keys=True)}")


def _read_json(path) -> dict:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise UsageError(f"{path}: expected a JSON object")
    return data


def load_run_config(path) -> tuple[ModelConfig, TrainConfig]:
    """Strict ``{"preset": ..., "model": {...}, "train": {...}}``; model keys override the preset."""
    data = _read_json(path) if path else {}
    unknown = sorted(set(data) - set(CONFIG_KEYS))
    if unknown:
        raise UsageError(f"unknown config key: {unknown[0]}")
    preset = data.get("preset", "desk")
    if preset not in PRESETS:
        raise UsageError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    model_cfg = ModelConfig.from_dict({**PRESETS[preset]().to_dict(), **data.get("model", {})})
    return model_cfg, TrainConfig.from_dict(data.get("train", {}))


# ---------------------------------------------------------------- commands


def cmd_gen_data(args) -> int:
    if args.spec:
        spec = DatasetSpec.from_dict(_read_json(args.spec))
        if args.seed is not None:
            spec.seed = args.seed
    else:
        overrides = {"n_objects": args.synthetic or 10, "seed": args.seed or 0}
        spec = desk_spec(**overrides) if args.preset == "desk" else DatasetSpec(**overrides)
    _echo("config", spec.to_dict())
    out = Path(args.out)
    if out.exists() and not out.is_dir():
        raise UsageError(f"--out {out} exists and is not a directory")
    manifest = write_dataset(out, spec)
    n = len(manifest["entries"])
    print(f"gen-data: objects={n} eval_samples={n * 24} out={out}")
    return EXIT_OK


def cmd_train(args) -> int:
    ds = open_dataset(args.data)
    clouds = ds.train_clouds()
    if args.resume:
        model, state, stored = checkpoint_load(args.resume)
        cfg = stored or TrainConfig()
        if args.config:
            model_cfg, cfg = load_run_config(args.config)
            if model_cfg != model.cfg:
                raise UsageError("--config model section differs from the checkpoint being resumed")
    else:
        model_cfg, cfg = load_run_config(args.config)
        model, state = PoinTr(model_cfg, seed=cfg.seed), None
    if model.cfg.n_input != ds.spec.input_points:
        raise UsageError(f"model n_input={model.cfg.n_input} but dataset inputs have {ds.spec.input_points} points")
    _echo("config", {"model": model.cfg.to_dict(), "train": cfg.to_dict(), "data": str(args.data)})
    log_path = Path(args.log) if args.log else Path(args.out).with_suffix(".log.jsonl")
    append = bool(args.resume)
    if not append:
        log_path.write_text("", encoding="utf-8")

    def on_step(rec):
        write_log([rec], log_path, append=True)
        if args.verbose:
            print(f"step {rec['step']} j={rec['j']:.5f} j0={rec['j0']:.5f} j1={rec['j1']:.5f} lr={rec['lr']:.3g}")

    _, state = train(model, clouds, cfg, ds.spec, state=state, on_step=on_step)
    checkpoint_save(model, state, args.out, cfg)
    full_log = read_log(log_path)
    if full_log and not args.no_figures:
        from .plotting import plot_loss

        plot_loss(full_log, log_path.with_name(log_path.name.split(".")[0] + "_loss.png"))
    last = full_log[-1] if full_log else {"j": float("nan")}
    print(f"train: steps={state.step} j={last['j']:.6f} ckpt={args.out} log={log_path}")
    return EXIT_OK


def cmd_eval(args) -> int:
    ds = open_dataset(args.data)
    roles = tuple(args.roles.split(","))
    samples = ds.eval_samples(roles)
    if not samples:
        raise UsageError(f"no evaluation samples for roles {roles}")
    if args.oracle:
        predict, label = oracle_predictor, "oracle"
    elif args.ckpt:
        model, _, _ = checkpoint_load(args.ckpt)
        predict, label = model_predictor(model), str(args.ckpt)
    else:
        raise UsageError("eval needs --ckpt or --oracle")
    _echo("config", {"data": str(args.data), "model": label, "roles": list(roles), "n_samples": len(samples)})
    report = evaluate(predict, samples)
    report_path = Path(args.report)
    report_path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    if not args.no_figures:
        from .plotting import plot_completion, plot_tiers

        stem = report_path.with_suffix("")
        plot_tiers(report, f"{stem}_tiers.png")
        first = samples[0]
        plot_completion(first.partial, predict(first), f"{stem}_sample.png", gt=first.gt)
    print(summary_line(report))
    return EXIT_OK


def cmd_complete(args) -> int:
    model, _, _ = checkpoint_load(args.ckpt)
    partial = load_xyz(args.input)
    _echo("config", {"ckpt": str(args.ckpt), "in": str(args.input), "n_points": len(partial)})
    norm, centroid, scale = geom.normalize_unit(partial)
    result = model(norm.astype(np.float32))
    missing = geom.denormalize(result.missing_points.data.astype(np.float64), centroid, scale)
    if not np.all(np.isfinite(missing)):
        raise NumericalError("model produced non-finite points")
    # the input rows are copied verbatim rather than round-tripped through normalization
    complete = np.concatenate([partial, missing.astype(np.float32)])
    out = Path(args.out)
    save_xyz(complete, out)
    if args.ply:
        save_ply(complete, out.with_suffix(".ply"))
    if args.figure:
        from .plotting import plot_completion

        plot_completion(partial, complete, out.with_suffix(".png"))
    print(f"complete: in={len(partial)} missing={len(missing)} out={len(complete)} path={out}")
    return EXIT_OK


def cmd_inspect(args) -> int:
    census = parameter_census(args.ckpt)
    _echo("config", {"ckpt": str(args.ckpt)})
    for name, shape, count in census:
        print(f"{name}\t{'x'.join(map(str, shape)) or 'scalar'}\t{count}")
    print(f"total={sum(c for _, _, c in census)} tensors={len(census)}")
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pointr", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="materialize a dataset tree")
    p.add_argument("--out", required=True)
    src = p.add_mutually_exclusive_group()
    src.add_argument("--spec", help="JSON dataset spec")
    src.add_argument("--synthetic", type=int, metavar="N", help="number of synthetic objects")
    p.add_argument("--seed", type=int)
    p.add_argument("--preset", choices=("desk", "paper"), default="desk", help="point counts for --synthetic")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train or resume")
    p.add_argument("--data", required=True)
    p.add_argument("--config", help="JSON run config (default: desk preset)")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--log", help="JSON-lines log (default: next to --out)")
    p.add_argument("--no-figures", action="store_true")
    p.add_argument("--verbose", "-v", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate and write a metrics report")
    p.add_argument("--data", required=True)
    who = p.add_mutually_exclusive_group(required=True)
    who.add_argument("--ckpt")
    who.add_argument("--oracle", action="store_true", help="predict the ground truth itself")
    p.add_argument("--report", required=True)
    p.add_argument("--roles", default="test,unseen", help="comma-separated split roles")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("complete", help="complete a single XYZ cloud")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--ply", action="store_true", help="also write an ASCII PLY next to --out")
    p.add_argument("--figure", action="store_true")
    p.set_defaults(func=cmd_complete)

    p = sub.add_parser("inspect", help="parameter census of a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.set_defaults(func=cmd_inspect)
    return parser


USAGE_ERRORS = (UsageError, ConfigError, ParseError, CheckpointFormatError, geom.SizeError,
                FileNotFoundError, NotADirectoryError, PermissionError, OSError, KeyError, ValueError)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (NumericalError, FloatingPointError) as exc:
        print(f"error: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except USAGE_ERRORS as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
