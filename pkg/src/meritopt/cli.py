"""Command-line entry points: run, verify, generate."""

from __future__ import annotations

import argparse
import json
import os
import sys

from .config import (
    PRESETS,
    apply_grid_point,
    build_sources,
    build_trainer,
    emit_config,
    get_preset,
    grid_points,
    parse_config,
)
from .sources import (
    make_classification_source,
    make_gaussian_source,
    make_regression_source,
    save_source_data,
)
from .trainer import MeritOptTrainer
from .verify import (
    check_neighborhood_convergence,
    check_optimizer_invariants,
    check_variance_bound,
    default_delta_scenario,
    estimate_delta,
)

CSV_COLUMNS = "step,source_id,weight,train_loss,val_loss,grad_norm,active,mode"


def _fmt(v: float) -> str:
    return f"{float(v):.17g}"


def _atomic_write(path: str, text: str) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def trajectory_rows(trainer: MeritOptTrainer):
    for rec in trainer.trajectory_:
        for i, sid in enumerate(trainer.source_ids_):
            yield {
                "step": rec.step,
                "source_id": sid,
                "weight": float(rec.weights[i]),
                "train_loss": float(rec.train_losses[i]),
                "val_loss": float(rec.val_loss),
                "grad_norm": float(rec.grad_norm),
                "active": bool(rec.active[i]),
                "mode": rec.mode,
            }


def write_trajectory_csv(trainer: MeritOptTrainer, path: str) -> None:
    lines = [CSV_COLUMNS]
    for row in trajectory_rows(trainer):
        lines.append(
            ",".join(
                [
                    str(row["step"]),
                    row["source_id"],
                    _fmt(row["weight"]),
                    _fmt(row["train_loss"]),
                    _fmt(row["val_loss"]),
                    _fmt(row["grad_norm"]),
                    "true" if row["active"] else "false",
                    row["mode"],
                ]
            )
        )
    _atomic_write(path, "\n".join(lines) + "\n")


def write_trajectory_jsonl(trainer: MeritOptTrainer, path: str) -> None:
    lines = [json.dumps(row) for row in trajectory_rows(trainer)]
    _atomic_write(path, "\n".join(lines) + "\n")


def write_final_x(trainer: MeritOptTrainer, path: str) -> None:
    _atomic_write(path, "\n".join(_fmt(v) for v in trainer.x_) + "\n")


def _run_single(cfg: dict, out_dir: str) -> MeritOptTrainer:
    os.makedirs(out_dir, exist_ok=True)
    sources = build_sources(cfg)
    trainer = build_trainer(cfg)
    trainer.fit(sources)
    formats = cfg["export_formats"]
    if "csv" in formats:
        write_trajectory_csv(trainer, os.path.join(out_dir, "trajectory.csv"))
    if "jsonl" in formats:
        write_trajectory_jsonl(trainer, os.path.join(out_dir, "trajectory.jsonl"))
    write_final_x(trainer, os.path.join(out_dir, "final_x.txt"))
    emit_config(cfg, os.path.join(out_dir, "resolved_config.yaml"))
    return trainer


def _grid_dir_name(assignment: dict) -> str:
    parts = []
    for key in sorted(assignment):
        parts.append(f"{key.replace('.', '-')}={assignment[key]}")
    return "_".join(parts)


def cmd_run(args) -> int:
    if (args.config is None) == (args.preset is None):
        print("run needs exactly one of --config or --preset", file=sys.stderr)
        return 1
    cfg = get_preset(args.preset) if args.preset else parse_config(args.config)
    if args.seed is not None:
        cfg["seed"] = int(args.seed)
    out_dir = args.out or cfg.get("out_dir") or "out"
    cfg = dict(cfg, out_dir=out_dir)

    points = grid_points(cfg)
    if not points:
        trainer = _run_single(cfg, out_dir)
        _print_run_summary(trainer, out_dir)
        return 0
    os.makedirs(out_dir, exist_ok=True)
    emit_config(cfg, os.path.join(out_dir, "resolved_config.yaml"))
    for assignment in points:
        sub = os.path.join(out_dir, _grid_dir_name(assignment))
        sub_cfg = apply_grid_point(cfg, assignment)
        sub_cfg["out_dir"] = sub
        trainer = _run_single(sub_cfg, sub)
        _print_run_summary(trainer, sub)
    return 0


def _print_run_summary(trainer: MeritOptTrainer, out_dir: str) -> None:
    final = trainer.trajectory_[-1]
    weights = ", ".join(
        f"{sid}={final.weights[i]:.4f}" for i, sid in enumerate(trainer.source_ids_)
    )
    print(f"{out_dir}: step {final.step}, val_loss {final.val_loss:.6g}, weights {weights}")


def cmd_verify(args) -> int:
    seed = 0 if args.seed is None else int(args.seed)
    if args.check == "variance":
        reports = [check_variance_bound(seed=seed)]
    elif args.check == "delta":
        problem, cfg, ideal = default_delta_scenario(seed=seed)
        reports = [estimate_delta(problem, cfg, ideal=ideal)]
    elif args.check == "neighborhood":
        reports = [check_neighborhood_convergence(seed=seed)]
    elif args.check == "optimizer":
        reports = [check_optimizer_invariants(seed=seed)]
    else:  # argparse choices make this unreachable
        return 2
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        payload = "\n".join(json.dumps(r.to_dict()) for r in reports) + "\n"
        _atomic_write(os.path.join(args.out, "report.jsonl"), payload)
    ok = True
    for r in reports:
        status = "PASS" if r.passed else "FAIL"
        print(f"{r.check}: {status}")
        for key, value in r.observed.items():
            print(f"  {key} = {value}")
        ok = ok and r.passed
    return 0 if ok else 1


def cmd_generate(args) -> int:
    if args.kind == "gaussian":
        src = make_gaussian_source(
            "generated",
            args.dim,
            args.size,
            seed=args.seed,
            mean=args.mean,
            mu=args.mu,
            unit_seed=args.unit_seed,
            noise_scale=args.noise_scale,
        )
    elif args.kind == "linear":
        src = make_regression_source(
            "generated", args.dim, args.size, seed=args.seed, noise=args.noise
        )
    elif args.kind == "logistic":
        src = make_classification_source(
            "generated", args.dim, args.size, seed=args.seed
        )
    else:  # argparse choices make this unreachable
        return 2
    save_source_data(args.out, src.data)
    print(f"{args.out}: {src.size} samples of width {src.sample_dim}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="meritopt",
        description="Train on heterogeneous sources with per-step gradient weighting.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a training experiment")
    run.add_argument("--config", help="YAML experiment config")
    run.add_argument(
        "--preset", choices=sorted(PRESETS), help="named built-in experiment"
    )
    run.add_argument("--seed", type=int, help="override the config seed")
    run.add_argument("--out", help="output directory (default: config out_dir or ./out)")
    run.set_defaults(func=cmd_run)

    verify = sub.add_parser("verify", help="check framework assumptions")
    verify.add_argument(
        "--check",
        required=True,
        choices=["variance", "delta", "neighborhood", "optimizer"],
        help="which assumption to check",
    )
    verify.add_argument("--seed", type=int, help="seed for the check scenario")
    verify.add_argument("--out", help="directory for report.jsonl")
    verify.set_defaults(func=cmd_verify)

    gen = sub.add_parser("generate", help="write a synthetic source data file")
    gen.add_argument(
        "--kind", default="gaussian", choices=["gaussian", "linear", "logistic"]
    )
    gen.add_argument("--dim", type=int, required=True)
    gen.add_argument("--size", type=int, required=True)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument(
        "--mean", default="zero", choices=["zero", "scaled-ones", "random-unit"]
    )
    gen.add_argument("--mu", type=float, default=0.0)
    gen.add_argument("--unit-seed", type=int, default=None)
    gen.add_argument("--noise-scale", type=float, default=1.0)
    gen.add_argument("--noise", type=float, default=0.1)
    gen.add_argument("--out", required=True)
    gen.set_defaults(func=cmd_generate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
