"""Experiment configuration: YAML in, validated and fully-defaulted dict out.

parse_config rejects unknown keys by dotted path, fills every default, and
returns a plain dict. emit_config writes it back such that parsing the
emitted file reproduces the dict exactly.
"""

from __future__ import annotations

import copy
import os

import yaml

from .sources import (
    ROLE_AUXILIARY,
    ROLES,
    DataSource,
    load_source_data,
    make_classification_source,
    make_gaussian_source,
    make_regression_source,
)
from .trainer import HEURISTICS, MODES, MeritOptTrainer
from .validation import substream

TRAIN_DEFAULTS = {
    "steps": 100,
    "step_size": 0.1,
    "schedule": "constant",
    "step_size_min": None,
    "optimizer": "sgd",
    "beta1": 0.9,
    "beta2": 0.98,
    "eps": 1.0e-8,
    "rmsprop_b0": 0.0,
    "adagrad_b0": 1.0,
    "mode": "meritopt",
    "eval_every": 1,
    "parallel": False,
    "x0": None,
}

BATCH_DEFAULTS = {
    "mode": "fraction",
    "fraction": 0.1,
    "sizes": None,
    "total": 512,
    "min": 32,
    "max": 128,
}

MD_DEFAULTS = {
    "eta": 0.1,
    "iterations": 5,
    "val_batch_size": None,
    "resample_val_per_iter": False,
    "warm_start": False,
    "grad_mode": "finite-difference",
}

HEURISTIC_DEFAULTS = {
    "kind": "none",
    "threshold": 0.15,
    "allow_target_drop": False,
    "epoch_len": None,
    "cycle_period": 2,
    "cycle_meritopt_epochs": 1,
    "phase1_steps": 0,
    "patience": 10,
}

SOURCE_DEFAULTS = {
    "id": None,
    "kind": "gaussian",
    "role": ROLE_AUXILIARY,
    "size": 100,
    "seed": None,
    "mean": "zero",
    "mu": 0.0,
    "unit_seed": None,
    "noise_scale": 1.0,
    "noise": 0.1,
    "path": None,
}

TOP_DEFAULTS = {
    "problem": "mean-estimation",
    "dim": 20,
    "seed": 0,
    "out_dir": None,
    "export_formats": ["csv", "jsonl"],
    "grid": {},
    "sources": [],
    "train": TRAIN_DEFAULTS,
    "batch": BATCH_DEFAULTS,
    "md": MD_DEFAULTS,
    "heuristic": HEURISTIC_DEFAULTS,
}

SOURCE_KINDS = ("gaussian", "linear", "logistic", "file")
PROBLEMS = ("mean-estimation", "linear-regression", "logistic-regression")


def _merge_section(user: dict, defaults: dict, path: str) -> dict:
    if not isinstance(user, dict):
        raise ValueError(f"config section {path!r} must be a mapping")
    out = copy.deepcopy(defaults)
    for key, value in user.items():
        if key not in defaults:
            raise ValueError(f"unknown config key {path + '.' + key!r}")
        out[key] = value
    return out


def resolve_config(raw: dict) -> dict:
    """Validate a raw mapping and return it with every default filled in."""
    if not isinstance(raw, dict):
        raise ValueError("config root must be a mapping")
    cfg = {}
    for key in raw:
        if key not in TOP_DEFAULTS:
            raise ValueError(f"unknown config key {key!r}")
    for key, default in TOP_DEFAULTS.items():
        if key in ("train", "batch", "md", "heuristic"):
            cfg[key] = _merge_section(raw.get(key, {}), default, key)
        elif key == "sources":
            cfg[key] = [
                _resolve_source(s, i) for i, s in enumerate(raw.get("sources", []))
            ]
        else:
            cfg[key] = copy.deepcopy(raw.get(key, default))

    _check(cfg["problem"] in PROBLEMS, f"problem must be one of {PROBLEMS}")
    _check(isinstance(cfg["dim"], int) and cfg["dim"] >= 1, "dim must be a positive integer")
    _check(isinstance(cfg["seed"], int), "seed must be an integer")
    _check(
        isinstance(cfg["export_formats"], list)
        and cfg["export_formats"]
        and all(f in ("csv", "jsonl") for f in cfg["export_formats"]),
        "export_formats must list 'csv' and/or 'jsonl'",
    )
    _check(isinstance(cfg["grid"], dict), "grid must be a mapping")
    for gkey, gvals in cfg["grid"].items():
        _check(
            isinstance(gvals, list) and gvals,
            f"grid.{gkey} must be a non-empty list",
        )
        _lookup_grid_target(cfg, gkey)

    tr = cfg["train"]
    _check(tr["mode"] in MODES, f"train.mode must be one of {MODES}")
    _check(tr["optimizer"] in ("sgd", "adam", "rmsprop", "adagrad-norm"),
           "train.optimizer is unknown")
    _check(tr["schedule"] in ("constant", "cosine"), "train.schedule is unknown")
    _check(int(tr["steps"]) >= 1, "train.steps must be at least 1")
    _check(float(tr["step_size"]) > 0, "train.step_size must be positive")
    _check(int(tr["eval_every"]) >= 1, "train.eval_every must be at least 1")

    ba = cfg["batch"]
    _check(ba["mode"] in ("fraction", "fixed", "adaptive"), "batch.mode is unknown")
    if ba["mode"] == "fraction":
        _check(0.0 < float(ba["fraction"]) <= 1.0, "batch.fraction must lie in (0, 1]")

    md = cfg["md"]
    _check(float(md["eta"]) > 0, "md.eta must be positive")
    _check(int(md["iterations"]) >= 0, "md.iterations must be non-negative")
    _check(
        md["grad_mode"] in ("finite-difference", "analytic-frozen"),
        "md.grad_mode is unknown",
    )

    he = cfg["heuristic"]
    _check(he["kind"] in HEURISTICS, f"heuristic.kind must be one of {HEURISTICS}")
    _check(int(he["patience"]) >= 1, "heuristic.patience must be at least 1")
    _check(int(he["phase1_steps"]) >= 0, "heuristic.phase1_steps must be non-negative")

    ids = [s["id"] for s in cfg["sources"]]
    _check(len(set(ids)) == len(ids), "source ids must be unique")
    return cfg


def _resolve_source(raw: dict, index: int) -> dict:
    src = _merge_section(raw, SOURCE_DEFAULTS, f"sources[{index}]")
    _check(src["id"] is not None, f"sources[{index}].id is required")
    _check(src["kind"] in SOURCE_KINDS, f"sources[{index}].kind must be one of {SOURCE_KINDS}")
    _check(src["role"] in ROLES, f"sources[{index}].role must be one of {ROLES}")
    if src["kind"] == "file":
        _check(src["path"] is not None, f"sources[{index}].path is required for file sources")
    else:
        _check(int(src["size"]) >= 1, f"sources[{index}].size must be at least 1")
    if src["kind"] == "gaussian":
        _check(
            src["mean"] in ("zero", "scaled-ones", "random-unit"),
            f"sources[{index}].mean is unknown",
        )
    return src


def _check(cond: bool, message: str) -> None:
    if not cond:
        raise ValueError(message)


def _lookup_grid_target(cfg: dict, dotted: str):
    node = cfg
    parts = dotted.split(".")
    for p in parts[:-1]:
        if not isinstance(node, dict) or p not in node:
            raise ValueError(f"grid key {dotted!r} does not name a config entry")
        node = node[p]
    if not isinstance(node, dict) or parts[-1] not in node:
        raise ValueError(f"grid key {dotted!r} does not name a config entry")
    return node, parts[-1]


def apply_grid_point(cfg: dict, assignment: dict) -> dict:
    out = copy.deepcopy(cfg)
    out["grid"] = {}
    for dotted, value in assignment.items():
        node, leaf = _lookup_grid_target(out, dotted)
        node[leaf] = value
    return out


def grid_points(cfg: dict) -> list[dict]:
    """Cartesian product of the grid axes as {dotted key: value} dicts."""
    keys = sorted(cfg.get("grid", {}))
    if not keys:
        return []
    points = [{}]
    for key in keys:
        points = [dict(p, **{key: v}) for p in points for v in cfg["grid"][key]]
    return points


def parse_config(path: str) -> dict:
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    if raw is None:
        raw = {}
    return resolve_config(raw)


def emit_config(cfg: dict, path: str) -> None:
    text = yaml.safe_dump(cfg, sort_keys=True, default_flow_style=False)
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def build_sources(cfg: dict) -> list[DataSource]:
    dim = int(cfg["dim"])
    out = []
    for i, src in enumerate(cfg["sources"]):
        seed = src["seed"]
        if seed is None:
            # stable per-source stream derived from the run seed
            seed = int(substream(int(cfg["seed"]), 0, i).integers(2**31))
        kind = src["kind"]
        if kind == "gaussian":
            out.append(
                make_gaussian_source(
                    src["id"],
                    dim,
                    int(src["size"]),
                    seed=seed,
                    mean=src["mean"],
                    mu=float(src["mu"]),
                    unit_seed=src["unit_seed"],
                    noise_scale=float(src["noise_scale"]),
                    role=src["role"],
                )
            )
        elif kind == "linear":
            out.append(
                make_regression_source(
                    src["id"], dim, int(src["size"]), seed=seed,
                    noise=float(src["noise"]), role=src["role"],
                )
            )
        elif kind == "logistic":
            out.append(
                make_classification_source(
                    src["id"], dim, int(src["size"]), seed=seed, role=src["role"],
                )
            )
        elif kind == "file":
            data = load_source_data(src["path"])
            out.append(DataSource(src["id"], data, role=src["role"], kind="file"))
        else:
            raise ValueError(f"unknown source kind {kind!r}")
    return out


def build_trainer(cfg: dict, seed: int | None = None) -> MeritOptTrainer:
    tr, ba, md, he = cfg["train"], cfg["batch"], cfg["md"], cfg["heuristic"]
    return MeritOptTrainer(
        problem=cfg["problem"],
        steps=int(tr["steps"]),
        step_size=float(tr["step_size"]),
        schedule=tr["schedule"],
        step_size_min=tr["step_size_min"],
        optimizer=tr["optimizer"],
        beta1=float(tr["beta1"]),
        beta2=float(tr["beta2"]),
        eps=float(tr["eps"]),
        rmsprop_b0=float(tr["rmsprop_b0"]),
        adagrad_b0=float(tr["adagrad_b0"]),
        mode=tr["mode"],
        batch_mode=ba["mode"],
        batch_fraction=float(ba["fraction"]),
        batch_sizes=ba["sizes"],
        batch_total=int(ba["total"]),
        batch_min=int(ba["min"]),
        batch_max=int(ba["max"]),
        md_eta=float(md["eta"]),
        md_iterations=int(md["iterations"]),
        md_val_batch_size=md["val_batch_size"],
        md_resample=bool(md["resample_val_per_iter"]),
        md_warm_start=bool(md["warm_start"]),
        md_grad_mode=md["grad_mode"],
        heuristic=he["kind"],
        drop_threshold=float(he["threshold"]),
        allow_target_drop=bool(he["allow_target_drop"]),
        epoch_len=he["epoch_len"],
        cycle_period=int(he["cycle_period"]),
        cycle_meritopt_epochs=int(he["cycle_meritopt_epochs"]),
        phase1_steps=int(he["phase1_steps"]),
        patience=int(he["patience"]),
        x0=tr["x0"],
        eval_every=int(tr["eval_every"]),
        seed=int(cfg["seed"]) if seed is None else int(seed),
        parallel=bool(tr["parallel"]),
    )


def _preset_benchmark() -> dict:
    return {
        "problem": "mean-estimation",
        "dim": 20,
        "seed": 1,
        "sources": [
            {"id": "target", "kind": "gaussian", "role": "target-train",
             "mean": "zero", "size": 20},
            {"id": "near", "kind": "gaussian", "role": "auxiliary",
             "mean": "scaled-ones", "mu": 0.0001, "size": 1000},
            {"id": "far", "kind": "gaussian", "role": "auxiliary",
             "mean": "random-unit", "size": 1000},
            {"id": "val", "kind": "gaussian", "role": "target-validation",
             "mean": "zero", "size": 100},
        ],
        "train": {
            "steps": 2000,
            "step_size": 0.1,
            "optimizer": "sgd",
            "mode": "meritopt",
            "eval_every": 10,
            "x0": 1.0,
        },
        "batch": {"mode": "fraction", "fraction": 0.1},
        "md": {"eta": 10.0, "iterations": 5, "val_batch_size": 10, "warm_start": True},
    }


def _preset_md_ablation() -> dict:
    cfg = _preset_benchmark()
    cfg["grid"] = {"md.eta": [0.1, 0.01], "md.iterations": [5, 100]}
    return cfg


PRESETS = {
    "appendixB": _preset_benchmark,
    "md-ablation": _preset_md_ablation,
}


def get_preset(name: str) -> dict:
    try:
        factory = PRESETS[name]
    except KeyError:
        raise ValueError(
            f"unknown preset {name!r}; expected one of {sorted(PRESETS)}"
        ) from None
    return resolve_config(factory())
