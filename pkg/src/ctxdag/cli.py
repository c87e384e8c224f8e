"""Command line: ``ctxdag <simulate|train|evaluate|project|bench> --config FILE``.

Each command reads one JSON config, applies ``--seed`` and ``key=value``
overrides (dotted keys reach nested objects, values parse as JSON when they
can), validates it and writes its outputs. Exit codes: 0 success, 1 runtime
or solver failure (including missing input files), 2 invalid configuration
or malformed input.
"""

import argparse
import json
import math
import os
import sys

import numpy as np

from .acyclic import ProjectionConfig
from .errors import ConfigError, ContractError, DomainError, SolverError, TrainingError
from .evaluation import evaluate_method, select_lambda, write_report
from .io import dump_json, load_json, write_csv
from .l1 import TRAIN, SparsityBudget
from .layer import forward as project_forward
from .network import MaskSpec
from .synthetic import dump_split, load_split, make_generator, sample_splits
from .trainer import (LOG_COLUMNS, TRAINING_PROJECTION, TrainConfig, fit_clustered_path,
                      fit_fixed_path, fit_path, fit_sorted_dag, model_from_dict,
                      order_from_fixed, time_epochs)

METHODS = ("contextual", "fixed", "sorted_fixed", "sorted_truth", "clustered")

SCHEMAS = {
    "simulate": {
        "required": {"p", "m", "out"},
        "optional": {"skeleton": "erdos_renyi", "n_skeleton_edges": 10,
                     "target_active_edges": 5.0, "n_train": 1000, "n_val": 500,
                     "n_test": 500, "fixed": False, "mc_samples": 10_000, "seed": 0},
    },
    "train": {
        "required": {"data", "out_model", "out_log"},
        "optional": {"method": "contextual", "target_edges": None, "seed": 0,
                     "learning_rate": 1e-3, "patience": 10, "path_length": 20,
                     "max_epochs": 1000, "hidden": [128, 128], "pretrain": True,
                     "fixed_learning_rate": 1e-2, "cluster_size": 100,
                     "projection": None},
    },
    "evaluate": {
        "required": {"model", "data", "out"},
        "optional": {"method": None, "seed": 0, "skeleton": "", "n": 0},
    },
    "project": {
        "required": {"input", "output"},
        "optional": {"p": None, "s": 1.0, "lambda": None, "mu": 1.0, "alpha": 0.5,
                     "T": 10, "step_constant": None, "inner_tol": 1e-9,
                     "inner_max_iters": 5000, "seed": 0},
    },
    "bench": {
        "required": {"out"},
        "optional": {"sweep": "n", "values": [], "n": 1000, "p": 20, "m": 2,
                     "epochs": 10, "hidden": [128, 128], "seed": 0,
                     "projection": None},
    },
}

PROJECTION_KEYS = {"s", "mu0", "alpha", "T", "step_constant", "inner_tol",
                   "inner_max_iters", "max_halvings"}


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(config, overrides):
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, value = item.split("=", 1)
        target = config
        parts = key.split(".")
        for part in parts[:-1]:
            target = target.setdefault(part, {})
            if not isinstance(target, dict):
                raise ConfigError(f"override {key!r} descends into a non-object")
        target[parts[-1]] = _parse_value(value)
    return config


def validate(command, config):
    if not isinstance(config, dict):
        raise ConfigError("config must be a JSON object")
    schema = SCHEMAS[command]
    missing = schema["required"] - set(config)
    if missing:
        raise ConfigError(f"missing config keys: {sorted(missing)}")
    unknown = set(config) - schema["required"] - set(schema["optional"])
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    full = dict(schema["optional"])
    full.update(config)
    return full


def _int(config, key, lo=None):
    v = config[key]
    if isinstance(v, bool) or not isinstance(v, int) or (lo is not None and v < lo):
        raise ConfigError(f"{key} must be an integer" + (f" >= {lo}" if lo is not None else ""))
    return v


def _projection(d, base=None):
    d = d or {}
    unknown = set(d) - PROJECTION_KEYS
    if unknown:
        raise ConfigError(f"unknown projection keys: {sorted(unknown)}")
    base = base or ProjectionConfig()
    try:
        return base.with_updates(**d)
    except (ContractError, TypeError) as exc:
        raise ConfigError(str(exc))


def _train_config(c):
    try:
        return TrainConfig(
            learning_rate=float(c["learning_rate"]), patience=_int(c, "patience", 1),
            path_length=_int(c, "path_length", 2), max_epochs=_int(c, "max_epochs", 1),
            seed=_int(c, "seed", 0), hidden=tuple(int(h) for h in c["hidden"]),
            pretrain=bool(c["pretrain"]), fixed_learning_rate=float(c["fixed_learning_rate"]),
            cluster_size=_int(c, "cluster_size", 1),
            projection=_projection(c["projection"], TRAINING_PROJECTION))
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc))


def _require_file(path):
    if not os.path.exists(path):
        raise FileNotFoundError(f"no such file or directory: {path}")


def cmd_simulate(c):
    p, m = _int(c, "p", 2), _int(c, "m", 1)
    sizes = [_int(c, k, 0) for k in ("n_train", "n_val", "n_test")]
    spec = make_generator(p, m, c["skeleton"], _int(c, "n_skeleton_edges", 0),
                          float(c["target_active_edges"]), _int(c, "seed", 0),
                          _int(c, "mc_samples", 1))
    splits = sample_splits(spec, sizes, fixed=bool(c["fixed"]))
    for name, (data, truth) in zip(("train", "val", "test"), splits):
        dump_split(os.path.join(c["out"], name), data, truth, spec, c)


def _load_dir(path, name):
    d = os.path.join(path, name)
    for f in ("x.csv", "z.csv"):
        _require_file(os.path.join(d, f))
    return load_split(d)


def cmd_train(c):
    method = c["method"]
    if method not in METHODS:
        raise ConfigError(f"method must be one of {METHODS}")
    cfg = _train_config(c)
    train, ttrain = _load_dir(c["data"], "train")
    val, tval = _load_dir(c["data"], "val")
    target = c["target_edges"]
    log = []
    if method == "contextual":
        path = fit_path(train, val, cfg, log=log)
    elif method == "fixed":
        path = fit_fixed_path(train, val, cfg, log=log)
    elif method == "clustered":
        path = fit_clustered_path(train, val, cfg, log=log)
    elif method == "sorted_truth":
        if ttrain is None or tval is None:
            raise FileNotFoundError("sorted_truth needs truth.json for train and val")
        path = fit_sorted_dag(train, val, cfg, ttrain.mask_spec(), tval.mask_spec(), log=log)
    else:
        fixed = fit_fixed_path(train, val, cfg, log=log)
        lam = select_lambda(fixed, target) if target is not None else fixed.entries[0].lam
        order = order_from_fixed(fixed.entry(lam).model.W)
        path = fit_sorted_dag(train, val, cfg, MaskSpec("fixed_order", order=order), log=log)
    write_csv(c["out_log"], LOG_COLUMNS, log, c)
    if target is not None:
        model = path.entry(select_lambda(path, float(target))).model
        out = model.to_dict()
    else:
        out = {"kind": "path", "method": method, **path.to_dict()}
    dump_json(out, c["out_model"])


def cmd_evaluate(c):
    _require_file(c["model"])
    test, truth = _load_dir(c["data"], ".")
    if truth is None:
        raise FileNotFoundError(f"no truth.json in {c['data']}")
    d = load_json(c["model"])
    if d.get("kind") == "path":
        models = [(f"{c['method'] or d['method']}@{e['lambda']!r}", model_from_dict(e["model"]))
                  for e in d["entries"]]
    else:
        mdl = model_from_dict(d)
        models = [(c["method"] or mdl.method, mdl)]
    # runtime_s records the prediction wall time on the test split
    reports = [evaluate_method(mdl, test, truth, tag, c["n"], c["skeleton"], c["seed"])
               for tag, mdl in models]
    write_report(c["out"], reports, c)


def read_flat_matrices(path, p=None):
    _require_file(path)
    with open(path) as fh:
        rows = [ln.strip() for ln in fh if ln.strip() and not ln.startswith("#")]
    data = []
    for i, ln in enumerate(rows):
        cells = ln.split(",")
        try:
            data.append([float(v) for v in cells])
        except ValueError:
            if i == 0:
                continue  # header row
            raise ContractError(f"row {i} of {path} is not numeric")
    if not data:
        return np.zeros((0, p or 0, p or 0))
    lengths = {len(r) for r in data}
    if len(lengths) != 1:
        raise ContractError("rows have different lengths")
    L = lengths.pop()
    q = p if p is not None else math.isqrt(L)
    if q * q != L:
        raise ContractError(f"row length {L} is not p^2" + (f" for p={p}" if p else ""))
    return np.array(data).reshape(-1, q, q)


def cmd_project(c):
    batch = read_flat_matrices(c["input"], c["p"])
    lam = np.inf if c["lambda"] is None else float(c["lambda"])
    cfg = _projection({"s": c["s"], "mu0": c["mu"], "alpha": c["alpha"], "T": c["T"],
                       "step_constant": c["step_constant"], "inner_tol": c["inner_tol"],
                       "inner_max_iters": c["inner_max_iters"]})
    n, p, _ = batch.shape
    if n:
        out, _ = project_forward(batch, cfg, SparsityBudget(lam=lam), TRAIN)
    else:
        out = batch
    header = [f"w_{j}_{k}" for j in range(p) for k in range(p)]
    write_csv(c["output"], header, out.reshape(n, p * p).tolist(), c)


def cmd_bench(c):
    values = list(c["values"])
    if not values:
        return
    if c["sweep"] not in ("n", "p"):
        raise ConfigError("sweep must be 'n' or 'p'")
    pcfg = _projection(c["projection"], TRAINING_PROJECTION)
    epochs = _int(c, "epochs", 1)
    rows = []
    for v in values:
        n = int(v) if c["sweep"] == "n" else _int(c, "n", 1)
        p = int(v) if c["sweep"] == "p" else _int(c, "p", 2)
        spec = make_generator(p, _int(c, "m", 1), n_skeleton_edges=min(10, p * (p - 1) // 2),
                              target_active_edges=min(5.0, p * (p - 1) / 4),
                              seed=_int(c, "seed", 0), mc_samples=2000)
        (data, _), = sample_splits(spec, [n])
        elapsed = time_epochs(data, c["hidden"], epochs, pcfg, c["seed"])
        rows.append([c["sweep"], n, p, spec.m, epochs, elapsed])
    write_csv(c["out"], ["sweep", "n", "p", "m", "epochs", "wall_time_s"], rows, c)


COMMANDS = {"simulate": cmd_simulate, "train": cmd_train, "evaluate": cmd_evaluate,
            "project": cmd_project, "bench": cmd_bench}


def build_parser():
    ap = argparse.ArgumentParser(prog="ctxdag", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", required=True)
    ap.add_argument("--seed", type=int)
    ap.add_argument("--threads", type=int)
    for flag in ("s", "lambda", "mu", "alpha", "T"):
        ap.add_argument(f"--{flag}", dest=f"flag_{flag}", type=float if flag != "T" else int,
                        help="projection setting (project command)")
    ap.add_argument("overrides", nargs="*", help="key=value config overrides")
    return ap


def run(argv=None):
    ap = build_parser()
    try:
        args, extra = ap.parse_known_args(argv)
        stray = [e for e in extra if "=" not in e or e.startswith("-")]
        if stray:
            ap.error(f"unrecognized arguments: {' '.join(stray)}")
    except SystemExit as exc:
        return int(exc.code or 0)
    args.overrides = list(args.overrides) + extra
    try:
        if not os.path.exists(args.config):
            raise FileNotFoundError(f"no such config file: {args.config}")
        with open(args.config) as fh:
            try:
                config = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config is not valid JSON: {exc}")
        if not isinstance(config, dict):
            raise ConfigError("config must be a JSON object")
        apply_overrides(config, args.overrides)
        if args.seed is not None:
            config["seed"] = args.seed
        for flag in ("s", "lambda", "mu", "alpha", "T"):
            v = getattr(args, f"flag_{flag}")
            if v is not None:
                if args.command != "project":
                    raise ConfigError(f"--{flag} only applies to the project command")
                config[flag] = v
        if args.threads is not None:
            if args.threads < 1:
                raise ConfigError("--threads must be positive")
            import numba
            numba.set_num_threads(min(args.threads, numba.config.NUMBA_NUM_THREADS))
        config = validate(args.command, config)
        COMMANDS[args.command](config)
    except (ConfigError, ContractError, DomainError) as exc:
        print(f"ctxdag: error: {exc}", file=sys.stderr)
        return 2
    except (FileNotFoundError, SolverError, TrainingError, OSError) as exc:
        print(f"ctxdag: failed: {exc}", file=sys.stderr)
        return 1
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
