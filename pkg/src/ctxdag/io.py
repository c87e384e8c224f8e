"""CSV and JSON helpers with round-trip float formatting."""

import csv
import json
import math

import numpy as np

from .errors import ContractError


def fmt(v):
    """Shortest exact decimal for floats, plain text otherwise."""
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def config_comment(config):
    return "# config=" + json.dumps(config, sort_keys=True, default=str)


def write_csv(path, header, rows, config=None):
    with open(path, "w", newline="") as fh:
        if config is not None:
            fh.write(config_comment(config) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def read_csv(path):
    """Return (header, rows of strings), skipping ``#`` comment lines."""
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#") and ln.strip()]
    reader = csv.reader(lines)
    try:
        header = next(reader)
    except StopIteration:
        raise ContractError(f"{path} has no header row")
    return header, list(reader)


def read_matrix(path):
    """Numeric CSV with a header row into a 2-D float array."""
    header, rows = read_csv(path)
    try:
        data = np.array([[float(v) for v in r] for r in rows], dtype=float)
    except ValueError as exc:
        raise ContractError(f"{path}: non-numeric entry ({exc})")
    if data.size == 0:
        data = np.zeros((0, len(header)))
    if any(len(r) != len(header) for r in rows):
        raise ContractError(f"{path}: ragged rows")
    return data


def write_matrix(path, data, prefix, config=None):
    data = np.atleast_2d(np.asarray(data, dtype=float))
    header = [f"{prefix}{j}" for j in range(data.shape[1])]
    write_csv(path, header, data.tolist(), config)


def dump_json(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, sort_keys=True, indent=1)
        fh.write("\n")


def load_json(path):
    with open(path) as fh:
        return json.load(fh)
