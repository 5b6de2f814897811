"""CSV and JSON file formats.

Matrices are comma-separated with one header row and no index column;
row/column position is the 1-based index. Missing response cells are the
literal ``NA``. Floats use the shortest round-trip representation, so a
write/read cycle is exact.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .errors import InvalidInputError
from .model import ObservationSet
from .simgen import SettingSpec, SyntheticDataset

NA = "NA"

# file names inside a dataset / fit directory
X_FILE = "X.csv"
Z_FILE = "Z.csv"
Z_FULL_FILE = "Z_full.csv"
MASK_FILE = "mask.csv"
TRUTH_FILE = "M_star.csv"
MANIFEST_FILE = "manifest.json"
M_HAT_FILE = "M_hat.csv"
FITTED_FILE = "fitted.csv"
LOWER_FILE = "lower.csv"
UPPER_FILE = "upper.csv"
RUN_REPORT_FILE = "run_report.json"


def format_float(x):
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return NA
    return repr(float(x))


def write_matrix(path, A, prefix="V", fmt=format_float):
    A = np.asarray(A)
    if A.ndim != 2:
        raise InvalidInputError("only 2-d matrices can be written")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"{prefix}{j + 1}" for j in range(A.shape[1])])
        for row in A:
            w.writerow([fmt(v) for v in row])


def read_matrix(path, dtype=float):
    """Read a headered CSV matrix; ``NA`` and empty cells become NaN."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise InvalidInputError(f"{path} is empty")
    header, body = rows[0], rows[1:]
    out = np.empty((len(body), len(header)), dtype=float)
    for i, row in enumerate(body):
        if len(row) != len(header):
            raise InvalidInputError(
                f"{path}: row {i + 1} has {len(row)} fields, expected {len(header)}")
        for j, cell in enumerate(row):
            cell = cell.strip()
            out[i, j] = math.nan if cell in (NA, "", "NaN", "nan") else float(cell)
    return out.astype(dtype) if dtype is not float else out


def write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def save_dataset(directory, data, manifest=None):
    """Write X, observed Z (with NA), complete Z, observation counts and truth."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    ell, p = data.Z_full.shape
    write_matrix(d / X_FILE, data.X, prefix="x")
    write_matrix(d / Z_FILE, data.obs.to_matrix(ell, p), prefix="y")
    write_matrix(d / Z_FULL_FILE, data.Z_full, prefix="y")
    write_matrix(d / MASK_FILE, data.obs.counts(ell, p), prefix="y",
                 fmt=lambda v: str(int(v)))
    write_matrix(d / TRUTH_FILE, data.M_star, prefix="y")
    info = {"with_replacement": data.obs.with_replacement,
            "ell": ell, "m": data.X.shape[1], "p": p, "n": data.obs.n}
    if data.spec is not None:
        info["spec"] = data.spec.to_dict()
    if manifest:
        info.update(manifest)
    write_json(d / MANIFEST_FILE, info)


def load_dataset(directory):
    """Inverse of :func:`save_dataset`."""
    d = Path(directory)
    info = read_json(d / MANIFEST_FILE) if (d / MANIFEST_FILE).exists() else {}
    X = read_matrix(d / X_FILE)
    Z_obs = read_matrix(d / Z_FILE)
    counts = (read_matrix(d / MASK_FILE).astype(np.int64)
              if (d / MASK_FILE).exists() else None)
    with_repl = bool(info.get("with_replacement", False))
    obs = ObservationSet.from_matrix(Z_obs, counts, with_replacement=with_repl)
    Z_full = read_matrix(d / Z_FULL_FILE) if (d / Z_FULL_FILE).exists() else Z_obs
    M_star = read_matrix(d / TRUTH_FILE) if (d / TRUTH_FILE).exists() else None
    ell, p = Z_obs.shape
    heldout = obs.counts(ell, p) == 0
    spec = SettingSpec(**info["spec"]) if "spec" in info else None
    return SyntheticDataset(X, M_star, Z_full, obs, heldout, spec)


def write_rows(path, rows, columns):
    """Write dict rows as a tidy CSV with a fixed column order."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_cell(row.get(c)) for c in columns])


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return "" if math.isnan(v) else format_float(v)
    return str(v)
