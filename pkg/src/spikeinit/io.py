"""CSV and JSON helpers shared by the experiments."""
from __future__ import annotations

import csv
import json
import math
import os
import platform

import numpy as np

FLOAT_FMT = ".10g"


def _cell(x):
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), FLOAT_FMT)
    if x is None:
        return ""
    return str(x)


def write_csv(path, columns, rows):
    """Write ``rows`` (sequences or dicts keyed by ``columns``) with a header row.

    Floats use ``.10g`` so repeated runs give byte-identical files.
    """
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            vals = [r[c] for c in columns] if isinstance(r, dict) else list(r)
            w.writerow([_cell(v) for v in vals])


def read_csv(path):
    """Rows as dicts of strings."""
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.floating):
        x = float(x)
    if isinstance(x, float) and not math.isfinite(x):
        return str(x)
    return x


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def environment_info():
    from . import __version__
    from .kernels import BACKEND_NAME

    return {"spikeinit": __version__, "numpy": np.__version__, "python": platform.python_version(),
            "backend": BACKEND_NAME, "threads": os.environ.get("SPIKEINIT_THREADS", "1")}
