"""Atomic CSV/JSON writers shared by the analysis modules and the CLI."""
from __future__ import annotations

import csv
import json
import os
import tempfile

import numpy as np


def fmt(x) -> str:
    """Round-trip decimal representation."""
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    return str(x)


def _atomic(path, suffix, write) -> None:
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=suffix)
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            write(fh)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv_atomic(path, header, rows) -> None:
    def write(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])

    _atomic(path, ".csv", write)


def jsonable(v):
    if isinstance(v, dict):
        return {str(k): jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return jsonable(v.tolist())
    if isinstance(v, (np.bool_,)):
        return bool(v)
    if isinstance(v, (np.floating, np.integer)):
        v = v.item()
    if isinstance(v, float) and not np.isfinite(v):
        return None
    if isinstance(v, complex):
        return [v.real, v.imag]
    return v


def write_json_atomic(path, obj) -> None:
    def write(fh):
        json.dump(jsonable(obj), fh, indent=1, sort_keys=True)
        fh.write("\n")

    _atomic(path, ".json", write)


def write_text_atomic(path, text: str) -> None:
    _atomic(path, ".txt", lambda fh: fh.write(text))
