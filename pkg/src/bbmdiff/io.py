"""Table and report writers shared by the harness.

Tables are CSV with ``# key=value`` header lines; floats are written with 17
significant digits so they round-trip exactly.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def write_table(path, columns, rows, **meta) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        for k in sorted(meta):
            fh.write(f"# {k}={_fmt(meta[k])}\n")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")
    return path


def write_columns(path, data: dict, **meta) -> Path:
    """Write equal-length 1-d arrays as named columns."""
    cols = list(data)
    arrays = [np.asarray(data[c]) for c in cols]
    return write_table(path, cols, zip(*arrays), **meta)


def read_table(path):
    """``(meta, columns, rows)`` with every cell as a string."""
    meta, rows, cols = {}, [], None
    with open(path) as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line.startswith("# ") and cols is None:
                k, _, v = line[2:].partition("=")
                meta[k] = v
            elif cols is None:
                cols = line.split(",")
            elif line:
                rows.append(line.split(","))
    return meta, cols, rows


def _default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def _clean(o):
    """Replace non-finite floats by ``None`` so the output is strict JSON."""
    if isinstance(o, dict):
        return {k: _clean(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_clean(v) for v in o]
    if isinstance(o, np.ndarray):
        return _clean(o.tolist())
    if isinstance(o, (float, np.floating)):
        return float(o) if np.isfinite(o) else None
    return o


def write_json(path, obj) -> Path:
    path = Path(path)
    with open(path, "w") as fh:
        json.dump(_clean(obj), fh, indent=2, sort_keys=True, default=_default, allow_nan=False)
        fh.write("\n")
    return path
