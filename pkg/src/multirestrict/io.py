"""Persistence: sorted-key JSON, RFC-4180 CSV, binary fields with a JSON sidecar."""
from __future__ import annotations

import csv
import hashlib
import json
import math
from pathlib import Path

import numpy as np


def _default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, complex):
        return [o.real, o.imag]
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def _clean(o):
    # json emits NaN / Infinity, which is not JSON; encode non-finite floats as strings
    if isinstance(o, float) and not math.isfinite(o):
        return repr(o)
    if isinstance(o, dict):
        return {str(k): _clean(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_clean(v) for v in o]
    if isinstance(o, np.ndarray):
        return _clean(o.tolist())
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return _clean(o.item())
    return o


def dumps(obj) -> str:
    return json.dumps(_clean(obj), sort_keys=True, indent=2, default=_default,
                      allow_nan=False, ensure_ascii=False) + "\n"


def write_json(path, obj):
    Path(path).write_text(dumps(obj), encoding="utf-8")
    return Path(path)


def config_hash(obj) -> str:
    canon = json.dumps(_clean(obj), sort_keys=True, separators=(",", ":"), default=_default)
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)       # csv default dialect: CRLF line ends, minimal quoting
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    return Path(path)


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def save_field(path, values, spacing, center, patch_id=None):
    """Write ``values`` as raw little-endian binary plus ``<path>.json`` with
    {shape, spacing, center, patch_id, dtype}."""
    path = Path(path)
    arr = np.ascontiguousarray(values)
    dt = "<c16" if np.iscomplexobj(arr) else "<f8"
    arr.astype(dt).tofile(path)
    meta = {"shape": list(arr.shape), "spacing": spacing, "center": list(center),
            "patch_id": patch_id, "dtype": dt}
    write_json(str(path) + ".json", meta)
    return path


def load_field(path):
    path = Path(path)
    meta = json.loads(Path(str(path) + ".json").read_text(encoding="utf-8"))
    arr = np.fromfile(path, dtype=meta["dtype"]).reshape(meta["shape"])
    return arr, meta
