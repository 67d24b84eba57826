"""Deterministic CSV rows and JSON aggregates.

Raw rows never contain timings, so identical (config, seed) pairs give
byte-identical CSV files; wall time lives only in the JSON aggregate.
"""

from __future__ import annotations

import csv
import io
import json
import math
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__


def fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool) or isinstance(v, np.bool_):
        return "true" if v else "false"
    if isinstance(v, Fraction):
        return f"{v.numerator}/{v.denominator}" if v.denominator != 1 else str(v.numerator)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        return format(v, ".17g")
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (list, tuple, dict)):
        return json.dumps(jsonable(v), sort_keys=True, separators=(",", ":"))
    return str(v)


def jsonable(v):
    if isinstance(v, dict):
        return {fmt(k) if not isinstance(k, str) else k: jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple, set)):
        items = sorted(v, key=str) if isinstance(v, set) else v
        return [jsonable(x) for x in items]
    if isinstance(v, Fraction):
        return fmt(v)
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else str(v)
    if v is None or isinstance(v, str):
        return v
    return str(v)


def csv_text(header, rows, meta: dict) -> str:
    buf = io.StringIO()
    buf.write("# rmdim " + " ".join(f"{k}={meta[k]}" for k in sorted(meta)) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(v) for v in r])
    return buf.getvalue()


def write(out_dir: str | Path, stem: str, header, rows, aggregate: dict, meta: dict) -> tuple:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / f"{stem}.csv"
    json_path = out / f"{stem}.json"
    csv_path.write_text(csv_text(header, rows, meta))
    doc = {"version": __version__, **meta, "aggregate": jsonable(aggregate)}
    json_path.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")
    return csv_path, json_path
