"""CSV and JSON emission. Numbers are written with 17 significant digits so they reparse exactly."""
from __future__ import annotations

import csv
import json
import math
import os

import numpy as np

TRACE_HEADER = ("iter", "L_total", "L_f", "L_b", "L_i", "L_vm", "L_sm", "L_sdm", "L_fm", "L_reg",
                "g_total", "g_f", "g_b", "g_i", "g_vm", "g_sm")
_TRACE_KEYS = {"L_total": "total", "L_reg": "l_reg"}


def fmt(v) -> str:
    """17-significant-digit text for floats; ints and strings pass through; None is blank."""
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        f = float(v)
        if math.isnan(f):
            return "nan"
        if math.isinf(f):
            return "inf" if f > 0 else "-inf"
        return f"{f:.17g}"
    return str(v)


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(v) for v in r])


def read_csv(path):
    """Rows as dicts of strings."""
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def emit_solution_csv(path, x, u_pred, u_exact=None, t=None) -> None:
    """Header ``x[,t],u_pred,u_exact,abs_err``; rows sorted by x then t."""
    x = np.asarray(x, dtype=np.float64).ravel()
    u_pred = np.asarray(u_pred, dtype=np.float64).ravel()
    cols = [x] if t is None else [x, np.asarray(t, dtype=np.float64).ravel()]
    order = np.lexsort(tuple(reversed(cols)))
    header = ["x"] + ([] if t is None else ["t"]) + ["u_pred", "u_exact", "abs_err"]
    if u_exact is None:
        ue = [None] * x.size
        err = [None] * x.size
    else:
        ue_arr = np.asarray(u_exact, dtype=np.float64).ravel()
        ue, err = ue_arr, np.abs(u_pred - ue_arr)
    rows = []
    for i in order:
        rows.append([c[i] for c in cols] + [u_pred[i], ue[i], err[i]])
    write_csv(path, header, rows)


def emit_trace_csv(path, trace) -> None:
    rows = []
    for r in trace:
        row = []
        for key in TRACE_HEADER:
            if key == "iter":
                row.append(int(r["iter"]))
            elif key.startswith("L_"):
                row.append(r[_TRACE_KEYS.get(key, "l_" + key[2:])])
            else:
                row.append(r.get(key))
        rows.append(row)
    write_csv(path, TRACE_HEADER, rows)


def write_json(path, data: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")


def ensure_dir(path) -> str:
    os.makedirs(path, exist_ok=True)
    return str(path)
