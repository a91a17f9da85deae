"""File outputs: solution/limit/comparison CSVs, JSON reports and run manifests.

Floats are written with ``repr``, the shortest string that round-trips to the
same double, so reruns produce byte-identical files.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .model import Solution


def fmt(x) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return None if math.isnan(x) else x
    return obj


def write_json(path: Path, obj) -> None:
    Path(path).write_text(json.dumps(_jsonable(obj), indent=1, sort_keys=False) + "\n")


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(x) if not isinstance(x, str) else x for x in row])


def solution_rows(sol: Solution):
    H, K, M = sol.spec.dims.H, sol.spec.dims.K, sol.spec.dims.M
    accept, ties = sol.policy.accept, sol.policy.ties
    for (h, k, m), val in np.ndenumerate(sol.V):
        decision = h < H and k < K
        yield (
            h + 1, k + 1, m + 1, val,
            sol.Q_fn[h, k, m, 0], sol.Q_fn[h, k, m, 1],
            "T" if decision and accept[h, k, m] else "W",
            bool(decision and ties is not None and ties[h, k, m]),
        )


def write_solution(out_dir: Path, sol: Solution, stem: str = "solution") -> None:
    write_csv(out_dir / f"{stem}.csv", ["h", "k", "m", "V", "Q_W", "Q_T", "action", "tie"],
              solution_rows(sol))
    write_json(out_dir / f"{stem}.json", {
        "converged": sol.converged,
        "iterations": sol.iterations,
        "residual": sol.residual,
        "error_bound": sol.error_bound,
        "V": sol.V,
        "v": sol.v,
        "U": sol.U,
        "W": sol.W_agg,
        "accept": sol.policy.accept.astype(int),
        "ties": sol.policy.ties.astype(int) if sol.policy.ties is not None else None,
    })


def sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(out_dir: Path, command: str, flags: dict, inputs=()) -> None:
    write_json(out_dir / "manifest.json", {
        "tool": "kidney-mdp",
        "version": __version__,
        "command": command,
        "flags": {k: (str(v) if isinstance(v, Path) else v) for k, v in flags.items() if not callable(v)},
        "inputs": {str(p): sha256(p) for p in inputs},
        "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    })
