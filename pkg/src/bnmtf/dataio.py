"""CSV ingestion and preprocessing, and serialisation of states, traces and
experiment results.

Numbers are written with 17 significant digits (CSV) or Python's shortest
round-trip repr (JSON), so every finite float reads back bit for bit.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .experiments import RESULT_COLUMNS, TIMING_COLUMNS
from .masked import MaskedMatrix
from .state import (
    GammaFactor,
    NmfState,
    NmtfState,
    TnFactor,
    VbNmfState,
    VbNmtfState,
)
from .trace import TraceRecord

SCHEMA_VERSION = 1


def fmt(x) -> str:
    """CSV cell text: 17 significant digits for floats, empty for None,
    strings unchanged."""
    if x is None:
        return ""
    if isinstance(x, str):
        return x
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "nan"
    return format(x, ".17g")


# --------------------------------------------------------------------------- #
# Matrices
# --------------------------------------------------------------------------- #

def load_csv(path, missing_token: str = "", header: bool = False) -> MaskedMatrix:
    """Read a rectangular numeric CSV; cells equal to ``missing_token`` are unobserved.

    Surrounding whitespace is ignored. With ``header`` the first line is skipped.
    """
    with open(path, newline="") as fh:
        lines = list(csv.reader(fh))
    first = 1 if header else 0
    body = lines[first:]
    # A trailing blank line is not a row.
    while body and body[-1] == []:
        body.pop()
    if not body:
        raise ValueError(f"{path}: no data rows")
    width = len(body[0])
    values = np.zeros((len(body), width))
    mask = np.zeros((len(body), width), dtype=bool)
    for r, row in enumerate(body):
        line = r + first + 1
        if len(row) != width:
            raise ValueError(f"{path}: line {line} has {len(row)} fields, expected {width}")
        for c, cell in enumerate(row):
            cell = cell.strip()
            if cell == missing_token:
                continue
            try:
                v = float(cell)
            except ValueError:
                raise ValueError(f"{path}: cannot parse {cell!r} at line {line}, column {c + 1}") from None
            if not math.isfinite(v):
                raise ValueError(f"{path}: non-finite value {cell!r} at line {line}, column {c + 1}")
            values[r, c] = v
            mask[r, c] = True
    if not mask.any():
        raise ValueError(f"{path}: no observed cells")
    return MaskedMatrix(values, mask)


def save_csv(path, data: MaskedMatrix, missing_token: str = "") -> None:
    """Write observed cells with 17 significant digits and ``missing_token`` elsewhere."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for vals, obs in zip(data.values, data.mask):
            w.writerow([fmt(v) if o else missing_token for v, o in zip(vals, obs)])


def write_matrix(path, matrix) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for row in np.asarray(matrix, dtype=float):
            w.writerow([fmt(v) for v in row])


@dataclass(frozen=True)
class PreprocessSpec:
    undo_natural_log: bool = False
    cap: Optional[float] = None
    drop_rows_with_fewer_than: Optional[int] = None

    def __post_init__(self):
        if self.cap is not None and not self.cap > 0:
            raise ValueError("cap must be positive")
        if self.drop_rows_with_fewer_than is not None and self.drop_rows_with_fewer_than < 0:
            raise ValueError("row threshold must be nonnegative")


def preprocess(data: MaskedMatrix, spec: PreprocessSpec) -> MaskedMatrix:
    """exp (optional), then cap, then drop rows with too few observed cells."""
    values = np.array(data.values)
    mask = np.array(data.mask)
    if spec.undo_natural_log:
        with np.errstate(over="ignore"):
            values = np.where(mask, np.exp(values), 0.0)
    if spec.cap is not None:
        values = np.where(mask, np.minimum(values, spec.cap), 0.0)
    if spec.drop_rows_with_fewer_than is not None:
        keep = mask.sum(axis=1) >= spec.drop_rows_with_fewer_than
        values, mask = values[keep], mask[keep]
    return MaskedMatrix(values, mask)


# --------------------------------------------------------------------------- #
# States
# --------------------------------------------------------------------------- #

def _arr(x):
    return None if x is None else np.asarray(x, dtype=float).tolist()


def _load_arr(x):
    return None if x is None else np.asarray(x, dtype=float)


def _tn(f: TnFactor) -> dict:
    return {"mu": _arr(f.mu), "tau": _arr(f.tau), "mean": _arr(f.mean), "var": _arr(f.var)}


def _gamma(g: Optional[GammaFactor]):
    return None if g is None else {"alpha": _arr(g.alpha), "beta": _arr(g.beta)}


def _load_tn(d) -> TnFactor:
    return TnFactor(*(_load_arr(d[k]) for k in ("mu", "tau", "mean", "var")))


def _load_gamma(d):
    return None if d is None else GammaFactor(_load_arr(d["alpha"]), _load_arr(d["beta"]))


def state_to_dict(state) -> dict:
    if isinstance(state, NmfState):
        body = {"type": "point", "model": "nmf", "U": _arr(state.U), "V": _arr(state.V),
                "tau": float(state.tau), "ard_lambda": _arr(state.ard_lambda)}
    elif isinstance(state, NmtfState):
        body = {"type": "point", "model": "nmtf", "F": _arr(state.F), "S": _arr(state.S),
                "G": _arr(state.G), "tau": float(state.tau),
                "ard_lambda_F": _arr(state.ard_lambda_F), "ard_lambda_G": _arr(state.ard_lambda_G)}
    elif isinstance(state, VbNmfState):
        body = {"type": "vb", "model": "nmf", "U": _tn(state.U), "V": _tn(state.V),
                "tau": _gamma(state.tau), "ard": _gamma(state.ard)}
    elif isinstance(state, VbNmtfState):
        body = {"type": "vb", "model": "nmtf", "F": _tn(state.F), "S": _tn(state.S),
                "G": _tn(state.G), "tau": _gamma(state.tau),
                "ard_F": _gamma(state.ard_F), "ard_G": _gamma(state.ard_G)}
    else:
        raise TypeError(f"cannot serialise {type(state).__name__}")
    return {"schema_version": SCHEMA_VERSION, **body}


def state_from_dict(d: dict):
    version = d.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ValueError(f"state schema version {version!r} is not supported (expected {SCHEMA_VERSION})")
    kind = (d.get("type"), d.get("model"))
    if kind == ("point", "nmf"):
        return NmfState(_load_arr(d["U"]), _load_arr(d["V"]), float(d["tau"]), _load_arr(d["ard_lambda"]))
    if kind == ("point", "nmtf"):
        return NmtfState(_load_arr(d["F"]), _load_arr(d["S"]), _load_arr(d["G"]), float(d["tau"]),
                         _load_arr(d["ard_lambda_F"]), _load_arr(d["ard_lambda_G"]))
    if kind == ("vb", "nmf"):
        return VbNmfState(_load_tn(d["U"]), _load_tn(d["V"]), _load_gamma(d["tau"]), _load_gamma(d["ard"]))
    if kind == ("vb", "nmtf"):
        return VbNmtfState(_load_tn(d["F"]), _load_tn(d["S"]), _load_tn(d["G"]), _load_gamma(d["tau"]),
                           _load_gamma(d["ard_F"]), _load_gamma(d["ard_G"]))
    raise ValueError(f"unknown state kind {kind!r}")


def save_state(path, state) -> None:
    # Infinite precisions (zero-variance factors) are written as JSON Infinity.
    Path(path).write_text(json.dumps(state_to_dict(state), indent=1) + "\n")


def load_state(path):
    return state_from_dict(json.loads(Path(path).read_text()))


# --------------------------------------------------------------------------- #
# Traces and results
# --------------------------------------------------------------------------- #

def write_trace(path, trace: TraceRecord, include_seconds: bool = False) -> None:
    """One line per recorded iteration (iteration 0 included).

    Wall time is left out by default so repeated runs give identical files.
    """
    cols = ["iteration", "train_mse"]
    if include_seconds:
        cols.insert(1, "seconds")
    if trace.elbo is not None:
        cols.append("elbo")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for n in range(len(trace)):
            row = [trace.iterations[n]]
            if include_seconds:
                row.append(fmt(trace.seconds[n]))
            row.append(fmt(trace.train_mse[n]))
            if trace.elbo is not None:
                row.append(fmt(trace.elbo[n]))
            w.writerow(row)


def _row_values(row, columns):
    return [getattr(row, c) for c in columns]


def _header(result, columns):
    # The generic "setting" column is named after what it holds (nsr, K, ...).
    return [result.setting_name if c == "setting" else c for c in columns]


def write_results(path, result, format: str = "csv") -> None:
    """Write result rows in ``RESULT_COLUMNS`` order (no wall time); the
    ``setting`` column is headed by the result's ``setting_name``."""
    header = _header(result, RESULT_COLUMNS)
    if format == "csv":
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in result.rows:
                w.writerow([fmt(v) for v in _row_values(row, RESULT_COLUMNS)])
    elif format == "json":
        doc = {
            "schema_version": SCHEMA_VERSION,
            "experiment": result.kind,
            "setting_name": result.setting_name,
            "columns": header,
            "rows": [dict(zip(header, _row_values(r, RESULT_COLUMNS))) for r in result.rows],
        }
        Path(path).write_text(json.dumps(doc, indent=1) + "\n")
    else:
        raise ValueError(f"unknown results format {format!r}")


def write_timings(path, result) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(_header(result, TIMING_COLUMNS))
        for row in result.rows:
            w.writerow([fmt(v) for v in _row_values(row, TIMING_COLUMNS)])


def write_experiment_traces(path, result, seconds: bool = False) -> None:
    """Mean convergence traces; ``seconds`` writes the wall-time companion instead."""
    name = "seconds" if seconds else "train_mse"
    rows = result.trace_seconds if seconds else result.traces
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "engine", "iteration", name])
        for model, engine, it, v in rows:
            w.writerow([model, engine, it, fmt(v)])


def read_results(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
