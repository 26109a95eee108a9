"""File formats: long-format observations, design CSV, truth/fit/report JSON.

All JSON is written with sorted keys and a trailing newline so equal
content gives byte-identical files.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ..design import DesignMatrix
from ..simulate import ObservationSet, Truth

__all__ = [
    "FORMAT_VERSION",
    "InputError",
    "write_long_csv",
    "read_long_csv",
    "write_design_csv",
    "read_design_csv",
    "write_truth_json",
    "read_truth_json",
    "write_json",
    "read_json",
    "to_jsonable",
]

FORMAT_VERSION = 1


class InputError(ValueError):
    """Malformed or inconsistent input files."""


def to_jsonable(obj):
    """Recursively convert numpy containers/scalars; non-finite floats become strings."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(path, obj) -> None:
    text = json.dumps(to_jsonable(obj), sort_keys=True, indent=2)
    Path(path).write_text(text + "\n")


def read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read JSON {path}: {exc}") from exc


def write_long_csv(path, obs: ObservationSet, subject_ids: Optional[Sequence] = None) -> None:
    """One row per observation: ``subject_id,t,y``."""
    ids = list(range(obs.N)) if subject_ids is None else list(subject_ids)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["subject_id", "t", "y"])
        for sid, t, y in zip(ids, obs.times, obs.values):
            for tt, yy in zip(t, y):
                w.writerow([sid, repr(float(tt)), repr(float(yy))])


def read_long_csv(path) -> tuple[ObservationSet, list]:
    """Returns the observations and subject ids in order of first appearance."""
    order: list = []
    rows: dict = {}
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or not {"subject_id", "t", "y"} <= set(reader.fieldnames):
                raise InputError(f"{path}: header must contain subject_id,t,y")
            for k, row in enumerate(reader, start=2):
                sid = row["subject_id"]
                try:
                    t, y = float(row["t"]), float(row["y"])
                except (TypeError, ValueError) as exc:
                    raise InputError(f"{path}:{k}: non-numeric t or y") from exc
                if sid not in rows:
                    rows[sid] = ([], [])
                    order.append(sid)
                rows[sid][0].append(t)
                rows[sid][1].append(y)
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    if not order:
        raise InputError(f"{path}: no observations")
    obs = ObservationSet([np.array(rows[s][0]) for s in order], [np.array(rows[s][1]) for s in order])
    return obs, order


def write_design_csv(path, X, names: Optional[Sequence[str]] = None) -> None:
    """``N x I`` matrix with a header row of predictor names."""
    X = getattr(X, "X", X)
    if names is None:
        names = [f"x{i}" for i in range(X.shape[1])]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(names))
        for row in X:
            w.writerow([repr(float(v)) for v in row])


def read_design_csv(path) -> DesignMatrix:
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if not header:
                raise InputError(f"{path}: missing header row")
            data = []
            for k, row in enumerate(reader, start=2):
                if len(row) != len(header):
                    raise InputError(f"{path}:{k}: expected {len(header)} fields, got {len(row)}")
                try:
                    data.append([float(v) for v in row])
                except ValueError as exc:
                    raise InputError(f"{path}:{k}: non-numeric entry") from exc
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    if not data:
        raise InputError(f"{path}: no subjects")
    return DesignMatrix(np.array(data), names=tuple(header))


def write_truth_json(path, truth: Truth) -> None:
    write_json(path, {"format_version": FORMAT_VERSION, **truth.to_dict()})


def read_truth_json(path) -> Truth:
    d = read_json(path)
    try:
        return Truth.from_dict(d)
    except (KeyError, ValueError) as exc:
        raise InputError(f"{path}: malformed truth file: {exc}") from exc
