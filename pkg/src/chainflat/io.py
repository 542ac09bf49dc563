"""CSV and JSON helpers shared by the CLI and the experiment drivers."""

from __future__ import annotations

import csv
import io
import json
import math

import numpy as np

from .exceptions import MalformedInput


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def dumps_json(obj):
    """Deterministic JSON bytes; floats use the shortest round-trip repr and
    non-finite values become null."""
    return (json.dumps(_plain(obj), sort_keys=True, indent=2, allow_nan=False) + "\n").encode("utf-8")


def read_json(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    try:
        return json.loads(raw)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise MalformedInput(f"{path}: not valid JSON ({exc})") from exc


def write_bytes(path, payload):
    with open(path, "wb") as fh:
        fh.write(payload)


def format_csv(rows, header=None):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    if header:
        writer.writerow(header)
    for row in rows:
        writer.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def write_csv(path, rows, header=None):
    with open(path, "w", newline="") as fh:
        fh.write(format_csv(rows, header))


def _parse_table(text, source, header):
    rows = [r for r in csv.reader(io.StringIO(text)) if r and any(c.strip() for c in r)]
    names = None
    if header:
        if not rows:
            raise MalformedInput(f"{source}: missing header row")
        names, rows = [c.strip() for c in rows[0]], rows[1:]
    if not rows:
        raise MalformedInput(f"{source}: no data rows")
    width = len(rows[0])
    try:
        data = np.array([[float(c) for c in r] for r in rows if len(r) == width], dtype=float)
    except ValueError as exc:
        raise MalformedInput(f"{source}: non-numeric entry ({exc})") from exc
    if len(data) != len(rows):
        raise MalformedInput(f"{source}: rows have differing column counts")
    return names, data


def read_points(path, header=False, d=None):
    """Points CSV, one point per row.  Raises ``MalformedInput`` on ragged rows,
    non-numeric entries or a column count other than ``d``."""
    with open(path) as fh:
        _, data = _parse_table(fh.read(), path, header)
    if d is not None and data.shape[1] != d:
        raise MalformedInput(f"{path}: expected {d} columns, found {data.shape[1]}")
    return data


def read_labeled(points_path, labels_path=None, header=False):
    """Points and integer labels, either from two files or from one file whose
    header has a ``label`` column."""
    if labels_path is None:
        with open(points_path) as fh:
            names, data = _parse_table(fh.read(), points_path, True)
        if "label" not in names:
            raise MalformedInput(f"{points_path}: no 'label' column and no labels file given")
        j = names.index("label")
        labels = data[:, j]
        points = np.delete(data, j, axis=1)
    else:
        points = read_points(points_path, header)
        labels = read_points(labels_path, header)
        if labels.shape[1] != 1 or labels.shape[0] != points.shape[0]:
            raise MalformedInput("labels file must have one column and one row per point")
        labels = labels[:, 0]
    if np.any(labels != np.round(labels)):
        raise MalformedInput("labels must be integers")
    return points, labels.astype(int)
