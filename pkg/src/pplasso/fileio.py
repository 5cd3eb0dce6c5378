"""
Readers and writers used by the command-line tools.

Input CSV files have a header row, comma delimiters and '.' decimals.
Errors carry the 1-based line number of the offending row.
"""

import csv
import json
import math

import numpy as np

from .solver import TrialData

__all__ = [
    "InputError",
    "read_numeric_csv",
    "read_trial_csv",
    "read_matrix_csv",
    "read_config",
    "dump_json",
    "load_json",
    "read_csv_rows",
    "standardize_columns",
    "top_variance",
]


class InputError(ValueError):
    """Malformed or inconsistent user input."""


def _parse_float(cell, line, column):
    try:
        value = float(cell)
    except ValueError:
        raise InputError(f"line {line}: non-numeric value {cell!r} in column {column!r}") from None
    if not math.isfinite(value):
        raise InputError(f"line {line}: non-finite value {cell!r} in column {column!r}")
    return value


def read_numeric_csv(path):
    """Header and float matrix of a CSV whose cells are all numeric."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or not any(cell.strip() for cell in rows[0]):
        raise InputError(f"{path}: missing header row")
    header = [h.strip() for h in rows[0]]
    if len(set(header)) != len(header):
        dup = next(h for h in header if header.count(h) > 1)
        raise InputError(f"{path}: duplicate column name {dup!r}")
    values = []
    for i, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise InputError(f"line {i}: expected {len(header)} fields, found {len(row)}")
        values.append([_parse_float(c.strip(), i, header[j]) for j, c in enumerate(row)])
    if not values:
        raise InputError(f"{path}: no data rows")
    return header, np.array(values), _data_lines(rows)


def _data_lines(rows):
    return [i for i, row in enumerate(rows[1:], start=2) if row and any(c.strip() for c in row)]


def read_trial_csv(path, response, treatment):
    """Load a trial table; every column other than the two named ones is a biomarker.

    Treatment values must be 1 or 2 and each arm needs at least two rows.
    """
    header, values, lines = read_numeric_csv(path)
    for name in (response, treatment):
        if name not in header:
            raise InputError(f"{path}: no column named {name!r}")
    if response == treatment:
        raise InputError("response and treatment must be different columns")
    iy, it = header.index(response), header.index(treatment)
    t = values[:, it]
    bad = np.flatnonzero(~np.isin(t, (1.0, 2.0)))
    if bad.size:
        i = int(bad[0])
        raise InputError(f"line {lines[i]}: treatment value {t[i]:g} is not 1 or 2")
    for arm in (1, 2):
        count = int(np.sum(t == arm))
        if count < 2:
            raise InputError(f"arm {arm} has {count} patient(s); at least 2 are needed")
    cols = [j for j in range(len(header)) if j not in (iy, it)]
    if not cols:
        raise InputError(f"{path}: no biomarker columns")
    names = [header[j] for j in cols]
    return TrialData(values[:, iy], t.astype(int), values[:, cols], names)


def read_matrix_csv(path, names=None):
    """Square matrix with a header of column names.

    With ``names`` the matrix is reordered (and subset) to that order.
    """
    header, values, _ = read_numeric_csv(path)
    if values.shape[0] != values.shape[1]:
        raise InputError(f"{path}: matrix is {values.shape[0]} x {values.shape[1]}, not square")
    if names is None:
        return header, values
    missing = [n for n in names if n not in header]
    if missing:
        raise InputError(f"{path}: no entry for biomarker {missing[0]!r}")
    idx = [header.index(n) for n in names]
    return list(names), values[np.ix_(idx, idx)]


def read_config(path, allowed):
    """Flat ``key = value`` file; '#' starts a comment.

    Keys may use '-' or '_'.  Returns a dict keyed with '_' and raises on
    keys outside ``allowed`` or repeated keys.
    """
    out = {}
    with open(path, encoding="utf-8") as fh:
        for i, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise InputError(f"{path} line {i}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            key = key.replace("-", "_")
            if key not in allowed:
                raise InputError(f"{path} line {i}: unknown key {key!r}")
            if key in out:
                raise InputError(f"{path} line {i}: key {key!r} given twice")
            out[key] = value
    return out


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        value = float(obj)
        return value if math.isfinite(value) else None
    return obj


def dump_json(obj, path):
    """Write ``obj`` with sorted keys; non-finite floats become null."""
    text = json.dumps(_plain(obj), sort_keys=True, indent=2, allow_nan=False)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text + "\n")


def load_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def read_csv_rows(path):
    """List of dicts from a CSV written by the tools."""
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def standardize_columns(X, names=None):
    """Center and scale columns to unit standard deviation."""
    X = np.asarray(X, dtype=float)
    sd = X.std(axis=0)
    zero = np.flatnonzero(sd <= 1e-12 * np.maximum(1.0, np.abs(X).max(axis=0)))
    if zero.size:
        j = int(zero[0])
        label = names[j] if names is not None else j
        raise InputError(f"biomarker {label!r} is constant")
    return (X - X.mean(axis=0)) / sd


def top_variance(X, count):
    """Column indices of the ``count`` highest-variance columns, in input order."""
    if count < 1:
        raise InputError("top-variance count must be at least 1")
    var = np.asarray(X, dtype=float).var(axis=0)
    keep = np.argsort(-var, kind="stable")[:count]
    return np.sort(keep)
