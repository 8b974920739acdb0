"""Artifact readers and writers.

Time series go to CSV, reports to JSON.  Every artifact embeds the
configuration fingerprint and master seed on its first line (CSV) or as
top-level keys (JSON) so downstream commands can refuse to mix results from
different configurations.  Floats are serialized with ``repr``, which is
exact for binary64, so write/read round-trips and rerun comparisons are
byte-identical.
"""

from __future__ import annotations

import json
import re
from typing import Any, Dict, Mapping, Tuple

import numpy as np

__all__ = ["write_table", "read_table", "write_report", "read_report",
           "require_fingerprint"]

_META_RE = re.compile(r"^# fingerprint=(\S+) seed=(\d+)$")
_INT_RE = re.compile(r"^-?\d+$")


def _format(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def write_table(path: str, columns: Mapping[str, np.ndarray], *,
                fingerprint: str, seed: int) -> None:
    """Write named columns as CSV with a metadata comment line."""
    names = list(columns)
    if not names:
        raise ValueError("need at least one column")
    arrays = [np.asarray(columns[name]) for name in names]
    length = arrays[0].shape[0]
    for name, arr in zip(names, arrays):
        if arr.ndim != 1 or arr.shape[0] != length:
            raise ValueError(f"column {name!r} must be 1-D of length {length}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# fingerprint={fingerprint} seed={seed}\n")
        fh.write(",".join(names) + "\n")
        for row in range(length):
            fh.write(",".join(_format(arr[row]) for arr in arrays) + "\n")


def read_table(path: str) -> Tuple[Dict[str, Any], Dict[str, np.ndarray]]:
    """Read a CSV written by ``write_table``; returns (meta, columns)."""
    with open(path, "r", encoding="utf-8") as fh:
        meta_line = fh.readline().rstrip("\n")
        match = _META_RE.match(meta_line)
        if match is None:
            raise ValueError(f"{path}: missing fingerprint header line")
        meta = {"fingerprint": match.group(1), "seed": int(match.group(2))}
        header = fh.readline().rstrip("\n")
        if not header:
            raise ValueError(f"{path}: missing column header")
        names = header.split(",")
        cells = [[] for _ in names]
        for lineno, line in enumerate(fh, start=3):
            parts = line.rstrip("\n").split(",")
            if len(parts) != len(names):
                raise ValueError(f"{path}:{lineno}: expected {len(names)} fields")
            for cell, part in zip(cells, parts):
                cell.append(part)
    columns = {}
    for name, raw in zip(names, cells):
        if raw and all(_INT_RE.match(tok) for tok in raw):
            columns[name] = np.array([int(tok) for tok in raw], dtype=np.int64)
        else:
            columns[name] = np.array([float(tok) for tok in raw], dtype=float)
    return meta, columns


def write_report(path: str, payload: Mapping[str, Any], *,
                 fingerprint: str, seed: int) -> None:
    """Write a JSON report with the fingerprint and seed embedded."""
    body: Dict[str, Any] = {"fingerprint": fingerprint, "seed": seed}
    for key, value in payload.items():
        if key in body:
            raise ValueError(f"payload may not override {key!r}")
        body[key] = value
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(body, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_report(path: str) -> Dict[str, Any]:
    with open(path, "r", encoding="utf-8") as fh:
        body = json.load(fh)
    if not isinstance(body, dict) or "fingerprint" not in body:
        raise ValueError(f"{path}: not a report (missing fingerprint)")
    return body


def require_fingerprint(expected: str, found: str, what: str) -> None:
    """Refuse to combine artifacts from different configurations."""
    if expected != found:
        raise ValueError(
            f"fingerprint mismatch: {what} was produced by configuration "
            f"{found}, expected {expected}")
