"""Flat binary grids with a sidecar CSV table.

A dataset directory holds one ``<stem>_NNNNN.bin`` file per image (row-major,
little-endian, no header) and ``metadata.csv`` with one row per image. Counts
are stored as ``<u4``, spectra as ``<f4``.
"""

import csv
from pathlib import Path

import numpy as np

from .errors import PersistenceError, ShapeError

DTYPES = {"counts": "<u4", "spectrum": "<f4"}
METADATA = "metadata.csv"


def write_grid(path, grid, kind):
    a = np.ascontiguousarray(grid, dtype=DTYPES[kind])
    try:
        Path(path).write_bytes(a.tobytes())
    except OSError as exc:
        raise PersistenceError(f"cannot write {path}: {exc}") from exc


def read_grid(path, side, kind):
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise PersistenceError(f"cannot read {path}: {exc}") from exc
    a = np.frombuffer(raw, dtype=DTYPES[kind])
    if a.size != side * side:
        raise ShapeError(f"{path}: expected {side * side} values, found {a.size}")
    return a.reshape(side, side).copy()


def write_table(directory, rows, fieldnames):
    path = Path(directory) / METADATA
    try:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=fieldnames, lineterminator="\n")
            w.writeheader()
            for r in rows:
                w.writerow(r)
    except OSError as exc:
        raise PersistenceError(f"cannot write {path}: {exc}") from exc


def read_table(directory):
    path = Path(directory) / METADATA
    try:
        with open(path, newline="") as fh:
            return list(csv.DictReader(fh))
    except OSError as exc:
        raise PersistenceError(f"cannot read {path}: {exc}") from exc
