"""Snapshot files: a short text header followed by raw little-endian float64.

Header lines are ``key value`` pairs ending with a line ``end``.  The data
block is the field in row-major order over (spatial cell, velocity node).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FileShapeError

MAGIC = "fermikin-snapshot 1"


@dataclass
class Snapshot:
    field: np.ndarray
    v_max: float
    nodes_per_axis: int
    time: float
    step: int = 0


def write_snapshot(path, field, v_max, nodes_per_axis, time, step=0):
    field = np.asarray(field, dtype="<f8")
    field = np.atleast_2d(field)
    header = (
        f"{MAGIC}\n"
        f"n_cells {field.shape[0]}\n"
        f"nodes_per_axis {nodes_per_axis}\n"
        f"v_max {float(v_max)!r}\n"
        f"time {float(time)!r}\n"
        f"step {int(step)}\n"
        "end\n"
    )
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(np.ascontiguousarray(field).tobytes())
    return path


def read_snapshot(path):
    data = Path(path).read_bytes()
    meta = {}
    pos = 0
    first = True
    while True:
        nl = data.find(b"\n", pos)
        if nl < 0:
            raise FileShapeError(f"{path}: header has no 'end' line")
        line = data[pos:nl].decode("ascii", errors="replace").strip()
        pos = nl + 1
        if first:
            if line != MAGIC:
                raise FileShapeError(f"{path}: not a snapshot file")
            first = False
            continue
        if line == "end":
            break
        key, _, value = line.partition(" ")
        meta[key] = value
    try:
        n_cells = int(meta["n_cells"])
        n = int(meta["nodes_per_axis"])
        v_max, time = float(meta["v_max"]), float(meta["time"])
        step = int(meta.get("step", 0))
    except (KeyError, ValueError) as exc:
        raise FileShapeError(f"{path}: bad header ({exc})")
    expected = n_cells * n**3 * 8
    if len(data) - pos != expected:
        raise FileShapeError(f"{path}: data block has {len(data) - pos} bytes, header implies {expected}")
    field = np.frombuffer(data, dtype="<f8", offset=pos).reshape(n_cells, n**3).astype(float)
    return Snapshot(field, v_max, n, time, step)
