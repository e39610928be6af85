"""File outputs: PGM map slices, CSV dumps, newline-delimited event logs."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .fusion import CumulativeMap
from .submaps import LocalSubmap, logistic

__all__ = [
    "write_pgm",
    "map_to_pgm",
    "submap_to_csv",
    "map_to_csv",
    "trajectory_to_csv",
    "events_to_ndjson",
    "execution_log_to_csv",
    "tree_trace_to_csv",
]


def write_pgm(path, image: np.ndarray) -> str:
    """8-bit binary PGM; values already in 0..255."""
    img = np.asarray(image)
    if img.ndim != 2:
        raise ValueError("PGM export needs a 2-D array")
    data = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{data.shape[1]} {data.shape[0]}\n255\n".encode())
        f.write(data.tobytes())
    return str(path)


def map_to_pgm(cmap: CumulativeMap, path, z_index: int | None = None) -> str:
    """Occupancy slice as grayscale: 0 free, 255 occupied, 127 unknown."""
    values = cmap.values
    known = cmap.known
    if cmap.dim == 3:
        k = values.shape[2] // 2 if z_index is None else z_index
        values = values[:, :, k]
        known = known[:, :, k]
    img = np.where(known, values * 255.0, 127.0)
    return write_pgm(path, img.T[::-1])  # row 0 at the top = largest y


def submap_to_csv(submap: LocalSubmap, path) -> str:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        dim = submap.origin.dim
        w.writerow([f"i{d}" for d in range(dim)] + ["log_odds", "probability"])
        for cell in sorted(submap.grid):
            l = submap.grid[cell]
            w.writerow(list(cell) + [f"{l:.6f}", f"{logistic(l):.6f}"])
    return str(path)


def map_to_csv(cmap: CumulativeMap, path) -> str:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        dim = cmap.dim
        w.writerow([f"i{d}" for d in range(dim)] + ["probability", "known"])
        for idx in np.ndindex(cmap.shape):
            if not cmap.known[idx]:
                continue
            cell = [int(cmap.lo[d] + idx[d]) for d in range(dim)]
            w.writerow(cell + [f"{cmap.values[idx]:.6f}", 1])
    return str(path)


def trajectory_to_csv(trajectory, path) -> str:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        n = trajectory.nodes[0][0].mean.shape[0]
        w.writerow(["t"] + [f"x{i}" for i in range(n)] + [f"var{i}" for i in range(n)])
        for belief, _ in trajectory.nodes:
            var = np.diag(belief.cov)
            w.writerow(
                [f"{belief.stamp:.3f}"]
                + [f"{x:.6f}" for x in belief.mean]
                + [f"{v:.9f}" for v in var]
            )
    return str(path)


def events_to_ndjson(events, path) -> str:
    with open(path, "w") as f:
        for e in events:
            f.write(json.dumps(e, sort_keys=True, default=_jsonable) + "\n")
    return str(path)


def _jsonable(x):
    if isinstance(x, (np.floating, np.integer)):
        return float(x)
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"not JSON-serialisable: {type(x)}")


def execution_log_to_csv(log, path) -> str:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        if not log:
            w.writerow(["t"])
            return str(path)
        n_true = len(log[0][1])
        w.writerow(
            ["t"]
            + [f"true{i}" for i in range(n_true)]
            + [f"mean{i}" for i in range(n_true)]
            + [f"var{i}" for i in range(n_true)]
            + ["event"]
        )
        for t, true, mean, var, event in log:
            w.writerow(
                [f"{t:.3f}"]
                + [f"{x:.6f}" for x in true]
                + [f"{x:.6f}" for x in mean]
                + [f"{x:.9f}" for x in var]
                + [event]
            )
    return str(path)


def tree_trace_to_csv(rows, path) -> str:
    """Planner trace: one row per node plus incumbent cost history."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["kind", "a", "b"])
        for kind, a, b in rows:
            w.writerow([kind, a, b])
    return str(path)
