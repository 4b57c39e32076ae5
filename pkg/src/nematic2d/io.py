"""Field snapshots.

A snapshot is a text file::

    # grid <nx> <ny> <lx> <ly> <domain_kind>
    # columns <name> <name> ...
    <one row per node, row-major: y index outer, x index inner>

Floats are written with 17 significant digits so a read-back is lossless.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .fields import GridSpec


def write_snapshot(path, grid: GridSpec, columns: dict[str, np.ndarray]) -> None:
    names = list(columns)
    data = np.column_stack([np.asarray(columns[k], dtype=np.float64).reshape(-1) for k in names])
    if data.shape[0] != grid.n_nodes:
        raise ValueError("snapshot columns do not match the grid node count")
    lines = [
        f"# grid {grid.nx} {grid.ny} {grid.lx!r} {grid.ly!r} {grid.domain_kind}",
        "# columns " + " ".join(names),
    ]
    lines.extend(" ".join(format(x, ".17g") for x in row) for row in data)
    Path(path).write_text("\n".join(lines) + "\n")


def read_snapshot(path) -> tuple[GridSpec, dict[str, np.ndarray]]:
    with open(path) as fh:
        head = fh.readline().split()
        cols = fh.readline().split()
        if head[:2] != ["#", "grid"] or cols[:2] != ["#", "columns"]:
            raise ValueError(f"{path}: not a field snapshot")
        grid = GridSpec(head[6], float(head[4]), float(head[5]), int(head[2]), int(head[3]))
        data = np.loadtxt(fh, ndmin=2)
    names = cols[2:]
    return grid, {k: data[:, i].reshape(grid.shape) for i, k in enumerate(names)}
