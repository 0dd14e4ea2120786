"""File formats and atomic writes.

Every writer goes through :func:`atomic_write`, which writes to a
temporary file in the target directory and renames it into place, so a
failed run never leaves a partial output behind.
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .errors import StructuralError
from .gaussian_paths import RoughPath, SamplePath, TimeGrid
from .reports import jsonable


def atomic_write(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def dumps_json(obj) -> str:
    return json.dumps(jsonable(obj), sort_keys=True, indent=2) + "\n"


def write_json(path, obj) -> Path:
    return atomic_write(path, dumps_json(obj))


def path_to_csv(path: SamplePath) -> str:
    """Header ``t,x1..xm``; 17 significant digits."""
    m = path.dims
    lines = ["t," + ",".join(f"x{i + 1}" for i in range(m))]
    for t, row in zip(path.times, path.values):
        lines.append(",".join(f"{v:.17g}" for v in (t, *row)))
    return "\n".join(lines) + "\n"


def lift_to_csv(rp: RoughPath) -> str:
    """Per-step second level as rows ``i,j,k,l,value`` with ``j = i + 1``."""
    lines = ["i,j,k,l,value"]
    steps = rp.step_areas()
    m = rp.dims
    for i, a in enumerate(steps):
        for k in range(m):
            for l in range(m):
                lines.append(f"{i},{i + 1},{k},{l},{a[k, l]:.17g}")
    return "\n".join(lines) + "\n"


def read_path_csv(path) -> SamplePath:
    """Inverse of :func:`path_to_csv`."""
    try:
        with open(path) as fh:
            header = fh.readline().strip().split(",")
            data = np.loadtxt(fh, delimiter=",", ndmin=2)
    except OSError:
        raise
    except ValueError as exc:
        raise StructuralError(f"malformed path CSV {path}: {exc}") from exc
    if not header or header[0] != "t" or data.shape[1] != len(header):
        raise StructuralError(f"{path} does not have a 't,x1..xm' header")
    return SamplePath(TimeGrid(data[:, 0]), data[:, 1:])


def read_lift_csv(path, base: SamplePath) -> RoughPath:
    """Rebuild a rough path from a base path and its per-step lift dump."""
    try:
        with open(path) as fh:
            header = fh.readline().strip()
            data = np.loadtxt(fh, delimiter=",", ndmin=2)
    except ValueError as exc:
        raise StructuralError(f"malformed lift CSV {path}: {exc}") from exc
    if header != "i,j,k,l,value":
        raise StructuralError(f"{path} does not have an 'i,j,k,l,value' header")
    m = base.dims
    steps = np.zeros((base.n - 1, m, m))
    idx = data[:, :4].astype(int)
    if np.any(idx[:, 1] != idx[:, 0] + 1) or idx[:, 0].max(initial=-1) >= base.n - 1:
        raise StructuralError("lift CSV must hold per-step entries on the base grid")
    steps[idx[:, 0], idx[:, 2], idx[:, 3]] = data[:, 4]
    sym = 0.5 * (steps + np.swapaxes(steps, 1, 2))
    d = base.increments
    geometric = bool(np.allclose(sym, 0.5 * d[:, :, None] * d[:, None, :], rtol=0, atol=1e-14))
    return RoughPath(base, steps, geometric)
