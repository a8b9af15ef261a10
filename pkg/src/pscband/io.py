"""Deterministic JSON and CSV writers.

Floats are written with 17 significant digits (``%.17g``), keys in insertion
order, NaN and infinities as the strings ``"nan"``, ``"inf"``, ``"-inf"``.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import asdict, is_dataclass
from pathlib import Path

import numpy as np

from .grid import Grid


def _float(x: float) -> str:
    if math.isnan(x):
        return '"nan"'
    if math.isinf(x):
        return '"inf"' if x > 0 else '"-inf"'
    return "%.17g" % x


def _plain(obj):
    if is_dataclass(obj) and not isinstance(obj, type):
        return obj.to_dict() if hasattr(obj, "to_dict") else asdict(obj)
    if isinstance(obj, enum.Enum):
        return obj.value
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def dumps(obj, indent: int = 2, _level: int = 0) -> str:
    obj = _plain(obj)
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if obj is None:
        return "null"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, float):
        return _float(obj)
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {dumps(v, indent, _level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        items = [pad + dumps(v, indent, _level + 1) for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def write_json(path: str | Path, obj) -> None:
    Path(path).write_text(dumps(obj) + "\n")


def grid_header(grid: Grid, fields: dict[str, np.ndarray]) -> dict:
    return {
        "axes": [{"name": a.name, "kind": a.kind.value, "count": a.count,
                  "length": float(a.length), "start": float(a.start)} for a in grid.axes],
        "order": "C (last axis fastest)",
        "columns": csv_columns(grid, fields),
    }


def csv_columns(grid: Grid, fields: dict[str, np.ndarray]) -> list[str]:
    cols = list(grid.names)
    for name, arr in fields.items():
        rank = np.ndim(arr) - grid.dim
        if rank == 0:
            cols.append(name)
        else:
            for idx in np.ndindex(*np.shape(arr)[grid.dim:]):
                cols.append(name + "_" + "".join(str(i + 1) for i in idx))
    return cols


def write_field_csv(path: str | Path, grid: Grid, fields: dict[str, np.ndarray]) -> Path:
    """One row per node: coordinates then components; sidecar ``<path>.json`` header."""
    path = Path(path)
    mesh = grid.mesh()
    cols = [mesh[n].ravel() for n in grid.names]
    for arr in fields.values():
        arr = np.real(np.asarray(arr))
        cols.extend(arr.reshape(grid.size, -1).T)
    data = np.column_stack(cols) if cols else np.zeros((0, 0))
    lines = [",".join(csv_columns(grid, fields))]
    lines.extend(",".join("%.17g" % v for v in row) for row in data)
    path.write_text("\n".join(lines) + "\n")
    write_json(path.with_suffix(path.suffix + ".json"), grid_header(grid, fields))
    return path


def write_table_csv(path: str | Path, rows: list[dict]) -> Path:
    path = Path(path)
    if not rows:
        path.write_text("")
        return path
    keys = list(rows[0])
    out = [",".join(keys)]
    for r in rows:
        out.append(",".join(_float(float(r[k])).strip('"') if isinstance(r[k], float) else str(r[k]) for k in keys))
    path.write_text("\n".join(out) + "\n")
    return path
