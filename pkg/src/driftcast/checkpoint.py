"""Textual checkpoint format shared by model and adapter serialization.

Layout (UTF-8 text, stable across versions):

    # driftcast-checkpoint v1
    meta <key> <value>
    ...
    param <name> <rows> <cols>
    <row of space-separated floats, repr precision>
    ...

Floats are written with Python repr (shortest round-trip form), so a
save/load cycle reproduces every array bit-exactly.
"""

from __future__ import annotations

from typing import Dict, List, Tuple

import numpy as np

MAGIC = "# driftcast-checkpoint v1"


def _fmt(v: float) -> str:
    return repr(float(v))


def write_blocks(path: str, meta: Dict[str, str],
                 params: List[Tuple[str, np.ndarray]]) -> None:
    lines = [MAGIC]
    for key in meta:
        lines.append(f"meta {key} {meta[key]}")
    for name, arr in params:
        a = np.atleast_2d(np.asarray(arr, dtype=np.float64))
        lines.append(f"param {name} {a.shape[0]} {a.shape[1]}")
        for row in a:
            lines.append(" ".join(_fmt(v) for v in row))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_blocks(path: str) -> Tuple[Dict[str, str], Dict[str, np.ndarray]]:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != MAGIC:
        raise ValueError(f"{path}: not a driftcast checkpoint")
    meta: Dict[str, str] = {}
    params: Dict[str, np.ndarray] = {}
    i = 1
    while i < len(lines):
        line = lines[i]
        if not line.strip():
            i += 1
            continue
        if line.startswith("meta "):
            _, key, value = line.split(" ", 2)
            meta[key] = value
            i += 1
        elif line.startswith("param "):
            _, name, rows, cols = line.split(" ")
            rows, cols = int(rows), int(cols)
            data = np.empty((rows, cols), dtype=np.float64)
            for r in range(rows):
                data[r] = [float(tok) for tok in lines[i + 1 + r].split()]
            params[name] = data
            i += 1 + rows
        else:
            raise ValueError(f"{path}: unrecognized line {i + 1}: {line!r}")
    return meta, params
