"""Deterministic file emitters: CSV tables, flat key-value reports, and
legacy structured-points volume files.

All floats print through one shortest-roundtrip format so re-running a
solve byte-reproduces every artifact; nothing time- or host-dependent is
ever written.
"""

import json
import os

import numpy as np


def fmt(x):
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def write_csv(path, columns):
    """columns: dict name -> 1-D array (all the same length)."""
    names = list(columns)
    arrays = [np.asarray(columns[n]).ravel() for n in names]
    n = len(arrays[0])
    with open(path, "w", encoding="utf-8") as f:
        f.write(",".join(names) + "\n")
        for i in range(n):
            f.write(",".join(fmt(a[i]) for a in arrays) + "\n")


def write_keyvalue(path, data):
    """Flat text report: one `name = value` line per entry, input order."""
    with open(path, "w", encoding="utf-8") as f:
        for key, val in data.items():
            f.write(f"{key} = {fmt(val) if isinstance(val, (int, float, np.floating, np.integer)) else val}\n")


def write_json(path, data):
    def default(o):
        if isinstance(o, (np.floating, np.integer)):
            return float(o)
        if isinstance(o, np.ndarray):
            return o.tolist()
        raise TypeError(f"not serializable: {type(o)}")

    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=1, sort_keys=True, default=default)
        f.write("\n")


def write_vtk_structured(path, origin, spacing, dims, point_data):
    """Legacy ASCII structured-points file.

    dims = (n1, n2, n3) with the first index fastest in memory order of the
    supplied (n1, n2, n3) arrays; scalars only.
    """
    n1, n2, n3 = dims
    total = n1 * n2 * n3
    with open(path, "w", encoding="utf-8") as f:
        f.write("# vtk DataFile Version 3.0\n")
        f.write("duct flow fields\n")
        f.write("ASCII\n")
        f.write("DATASET STRUCTURED_POINTS\n")
        f.write(f"DIMENSIONS {n1} {n2} {n3}\n")
        f.write("ORIGIN " + " ".join(fmt(v) for v in origin) + "\n")
        f.write("SPACING " + " ".join(fmt(v) for v in spacing) + "\n")
        f.write(f"POINT_DATA {total}\n")
        for name, field in point_data.items():
            arr = np.asarray(field)
            if arr.shape != (n1, n2, n3):
                raise ValueError(f"field {name} has shape {arr.shape}")
            f.write(f"SCALARS {name} double 1\n")
            f.write("LOOKUP_TABLE default\n")
            flat = arr.ravel(order="F")
            for i in range(0, total, 6):
                f.write(" ".join(fmt(v) for v in flat[i: i + 6]) + "\n")


def ensure_dir(path):
    os.makedirs(path, exist_ok=True)
    return path
