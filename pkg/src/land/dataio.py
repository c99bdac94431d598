"""File plumbing shared by the CLI: CSV datasets, JSON artifacts, hashes.

Datasets are CSV with header x1,...,xD and an optional trailing label
column; floats are written with %.17g so values round-trip exactly and
files are byte-stable. JSON is written sorted and indented for the same
reason.
"""

from __future__ import annotations

import csv
import hashlib
import json

import numpy as np

from .evaluation import LabeledDataset


def write_dataset_csv(path, dataset):
    """CSV with header x1,...,xD[,label]; newline '\\n', UTF-8."""
    pts = dataset.points
    cols = [f"x{i + 1}" for i in range(pts.shape[1])]
    if dataset.labels is not None:
        cols.append("label")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(cols) + "\n")
        for i in range(len(pts)):
            row = [format(v, ".17g") for v in pts[i]]
            if dataset.labels is not None:
                row.append(str(int(dataset.labels[i])))
            fh.write(",".join(row) + "\n")


def read_dataset_csv(path):
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or not rows[0]:
        raise ValueError(f"{path}: empty dataset file")
    header = rows[0]
    has_labels = header[-1] == "label"
    d = len(header) - (1 if has_labels else 0)
    if header[:d] != [f"x{i + 1}" for i in range(d)]:
        raise ValueError(f"{path}: expected header x1,...,xD[,label]")
    body = [r for r in rows[1:] if r]
    points = np.array([[float(v) for v in r[:d]] for r in body])
    labels = np.array([int(r[d]) for r in body]) if has_labels else None
    if points.size == 0:
        raise ValueError(f"{path}: no data rows")
    return LabeledDataset(points=points, labels=labels)


def write_json(path, obj):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def write_trace_csv(path, trace):
    """Per-iteration objective values: header iter,objective."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("iter,objective\n")
        for i, v in enumerate(np.asarray(trace, dtype=float)):
            fh.write(f"{i},{format(v, '.17g')}\n")


def write_grid_csv(path, xs, ys, density):
    """Density surface rows (x, y, density), y varying fastest."""
    density = np.asarray(density, dtype=float)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("x,y,density\n")
        for i, x in enumerate(np.asarray(xs, dtype=float)):
            for j, y in enumerate(np.asarray(ys, dtype=float)):
                fh.write(f"{format(x, '.17g')},{format(y, '.17g')},"
                         f"{format(density[i, j], '.17g')}\n")


def file_sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
