"""Point-cloud, label and table file formats.

Everything on disk is ASCII so test fixtures stay bit-exact:

* XYZ: whitespace separated ``x y z [extra ...]`` rows, ``#`` comments.
* PLY 1.0 (ascii only): a ``vertex`` element with float ``x y z`` and an
  optional integer ``label`` (1 = leaf, 0 = wood).
* Label files: one ``0``/``1`` per line, line ``i`` labels point ``i``.
* CSV tables for features, training sets and the sampling audit.

Floats are written with ``repr`` so every value round-trips exactly.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import EmptyInputError, ParseError, UnsupportedFormatError

LEAF = 1
WOOD = 0
CLASS_NAMES = {LEAF: "leaf", WOOD: "wood"}

# Display palette for classified output (RGB bytes).
LEAF_RGB = (0, 200, 0)
WOOD_RGB = (139, 69, 19)

FEATURE_COLUMNS = ("x", "y", "z", "c_lambda", "rho")
TRAINING_COLUMNS = ("point_index", "class") + FEATURE_COLUMNS
AUDIT_COLUMNS = ("point_index", "sigma", "class")


@dataclass
class PointCloud:
    """Ordered 3D points; row order is the identity used everywhere else."""

    points: np.ndarray
    name: str = field(default="cloud", compare=False)

    def __post_init__(self):
        pts = np.ascontiguousarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"points must have shape (N, 3), got {pts.shape}")
        if pts.shape[0] < 1:
            raise EmptyInputError("point cloud is empty")
        if not np.all(np.isfinite(pts)):
            raise ValueError("point coordinates must be finite")
        self.points = pts

    def __len__(self):
        return self.points.shape[0]


def as_labels(labels, n=None) -> np.ndarray:
    """Validate a label vector (1 = leaf, 0 = wood) and return it as int8."""
    arr = np.asarray(labels)
    if arr.ndim != 1:
        raise ValueError("labels must be one-dimensional")
    if arr.size and not np.all((arr == LEAF) | (arr == WOOD)):
        bad = arr[(arr != LEAF) & (arr != WOOD)][0]
        raise ValueError(f"invalid label {bad!r}; expected 0 (wood) or 1 (leaf)")
    if n is not None and arr.shape[0] != n:
        raise ValueError(f"label count {arr.shape[0]} does not match {n} points")
    return arr.astype(np.int8)


def _fmt(values) -> str:
    return " ".join(repr(v) for v in values)


# --- XYZ -------------------------------------------------------------------


def read_xyz(path) -> PointCloud:
    """Read an ASCII XYZ file; columns past the third are ignored."""
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            parts = text.split()
            if len(parts) < 3:
                raise ParseError("expected at least 3 numeric fields", path, lineno)
            try:
                rows.append((float(parts[0]), float(parts[1]), float(parts[2])))
            except ValueError:
                raise ParseError(f"non-numeric field in {text!r}", path, lineno) from None
    if not rows:
        raise EmptyInputError("no points found", path)
    try:
        return PointCloud(np.array(rows), name=Path(path).stem)
    except ValueError as exc:
        raise ParseError(str(exc), path) from None


def write_xyz(cloud: PointCloud, path) -> None:
    with open(path, "w") as fh:
        for row in cloud.points.tolist():
            fh.write(_fmt(row) + "\n")


# --- PLY -------------------------------------------------------------------

_PLY_INT_TYPES = {"char", "uchar", "short", "ushort", "int", "uint",
                  "int8", "uint8", "int16", "uint16", "int32", "uint32"}


def _parse_ply_header(fh, path):
    first = fh.readline().strip()
    if first != "ply":
        raise ParseError("missing 'ply' magic line", path, 1)
    elements = []  # [name, count, [(prop_name, prop_type)]]
    lineno = 1
    fmt_seen = False
    while True:
        line = fh.readline()
        lineno += 1
        if not line:
            raise ParseError("header not terminated by end_header", path, lineno)
        parts = line.split()
        if not parts or parts[0] in ("comment", "obj_info"):
            continue
        key = parts[0]
        if key == "format":
            if len(parts) < 2 or parts[1] != "ascii":
                fmt = parts[1] if len(parts) > 1 else "?"
                raise UnsupportedFormatError(
                    f"unsupported format {fmt!r}: only ascii PLY is supported", path, lineno
                )
            fmt_seen = True
        elif key == "element":
            if len(parts) != 3:
                raise ParseError("malformed element line", path, lineno)
            try:
                count = int(parts[2])
            except ValueError:
                raise ParseError("element count is not an integer", path, lineno) from None
            elements.append([parts[1], count, []])
        elif key == "property":
            if not elements:
                raise ParseError("property before any element", path, lineno)
            if parts[1] == "list":
                elements[-1][2].append((parts[-1], "list"))
            else:
                elements[-1][2].append((parts[2], parts[1]))
        elif key == "end_header":
            break
        else:
            raise ParseError(f"unknown header keyword {key!r}", path, lineno)
    if not fmt_seen:
        raise ParseError("header has no format line", path, lineno)
    return elements, lineno


def read_ply(path):
    """Read an ASCII PLY file.

    Returns
    -------
    (PointCloud, numpy.ndarray or None)
        The vertices in element order and the ``label`` property when the
        vertex element declares one.
    """
    with open(path) as fh:
        elements, lineno = _parse_ply_header(fh, path)
        vertex = next((e for e in elements if e[0] == "vertex"), None)
        if vertex is None:
            raise ParseError("no vertex element", path)
        names = [p[0] for p in vertex[2]]
        for axis in ("x", "y", "z"):
            if axis not in names:
                raise ParseError(f"vertex element lacks property {axis!r}", path)
        if any(t == "list" for _, t in vertex[2]):
            raise UnsupportedFormatError("list properties on vertices are not supported", path)
        cols = [names.index(a) for a in ("x", "y", "z")]
        label_col = names.index("label") if "label" in names else None
        if label_col is not None and vertex[2][label_col][1] not in _PLY_INT_TYPES:
            raise ParseError("label property must have an integer type", path)

        data_lines = (ln for ln in fh)
        pts = []
        labels = []
        for name, count, props in elements:
            for _ in range(count):
                line = next(data_lines, None)
                lineno += 1
                while line is not None and not line.strip():
                    line = next(data_lines, None)
                    lineno += 1
                if line is None:
                    raise ParseError(
                        f"vertex count mismatch: element {name!r} declares {count} rows",
                        path, lineno,
                    )
                if name != "vertex":
                    continue
                parts = line.split()
                if len(parts) != len(props):
                    raise ParseError(
                        f"expected {len(props)} values, found {len(parts)}", path, lineno
                    )
                try:
                    pts.append(tuple(float(parts[c]) for c in cols))
                    if label_col is not None:
                        labels.append(int(parts[label_col]))
                except ValueError:
                    raise ParseError("malformed numeric field", path, lineno) from None
        for line in data_lines:
            lineno += 1
            if line.strip():
                raise ParseError("vertex count mismatch: trailing data after last element",
                                 path, lineno)
    if not pts:
        raise EmptyInputError("no vertices", path)
    try:
        cloud = PointCloud(np.array(pts), name=Path(path).stem)
        lab = as_labels(labels, len(pts)) if label_col is not None else None
    except ValueError as exc:
        raise ParseError(str(exc), path) from None
    return cloud, lab


def write_ply(cloud: PointCloud, path, labels=None, colors=None) -> None:
    """Write ASCII PLY with optional per-vertex uchar colours and labels."""
    n = len(cloud)
    if labels is not None:
        labels = as_labels(labels, n)
    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {n}",
        "property double x",
        "property double y",
        "property double z",
    ]
    if colors is not None:
        colors = np.asarray(colors, dtype=np.uint8).reshape(n, 3)
        lines += ["property uchar red", "property uchar green", "property uchar blue"]
    if labels is not None:
        lines.append("property uchar label")
    lines.append("end_header")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
        pts = cloud.points.tolist()
        cols = colors.tolist() if colors is not None else None
        labs = labels.tolist() if labels is not None else None
        for i in range(n):
            row = _fmt(pts[i])
            if cols is not None:
                row += " %d %d %d" % tuple(cols[i])
            if labs is not None:
                row += " %d" % labs[i]
            fh.write(row + "\n")


def label_colors(labels) -> np.ndarray:
    labels = as_labels(labels)
    out = np.empty((labels.shape[0], 3), dtype=np.uint8)
    out[labels == LEAF] = LEAF_RGB
    out[labels == WOOD] = WOOD_RGB
    return out


def write_classified_ply(cloud: PointCloud, labels, path) -> None:
    """Write a classified cloud: leaf vertices green, wood vertices brown."""
    labels = as_labels(labels, len(cloud))
    write_ply(cloud, path, labels=labels, colors=label_colors(labels))


def read_cloud(path):
    """Dispatch on extension: ``.ply`` via :func:`read_ply`, anything else as XYZ."""
    if not os.path.exists(path):
        raise FileNotFoundError(f"input not found: {path}")
    if str(path).lower().endswith(".ply"):
        return read_ply(path)
    return read_xyz(path), None


# --- labels ----------------------------------------------------------------


def read_labels(path, n=None) -> np.ndarray:
    values = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text:
                continue
            if text not in ("0", "1"):
                raise ParseError(f"invalid label {text!r}; expected 0 or 1", path, lineno)
            values.append(int(text))
    if n is not None and len(values) != n:
        raise ParseError(f"label count {len(values)} does not match {n} points", path)
    return np.array(values, dtype=np.int8)


def write_labels(labels, path) -> None:
    labels = as_labels(labels)
    with open(path, "w") as fh:
        fh.writelines(f"{v}\n" for v in labels.tolist())


def read_truth(path, n=None) -> np.ndarray:
    """Labels from either a label text file or a labelled PLY."""
    if str(path).lower().endswith(".ply"):
        _, labels = read_ply(path)
        if labels is None:
            raise ParseError("PLY has no label property", path)
        if n is not None and labels.shape[0] != n:
            raise ParseError(f"label count {labels.shape[0]} does not match {n} points", path)
        return labels
    return read_labels(path, n)


# --- tables ----------------------------------------------------------------


def write_features_csv(features: np.ndarray, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(",".join(FEATURE_COLUMNS) + "\n")
        for row in features.tolist():
            fh.write(",".join(repr(v) for v in row) + "\n")


def _read_table(path, columns):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise EmptyInputError("empty table", path)
        if tuple(h.strip() for h in header) != tuple(columns):
            raise ParseError(f"expected header {','.join(columns)}", path, 1)
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(columns):
                raise ParseError(f"expected {len(columns)} fields", path, lineno)
            rows.append((lineno, row))
    if not rows:
        raise EmptyInputError("table has no rows", path)
    return rows


def read_features_csv(path) -> np.ndarray:
    out = []
    for lineno, row in _read_table(path, FEATURE_COLUMNS):
        try:
            out.append([float(v) for v in row])
        except ValueError:
            raise ParseError("malformed numeric field", path, lineno) from None
    return np.array(out, dtype=np.float64)


def write_training_csv(ts, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(",".join(TRAINING_COLUMNS) + "\n")
        for idx, cls, row in zip(ts.indices.tolist(), ts.classes.tolist(),
                                 ts.features.tolist()):
            fh.write(f"{idx},{cls}," + ",".join(repr(v) for v in row) + "\n")


def read_training_csv(path):
    from .sampling import TrainingSet

    idx, cls, feats = [], [], []
    for lineno, row in _read_table(path, TRAINING_COLUMNS):
        try:
            idx.append(int(row[0]))
            c = int(row[1])
            feats.append([float(v) for v in row[2:]])
        except ValueError:
            raise ParseError("malformed field", path, lineno) from None
        if c not in (LEAF, WOOD):
            raise ParseError(f"invalid class {c}", path, lineno)
        cls.append(c)
    return TrainingSet(np.array(idx, dtype=np.int64), np.array(cls, dtype=np.int8),
                       np.array(feats, dtype=np.float64))


def write_audit_csv(indices, sigmas, classes, path) -> None:
    """Sampling audit rows; ``classes`` uses -1 for unselected candidates."""
    names = {LEAF: "leaf", WOOD: "wood", -1: "none"}
    with open(path, "w", newline="") as fh:
        fh.write(",".join(AUDIT_COLUMNS) + "\n")
        for i, s, c in zip(np.asarray(indices).tolist(), np.asarray(sigmas).tolist(),
                           np.asarray(classes).tolist()):
            fh.write(f"{i},{s!r},{names[c]}\n")
