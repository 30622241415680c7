"""CSV and JSON serialization of clouds, labeled sets, solutions and reports.

Floats are written with ``repr`` so every value reloads bitwise.
"""
from __future__ import annotations

import csv
import json
import os
from pathlib import Path

import numpy as np

from .geometry import LabeledSet, ManifoldSpec, PointCloud, RegionSpec, label_function

AMBIENT_TO_KIND = {2: "circle", 3: "sphere", 4: "clifford_torus"}


class SchemaError(ValueError):
    """Malformed file; ``line`` is 1-based when known."""

    def __init__(self, msg, path=None, line=None):
        where = f"{path}:{line}: " if line is not None else (f"{path}: " if path else "")
        super().__init__(where + msg)
        self.path = path
        self.line = line


def _fmt(x) -> str:
    return repr(float(x))


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _read_table(path, required_prefix: str = "x"):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError("empty file", path, 1) from None
        header = [h.strip() for h in header]
        dims = [h for h in header if h.startswith(required_prefix) and h[1:].isdigit()]
        if not dims or dims != [f"x{i}" for i in range(len(dims))] or header[:len(dims)] != dims:
            raise SchemaError("header must start with x0,...,x{d-1}", path, 1)
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise SchemaError(f"expected {len(header)} fields, got {len(row)}", path, lineno)
            try:
                rows.append([float(c) for c in row])
            except ValueError as exc:
                raise SchemaError(f"not a number ({exc})", path, lineno) from None
    arr = np.array(rows, dtype=float).reshape(-1, len(header))
    return header, arr


def infer_manifold(points, kind: str | None = None, scale: float | None = None) -> ManifoldSpec:
    """Manifold from ambient dimension (2 circle, 3 sphere, 4 Clifford torus) and point norms."""
    pts = np.atleast_2d(points)
    kind = kind or AMBIENT_TO_KIND.get(pts.shape[1])
    if kind is None:
        raise SchemaError(f"cannot infer a manifold for ambient dimension {pts.shape[1]}")
    if scale is None:
        scale = float(f"{np.median(np.linalg.norm(pts, axis=1)):.12g}")
    spec = ManifoldSpec(kind, scale)
    if spec.ambient_dim != pts.shape[1]:
        raise SchemaError(f"{kind} lives in R^{spec.ambient_dim}, file has {pts.shape[1]} columns")
    return spec


# -- point clouds -------------------------------------------------------------

def save_cloud(path, cloud: PointCloud) -> None:
    path = Path(path)
    if path.suffix == ".json":
        env = {"type": "point_cloud", "spec": cloud.spec.to_dict(), "seed": cloud.seed, "mode": cloud.mode,
               "grid_shape": list(cloud.grid_shape) if cloud.grid_shape else None,
               "points": [[_fmt(v) for v in p] for p in cloud.points]}
        path.write_text(json.dumps(env, indent=1))
        return
    d = cloud.points.shape[1]
    _write_rows(path, [f"x{i}" for i in range(d)], ([_fmt(v) for v in p] for p in cloud.points))


def load_cloud(path, spec: ManifoldSpec | None = None, check: bool = True) -> PointCloud:
    path = Path(path)
    if path.suffix == ".json":
        env = _load_json(path)
        try:
            spec = ManifoldSpec.from_dict(env["spec"])
            pts = np.array([[float(v) for v in p] for p in env["points"]], dtype=float)
            gs = tuple(env["grid_shape"]) if env.get("grid_shape") else None
            cloud = PointCloud(pts.reshape(-1, spec.ambient_dim), spec, int(env["seed"]), env["mode"], gs)
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"bad point cloud envelope ({exc})", path) from None
    else:
        header, arr = _read_table(path)
        if len(header) != arr.shape[1] or any(not h.startswith("x") for h in header):
            raise SchemaError("point cloud CSV takes only x columns", path, 1)
        if arr.shape[0] == 0:
            raise SchemaError("no points", path, 2)
        spec = spec or infer_manifold(arr)
        cloud = PointCloud(arr, spec, 0, "file")
    if check:
        _check_rows(spec, cloud.points, path)
    return cloud


def _check_rows(spec, pts, path):
    bad = np.flatnonzero(np.abs(spec.constraint_residual(pts)) > 1e-9 * spec.scale)
    if bad.size:
        raise SchemaError("point is not on the manifold", path, int(bad[0]) + 2)


# -- labeled sets -------------------------------------------------------------------

def save_labeled(path, labeled: LabeledSet) -> None:
    path = Path(path)
    if path.suffix == ".json":
        env = {"type": "labeled_set", "seed": labeled.seed,
               "region": labeled.region.to_dict() if labeled.region is not None else None,
               "label_fn": labeled.label_fn.to_dict() if labeled.label_fn is not None else None,
               "points": [[_fmt(v) for v in p] for p in labeled.points],
               "values": [_fmt(v) for v in labeled.values]}
        path.write_text(json.dumps(env, indent=1))
        return
    d = labeled.points.shape[1]
    _write_rows(path, [f"x{i}" for i in range(d)] + ["b"],
                ([_fmt(v) for v in p] + [_fmt(b)] for p, b in zip(labeled.points, labeled.values)))


def load_labeled(path, spec: ManifoldSpec | None = None, check: bool = True) -> LabeledSet:
    path = Path(path)
    if path.suffix == ".json":
        env = _load_json(path)
        try:
            region = RegionSpec.from_dict(env["region"]) if env.get("region") else None
            fn = label_function(env["label_fn"]) if env.get("label_fn") else None
            pts = np.array([[float(v) for v in p] for p in env["points"]], dtype=float)
            vals = np.array([float(v) for v in env["values"]], dtype=float)
            return LabeledSet(pts, vals, region, int(env["seed"]), fn)
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"bad labeled set envelope ({exc})", path) from None
    header, arr = _read_table(path)
    if header[-1] != "b" or len(header) < 2:
        raise SchemaError("labeled CSV needs x0,...,x{d-1},b", path, 1)
    if arr.shape[0] == 0:
        raise SchemaError("no labeled points", path, 2)
    pts, vals = arr[:, :-1], arr[:, -1]
    if check:
        _check_rows(spec or infer_manifold(pts), pts, path)
    bad = np.flatnonzero(~np.isfinite(vals))
    if bad.size:
        raise SchemaError("label value is not finite", path, int(bad[0]) + 2)
    return LabeledSet(pts, vals)


# -- solutions and reports -------------------------------------------------------------

def save_solution(path, points, u, labeled_points, labeled_values) -> None:
    """Point coordinates, value and a 0/1 labeled flag; unlabeled rows first."""
    P = np.atleast_2d(points)
    d = P.shape[1]
    rows = [[_fmt(v) for v in p] + [_fmt(x), "0"] for p, x in zip(P, u)]
    rows += [[_fmt(v) for v in p] + [_fmt(x), "1"] for p, x in zip(np.atleast_2d(labeled_points), labeled_values)]
    _write_rows(path, [f"x{i}" for i in range(d)] + ["u", "labeled"], rows)


def load_solution(path):
    header, arr = _read_table(path)
    if header[-2:] != ["u", "labeled"]:
        raise SchemaError("solution CSV needs x0,...,x{d-1},u,labeled", path, 1)
    return arr[:, :-2], arr[:, -2], arr[:, -1].astype(bool)


def _load_json(path):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON: {exc.msg}", path, exc.lineno) from None


def dumps_report(report: dict) -> str:
    return json.dumps(report, indent=2, allow_nan=False, default=_json_default)


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"{type(o).__name__} is not JSON serializable")


def save_report(path, report: dict) -> None:
    Path(path).write_text(dumps_report(report))


def load_report(path) -> dict:
    env = _load_json(path)
    if not isinstance(env, dict) or "rows" not in env or "config" not in env:
        raise SchemaError("report JSON needs 'config' and 'rows'", path)
    return env


def write_rows_csv(path, rows: list[dict], columns: list[str]) -> None:
    def cell(v):
        if v is None:
            return ""
        if isinstance(v, (bool, np.bool_)):
            return "true" if v else "false"
        if isinstance(v, (float, np.floating)):
            return _fmt(v)
        return str(v)

    _write_rows(path, columns, ([cell(r.get(c)) for c in columns] for r in rows))


def io_roundtrip(path, obj):
    """Save ``obj`` (cloud, labeled set or report dict) to ``path`` and load it back."""
    path = os.fspath(path)
    if isinstance(obj, PointCloud):
        save_cloud(path, obj)
        return load_cloud(path, obj.spec)
    if isinstance(obj, LabeledSet):
        save_labeled(path, obj)
        return load_labeled(path)
    if isinstance(obj, dict):
        save_report(path, obj)
        return load_report(path)
    raise TypeError(f"cannot serialize {type(obj).__name__}")
