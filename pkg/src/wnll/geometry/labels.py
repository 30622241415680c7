"""Named label functions with registered Laplace-Beltrami expressions.

Functions are referenced by a serializable dict such as
``{"name": "sin_theta", "k": 1}`` so experiment configs stay plain JSON.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .manifolds import GeometryError, ManifoldSpec


class LabelFunctionError(GeometryError):
    pass


@dataclass(frozen=True)
class LabelFunction:
    name: str
    params: dict = field(default_factory=dict)

    def __call__(self, spec: ManifoldSpec, points) -> np.ndarray:
        x = np.atleast_2d(np.asarray(points, dtype=float))
        return _EVAL[self.name](self, spec, x)

    def laplacian(self, spec: ManifoldSpec, points) -> np.ndarray:
        if self.name not in _LAPLACIAN:
            raise LabelFunctionError(f"{self.name!r} has no registered second derivatives")
        x = np.atleast_2d(np.asarray(points, dtype=float))
        return _LAPLACIAN[self.name](self, spec, x)

    def shifted(self, c: float) -> "LabelFunction":
        """The same function plus a constant."""
        p = dict(self.params)
        p["offset"] = p.get("offset", 0.0) + float(c)
        return LabelFunction(self.name, p)

    @property
    def offset(self) -> float:
        return float(self.params.get("offset", 0.0))

    def depends_only_on_first_coordinate(self, spec: ManifoldSpec) -> bool:
        if self.name in ("constant", "tabulated"):
            return True
        if self.name == "sin_theta":
            return spec.kind != "sphere"
        if self.name == "coordinate":
            axis = int(self.params["axis"])
            return {"circle": False, "sphere": axis == 2, "clifford_torus": axis in (0, 1)}[spec.kind]
        return False

    def to_dict(self) -> dict:
        return {"name": self.name, **self.params}


def label_function(spec) -> LabelFunction:
    """Build a LabelFunction from a name or dict, validating parameters."""
    if isinstance(spec, LabelFunction):
        return spec
    if isinstance(spec, str):
        spec = {"name": spec}
    d = dict(spec)
    name = d.pop("name")
    if name not in _EVAL:
        raise LabelFunctionError(f"unknown label function {name!r}")
    if name == "constant":
        d.setdefault("c", 1.0)
    elif name == "coordinate":
        if "axis" not in d:
            raise LabelFunctionError("coordinate label function needs an axis")
        d["axis"] = int(d["axis"])
    elif name == "sin_theta":
        d.setdefault("k", 1)
    elif name == "tabulated":
        vals = np.asarray(d.get("values", []), dtype=float)
        if vals.size < 2 or not np.all(np.isfinite(vals)):
            raise LabelFunctionError("tabulated label function needs >= 2 finite values")
        d["values"] = [float(v) for v in vals]
    return LabelFunction(name, d)


def _first_angle(spec: ManifoldSpec, x):
    return spec.intrinsic(x)[..., 0]


def _eval_constant(f, spec, x):
    return np.full(x.shape[0], float(f.params["c"]) + f.offset)


def _eval_coordinate(f, spec, x):
    axis = f.params["axis"]
    if not 0 <= axis < spec.ambient_dim:
        raise LabelFunctionError(f"axis {axis} out of range for {spec.kind}")
    return x[:, axis] + f.offset


def _eval_sin_theta(f, spec, x):
    if spec.kind == "sphere":
        raise LabelFunctionError("sin_theta is not smooth on the sphere (undefined at the poles)")
    return np.sin(f.params["k"] * _first_angle(spec, x)) + f.offset


def _eval_tabulated(f, spec, x):
    vals = np.asarray(f.params["values"])
    t = _first_angle(spec, x)
    if spec.kind == "sphere":
        # samples over colatitude [0, pi], endpoints included
        grid = np.linspace(0.0, np.pi, vals.size)
        return np.interp(t, grid, vals) + f.offset
    grid = np.linspace(0.0, 2 * np.pi, vals.size + 1)
    return np.interp(np.mod(t, 2 * np.pi), grid, np.append(vals, vals[0])) + f.offset


def _scale2(spec):
    return spec.torus_radius ** 2 if spec.kind == "clifford_torus" else spec.scale ** 2


def _lap_constant(f, spec, x):
    return np.zeros(x.shape[0])


def _lap_coordinate(f, spec, x):
    axis = f.params["axis"]
    # coordinate functions are first eigenfunctions: circle/torus factor -1, sphere -2
    eig = 2.0 if spec.kind == "sphere" else 1.0
    return -eig * x[:, axis] / _scale2(spec)


def _lap_sin_theta(f, spec, x):
    k = f.params["k"]
    _eval_sin_theta(f, spec, x)
    return -(k ** 2) * np.sin(k * _first_angle(spec, x)) / _scale2(spec)


_EVAL = {
    "constant": _eval_constant,
    "coordinate": _eval_coordinate,
    "sin_theta": _eval_sin_theta,
    "tabulated": _eval_tabulated,
}
_LAPLACIAN = {
    "constant": _lap_constant,
    "coordinate": _lap_coordinate,
    "sin_theta": _lap_sin_theta,
}
REGISTRY = tuple(_EVAL)


def laplace_beltrami_reference(spec: ManifoldSpec, fn, x) -> np.ndarray | float:
    """Closed-form Laplace-Beltrami of a registered function at ambient point(s)."""
    f = label_function(fn)
    arr = np.asarray(x, dtype=float)
    spec.check_on_manifold(arr)
    out = f.laplacian(spec, arr)
    return float(out[0]) if arr.ndim == 1 else out


def metric_tensor(spec: ManifoldSpec, coords, h: float = 1e-5) -> np.ndarray:
    """First fundamental form g_ij = <d_i Phi, d_j Phi> from a numerical Jacobian."""
    c = np.asarray(coords, dtype=float)
    k = spec.intrinsic_dim
    jac = []
    for i in range(k):
        e = np.zeros(k)
        e[i] = h
        jac.append((spec.embed(c + e) - spec.embed(c - e)) / (2 * h))
    jac = np.stack(jac, axis=0)
    return np.einsum("i...a,j...a->...ij", jac, jac)


def laplace_beltrami_fd(spec: ManifoldSpec, f, coords, h: float = 1e-4) -> float:
    """Laplace-Beltrami at one intrinsic point via the divergence form.

    Evaluates ``(1/sqrt|G|) d_i (sqrt|G| g^ij d_j f)`` with nested central
    differences of step ``h``; ``f`` maps ambient points to values.
    """
    c = np.asarray(coords, dtype=float).reshape(-1)
    k = spec.intrinsic_dim

    def fi(cc):
        return float(np.asarray(f(spec, spec.embed(cc)[None, :])).reshape(-1)[0])

    def flux(cc):
        g = metric_tensor(spec, cc)
        ginv = np.linalg.inv(g)
        sq = np.sqrt(np.linalg.det(g))
        grad = np.empty(k)
        for j in range(k):
            e = np.zeros(k)
            e[j] = h
            grad[j] = (fi(cc + e) - fi(cc - e)) / (2 * h)
        return sq * ginv @ grad

    total = 0.0
    for i in range(k):
        e = np.zeros(k)
        e[i] = h
        total += (flux(c + e)[i] - flux(c - e)[i]) / (2 * h)
    return total / np.sqrt(np.linalg.det(metric_tensor(spec, c)))
