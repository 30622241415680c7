"""Closed manifolds with analytic metrics, and labeled regions on them.

Three manifolds are supported, each isometrically embedded:

* ``circle``          k=1, d=2, radius ``scale``; intrinsic coordinate theta.
* ``sphere``          k=2, d=3, radius ``scale``; intrinsic (colatitude, longitude).
* ``clifford_torus``  k=2, d=4, ``(a cos t, a sin t, a cos p, a sin p)`` with
  ``a = scale / sqrt(2)``; it lies on the sphere of radius ``scale`` in R^4.
"""
from __future__ import annotations

from dataclasses import dataclass, field
import math

import numpy as np

KINDS = ("circle", "sphere", "clifford_torus")
REGION_KINDS = {
    "circle": ("arc",),
    "sphere": ("cap", "band"),
    "clifford_torus": ("band", "cap"),
}
ON_MANIFOLD_RTOL = 1e-12


class GeometryError(ValueError):
    pass


def wrap_angle(t):
    """Map angles to [-pi, pi)."""
    return np.mod(np.asarray(t, dtype=float) + np.pi, 2 * np.pi) - np.pi


@dataclass(frozen=True)
class ManifoldSpec:
    kind: str
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise GeometryError(f"unsupported manifold kind {self.kind!r}")
        if not (self.scale > 0 and math.isfinite(self.scale)):
            raise GeometryError("scale must be positive and finite")

    @property
    def intrinsic_dim(self) -> int:
        return 1 if self.kind == "circle" else 2

    @property
    def ambient_dim(self) -> int:
        return {"circle": 2, "sphere": 3, "clifford_torus": 4}[self.kind]

    @property
    def torus_radius(self) -> float:
        """Radius of each factor circle of the Clifford torus."""
        return self.scale / math.sqrt(2.0)

    @property
    def volume(self) -> float:
        r = self.scale
        if self.kind == "circle":
            return 2 * math.pi * r
        if self.kind == "sphere":
            return 4 * math.pi * r * r
        a = self.torus_radius
        return (2 * math.pi * a) ** 2

    def embed(self, coords) -> np.ndarray:
        """Intrinsic coordinates, shape (..., k), to ambient points (..., d)."""
        c = np.asarray(coords, dtype=float)
        if self.kind == "circle":
            t = c[..., 0] if c.ndim and c.shape[-1:] == (1,) else c
            return self.scale * np.stack([np.cos(t), np.sin(t)], axis=-1)
        if self.kind == "sphere":
            phi, lam = c[..., 0], c[..., 1]
            s = np.sin(phi)
            return self.scale * np.stack([s * np.cos(lam), s * np.sin(lam), np.cos(phi)], axis=-1)
        a = self.torus_radius
        t, p = c[..., 0], c[..., 1]
        return a * np.stack([np.cos(t), np.sin(t), np.cos(p), np.sin(p)], axis=-1)

    def intrinsic(self, points) -> np.ndarray:
        """Ambient points (..., d) to intrinsic coordinates (..., k)."""
        x = np.asarray(points, dtype=float)
        if self.kind == "circle":
            return np.arctan2(x[..., 1], x[..., 0])[..., None]
        if self.kind == "sphere":
            rho = np.hypot(x[..., 0], x[..., 1])
            return np.stack([np.arctan2(rho, x[..., 2]), np.arctan2(x[..., 1], x[..., 0])], axis=-1)
        return np.stack([np.arctan2(x[..., 1], x[..., 0]), np.arctan2(x[..., 3], x[..., 2])], axis=-1)

    def constraint_residual(self, points) -> np.ndarray:
        x = np.asarray(points, dtype=float)
        if self.kind == "clifford_torus":
            a = self.torus_radius
            return np.maximum(np.abs(np.hypot(x[..., 0], x[..., 1]) - a),
                              np.abs(np.hypot(x[..., 2], x[..., 3]) - a))
        return np.abs(np.linalg.norm(x, axis=-1) - self.scale)

    def check_on_manifold(self, points, rtol: float = 1e-9):
        x = np.atleast_2d(np.asarray(points, dtype=float))
        if x.shape[-1] != self.ambient_dim:
            raise GeometryError(f"expected ambient dimension {self.ambient_dim}, got {x.shape[-1]}")
        res = self.constraint_residual(x)
        if res.size and res.max() > rtol * self.scale:
            raise GeometryError(f"point off manifold by {res.max():.3e}")

    def geodesic_distance(self, x, y) -> np.ndarray:
        """Exact geodesic distance between ambient points (broadcasting)."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.kind == "clifford_torus":
            cx, cy = self.intrinsic(x), self.intrinsic(y)
            dt = np.abs(wrap_angle(cx[..., 0] - cy[..., 0]))
            dp = np.abs(wrap_angle(cx[..., 1] - cy[..., 1]))
            return self.torus_radius * np.hypot(dt, dp)
        return self.scale * _angle_between(x, y)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "scale": self.scale}

    @classmethod
    def from_dict(cls, d) -> "ManifoldSpec":
        return cls(kind=d["kind"], scale=float(d.get("scale", 1.0)))


def _angle_between(x, y):
    # atan2 form stays accurate for nearly parallel vectors
    dot = np.sum(x * y, axis=-1)
    if x.shape[-1] == 2 or np.shape(y)[-1] == 2:
        cross = np.abs(x[..., 0] * y[..., 1] - x[..., 1] * y[..., 0])
    else:
        cross = np.linalg.norm(np.cross(x, y), axis=-1)
    return np.arctan2(cross, dot)


@dataclass(frozen=True)
class RegionSpec:
    """Labeled region D on a manifold.

    ``center`` is in intrinsic coordinates; ``geodesic_radius`` is in length
    units. For a band, the radius is the half-width in the first intrinsic
    direction (colatitude on the sphere, theta on the torus).
    """

    manifold: ManifoldSpec
    kind: str
    center: tuple = field(default=(0.0,))
    geodesic_radius: float = 0.5

    def __post_init__(self):
        allowed = REGION_KINDS[self.manifold.kind]
        if self.kind not in allowed:
            raise GeometryError(f"region kind {self.kind!r} not supported on {self.manifold.kind}")
        object.__setattr__(self, "center", tuple(float(c) for c in np.atleast_1d(self.center)))
        if len(self.center) != self.manifold.intrinsic_dim:
            if self.kind == "band" and len(self.center) == 1:
                object.__setattr__(self, "center", (self.center[0], 0.0))
            else:
                raise GeometryError("region center must have one coordinate per intrinsic dimension")
        rho = float(self.geodesic_radius)
        if not rho > 0:
            raise GeometryError("region radius must be positive")
        w = self.angular_halfwidth
        if self.manifold.kind == "sphere" and self.kind == "band":
            c = self.center[0]
            if not 0.0 <= c <= np.pi:
                raise GeometryError("band center colatitude must lie in [0, pi]")
            if c - w <= 0.0 and c + w >= np.pi:
                raise GeometryError("region covers the whole manifold")
        elif w >= np.pi:
            raise GeometryError("region covers the whole manifold")

    def _scale(self) -> float:
        m = self.manifold
        return m.torus_radius if m.kind == "clifford_torus" else m.scale

    @property
    def angular_halfwidth(self) -> float:
        return float(self.geodesic_radius) / self._scale()

    @property
    def center_point(self) -> np.ndarray:
        return self.manifold.embed(np.asarray(self.center))

    def distance(self, points) -> np.ndarray:
        """Geodesic distance from each point to the region, zero inside."""
        m = self.manifold
        x = np.atleast_2d(np.asarray(points, dtype=float))
        w = self.angular_halfwidth
        if m.kind == "circle":
            t = m.intrinsic(x)[..., 0]
            ang = np.abs(wrap_angle(t - self.center[0]))
            return m.scale * np.maximum(ang - w, 0.0)
        if m.kind == "sphere":
            if self.kind == "cap":
                ang = _angle_between(x, np.broadcast_to(self.center_point, x.shape))
                return m.scale * np.maximum(ang - w, 0.0)
            colat = m.intrinsic(x)[..., 0]
            return m.scale * np.maximum(np.abs(colat - self.center[0]) - w, 0.0)
        c = m.intrinsic(x)
        dt = np.abs(wrap_angle(c[..., 0] - self.center[0]))
        if self.kind == "band":
            return m.torus_radius * np.maximum(dt - w, 0.0)
        dp = np.abs(wrap_angle(c[..., 1] - self.center[1]))
        return m.torus_radius * np.maximum(np.hypot(dt, dp) - w, 0.0)

    def contains(self, points, tol: float = 1e-12) -> np.ndarray:
        return self.distance(points) <= tol * self.manifold.scale

    @property
    def volume(self) -> float:
        m = self.manifold
        w = self.angular_halfwidth
        if m.kind == "circle":
            return 2 * w * m.scale
        if m.kind == "sphere":
            r2 = m.scale ** 2
            if self.kind == "cap":
                return 2 * np.pi * r2 * (1 - np.cos(w))
            lo = max(self.center[0] - w, 0.0)
            hi = min(self.center[0] + w, np.pi)
            return 2 * np.pi * r2 * (np.cos(lo) - np.cos(hi))
        a = m.torus_radius
        if self.kind == "band":
            return (2 * w * a) * (2 * np.pi * a)
        return np.pi * (w * a) ** 2

    def to_dict(self) -> dict:
        return {"manifold": self.manifold.to_dict(), "kind": self.kind,
                "center": list(self.center), "geodesic_radius": float(self.geodesic_radius)}

    @classmethod
    def from_dict(cls, d, manifold: ManifoldSpec | None = None) -> "RegionSpec":
        m = manifold if manifold is not None else ManifoldSpec.from_dict(d["manifold"])
        return cls(manifold=m, kind=d["kind"], center=tuple(d.get("center", (0.0,))),
                   geodesic_radius=float(d["geodesic_radius"]))


def geodesic_distance_to_region(region: RegionSpec, x, check: bool = True) -> np.ndarray | float:
    """Geodesic distance from ambient point(s) ``x`` to the region.

    Raises GeometryError when ``x`` is not on the manifold.
    """
    arr = np.asarray(x, dtype=float)
    if check:
        region.manifold.check_on_manifold(arr)
    d = region.distance(arr)
    return float(d[0]) if arr.ndim == 1 else d


def rotation_to(axis_to) -> np.ndarray:
    """Rotation matrix (3x3) taking the north pole e_z to the unit vector ``axis_to``."""
    v = np.asarray(axis_to, dtype=float)
    v = v / np.linalg.norm(v)
    z = np.array([0.0, 0.0, 1.0])
    c = float(v @ z)
    if c > 1 - 1e-15:
        return np.eye(3)
    if c < -1 + 1e-15:
        return np.diag([1.0, -1.0, -1.0])
    k = np.cross(z, v)
    s = np.linalg.norm(k)
    k = k / s
    kx = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + s * kx + (1 - c) * kx @ kx
