"""Quadrature over the manifolds, kernel-class discrepancy and integral consistency."""
from __future__ import annotations

from dataclasses import dataclass
import math

import numpy as np

from .geometry import ManifoldSpec, PointCloud, label_function
from .geometry.manifolds import rotation_to
from .graph import RADIUS_PAD, build_index, kernel_matrix
from .kernels import KernelProfile, sqdist

QUAD_TOL = 1e-10
MAX_RESOLUTION = 1 << 14


class QuadratureError(RuntimeError):
    pass


class DiscrepancyError(ValueError):
    pass


def _angle_for_chord(chord: float, scale: float) -> float:
    return 2 * math.asin(min(1.0, chord / (2 * scale)))


def _circle_nodes(spec, N, center, radius):
    if center is None:
        t = 2 * np.pi * np.arange(N) / N
        w = np.full(N, 2 * np.pi * spec.scale / N)
    else:
        c = spec.intrinsic(np.asarray(center, dtype=float)[None, :])[0, 0]
        a = _angle_for_chord(radius, spec.scale)
        t = c + np.linspace(-a, a, N + 1)
        w = np.full(N + 1, 2 * a * spec.scale / N)
        w[[0, -1]] *= 0.5
    return spec.embed(t[:, None]), w


def _sphere_nodes(spec, N, center, radius):
    zg, zw = np.polynomial.legendre.leggauss(N)
    zlo = -1.0 if center is None else math.cos(_angle_for_chord(radius, spec.scale))
    z = zlo + (zg + 1) * (1 - zlo) / 2
    wz = zw * (1 - zlo) / 2
    nl = 2 * N
    lon = 2 * np.pi * np.arange(nl) / nl
    Z, L = np.meshgrid(z, lon, indexing="ij")
    s = np.sqrt(np.clip(1 - Z * Z, 0.0, None))
    pts = np.stack([s * np.cos(L), s * np.sin(L), Z], axis=-1).reshape(-1, 3)
    if center is not None:
        c = np.asarray(center, dtype=float)
        pts = pts @ rotation_to(c / np.linalg.norm(c)).T
    w = np.repeat(wz, nl) * (2 * np.pi / nl) * spec.scale ** 2
    return spec.scale * pts, w


def _torus_nodes(spec, N, center, radius):
    a = spec.torus_radius
    if center is None:
        g = 2 * np.pi * np.arange(N) / N
        gw = np.full(N, 2 * np.pi / N)
        t1 = t2 = g
        w1 = w2 = gw
    else:
        ct = spec.intrinsic(np.asarray(center, dtype=float)[None, :])[0]
        half = _angle_for_chord(radius, a)
        base = np.linspace(-half, half, N + 1)
        bw = np.full(N + 1, 2 * half / N)
        bw[[0, -1]] *= 0.5
        t1, t2, w1, w2 = ct[0] + base, ct[1] + base, bw, bw
    T, F = np.meshgrid(t1, t2, indexing="ij")
    pts = spec.embed(np.stack([T.ravel(), F.ravel()], axis=1))
    return pts, np.outer(w1, w2).ravel() * a * a


_NODES = {"circle": _circle_nodes, "sphere": _sphere_nodes, "clifford_torus": _torus_nodes}


def quadrature_at(spec: ManifoldSpec, integrand, resolution: int, center=None, radius=None) -> float:
    pts, w = _NODES[spec.kind](spec, int(resolution), center, radius)
    vals = np.asarray(integrand(pts), dtype=float)
    return math.fsum(vals * w) / spec.volume


def quadrature_integral(spec: ManifoldSpec, integrand, resolution: int = 64, tol: float = QUAD_TOL,
                        center=None, radius: float | None = None,
                        max_resolution: int = MAX_RESOLUTION) -> float:
    """Normalized integral ``(1/|M|) int_M f``.

    Trapezoid rules along periodic angles and Gauss-Legendre in ``z`` on the
    sphere. When ``center`` and ``radius`` are given, ``f`` must vanish
    outside the ambient ball of that radius and only a patch covering it is
    integrated. Resolution doubles until the change drops below
    ``tol * max(1, |value|)``.
    """
    if resolution < 64:
        raise QuadratureError("resolution must be >= 64")
    if (center is None) != (radius is None):
        raise QuadratureError("center and radius go together")
    N = int(resolution)
    prev = quadrature_at(spec, integrand, N, center, radius)
    while N < max_resolution:
        N *= 2
        cur = quadrature_at(spec, integrand, N, center, radius)
        if abs(cur - prev) <= tol * max(1.0, abs(cur)):
            return cur
        prev = cur
    raise QuadratureError(f"quadrature did not reach {tol} by resolution {max_resolution}")


def kernel_integral(spec: ManifoldSpec, profile: KernelProfile, x, kind: str = "R", **kw) -> float:
    """``(1/|M|) int_M K_delta(x, y) dy`` over the kernel's support patch."""
    x = np.asarray(x, dtype=float).reshape(-1)
    return quadrature_integral(spec, lambda y: profile.scaled(kind, sqdist(y, x[None, :])),
                               center=x, radius=profile.radius(kind), **kw)


def center_grid(spec: ManifoldSpec, per_dim: int = 512) -> np.ndarray:
    """Deterministic centers: ``per_dim`` equispaced angles per intrinsic direction."""
    g = 2 * np.pi * np.arange(per_dim) / per_dim
    if spec.kind == "circle":
        return spec.embed(g[:, None])
    if spec.kind == "clifford_torus":
        T, F = np.meshgrid(g, g, indexing="ij")
        return spec.embed(np.stack([T.ravel(), F.ravel()], axis=1))
    colat = np.pi * (np.arange(per_dim) + 0.5) / per_dim
    C, L = np.meshgrid(colat, g, indexing="ij")
    return spec.embed(np.stack([C.ravel(), L.ravel()], axis=1))


@dataclass
class DiscrepancyResult:
    sup_gap: float
    argmax_center: np.ndarray
    n: int
    delta: float
    center_count: int
    gaps: np.ndarray

    def to_dict(self) -> dict:
        return {"sup_gap": self.sup_gap, "argmax_center": self.argmax_center.tolist(), "n": self.n,
                "delta": self.delta, "center_count": self.center_count}


def empirical_discrepancy(spec: ManifoldSpec, cloud, profile: KernelProfile, centers,
                          homogeneous: bool = True) -> DiscrepancyResult:
    """``max_x |I(R_delta(x, .)) - (1/n) sum_y R_delta(x, y)|`` over the given centers.

    All three supported manifolds are homogeneous, so ``I`` does not depend on
    the center; with ``homogeneous=False`` it is recomputed for every center.
    """
    pts = cloud.points if isinstance(cloud, PointCloud) else np.atleast_2d(np.asarray(cloud, dtype=float))
    c = np.atleast_2d(np.asarray(centers, dtype=float))
    spec.check_on_manifold(c)
    n = pts.shape[0]
    if homogeneous:
        exact = np.full(c.shape[0], kernel_integral(spec, profile, c[0]))
    else:
        exact = np.array([kernel_integral(spec, profile, x) for x in c])
    idx = build_index(pts, profile.radius("R") * RADIUS_PAD)
    mean = np.asarray(kernel_matrix(idx, c, profile, "R").sum(axis=1)).ravel() / n
    gaps = np.abs(exact - mean)
    j = int(np.argmax(gaps))
    return DiscrepancyResult(float(gaps[j]), c[j], n, profile.delta, c.shape[0], gaps)


def theoretical_bound(n: float, delta: float, k: int, c: float) -> float:
    """``c delta^-k n^-1/2 (ln n - 2 ln delta + 1)^1/2``."""
    if not n >= 2:
        raise DiscrepancyError("n must be >= 2")
    if not 0 < delta < 1:
        raise DiscrepancyError("delta must lie in (0, 1)")
    if k < 1:
        raise DiscrepancyError("k must be >= 1")
    return c * delta ** (-k) * n ** -0.5 * math.sqrt(math.log(n) - 2 * math.log(delta) + 1)


def bound_shape(n, delta, k) -> float:
    return theoretical_bound(n, delta, k, 1.0)


def calibrate_constant(sup_gaps, n: float, delta: float, k: int) -> float:
    """Smallest c whose bound covers every given sup gap at (n, delta)."""
    return float(np.max(sup_gaps)) / bound_shape(n, delta, k)


@dataclass
class ConsistencyReport:
    residuals: np.ndarray
    lhs: np.ndarray
    rhs: np.ndarray
    delta: float

    @property
    def max_residual(self) -> float:
        return float(np.max(self.residuals))

    def to_dict(self) -> dict:
        return {"delta": self.delta, "max_residual": self.max_residual, "residuals": self.residuals.tolist(),
                "lhs": self.lhs.tolist(), "rhs": self.rhs.tolist()}


def integral_consistency(spec: ManifoldSpec, cloud, profile: KernelProfile, fn, queries, region,
                         resolution: int = 64) -> ConsistencyReport:
    """Residual between the discrete nonlocal operator and its tail-weighted Laplacian.

    For each query x (geodesic distance > 2 delta from D) the residual is
    ``|(1/(n delta^2)) sum_y R_delta(x,y)(u(x)-u(y)) + (1/|M|) int Rbar_delta(x,y) Lap u(y) dy|``.
    """
    f = label_function(fn)
    q = np.atleast_2d(np.asarray(queries, dtype=float))
    spec.check_on_manifold(q)
    delta = profile.delta
    if region is not None and np.any(region.distance(q) <= 2 * delta):
        raise DiscrepancyError("queries must lie farther than 2 delta from the labeled region")
    pts = cloud.points if isinstance(cloud, PointCloud) else np.atleast_2d(np.asarray(cloud, dtype=float))
    n = pts.shape[0]
    idx = build_index(pts, profile.radius("R") * RADIUS_PAD)
    W = kernel_matrix(idx, q, profile, "R")
    uq = f(spec, q)
    upts = f(spec, pts)
    lhs = np.empty(q.shape[0])
    rhs = np.empty(q.shape[0])
    for i in range(q.shape[0]):
        lo, hi = W.indptr[i], W.indptr[i + 1]
        lhs[i] = math.fsum(W.data[lo:hi] * (uq[i] - upts[W.indices[lo:hi]])) / (n * delta ** 2)
        x = q[i]
        rhs[i] = quadrature_integral(
            spec, lambda y: profile.scaled_tail(sqdist(y, x[None, :])) * f.laplacian(spec, y),
            resolution=resolution, center=x, radius=profile.radius("R"))
    return ConsistencyReport(np.abs(lhs + rhs), lhs, rhs, delta)
