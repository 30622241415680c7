"""Reference solutions of the Laplace-Beltrami interpolation problem.

``u = b`` on the region D and ``Delta_M u = 0`` on the rest of M.

* circle: exact; ``u`` is linear in arclength across the complementary arc.
* sphere (axisymmetric data, cap or band about the z axis): second-order
  finite volumes for ``(sin phi u')' = 0`` in colatitude, regular at the poles.
* Clifford torus (theta band): second-order five-point differences on the
  complementary strip, periodic in phi. The phi direction is diagonalized by
  the discrete Fourier transform and each mode's three-term recurrence is
  solved in closed form, so resolution is cheap to raise.
"""
from __future__ import annotations

import numpy as np
from scipy.linalg import solve_banded

from .labels import label_function
from .manifolds import GeometryError, RegionSpec, wrap_angle


class OracleError(GeometryError):
    pass


def reference_harmonic_solution(region: RegionSpec, label_fn, queries, resolution: int = 64,
                                tol: float = 1e-6, max_resolution: int = 1 << 15) -> np.ndarray:
    """Harmonic extension of ``label_fn`` from ``region`` evaluated at ``queries``.

    Finite-difference oracles double ``resolution`` until successive answers
    differ by less than ``tol`` in max norm; OracleError if that never happens.
    """
    fn = label_function(label_fn)
    m = region.manifold
    q = np.atleast_2d(np.asarray(queries, dtype=float))
    m.check_on_manifold(q)
    if m.kind == "circle":
        return _circle_reference(region, fn, q)
    _check_supported(region, fn)
    n = int(resolution)
    prev = reference_at_resolution(region, fn, q, n)
    while n < max_resolution:
        n *= 2
        cur = reference_at_resolution(region, fn, q, n)
        if np.max(np.abs(cur - prev), initial=0.0) < tol:
            return cur
        prev = cur
    raise OracleError(f"reference did not converge to {tol} by resolution {max_resolution}")


def _check_supported(region, fn):
    m = region.manifold
    if m.kind == "sphere":
        if region.kind == "cap" and min(region.center[0], np.pi - region.center[0]) > 1e-12:
            raise OracleError("sphere reference needs a cap centered at a pole")
        if not fn.depends_only_on_first_coordinate(m):
            raise OracleError("sphere reference needs axisymmetric labels (functions of z only)")
    elif m.kind == "clifford_torus" and region.kind != "band":
        raise OracleError("torus reference is available for band regions only")


def reference_at_resolution(region: RegionSpec, label_fn, queries, resolution: int) -> np.ndarray:
    """One finite-difference solve at a fixed resolution (no refinement)."""
    fn = label_function(label_fn)
    q = np.atleast_2d(np.asarray(queries, dtype=float))
    _check_supported(region, fn)
    kind = region.manifold.kind
    if kind == "sphere":
        return _sphere_fd(region, fn, q, int(resolution))
    if kind == "clifford_torus":
        return _torus_fd(region, fn, q, int(resolution))
    return _circle_reference(region, fn, q)


def _circle_reference(region, fn, q):
    m = region.manifold
    w = region.angular_halfwidth
    c = region.center[0]
    length = 2 * np.pi - 2 * w
    ends = m.embed(np.array([[c + w], [c - w]]))
    b_start, b_end = fn(m, ends)
    t = m.intrinsic(q)[:, 0]
    s = np.mod(t - (c + w), 2 * np.pi)
    out = np.empty(q.shape[0])
    outside = (s > 0) & (s < length)
    out[outside] = b_start + (b_end - b_start) * s[outside] / length
    inside = ~outside
    if inside.any():
        out[inside] = fn(m, q[inside])
    return out


def _sphere_intervals(region):
    w = region.angular_halfwidth
    if region.kind == "cap":
        return [(w, np.pi)] if region.center[0] < np.pi / 2 else [(0.0, np.pi - w)]
    lo, hi = region.center[0] - w, region.center[0] + w
    out = []
    if lo > 0:
        out.append((0.0, lo))
    if hi < np.pi:
        out.append((hi, np.pi))
    return out


def _sphere_fd(region, fn, q, n):
    m = region.manifold
    colat = m.intrinsic(q)[:, 0]
    out = np.empty(q.shape[0])
    done = np.zeros(q.shape[0], dtype=bool)
    for lo, hi in _sphere_intervals(region):
        grid = np.linspace(lo, hi, n + 1)
        half = np.sin(0.5 * (grid[1:] + grid[:-1]))
        ab = np.zeros((3, n + 1))
        rhs = np.zeros(n + 1)
        # row j: half[j](u[j+1]-u[j]) - half[j-1](u[j]-u[j-1]) = 0; no flux through a pole
        ab[1, :] = 0.0
        ab[1, :-1] -= half
        ab[1, 1:] -= half
        ab[0, 1:] = half
        ab[2, :-1] = half
        for end, idx in ((lo, 0), (hi, n)):
            if 1e-14 < end < np.pi - 1e-14:
                ab[1, idx] = 1.0
                if idx == 0:
                    ab[0, 1] = 0.0
                else:
                    ab[2, n - 1] = 0.0
                rhs[idx] = fn(m, m.embed(np.array([[end, 0.0]])))[0]
        u = solve_banded((1, 1), ab, rhs)
        sel = (colat >= lo) & (colat <= hi) & ~done
        out[sel] = np.interp(colat[sel], grid, u)
        done |= sel
    if (~done).any():
        out[~done] = fn(m, q[~done])
    inside = region.contains(q)
    if inside.any():
        out[inside] = fn(m, q[inside])
    return out


def _ratio_sinh(x, n, kappa):
    """sinh(x kappa) / sinh(n kappa) without overflow; linear limit at kappa = 0."""
    x = np.asarray(x, dtype=float)
    kappa = np.asarray(kappa, dtype=float)
    small = kappa < 1e-300
    k = np.where(small, 1.0, kappa)
    val = np.exp((x - n) * k) * np.expm1(-2 * x * k) / np.expm1(-2 * n * k)
    return np.where(small, x / n, val)


def _torus_fd(region, fn, q, n):
    m = region.manifold
    w = region.angular_halfwidth
    c = region.center[0]
    length = 2 * np.pi - 2 * w
    nt = npp = n
    ht = length / nt
    hp = 2 * np.pi / npp
    phis = hp * np.arange(npp)
    start, stop = c + w, c + 2 * np.pi - w
    b0 = fn(m, m.embed(np.stack([np.full(npp, start), phis], axis=1)))
    b1 = fn(m, m.embed(np.stack([np.full(npp, stop), phis], axis=1)))
    B0 = np.fft.rfft(b0)
    B1 = np.fft.rfft(b1)
    ell = np.arange(B0.size)
    sigma = (4.0 / hp ** 2) * np.sin(np.pi * ell / npp) ** 2
    cosh_k = 1.0 + 0.5 * ht ** 2 * sigma
    kappa = np.arccosh(cosh_k)
    # Fourier weights for evaluating the real trigonometric interpolant
    weight = np.full(B0.size, 2.0)
    weight[0] = 1.0
    if npp % 2 == 0:
        weight[-1] = 1.0

    coords = m.intrinsic(q)
    s = np.mod(coords[:, 0] - start, 2 * np.pi)
    out = np.empty(q.shape[0])
    outside = (s > 0) & (s < length)
    if outside.any():
        j = s[outside] / ht
        modes = (B0[None, :] * _ratio_sinh(nt - j[:, None], nt, kappa[None, :])
                 + B1[None, :] * _ratio_sinh(j[:, None], nt, kappa[None, :]))
        phase = np.exp(1j * ell[None, :] * coords[outside, 1][:, None])
        out[outside] = np.real(modes * phase) @ weight / npp
    if (~outside).any():
        out[~outside] = fn(m, q[~outside])
    return out
