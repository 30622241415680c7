"""Fixed-radius neighbor search, affinity assembly and S-connectivity.

Two storage backends hold the P-P block of R weights:

* ``sparse``: CSR built from an exact cell-grid search. Weights are computed
  by the same elementwise arithmetic as a brute-force double loop, so the two
  agree bitwise.
* ``lattice``: for quasi-uniform circle and torus clouds the P-P block is
  circulant (block circulant on the torus grid). Only the stencil is stored
  and products go through the FFT. This keeps n = 50000 clouds with wide
  kernels within memory.

P-S R weights and S-S K weights do not enter the interpolation system and
are not stored.
"""
from __future__ import annotations

from dataclasses import dataclass, field
import itertools
import json
import math

import numpy as np
from scipy import sparse

from .geometry import LabeledSet, PointCloud
from .kernels import KernelProfile, ProfileError, sqdist, validate_profile

BACKENDS = ("auto", "sparse", "lattice")
LATTICE_NNZ_THRESHOLD = 2_000_000
BLOCK_ENTRIES = 4_000_000
# candidate search radius is padded so no positive weight is lost to rounding
RADIUS_PAD = 1.0 + 1e-9


class GraphError(ValueError):
    pass


# -- neighbor index -----------------------------------------------------------

@dataclass
class NeighborIndex:
    """Uniform grid of cubic cells of side ``cell_size`` over the indexed points."""

    points: np.ndarray
    cell_size: float
    order: np.ndarray
    cells: dict = field(repr=False)

    @property
    def ambient_dim(self) -> int:
        return self.points.shape[1]

    @property
    def n(self) -> int:
        return self.points.shape[0]

    def _cell_of(self, x):
        return np.floor(np.atleast_2d(x) / self.cell_size).astype(np.int64)

    def neighbor_slots(self, cell) -> np.ndarray:
        """Indices of points in the 3^d block of cells around ``cell`` (ascending)."""
        parts = []
        for off in itertools.product((-1, 0, 1), repeat=self.ambient_dim):
            key = tuple(int(c) + o for c, o in zip(cell, off))
            span = self.cells.get(key)
            if span is not None:
                parts.append(self.order[span[0]:span[1]])
        if not parts:
            return np.empty(0, dtype=np.int64)
        return np.sort(np.concatenate(parts))

    def query(self, x, radius: float | None = None) -> np.ndarray:
        """Sorted indices of indexed points within ``radius`` of ``x`` (closed ball)."""
        radius = self.cell_size if radius is None else float(radius)
        if radius > self.cell_size * (1 + 1e-12):
            raise GraphError("query radius exceeds the cell size")
        x = np.asarray(x, dtype=float).reshape(-1)
        cand = self.neighbor_slots(self._cell_of(x)[0])
        d2 = sqdist(self.points[cand], x[None, :])
        return cand[d2 <= radius * radius]

    def blocks(self, queries, block_entries: int = BLOCK_ENTRIES):
        """Yield ``(rows, cols, d2)`` candidate blocks covering every close pair.

        ``rows`` index ``queries`` and ``cols`` index the indexed points; every
        pair within ``cell_size`` appears in exactly one block.
        """
        q = np.asarray(queries, dtype=float)
        qcells = self._cell_of(q)
        qorder = np.lexsort(qcells.T[::-1])
        keys = qcells[qorder]
        brk = np.flatnonzero(np.any(np.diff(keys, axis=0) != 0, axis=1)) + 1
        for seg in np.split(qorder, brk):
            if seg.size == 0:
                continue
            cols = self.neighbor_slots(qcells[seg[0]])
            if cols.size == 0:
                continue
            step = max(1, block_entries // cols.size)
            for s in range(0, seg.size, step):
                rows = np.sort(seg[s:s + step])
                d2 = sqdist(q[rows][:, None, :], self.points[cols][None, :, :])
                yield rows, cols, d2


def build_index(points, radius: float) -> NeighborIndex:
    """Index ``points`` for exact fixed-radius queries up to ``radius``."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[0] == 0:
        raise GraphError("cannot index an empty point list")
    if not (radius > 0 and math.isfinite(radius)):
        raise GraphError("radius must be positive")
    cells = np.floor(pts / radius).astype(np.int64)
    order = np.lexsort(cells.T[::-1])
    sorted_cells = cells[order]
    brk = np.flatnonzero(np.any(np.diff(sorted_cells, axis=0) != 0, axis=1)) + 1
    starts = np.concatenate([[0], brk])
    stops = np.concatenate([brk, [pts.shape[0]]])
    table = {tuple(int(c) for c in sorted_cells[s]): (int(s), int(e)) for s, e in zip(starts, stops)}
    return NeighborIndex(points=pts, cell_size=float(radius), order=order, cells=table)


def kernel_matrix(index: NeighborIndex, queries, profile: KernelProfile, kind: str) -> sparse.csr_matrix:
    """CSR matrix of positive scaled weights between ``queries`` (rows) and indexed points."""
    q = np.atleast_2d(np.asarray(queries, dtype=float))
    nq = q.shape[0]
    # each query row is complete inside a single block, with columns ascending
    counts = np.zeros(nq, dtype=np.int64)
    kept = []
    r2 = (profile.radius(kind) * RADIUS_PAD) ** 2
    for rows, cols, d2 in index.blocks(q):
        ri, ci = np.nonzero(d2 <= r2)
        w = profile.scaled(kind, d2[ri, ci])
        keep = w > 0
        ri, ci, w = ri[keep], ci[keep], w[keep]
        counts[rows] = np.bincount(ri, minlength=rows.size)
        kept.append((rows, ri.astype(np.int32), cols[ci].astype(np.int32), w))
        del d2
    indptr = np.zeros(nq + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    itype = np.int32 if indptr[-1] < 2 ** 31 else np.int64
    indices = np.empty(indptr[-1], dtype=itype)
    data = np.empty(indptr[-1])
    while kept:
        rows, ri, c, v = kept.pop()
        local_start = np.concatenate([[0], np.cumsum(np.bincount(ri, minlength=rows.size))[:-1]])
        pos = indptr[rows[ri]] + (np.arange(ri.size) - local_start[ri])
        indices[pos] = c
        data[pos] = v
    mat = sparse.csr_matrix((data, indices, indptr.astype(itype)), shape=(nq, index.n))
    mat.has_sorted_indices = True
    return mat


# -- lattice (circulant) backend ------------------------------------------------

class LatticeOperator:
    """Circulant P-P weight operator on an equispaced circle or product-grid torus."""

    def __init__(self, stencil: np.ndarray):
        self.stencil = np.asarray(stencil, dtype=float)
        self.shape = self.stencil.shape
        self.n = int(self.stencil.size)
        self._axes = tuple(range(self.stencil.ndim))
        self._hat = np.fft.rfftn(self.stencil).real
        self._mask_hat = np.fft.rfftn((self.stencil > 0).astype(float)).real
        self.degree = math.fsum(self.stencil.ravel())
        self.stencil_nnz = int(np.count_nonzero(self.stencil))

    @classmethod
    def for_cloud(cls, cloud: PointCloud, profile: KernelProfile) -> "LatticeOperator":
        spec = cloud.spec
        if cloud.mode != "quasi_uniform" or cloud.grid_shape is None or spec.kind == "sphere":
            raise GraphError("lattice backend needs a quasi-uniform circle or torus cloud")
        if spec.kind == "circle":
            (n,) = cloud.grid_shape
            d2 = 4 * spec.scale ** 2 * np.sin(np.pi * np.arange(n) / n) ** 2
        else:
            n1, n2 = cloud.grid_shape
            a2 = spec.torus_radius ** 2
            s1 = np.sin(np.pi * np.arange(n1) / n1) ** 2
            s2 = np.sin(np.pi * np.arange(n2) / n2) ** 2
            d2 = 4 * a2 * (s1[:, None] + s2[None, :])
        return cls(profile.scaled("R", d2))

    @property
    def nnz(self) -> int:
        return self.stencil_nnz * self.n

    def matvec(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        out = np.fft.irfftn(np.fft.rfftn(u.reshape(self.shape)) * self._hat, s=self.shape, axes=self._axes)
        return out.ravel()

    def reach(self, frontier: np.ndarray) -> np.ndarray:
        """Points with at least one positive-weight neighbor in ``frontier``."""
        f = frontier.astype(float).reshape(self.shape)
        counts = np.fft.irfftn(np.fft.rfftn(f) * self._mask_hat, s=self.shape, axes=self._axes)
        return counts.ravel() > 0.5

    def to_csr(self) -> sparse.csr_matrix:
        idx = np.arange(self.n).reshape(self.shape)
        offs = np.argwhere(self.stencil > 0)
        rows, cols, vals = [], [], []
        for off in offs:
            shifted = idx
            for ax, o in enumerate(off):
                shifted = np.roll(shifted, -int(o), axis=ax)
            rows.append(idx.ravel())
            cols.append(shifted.ravel())
            vals.append(np.full(self.n, self.stencil[tuple(off)]))
        mat = sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                                shape=(self.n, self.n))
        mat.sort_indices()
        return mat


def estimate_r_nnz(cloud: PointCloud, profile: KernelProfile) -> float:
    """Expected stored P-P entries, from the kernel support fraction of the manifold."""
    spec = cloud.spec
    rad = profile.radius("R")
    if spec.kind == "circle":
        frac = min(1.0, 2 * math.asin(min(1.0, rad / (2 * spec.scale))) / math.pi)
    elif spec.kind == "sphere":
        frac = min(1.0, (rad / (2 * spec.scale)) ** 2)
    else:
        a = spec.torus_radius
        frac = min(1.0, math.pi * rad ** 2 / (4 * math.pi ** 2 * a ** 2))
    return cloud.n * (1.0 + frac * cloud.n)


# -- affinity graph -------------------------------------------------------------

@dataclass
class AffinityGraph:
    """Kernel weights of one (P, S) instance.

    ``r_pp`` is the n x n P-P block of R weights (including the diagonal
    self-terms) as CSR, or None when ``lattice`` holds it. ``k_ps`` is the
    n x m block of K weights from P to S.
    """

    profile: KernelProfile
    n: int
    m: int
    r_pp: sparse.csr_matrix | None
    k_ps: sparse.csr_matrix
    d_R: np.ndarray
    d_K: np.ndarray
    lattice: LatticeOperator | None = None
    points: np.ndarray | None = field(default=None, repr=False)
    labeled_points: np.ndarray | None = field(default=None, repr=False)

    @property
    def backend(self) -> str:
        return "lattice" if self.lattice is not None else "sparse"

    @property
    def r_nnz(self) -> int:
        return self.lattice.nnz if self.lattice is not None else int(self.r_pp.nnz)

    @property
    def k_nnz(self) -> int:
        return int(self.k_ps.nnz)

    def r_matvec(self, u) -> np.ndarray:
        """``W_R u`` for the P-P block."""
        if self.lattice is not None:
            return self.lattice.matvec(u)
        return self.r_pp @ np.asarray(u, dtype=float)

    def r_matrix(self) -> sparse.csr_matrix:
        """Explicit P-P block (materialized from the stencil on the lattice backend)."""
        return self.r_pp if self.r_pp is not None else self.lattice.to_csr()

    def r_reach(self, frontier: np.ndarray) -> np.ndarray:
        if self.lattice is not None:
            return self.lattice.reach(frontier)
        return (self.r_pp @ frontier.astype(float)) > 0

    def scaled(self, c: float) -> "AffinityGraph":
        """Every R and K weight multiplied by ``c``."""
        lat = LatticeOperator(self.lattice.stencil * c) if self.lattice is not None else None
        return AffinityGraph(self.profile, self.n, self.m, None if self.r_pp is None else self.r_pp * c,
                             self.k_ps * c, self.d_R * c, self.d_K * c, lat, self.points, self.labeled_points)

    def stats(self, bins: int = 10) -> dict:
        def hist(x):
            counts, edges = np.histogram(x, bins=bins)
            return {"counts": counts.tolist(), "edges": edges.tolist()}

        return {
            "n": self.n, "m": self.m, "delta": self.profile.delta, "profile": self.profile.name,
            "backend": self.backend, "r_edges": self.r_nnz, "k_edges": self.k_nnz,
            "d_R": {"min": float(self.d_R.min()), "max": float(self.d_R.max()), "hist": hist(self.d_R)},
            "d_K": {"min": float(self.d_K.min()), "max": float(self.d_K.max()),
                    "zero": int(np.count_nonzero(self.d_K == 0)), "hist": hist(self.d_K)},
        }

    def to_json(self, **extra) -> str:
        return json.dumps({**self.stats(), **extra}, indent=2)


def _points_of(obj, name):
    pts = obj.points if hasattr(obj, "points") else obj
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    if pts.size == 0:
        raise GraphError(f"{name} is empty")
    return pts


def assemble_affinity(cloud: PointCloud, labeled: LabeledSet, profile: KernelProfile,
                      backend: str = "auto", validate: bool = True) -> AffinityGraph:
    """Kernel weights for P-P (R) and P-S (K) pairs with degree sums."""
    if backend not in BACKENDS:
        raise GraphError(f"unknown backend {backend!r}")
    if validate:
        report = validate_profile(profile)
        if not report.passed:
            raise ProfileError(f"profile {profile.name!r} fails: {', '.join(report.failed())}")
    spec = getattr(cloud, "spec", None)
    if spec is not None and profile.delta >= spec.scale:
        raise GraphError("delta must be smaller than the manifold scale")
    P = _points_of(cloud, "point cloud")
    S = _points_of(labeled, "labeled set")
    n, m = P.shape[0], S.shape[0]

    use_lattice = False
    if backend == "lattice":
        use_lattice = True
    elif backend == "auto" and isinstance(cloud, PointCloud) and cloud.grid_shape is not None:
        use_lattice = estimate_r_nnz(cloud, profile) > LATTICE_NNZ_THRESHOLD

    s_index = build_index(S, profile.radius("K") * RADIUS_PAD)
    k_ps = kernel_matrix(s_index, P, profile, "K")
    d_K = np.asarray(k_ps.sum(axis=1)).ravel()

    if use_lattice:
        lat = LatticeOperator.for_cloud(cloud, profile)
        return AffinityGraph(profile, n, m, None, k_ps, np.full(n, lat.degree), d_K, lat, P, S)
    p_index = build_index(P, profile.radius("R") * RADIUS_PAD)
    r_pp = kernel_matrix(p_index, P, profile, "R")
    d_R = np.asarray(r_pp.sum(axis=1)).ravel()
    return AffinityGraph(profile, n, m, r_pp, k_ps, d_R, d_K, None, P, S)


# -- connectivity -----------------------------------------------------------------

@dataclass
class ConnectivityReport:
    s_connected: bool
    unreachable: np.ndarray
    hops: np.ndarray

    @property
    def max_hops(self) -> int:
        reached = self.hops[self.hops >= 0]
        return int(reached.max()) if reached.size else -1

    def to_dict(self) -> dict:
        return {"s_connected": self.s_connected, "unreachable_count": int(self.unreachable.size),
                "unreachable": self.unreachable.tolist(), "max_hops": self.max_hops}


def check_s_connected(graph: AffinityGraph) -> ConnectivityReport:
    """Breadth-first search from all labeled points over the kernel neighbor relation.

    Labeled points sit at hop 0; P points with a positive K weight to some
    labeled point at hop 1; further hops follow positive P-P R weights.
    ``hops`` is -1 for unreachable P points.
    """
    hops = np.full(graph.n, -1, dtype=np.int64)
    if graph.m == 0:
        return ConnectivityReport(False, np.arange(graph.n), hops)
    frontier = np.diff(graph.k_ps.indptr) > 0
    level = 1
    while frontier.any():
        hops[frontier] = level
        frontier = graph.r_reach(frontier) & (hops < 0)
        level += 1
    unreachable = np.flatnonzero(hops < 0)
    return ConnectivityReport(unreachable.size == 0, unreachable, hops)
