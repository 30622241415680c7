"""WNLL and graph-Laplacian systems on the unlabeled points, and their solution.

With ``u = b`` substituted on S, the row of x in P reads

    sum_{y in P} R(x,y) (u(x) - u(y)) + mu sum_{s in S} K(x,s) u(x) = mu sum_{s in S} K(x,s) b(s)

so the matrix is ``diag(d_R + mu d_K) - W_R``: symmetric, diagonally dominant,
with nonpositive off-diagonal entries.
"""
from __future__ import annotations

from dataclasses import dataclass, field
import math
import time

import numpy as np
from scipy import linalg, sparse

from .graph import AffinityGraph, build_index, RADIUS_PAD

DENSE_MAX_N = 2000
DEFAULT_TOL = 1e-10
MU_RULES = ("default_ratio", "fixed", "el_equivalent")


class SolverError(ValueError):
    pass


class SingularSystemError(SolverError):
    pass


@dataclass
class LinearSystem:
    """``A u = rhs`` over P; ``ordering[i]`` is the P index of row i.

    Products go through the graph weights; ``to_sparse`` materializes A.
    """

    graph: AffinityGraph
    mu: float
    rhs: np.ndarray
    diagonal: np.ndarray
    matrix: sparse.csr_matrix | None = None
    kind: str = "wnll"

    @property
    def n(self) -> int:
        return self.rhs.size

    @property
    def ordering(self) -> np.ndarray:
        return np.arange(self.n)

    def matvec(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if self.matrix is not None:
            return self.matrix @ u
        g = self.graph
        return (g.d_R + self.mu * g.d_K) * u - g.r_matvec(u)

    def to_sparse(self) -> sparse.csr_matrix:
        if self.matrix is not None:
            return self.matrix
        return _explicit(self.graph, self.mu)

    def with_rhs(self, rhs) -> "LinearSystem":
        rhs = np.asarray(rhs, dtype=float)
        if rhs.shape != self.rhs.shape:
            raise SolverError("rhs has the wrong length")
        return LinearSystem(self.graph, self.mu, rhs, self.diagonal, self.matrix, self.kind)


@dataclass
class SolveStats:
    iterations: int
    final_residual: float
    converged: bool
    wall_time: float
    method: str = "cg"

    def to_dict(self) -> dict:
        return {"iterations": self.iterations, "final_residual": self.final_residual,
                "converged": self.converged, "wall_time": self.wall_time, "method": self.method}


@dataclass
class Solution:
    u: np.ndarray
    mu: float
    kind: str = "wnll"
    points: np.ndarray | None = field(default=None, repr=False)
    labeled_points: np.ndarray | None = field(default=None, repr=False)
    labeled_values: np.ndarray | None = field(default=None, repr=False)


def _explicit(graph: AffinityGraph, mu: float) -> sparse.csr_matrix:
    diag = sparse.diags(graph.d_R + mu * graph.d_K, format="csr")
    mat = (diag - graph.r_matrix()).tocsr()
    mat.sort_indices()
    return mat


def _labels(labeled, m):
    b = np.asarray(getattr(labeled, "values", labeled), dtype=float).reshape(-1)
    if b.size == 0:
        raise SolverError("labeled set is empty")
    if b.size != m:
        raise SolverError(f"graph has {m} labeled points, got {b.size} values")
    return b


def _assemble(graph: AffinityGraph, labeled, mu: float, kind: str) -> LinearSystem:
    b = _labels(labeled, graph.m)
    if graph.lattice is not None:
        self_w = graph.lattice.stencil.flat[0]
    else:
        self_w = graph.r_pp.diagonal()
    diagonal = graph.d_R + mu * graph.d_K - self_w
    rhs = mu * (graph.k_ps @ b)
    return LinearSystem(graph, float(mu), rhs, diagonal, None, kind)


def assemble_wnll(graph: AffinityGraph, labeled, mu: float) -> LinearSystem:
    """WNLL system with labeled-term weight ``mu > 0``."""
    if not (mu > 0 and math.isfinite(mu)):
        raise SolverError("mu must be positive")
    return _assemble(graph, labeled, mu, "wnll")


def assemble_graph_laplacian(graph: AffinityGraph, labeled) -> LinearSystem:
    """Plain graph-Laplacian baseline: labeled couplings carry weight 1."""
    return _assemble(graph, labeled, 1.0, "gl")


def apply_operator(graph: AffinityGraph, mu: float, u) -> np.ndarray:
    """``L u(x) = sum_P R (u(x) - u(y)) + mu sum_S K u(x)`` for x in P.

    ``u`` lists values on P followed by values on S; the S values do not
    enter this operator.
    """
    u = np.asarray(u, dtype=float).reshape(-1)
    if u.size != graph.n + graph.m:
        raise SolverError(f"u must have {graph.n + graph.m} entries (P then S), got {u.size}")
    up = u[:graph.n]
    return graph.d_R * up - graph.r_matvec(up) + mu * graph.d_K * up


def _pcg(system: LinearSystem, tol: float, max_iter: int):
    b = system.rhs
    bnorm = float(np.linalg.norm(b))
    x = np.zeros_like(b)
    if bnorm == 0:
        return x, 0, 0.0, True
    inv_d = np.where(system.diagonal > 0, 1.0 / np.where(system.diagonal > 0, system.diagonal, 1.0), 0.0)
    it = 0
    # restart from the current iterate if the recursive residual drifted from the true one
    for _ in range(3):
        r = b - system.matvec(x)
        res = float(np.linalg.norm(r)) / bnorm
        if res <= tol:
            return x, it, res, True
        z = inv_d * r
        p = z.copy()
        rz = float(r @ z)
        while it < max_iter:
            Ap = system.matvec(p)
            pAp = float(p @ Ap)
            if not pAp > 0:
                return x, it, res, False
            alpha = rz / pAp
            x += alpha * p
            r -= alpha * Ap
            it += 1
            res = float(np.linalg.norm(r)) / bnorm
            if res <= tol:
                break
            z = inv_d * r
            rz_new = float(r @ z)
            p *= rz_new / rz
            p += z
            rz = rz_new
        else:
            break
    res = float(np.linalg.norm(b - system.matvec(x))) / bnorm
    return x, it, res, res <= tol


def _dense(system: LinearSystem):
    if system.n > DENSE_MAX_N:
        raise SolverError(f"dense solve limited to n <= {DENSE_MAX_N}")
    A = system.to_sparse().toarray()
    try:
        c, low = linalg.cho_factor(A, lower=True, check_finite=True)
    except linalg.LinAlgError as exc:
        raise SingularSystemError(f"Cholesky factorization failed: {exc}") from None
    piv = np.abs(np.diag(c)) ** 2
    if piv.min() <= 1e-13 * piv.max():
        raise SingularSystemError(f"singular factor (pivot ratio {piv.min() / piv.max():.2e})")
    x = linalg.cho_solve((c, low), system.rhs)
    bnorm = float(np.linalg.norm(system.rhs))
    res = float(np.linalg.norm(system.rhs - A @ x)) / bnorm if bnorm else 0.0
    return x, 1, res


def solve(system: LinearSystem, method: str = "cg", tol: float = DEFAULT_TOL,
          max_iter: int | None = None) -> tuple[Solution, SolveStats]:
    """Solve with Jacobi-preconditioned CG, or a dense Cholesky oracle (n <= 2000).

    CG non-convergence is reported in the stats, not raised.
    """
    t0 = time.perf_counter()
    if method == "cg":
        max_iter = 10 * system.n if max_iter is None else int(max_iter)
        x, it, res, ok = _pcg(system, tol, max_iter)
    elif method == "dense":
        x, it, res = _dense(system)
        ok = res <= tol
    else:
        raise SolverError(f"unknown method {method!r}")
    g = system.graph
    sol = Solution(x, system.mu, system.kind, g.points, g.labeled_points, None)
    return sol, SolveStats(it, res, ok, time.perf_counter() - t0, method)


def default_mu(cloud, labeled) -> float:
    """Labeled-term weight n / m."""
    n, m = len(cloud), len(labeled)
    if m == 0:
        raise SolverError("no labeled points")
    return n / m


def el_mu(cloud, labeled) -> float:
    """Weight matching the Euler-Lagrange system of the weighted energy, (n/m + 2)/2."""
    return (default_mu(cloud, labeled) + 2.0) / 2.0


def select_mu(rule: str, cloud, labeled, value: float | None = None) -> float:
    if rule == "default_ratio":
        return default_mu(cloud, labeled)
    if rule == "el_equivalent":
        return el_mu(cloud, labeled)
    if rule == "fixed":
        if value is None:
            raise SolverError("fixed mu rule needs a value")
        return float(value)
    raise SolverError(f"unknown mu rule {rule!r}")


@dataclass
class ConditionReport:
    passed: bool
    min_ratio: float | None
    argmin: int | None
    count: int
    vacuous: bool
    c_margin: float
    mu: float

    def to_dict(self) -> dict:
        return {"passed": self.passed, "min_ratio": self.min_ratio, "argmin": self.argmin,
                "count": self.count, "vacuous": self.vacuous, "c_margin": self.c_margin, "mu": self.mu}


def check_mu_condition(graph: AffinityGraph, region, delta: float, mu: float,
                       c_margin: float = 1.0) -> ConditionReport:
    """Minimum of ``mu d_K / d_R`` over unlabeled points within geodesic distance 2 delta of D."""
    if graph.points is None:
        raise SolverError("graph carries no point coordinates")
    near = np.flatnonzero(region.distance(graph.points) <= 2 * delta)
    if near.size == 0:
        return ConditionReport(True, None, None, 0, True, c_margin, mu)
    ratio = mu * graph.d_K[near] / graph.d_R[near]
    j = int(np.argmin(ratio))
    lo = float(ratio[j])
    return ConditionReport(lo >= c_margin, lo, int(near[j]), int(near.size), False, c_margin, mu)


@dataclass
class JumpResult:
    J: float
    argmax: int | None
    isolated: int

    def to_dict(self) -> dict:
        return {"J": self.J, "argmax": self.argmax, "isolated": self.isolated}


def jump_metric(graph: AffinityGraph, u, labeled) -> JumpResult:
    """``max_s |u(x*) - b(s)|`` with x* the nearest unlabeled point within the K support of s.

    Labeled points with no unlabeled point in range are counted as isolated.
    """
    b = _labels(labeled, graph.m)
    u = np.asarray(u, dtype=float)
    S = graph.labeled_points
    idx = build_index(graph.points, graph.profile.radius("K") * RADIUS_PAD)
    r2 = graph.profile.radius("K") ** 2
    best_d = np.full(graph.m, np.inf)
    best_j = np.full(graph.m, -1, dtype=np.int64)
    for rows, cols, d2 in idx.blocks(S):
        d2 = np.where(d2 <= r2, d2, np.inf)
        k = np.argmin(d2, axis=1)
        dk = d2[np.arange(rows.size), k]
        better = dk < best_d[rows]
        best_d[rows[better]] = dk[better]
        best_j[rows[better]] = cols[k[better]]
    ok = best_j >= 0
    if not ok.any():
        return JumpResult(0.0, None, int(graph.m))
    gaps = np.abs(u[best_j[ok]] - b[ok])
    j = int(np.argmax(gaps))
    return JumpResult(float(gaps[j]), int(np.flatnonzero(ok)[j]), int((~ok).sum()))
