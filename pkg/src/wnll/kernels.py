"""Radial kernel profiles, their scaled forms, integrated tails and validation.

A profile ``f(r)`` is evaluated at ``r = |x - y|^2 / (4 delta^2)``; scaled
kernels carry the normalization ``C_delta = (4 pi delta^2)^(-k/2)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
import math
from typing import Callable

import numpy as np
from numpy.polynomial import polynomial as P
from scipy import integrate

DEFAULT_PROFILE = "wendland_c2_default"
EDGE_TOL = 1e-8
EDGE_STEP = 1e-5
TINY_WEIGHT = 1e-300


class ProfileError(ValueError):
    pass


class RadialProfile:
    """A nonnegative function of ``r >= 0`` with support ``[0, support]``."""

    name = "profile"
    support = math.inf

    def __call__(self, r):
        raise NotImplementedError

    def tail(self, r):
        """Integrated tail  int_r^inf f(s) ds, by adaptive quadrature."""
        r = np.asarray(r, dtype=float)
        out = np.empty(r.shape)
        for idx, rv in np.ndenumerate(r):
            if rv >= self.support:
                out[idx] = 0.0
                continue
            val, err = integrate.quad(lambda s: float(self(s)), rv, self.support,
                                      epsabs=1e-12, epsrel=1e-12, limit=200)
            if not err <= 1e-10:
                raise ProfileError(f"tail quadrature did not converge at r={rv}")
            out[idx] = val
        return out if out.ndim else float(out)

    def to_dict(self) -> dict:
        return {"type": type(self).__name__, "name": self.name}


class WendlandProfile(RadialProfile):
    """``(1 - r/a)^4 (4 r/a + 1)`` on ``[0, a]``, C^2 (in fact C^3) at the edge."""

    def __init__(self, support: float = 1.0, name: str | None = None):
        self.support = float(support)
        self.name = name or f"wendland_{support:g}"

    def __call__(self, r):
        t = np.clip(np.asarray(r, dtype=float) / self.support, 0.0, 1.0)
        q = 1 - t
        q *= q
        q *= q
        return q * (4 * t + 1)

    def tail(self, r):
        # int_r^a (1-s/a)^4 (4s/a+1) ds = a [(1-r/a)^5 - (2/3)(1-r/a)^6]
        q = 1 - np.clip(np.asarray(r, dtype=float) / self.support, 0.0, 1.0)
        return self.support * (q ** 5 - (2.0 / 3.0) * q ** 6)

    def to_dict(self):
        return {"type": "wendland", "support": self.support, "name": self.name}


class PolynomialProfile(RadialProfile):
    """``sum c_i r^i`` on ``[0, support]`` and zero beyond."""

    def __init__(self, coeffs, support: float = 1.0, name: str = "polynomial"):
        self.coeffs = np.asarray(coeffs, dtype=float)
        self.support = float(support)
        self.name = name
        self._antider = P.polyint(self.coeffs)
        # Taylor coefficients about the support edge, in q = support - r; evaluating
        # there keeps the edge value and derivatives free of cancellation noise
        self._edge = (P.Polynomial(self.coeffs)(P.Polynomial([self.support, -1.0]))).coef

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        q = self.support - np.maximum(r, 0.0)
        return np.where(r <= self.support, P.polyval(q, self._edge), 0.0)

    def tail(self, r):
        r = np.clip(np.asarray(r, dtype=float), 0.0, self.support)
        return P.polyval(self.support, self._antider) - P.polyval(r, self._antider)

    def to_dict(self):
        return {"type": "polynomial", "coeffs": self.coeffs.tolist(), "support": self.support,
                "name": self.name}


class GaussianProfile(RadialProfile):
    """``exp(-r / width)``; not compactly supported."""

    def __init__(self, width: float = 1.0, name: str = "gaussian"):
        self.width = float(width)
        self.name = name

    def __call__(self, r):
        return np.exp(-np.asarray(r, dtype=float) / self.width)

    def tail(self, r):
        return self.width * np.exp(-np.asarray(r, dtype=float) / self.width)

    def to_dict(self):
        return {"type": "gaussian", "width": self.width, "name": self.name}


class CallableProfile(RadialProfile):
    """Arbitrary vectorized callable; the tail falls back to quadrature."""

    def __init__(self, fn: Callable, support: float, name: str = "callable"):
        self.fn = fn
        self.support = float(support)
        self.name = name

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        return np.where(r <= self.support, self.fn(np.maximum(r, 0.0)), 0.0)


def radial_from_dict(d) -> RadialProfile:
    kind = d.get("type", "wendland")
    if kind == "wendland":
        return WendlandProfile(d.get("support", 1.0), d.get("name"))
    if kind == "polynomial":
        return PolynomialProfile(d["coeffs"], d.get("support", 1.0), d.get("name", "polynomial"))
    if kind == "gaussian":
        return GaussianProfile(d.get("width", 1.0), d.get("name", "gaussian"))
    raise ProfileError(f"unknown radial profile type {kind!r}")


@dataclass(frozen=True)
class KernelProfile:
    """Kernel pair (R, K) at bandwidth ``delta`` on a k-dimensional manifold."""

    r_shape: RadialProfile
    k_shape: RadialProfile
    delta: float
    intrinsic_dim: int
    delta0_R: float
    delta0_K: float
    name: str = "custom"
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not (self.delta > 0 and math.isfinite(self.delta)):
            raise ProfileError("delta must be positive")
        if self.intrinsic_dim < 1:
            raise ProfileError("intrinsic dimension must be >= 1")

    @property
    def r0(self) -> float:
        return self.k_shape.support

    @property
    def c_delta(self) -> float:
        return (4 * math.pi * self.delta ** 2) ** (-self.intrinsic_dim / 2)

    def with_delta(self, delta: float) -> "KernelProfile":
        return replace(self, delta=float(delta))

    def shape(self, kind: str) -> RadialProfile:
        if kind == "R":
            return self.r_shape
        if kind == "K":
            return self.k_shape
        raise ProfileError(f"kernel kind must be 'R' or 'K', not {kind!r}")

    def radius(self, kind: str) -> float:
        """Ambient support radius 2 delta sqrt(support)."""
        return 2 * self.delta * math.sqrt(self.shape(kind).support)

    def scaled(self, kind: str, sqdist) -> np.ndarray:
        """``C_delta f(d^2 / 4 delta^2)`` for squared distances; weights below 1e-300 become 0."""
        w = self.c_delta * self.shape(kind)(np.asarray(sqdist) / (4 * self.delta ** 2))
        return np.where(w < TINY_WEIGHT, 0.0, w)

    def scaled_tail(self, sqdist) -> np.ndarray:
        """``C_delta Rbar(d^2 / 4 delta^2)``."""
        return self.c_delta * self.r_shape.tail(np.asarray(sqdist) / (4 * self.delta ** 2))

    def to_dict(self) -> dict:
        return {"name": self.name, "delta": self.delta, "intrinsic_dim": self.intrinsic_dim,
                "r_shape": self.r_shape.to_dict(), "k_shape": self.k_shape.to_dict(),
                "delta0_R": self.delta0_R, "delta0_K": self.delta0_K}


def sqdist(x, y) -> np.ndarray:
    """Squared Euclidean distance with a fixed summation order (broadcasting)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    d = x[..., 0] - y[..., 0]
    out = d * d
    for k in range(1, x.shape[-1]):
        d = x[..., k] - y[..., k]
        out = out + d * d
    return out


def eval_scaled(profile: KernelProfile, kind: str, x, y):
    """Scaled kernel value between ambient points ``x`` and ``y``."""
    w = profile.scaled(kind, sqdist(x, y))
    return float(w) if np.ndim(w) == 0 else w


def rbar(profile: KernelProfile | RadialProfile, r):
    """Integrated tail of the R profile, ``int_r^inf R(s) ds``."""
    shape = profile.r_shape if isinstance(profile, KernelProfile) else profile
    r_arr = np.asarray(r, dtype=float)
    if np.any(r_arr < 0):
        raise ProfileError("rbar needs r >= 0")
    out = shape.tail(r_arr)
    return float(out) if np.ndim(out) == 0 else out


# -- registry ---------------------------------------------------------------

def _negative_lobe_coeffs():
    # (1 - r)^4 (4 r + 1) (1 - 1.5 r): Wendland edge, but dips below zero past r = 2/3
    base = P.polymul(P.polypow([1.0, -1.0], 4), [1.0, 4.0])
    return P.polymul(base, [1.0, -1.5])


def _registry():
    return {
        "wendland_c2_default": dict(r=WendlandProfile(1.0, "wendland_r"), k=WendlandProfile(3.0, "wendland_k"),
                                    delta0_R=0.1875, delta0_K=0.045),
        "gaussian_nonconforming": dict(r=GaussianProfile(1.0, "gaussian_r"), k=GaussianProfile(3.0, "gaussian_k"),
                                       delta0_R=0.6, delta0_K=0.5),
        "linear_edge": dict(r=PolynomialProfile([1.0, -1.0], 1.0, "linear_r"), k=WendlandProfile(3.0, "wendland_k"),
                            delta0_R=0.5, delta0_K=0.045),
        "negative_lobe": dict(r=PolynomialProfile(_negative_lobe_coeffs(), 1.0, "negative_lobe_r"),
                              k=WendlandProfile(3.0, "wendland_k"), delta0_R=0.045, delta0_K=0.045),
    }


PROFILE_IDS = tuple(_registry())
# the clause each registered counterexample is built to violate
COUNTEREXAMPLES = {
    "gaussian_nonconforming": "compact_support",
    "linear_edge": "smoothness",
    "negative_lobe": "nonnegativity",
}


def get_profile(spec, delta: float = 0.1, intrinsic_dim: int = 1) -> KernelProfile:
    """Profile by registry id, or from a dict with custom radial shapes.

    Custom dicts look like ``{"r_shape": {"type": "polynomial", "coeffs": [...]},
    "k_shape": {...}, "delta0_R": .., "delta0_K": ..}``.
    """
    if isinstance(spec, KernelProfile):
        return replace(spec, delta=float(delta), intrinsic_dim=int(intrinsic_dim))
    if isinstance(spec, str):
        reg = _registry()
        if spec not in reg:
            raise ProfileError(f"unknown profile id {spec!r}")
        e = reg[spec]
        return KernelProfile(e["r"], e["k"], float(delta), int(intrinsic_dim), e["delta0_R"], e["delta0_K"], spec)
    d = dict(spec)
    if "id" in d:
        return get_profile(d["id"], delta, intrinsic_dim)
    try:
        return KernelProfile(radial_from_dict(d["r_shape"]), radial_from_dict(d["k_shape"]), float(delta),
                             int(intrinsic_dim), float(d["delta0_R"]), float(d["delta0_K"]),
                             d.get("name", "custom"))
    except KeyError as exc:
        raise ProfileError(f"custom profile missing field {exc}") from None


# -- validation -------------------------------------------------------------

@dataclass
class ClauseResult:
    passed: bool
    detail: str


@dataclass
class ValidationReport:
    profile: str
    clauses: dict

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.clauses.values())

    def failed(self) -> list[str]:
        return [k for k, c in self.clauses.items() if not c.passed]

    def to_dict(self) -> dict:
        return {"profile": self.profile, "passed": self.passed,
                "clauses": {k: {"passed": c.passed, "detail": c.detail} for k, c in self.clauses.items()}}


def _edge_derivatives(f: RadialProfile, h: float = EDGE_STEP):
    s = f.support
    v0, v1, v2 = (float(f(s - j * h)) for j in range(3))
    return v0, (v0 - v1) / h, (v0 - 2 * v1 + v2) / h ** 2


def validate_profile(profile: KernelProfile, samples: int = 1000) -> ValidationReport:
    """Check each kernel clause on sample grids; failures are report entries, not errors."""
    if samples < 100:
        raise ProfileError("validation needs at least 100 samples")
    R, K = profile.r_shape, profile.k_shape
    clauses = {}

    worst = []
    for name, f in (("R", R), ("K", K)):
        top = f.support if math.isfinite(f.support) else 10.0
        grid = np.linspace(0.0, 2 * top, 2 * samples)
        worst.append((name, float(np.min(f(grid)))))
    bad = [f"{n} min {v:.3g}" for n, v in worst if v < 0]
    clauses["nonnegativity"] = ClauseResult(not bad, "; ".join(bad) or "R, K >= 0 on sample grid")

    msgs = []
    if not R.support <= 1.0:
        msgs.append(f"R support {R.support} exceeds 1")
    if not math.isfinite(K.support):
        msgs.append("K support unbounded")
    for name, f in (("R", R), ("K", K)):
        top = f.support if math.isfinite(f.support) else 1.0
        beyond = np.linspace(top, 2 * top + 1, samples)[1:]
        if np.any(f(beyond) != 0):
            msgs.append(f"{name} nonzero beyond {top:g}")
    clauses["compact_support"] = ClauseResult(not msgs, "; ".join(msgs) or "R = 0 for r > 1, K = 0 for r > r0")

    msgs = []
    for name, f in (("R", R), ("K", K)):
        if not math.isfinite(f.support):
            continue
        v0, d1, d2 = _edge_derivatives(f)
        for label, v in (("value", v0), ("first derivative", d1), ("second derivative", d2)):
            if abs(v) > EDGE_TOL:
                msgs.append(f"{name} {label} at edge {v:.3g}")
    clauses["smoothness"] = ClauseResult(not msgs, "; ".join(msgs) or "C^2 match at support edges")

    r_min = float(np.min(R(np.linspace(0.0, 0.5, samples))))
    k_min = float(np.min(K(np.linspace(0.0, 2.0, samples))))
    ok = profile.delta0_R > 0 and profile.delta0_K > 0 and r_min >= profile.delta0_R and k_min >= profile.delta0_K
    clauses["nondegeneracy"] = ClauseResult(
        ok, f"min R on [0,1/2] = {r_min:.4g} (floor {profile.delta0_R}); "
            f"min K on [0,2] = {k_min:.4g} (floor {profile.delta0_K})")

    clauses["r0_min"] = ClauseResult(profile.r0 >= 2.0, f"r0 = {profile.r0:g}")
    return ValidationReport(profile.name, clauses)
