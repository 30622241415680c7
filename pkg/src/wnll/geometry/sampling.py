"""Uniform and quasi-uniform samplers for manifolds and labeled regions.

Random draws come from a Philox counter-based stream keyed by
``(seed, stream)``; point ``i`` always consumes the four 64-bit words of
counter ``i``, so any chunked or parallel generation reproduces the same cloud.
"""
from __future__ import annotations

from dataclasses import dataclass, field
import math

import numpy as np

from .labels import LabelFunction, LabelFunctionError, label_function
from .manifolds import GeometryError, ManifoldSpec, RegionSpec, rotation_to

SAMPLING_MODES = ("uniform_random", "quasi_uniform")
WORDS_PER_POINT = 4
CLOUD_STREAM = 0
LABEL_STREAM = 1
_GOLDEN_ANGLE = math.pi * (3.0 - math.sqrt(5.0))


def counter_uniforms(seed: int, stream: int, start: int, count: int) -> np.ndarray:
    """Uniform doubles in [0, 1), shape (count, 4), for point indices start..start+count-1."""
    if seed < 0:
        raise ValueError("seed must be nonnegative")
    bg = np.random.Philox(key=int(seed) + (int(stream) << 64))
    if start:
        bg.advance(start)
    raw = bg.random_raw(WORDS_PER_POINT * count).reshape(count, WORDS_PER_POINT)
    return (raw >> np.uint64(11)).astype(np.float64) * 2.0 ** -53


def _uniforms(seed, stream, n, chunk=None):
    if not chunk or chunk >= n:
        return counter_uniforms(seed, stream, 0, n)
    parts = [counter_uniforms(seed, stream, s, min(chunk, n - s)) for s in range(0, n, chunk)]
    return np.concatenate(parts, axis=0)


@dataclass
class PointCloud:
    points: np.ndarray
    spec: ManifoldSpec
    seed: int = 0
    mode: str = "uniform_random"
    grid_shape: tuple | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        if self.points.ndim != 2 or self.points.shape[1] != self.spec.ambient_dim:
            raise GeometryError("points must have shape (n, ambient_dim)")

    @property
    def n(self) -> int:
        return self.points.shape[0]

    def __len__(self):
        return self.n


@dataclass
class LabeledSet:
    points: np.ndarray
    values: np.ndarray
    region: RegionSpec | None = None
    seed: int = 0
    label_fn: LabelFunction | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        self.values = np.asarray(self.values, dtype=float).reshape(-1)
        if self.points.shape[0] == 0:
            self.points = self.points.reshape(0, self.points.shape[-1] if self.points.size else 0)
        if self.points.shape[0] != self.values.shape[0]:
            raise GeometryError("labeled points and values differ in length")
        if not np.all(np.isfinite(self.values)):
            raise GeometryError("label values must be finite")

    @property
    def m(self) -> int:
        return self.points.shape[0]

    def __len__(self):
        return self.m


def torus_grid_shape(n: int) -> tuple[int, int]:
    """Most nearly square factor pair (n1 <= n2) with n1 * n2 == n."""
    n1 = int(math.isqrt(n))
    while n % n1:
        n1 -= 1
    return n1, n // n1


def sample_manifold(spec: ManifoldSpec, n: int, seed: int = 0, mode: str = "uniform_random",
                    chunk: int | None = None) -> PointCloud:
    """Sample ``n`` points of ``spec``.

    ``uniform_random`` draws i.i.d. points from the normalized volume measure;
    ``quasi_uniform`` returns an equispaced circle, a product grid on the
    torus, or a Fibonacci spiral on the sphere (seed is ignored).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if mode not in SAMPLING_MODES:
        raise ValueError(f"unknown sampling mode {mode!r}")
    grid_shape = None
    if mode == "uniform_random":
        u = _uniforms(seed, CLOUD_STREAM, n, chunk)
        if spec.kind == "circle":
            coords = 2 * np.pi * u[:, :1]
        elif spec.kind == "sphere":
            z = 2.0 * u[:, 0] - 1.0
            coords = np.stack([np.arccos(z), 2 * np.pi * u[:, 1]], axis=1)
        else:
            coords = 2 * np.pi * u[:, :2]
    else:
        if spec.kind == "circle":
            coords = (2 * np.pi * np.arange(n) / n)[:, None]
            grid_shape = (n,)
        elif spec.kind == "sphere":
            i = np.arange(n)
            z = 1.0 - (2 * i + 1) / n
            coords = np.stack([np.arccos(z), np.mod(i * _GOLDEN_ANGLE, 2 * np.pi)], axis=1)
        else:
            n1, n2 = torus_grid_shape(n)
            t, p = np.meshgrid(2 * np.pi * np.arange(n1) / n1, 2 * np.pi * np.arange(n2) / n2,
                               indexing="ij")
            coords = np.stack([t.ravel(), p.ravel()], axis=1)
            grid_shape = (n1, n2)
    pts = spec.embed(coords)
    return PointCloud(points=pts, spec=spec, seed=int(seed), mode=mode, grid_shape=grid_shape)


def _sample_region_coords(region: RegionSpec, u: np.ndarray) -> np.ndarray:
    m = region.manifold
    w = region.angular_halfwidth
    c = region.center
    if m.kind == "circle":
        return m.embed((c[0] + w * (2 * u[:, 0] - 1))[:, None])
    if m.kind == "sphere":
        if region.kind == "cap":
            # area-uniform in the cap around the pole, then rotated onto the center
            z = 1.0 - u[:, 0] * (1.0 - np.cos(w))
            local = m.embed(np.stack([np.arccos(z), 2 * np.pi * u[:, 1]], axis=1)) / m.scale
            pts = local @ rotation_to(region.center_point).T
            return m.scale * pts / np.linalg.norm(pts, axis=1, keepdims=True)
        lo, hi = max(c[0] - w, 0.0), min(c[0] + w, np.pi)
        z = np.cos(lo) - u[:, 0] * (np.cos(lo) - np.cos(hi))
        return m.embed(np.stack([np.arccos(np.clip(z, -1, 1)), 2 * np.pi * u[:, 1]], axis=1))
    if region.kind == "band":
        return m.embed(np.stack([c[0] + w * (2 * u[:, 0] - 1), 2 * np.pi * u[:, 1]], axis=1))
    r = w * np.sqrt(u[:, 0])
    a = 2 * np.pi * u[:, 1]
    return m.embed(np.stack([c[0] + r * np.cos(a), c[1] + r * np.sin(a)], axis=1))


def sample_labeled(region: RegionSpec, m: int, seed: int = 0, label_fn="constant") -> LabeledSet:
    """Draw ``m`` uniform samples of the region and evaluate ``label_fn`` there."""
    if m < 1:
        raise ValueError("m must be >= 1")
    if region.volume <= 0:
        raise GeometryError("region is empty")
    fn = label_function(label_fn)
    u = counter_uniforms(seed, LABEL_STREAM, 0, m)
    pts = _sample_region_coords(region, u)
    vals = fn(region.manifold, pts)
    if not np.all(np.isfinite(vals)):
        raise LabelFunctionError(f"{fn.name!r} is undefined on part of the region")
    return LabeledSet(points=pts, values=vals, region=region, seed=int(seed), label_fn=fn)
