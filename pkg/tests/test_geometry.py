import numpy as np
import pytest
from scipy import stats

from wnll.geometry import (GeometryError, LabelFunctionError, ManifoldSpec, OracleError, RegionSpec,
                           counter_uniforms, geodesic_distance_to_region, label_function,
                           laplace_beltrami_fd, laplace_beltrami_reference, reference_at_resolution,
                           reference_harmonic_solution, sample_labeled, sample_manifold)
from wnll.geometry.sampling import _uniforms

KINDS = ["circle", "sphere", "clifford_torus"]


# -- manifolds ------------------------------------------------------------------

@pytest.mark.parametrize("kind,k,d", [("circle", 1, 2), ("sphere", 2, 3), ("clifford_torus", 2, 4)])
def test_manifold_dimensions(kind, k, d):
    spec = ManifoldSpec(kind, 2.0)
    assert (spec.intrinsic_dim, spec.ambient_dim) == (k, d)
    assert spec.volume > 0


def test_manifold_volumes():
    assert ManifoldSpec("circle", 2.0).volume == pytest.approx(4 * np.pi)
    assert ManifoldSpec("sphere", 2.0).volume == pytest.approx(16 * np.pi)
    # Clifford torus of ambient radius s is a flat product of two circles of radius s/sqrt(2)
    assert ManifoldSpec("clifford_torus", 2.0).volume == pytest.approx((2 * np.pi * np.sqrt(2)) ** 2)


def test_manifold_rejects_bad_input():
    with pytest.raises(GeometryError):
        ManifoldSpec("klein_bottle")
    with pytest.raises(GeometryError):
        ManifoldSpec("circle", 0.0)


# -- sampling ---------------------------------------------------------------------

def test_circle_quasi_uniform_n4(circle):
    cloud = sample_manifold(circle, 4, mode="quasi_uniform")
    expected = np.array([[1, 0], [0, 1], [-1, 0], [0, -1]], dtype=float)
    np.testing.assert_allclose(cloud.points, expected, atol=1e-15)


def test_sphere_random_mean_is_small():
    cloud = sample_manifold(ManifoldSpec("sphere"), 100_000, seed=11)
    assert np.linalg.norm(cloud.points.mean(axis=0)) < 0.02


def test_torus_quasi_uniform_grid():
    spec = ManifoldSpec("clifford_torus", 1.5)
    cloud = sample_manifold(spec, 16, mode="quasi_uniform")
    assert cloud.grid_shape == (4, 4)
    np.testing.assert_allclose(np.linalg.norm(cloud.points, axis=1), 1.5, rtol=0, atol=1e-14)
    angles = spec.intrinsic(cloud.points)
    grid = np.mod(np.round(angles / (np.pi / 2)), 4)
    assert len({tuple(g) for g in grid}) == 16


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("mode", ["uniform_random", "quasi_uniform"])
def test_samples_lie_on_manifold(kind, mode):
    spec = ManifoldSpec(kind, 2.5)
    cloud = sample_manifold(spec, 5000, seed=1, mode=mode)
    assert np.max(np.abs(spec.constraint_residual(cloud.points))) <= 1e-12 * spec.scale


@pytest.mark.parametrize("kind", KINDS)
def test_sampling_is_deterministic_and_chunk_independent(kind):
    spec = ManifoldSpec(kind)
    a = sample_manifold(spec, 1001, seed=42).points
    b = sample_manifold(spec, 1001, seed=42).points
    c = sample_manifold(spec, 1001, seed=42, chunk=97).points
    assert np.array_equal(a, b) and np.array_equal(a, c)
    assert not np.array_equal(a, sample_manifold(spec, 1001, seed=43).points)


def test_counter_stream_offsets():
    whole = counter_uniforms(7, 0, 0, 50)
    assert np.array_equal(whole[20:35], counter_uniforms(7, 0, 20, 15))
    assert np.array_equal(whole, _uniforms(7, 0, 50, chunk=8))
    assert whole.min() >= 0 and whole.max() < 1


def test_random_samples_are_uniform():
    circle = sample_manifold(ManifoldSpec("circle"), 20000, seed=5)
    theta = np.mod(np.arctan2(circle.points[:, 1], circle.points[:, 0]), 2 * np.pi)
    assert stats.kstest(theta / (2 * np.pi), "uniform").pvalue > 1e-3
    sphere = sample_manifold(ManifoldSpec("sphere"), 20000, seed=5)
    # Archimedes: z is uniform on [-1, 1] for the area measure
    assert stats.kstest((sphere.points[:, 2] + 1) / 2, "uniform").pvalue > 1e-3


def test_sample_manifold_errors(circle):
    with pytest.raises(ValueError):
        sample_manifold(circle, 0)
    with pytest.raises(ValueError):
        sample_manifold(circle, 10, mode="sobol")


# -- labeled sets -----------------------------------------------------------------

def test_labeled_constant(arc):
    lab = sample_labeled(arc, 3, seed=0, label_fn={"name": "constant", "c": 1.0})
    assert lab.m == 3
    assert np.all(lab.values == 1.0)


def test_labeled_sin_range(arc):
    lab = sample_labeled(arc, 5000, seed=0, label_fn="sin_theta")
    assert np.all(np.abs(lab.values) <= np.sqrt(2) / 2 + 1e-15)
    assert np.all(arc.contains(lab.points))


def test_labeled_sphere_cap_membership():
    spec = ManifoldSpec("sphere")
    cap = RegionSpec(spec, "cap", (0.0, 0.0), 0.5)
    lab = sample_labeled(cap, 100, seed=1)
    colat = np.arccos(np.clip(lab.points[:, 2], -1, 1))
    assert np.all(colat <= 0.5 + 1e-12)


@pytest.mark.parametrize("kind,region_kind,center", [
    ("sphere", "cap", (1.0, 2.0)), ("sphere", "band", (1.2,)), ("clifford_torus", "band", (0.5,)),
    ("clifford_torus", "cap", (1.0, 3.0))])
def test_labeled_samples_stay_in_region(kind, region_kind, center):
    region = RegionSpec(ManifoldSpec(kind), region_kind, center, 0.4)
    lab = sample_labeled(region, 2000, seed=4, label_fn={"name": "coordinate", "axis": 0})
    assert np.all(region.distance(lab.points) <= 1e-9)
    assert np.max(np.abs(region.manifold.constraint_residual(lab.points))) <= 1e-12


def test_labeled_errors(arc):
    with pytest.raises(ValueError):
        sample_labeled(arc, 0)
    cap = RegionSpec(ManifoldSpec("sphere"), "cap", (0.0, 0.0), 0.5)
    with pytest.raises(LabelFunctionError):
        sample_labeled(cap, 10, label_fn="sin_theta")
    with pytest.raises(LabelFunctionError):
        label_function("cubic_spline")


# -- distances ----------------------------------------------------------------------

@pytest.mark.parametrize("theta,expected", [(np.pi / 4, 0.0), (np.pi, 3 * np.pi / 4), (0.1, 0.0),
                                            (-np.pi / 2, np.pi / 4)])
def test_circle_distance(circle, arc, theta, expected):
    x = circle.embed(np.array([[theta]]))[0]
    assert geodesic_distance_to_region(arc, x) == pytest.approx(expected, abs=1e-12)


def test_sphere_cap_distance():
    spec = ManifoldSpec("sphere")
    cap = RegionSpec(spec, "cap", (0.0, 0.0), 0.5)
    x = spec.embed(np.array([[1.2, 0.7]]))[0]
    assert geodesic_distance_to_region(cap, x) == pytest.approx(0.7, abs=1e-12)


def test_distance_rejects_off_manifold(arc):
    with pytest.raises(GeometryError):
        geodesic_distance_to_region(arc, np.array([2.0, 0.0]))


# -- Laplace-Beltrami -------------------------------------------------------------------

def test_laplacian_examples(circle):
    x = circle.embed(np.array([[0.9]]))[0]
    assert laplace_beltrami_reference(circle, "sin_theta", x) == pytest.approx(-np.sin(0.9), rel=1e-14)
    sphere = ManifoldSpec("sphere")
    y = sphere.embed(np.array([[0.8, 0.3]]))[0]
    assert laplace_beltrami_reference(sphere, {"name": "coordinate", "axis": 2}, y) == pytest.approx(-2 * y[2])
    for spec in (circle, sphere, ManifoldSpec("clifford_torus")):
        pts = sample_manifold(spec, 5, seed=0).points
        assert np.all(laplace_beltrami_reference(spec, "constant", pts) == 0)


def test_laplacian_unregistered():
    with pytest.raises(LabelFunctionError):
        laplace_beltrami_reference(ManifoldSpec("circle"), {"name": "tabulated", "values": [0, 1, 0]},
                                   np.array([1.0, 0.0]))


CASES = [
    ("circle", 1.0, {"name": "sin_theta", "k": 1}, [0.7]),
    ("circle", 2.0, {"name": "sin_theta", "k": 3}, [1.3]),
    ("circle", 1.5, {"name": "coordinate", "axis": 1}, [2.0]),
    ("sphere", 1.0, {"name": "coordinate", "axis": 2}, [0.6, 0.4]),
    ("sphere", 2.0, {"name": "coordinate", "axis": 0}, [1.1, 0.3]),
    ("clifford_torus", 1.0, {"name": "sin_theta", "k": 2}, [0.4, 1.0]),
    ("clifford_torus", 1.0, {"name": "coordinate", "axis": 3}, [0.4, 1.0]),
]


@pytest.mark.parametrize("kind,scale,fn,coords", CASES)
def test_laplacian_matches_finite_differences(kind, scale, fn, coords):
    spec = ManifoldSpec(kind, scale)
    f = label_function(fn)
    x = spec.embed(np.array([coords]))[0]
    ref = laplace_beltrami_reference(spec, f, x)
    fd = laplace_beltrami_fd(spec, f, np.array(coords), h=1e-4)
    assert abs(fd - ref) <= 1e-5 * abs(ref)


# -- reference solutions -----------------------------------------------------------------

def test_circle_reference_examples(circle, arc):
    q = circle.embed(np.array([[np.pi], [np.pi / 2]]))
    u = reference_harmonic_solution(arc, "sin_theta", q)
    assert u[0] == pytest.approx(0.0, abs=1e-15)
    assert u[1] == pytest.approx(np.sqrt(2) / 2 - 2 * np.sqrt(2) / (3 * np.pi) * (np.pi / 4), abs=1e-14)
    assert u[1] == pytest.approx(0.4714, abs=1e-4)


def test_circle_reference_is_linear_off_region(circle, arc):
    h = 0.01
    for t in (1.0, 2.5, 4.0, 5.3):
        u = reference_harmonic_solution(arc, "sin_theta", circle.embed(np.array([[t - h], [t], [t + h]])))
        assert abs(u[0] - 2 * u[1] + u[2]) <= 1e-12


@pytest.mark.parametrize("region", [
    RegionSpec(ManifoldSpec("circle"), "arc", (1.0,), 0.3),
    RegionSpec(ManifoldSpec("sphere"), "cap", (0.0, 0.0), 0.5),
    RegionSpec(ManifoldSpec("sphere"), "band", (1.5,), 0.2),
    RegionSpec(ManifoldSpec("clifford_torus"), "band", (0.0,), 0.4),
])
def test_reference_of_constant_is_constant(region):
    q = sample_manifold(region.manifold, 20, seed=2).points
    u = reference_harmonic_solution(region, {"name": "constant", "c": 2.5}, q)
    np.testing.assert_allclose(u, 2.5, atol=1e-12)


def test_sphere_reference_is_constant_outside_polar_cap():
    # outside a polar cap the only bounded axisymmetric harmonic function is constant
    spec = ManifoldSpec("sphere")
    cap = RegionSpec(spec, "cap", (0.0, 0.0), 0.5)
    q = spec.embed(np.array([[1.0, 0.0], [2.0, 1.0], [3.0, 2.0]]))
    u = reference_harmonic_solution(cap, {"name": "coordinate", "axis": 2}, q)
    np.testing.assert_allclose(u, np.cos(0.5), atol=1e-9)


def test_sphere_band_reference_matches_log_tan():
    # between two bands u = A + B log tan(phi/2)
    spec = ManifoldSpec("sphere")
    band = RegionSpec(spec, "band", (np.pi / 2,), 0.3)
    fn = {"name": "coordinate", "axis": 2}
    lo = np.pi / 2 + 0.3
    q = spec.embed(np.array([[lo + 0.5, 0.0], [lo + 1.0, 0.0]]))
    u = reference_harmonic_solution(band, fn, q, tol=1e-9)
    # bounded at the south pole, so the solution is the constant value at the band edge
    np.testing.assert_allclose(u, np.cos(lo), atol=1e-8)


def test_torus_reference_second_order_and_closed_form():
    spec = ManifoldSpec("clifford_torus")
    band = RegionSpec(spec, "band", (0.0,), 0.4)
    fn = {"name": "coordinate", "axis": 2}
    q = spec.embed(np.array([[2.0, 0.3], [3.5, 1.7], [4.5, 5.0]]))
    vals = [reference_at_resolution(band, fn, q, n) for n in (32, 64, 128)]
    d1 = np.max(np.abs(vals[1] - vals[0]))
    d2 = np.max(np.abs(vals[2] - vals[1]))
    assert 3.0 < d1 / d2 < 5.0
    # b = a cos(phi) on both band edges: u = a cos(phi) cosh(s - L/2) / cosh(L/2)
    a = spec.torus_radius
    w = 0.4 / a
    L = 2 * np.pi - 2 * w
    s = np.array([2.0, 3.5, 4.5]) - w
    exact = a * np.cos([0.3, 1.7, 5.0]) * np.cosh(s - L / 2) / np.cosh(L / 2)
    u = reference_harmonic_solution(band, fn, q, tol=1e-7)
    np.testing.assert_allclose(u, exact, atol=1e-6)


def test_torus_reference_linear_in_theta():
    spec = ManifoldSpec("clifford_torus")
    band = RegionSpec(spec, "band", (0.0,), 0.4)
    q = spec.embed(np.array([[2.0, 0.3]]))
    w = 0.4 / spec.torus_radius
    s = 2.0 - w
    exact = np.sin(w) - 2 * np.sin(w) * s / (2 * np.pi - 2 * w)
    u = reference_harmonic_solution(band, "sin_theta", q)
    assert u[0] == pytest.approx(exact, abs=1e-10)


def test_reference_unsupported_cases():
    sphere = ManifoldSpec("sphere")
    with pytest.raises(OracleError):
        reference_harmonic_solution(RegionSpec(sphere, "cap", (0.0, 0.0), 0.5), {"name": "coordinate", "axis": 0},
                                    sphere.embed(np.array([[1.0, 0.0]])))
    with pytest.raises(OracleError):
        reference_harmonic_solution(RegionSpec(sphere, "cap", (1.0, 0.0), 0.5), "constant",
                                    sphere.embed(np.array([[2.0, 0.0]])))
    torus = ManifoldSpec("clifford_torus")
    with pytest.raises(OracleError):
        reference_harmonic_solution(RegionSpec(torus, "cap", (0.0, 0.0), 0.5), "constant",
                                    torus.embed(np.array([[2.0, 0.0]])))


def test_reference_rejects_off_manifold(arc):
    with pytest.raises(GeometryError):
        reference_harmonic_solution(arc, "sin_theta", np.array([[3.0, 0.0]]))
