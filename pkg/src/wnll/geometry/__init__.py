from .manifolds import (
    GeometryError,
    ManifoldSpec,
    RegionSpec,
    geodesic_distance_to_region,
    wrap_angle,
)
from .labels import (
    LabelFunction,
    LabelFunctionError,
    label_function,
    laplace_beltrami_fd,
    laplace_beltrami_reference,
    metric_tensor,
)
from .sampling import (
    LabeledSet,
    PointCloud,
    counter_uniforms,
    sample_labeled,
    sample_manifold,
    torus_grid_shape,
)
from .reference import OracleError, reference_at_resolution, reference_harmonic_solution

__all__ = [
    "GeometryError", "ManifoldSpec", "RegionSpec", "geodesic_distance_to_region", "wrap_angle",
    "LabelFunction", "LabelFunctionError", "label_function", "laplace_beltrami_fd",
    "laplace_beltrami_reference", "metric_tensor", "LabeledSet", "PointCloud",
    "counter_uniforms", "sample_labeled", "sample_manifold", "torus_grid_shape",
    "OracleError", "reference_at_resolution", "reference_harmonic_solution",
]
