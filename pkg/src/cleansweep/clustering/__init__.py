"""Density clustering of the benign rows."""

from .optics import (
    UNDEFINED,
    Clustering,
    ClusteringError,
    OpticsParams,
    ReachabilityResult,
    cluster_points,
    core_distances,
    extract_clusters,
    group_noise,
    optics_order,
    xi_intervals,
)
from .reference import reference_optics

__all__ = [
    "UNDEFINED",
    "Clustering",
    "ClusteringError",
    "OpticsParams",
    "ReachabilityResult",
    "cluster_points",
    "core_distances",
    "extract_clusters",
    "group_noise",
    "optics_order",
    "reference_optics",
    "xi_intervals",
]
