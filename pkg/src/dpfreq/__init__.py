"""Differentially private publication of multi-dimensional frequency matrices."""

from .daf import DafConfig, DafNode, daf_entropy, daf_homogeneity
from .data import SyntheticSpec, TrajectorySchema, build_od_matrix, gen_gaussian, gen_zipf
from .flat import sanitize_grid, sanitize_identity, sanitize_uniform
from .matrix import FrequencyMatrix, PartitionSet, Region, entropy, from_points, region_sum, split_dimension
from .mechanism import BudgetLedger, NoiseStream, laplace, sanitize_count
from .query import RangeQuery, WorkloadSpec, answer, evaluate, generate_workload, mre
from .sanitized import SanitizedMatrix

__all__ = [
    "BudgetLedger", "DafConfig", "DafNode", "FrequencyMatrix", "NoiseStream", "PartitionSet",
    "RangeQuery", "Region", "SanitizedMatrix", "SyntheticSpec", "TrajectorySchema",
    "WorkloadSpec", "answer", "build_od_matrix", "daf_entropy", "daf_homogeneity", "entropy",
    "evaluate", "from_points", "gen_gaussian", "gen_zipf", "generate_workload", "laplace",
    "mre", "region_sum", "sanitize_count", "sanitize_grid", "sanitize_identity",
    "sanitize_uniform", "split_dimension",
]
