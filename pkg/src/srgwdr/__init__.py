"""Joint clustering and dimensionality reduction with semi-relaxed
Gromov-Wasserstein transport."""

from .affinity import (
    AffinityMatrix,
    entropic_affinity,
    gram_kernel,
    graph_laplacian,
    knn_graph,
    mds_kernel,
    sne_affinity,
    squared_distance_matrix,
    student_kernel,
)
from .barycenter import (
    BarycenterGraph,
    HardClustering,
    barycenter_structure,
    factorized_objective,
    feature_barycenter,
    hard_assignments,
    solve_srgw_barycenter,
    solve_srgwi,
)
from .errors import ConvergenceError, DomainError, SolverError
from .gw_core import fused_cost, gw_cost, gw_plan_gradient
from .gwdr import (
    AdamOptions,
    Embedding,
    GwdrOptions,
    embedding_affinity,
    init_embeddings,
    solve_fgwdr,
    solve_gwdr,
    z_gradient,
)
from .solver import (
    SolveReport,
    SolverOptions,
    exact_line_search,
    semi_relaxed_lmo,
    solve_srfgw,
    solve_srgw,
)

__version__ = "0.1.0"

__all__ = [
    "AdamOptions",
    "AffinityMatrix",
    "BarycenterGraph",
    "ConvergenceError",
    "DomainError",
    "Embedding",
    "GwdrOptions",
    "HardClustering",
    "SolveReport",
    "SolverError",
    "SolverOptions",
    "barycenter_structure",
    "embedding_affinity",
    "entropic_affinity",
    "exact_line_search",
    "factorized_objective",
    "feature_barycenter",
    "fused_cost",
    "gram_kernel",
    "graph_laplacian",
    "gw_cost",
    "gw_plan_gradient",
    "hard_assignments",
    "init_embeddings",
    "knn_graph",
    "mds_kernel",
    "semi_relaxed_lmo",
    "sne_affinity",
    "solve_fgwdr",
    "solve_gwdr",
    "solve_srfgw",
    "solve_srgw",
    "solve_srgw_barycenter",
    "solve_srgwi",
    "squared_distance_matrix",
    "student_kernel",
    "z_gradient",
]
