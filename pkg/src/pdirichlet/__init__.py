"""Constrained p-Dirichlet energy minimization on 2D point clouds.

Tools for extending a handful of labeled points to a full labeling: discrete
graph energies with gradient-based minimizers, their local and nonlocal
continuum counterparts solved by Chebyshev collocation on patched domains,
density estimation (KDE and spline-smoothed KDE) feeding the continuum
weights, and reproducible error/timing studies comparing the routes.
"""

from .chebyshev import (
    ChebGrid1D,
    DiffOperator,
    QuadratureRule,
    chebyshev_diff_matrix,
    chebyshev_nodes,
    quadrature_2d,
    tensor_diff_ops,
)
from .continuum import (
    ContinuumProblem,
    FlowState,
    PatchedField,
    evaluate_on_mesh,
    gradient_flow_rhs,
    local_energy,
    minimize_continuum,
    nonlocal_energy,
    semi_implicit_step,
)
from .density import (
    DensityField,
    Kernel,
    KdeDensityField,
    ReferenceDensity,
    SplineConfig,
    SplineDensityField,
    density_gradient,
    kde_evaluate,
    reference_density,
    sample_density,
    sigma_eta,
    skde_fit,
    uniform_mesh,
)
from .graph import (
    ConstraintSet,
    GraphLabeling,
    MinimizerResult,
    WeightedGraph,
    build_epsilon_graph,
    build_knn_graph,
    default_epsilon,
    discrete_energy,
    discrete_energy_gradient,
    minimize_discrete,
    solve_p2_direct,
)
from .patches import NodeGroup, Patch, PatchedDomain, build_patches
from .csvio import Table, read_csv, write_csv
from .config import RunConfig, config_hash, config_text, parse_config
from .experiments import (
    ErrorReport,
    PointConstraints,
    StudyConfig,
    StudyResult,
    constraint_labels,
    density_error_study,
    error_metrics,
    label_value,
    minimizer_comparison,
    thread_budget,
)
from .errors import (
    ConfigError,
    ConstraintError,
    ConvergenceError,
    PDirichletError,
    SingularSystemError,
    StepSizeError,
    ValidationError,
)

__version__ = "0.1.0"
