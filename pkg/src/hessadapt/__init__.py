"""Anisotropic mesh adaptation driven by recovered Hessians.

Modules: ``geometry`` (meshes), ``fem`` (P1 Poisson solver and errors),
``recovery`` (QLS, DLF, LLS, WF), ``metric`` (metric tensors and the
regularization parameter), ``adapt`` (metric remesher), ``diagnostics``
(quasi-M-uniformity and closeness constants), ``problems`` and ``study``
(adaptive convergence studies) and ``cli``.
"""

from .adapt import AdaptParams, AdaptResult, adapt_mesh, metric_edge_length, scale_metric_to_target
from .diagnostics import (
    ClosenessReport,
    MeshQualityReport,
    bound_factor,
    cr_constants,
    epsilon_closeness,
    inverse_alignment_check,
    mesh_quality,
)
from .fem import Problem, ScalarField, solve_poisson
from .geometry import Mesh, affine_map, load_mesh, structured_mesh, vertex_patch, write_mesh
from .metric import H1, L2, MetricField, Sym2, abs_sym, build_metric, metric_h1, metric_l2, solve_alpha_exact, solve_alpha_h
from .problems import get_problem, registry
from .recovery import ElementTensorField, NodalTensorField, element_average, recover
from .study import StudyConfig, StudyRecord, emit_outputs, run_study

__version__ = "0.1.0"
