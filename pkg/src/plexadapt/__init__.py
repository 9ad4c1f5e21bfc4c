"""Anisotropic metric-based mesh adaptation for transient 2D advection.

Modules: :mod:`~plexadapt.mesh` (plex topology), :mod:`~plexadapt.fields`
(P1 fields and symmetric tensors), :mod:`~plexadapt.metric` (Hessian recovery
and the space-time L^p metric), :mod:`~plexadapt.remesh` (local remeshing),
:mod:`~plexadapt.advection` (SUPG solver), :mod:`~plexadapt.transfer`
(interpolation between meshes) and :mod:`~plexadapt.pipeline` (fixed-point
driver), plus :mod:`~plexadapt.io` and :mod:`~plexadapt.cli`.
"""
from .advection import (AdvectionProblem, SolverError, SolverOptions, bubble_problem, initial_bubble, mass,
                        run_subinterval, step, velocity_2d)
from .fields import FieldError, NodalField, SymTensor2, abs_tensor, eig, evaluate, metric_edge_length
from .mesh import (CELL, CORNER_TAG, EDGE, VERTEX, Mesh, MeshError, build_from_cells, closure, compact, cone,
                   star, support, unit_square_mesh, validate)
from .metric import (HessianAccumulator, MetricParams, accumulate, clamp_metric, complexity_term, lp_metric,
                     metric_complexity, recover_hessian)
from .pipeline import AdaptConfig, PipelineState, fixed_point_adapt, uniform_run
from .remesh import AdaptOptions, AdaptResult, adapt, quality
from .transfer import TransferError, interpolate_field, locate_point

__version__ = "0.1.0"
