"""Discontinuous Galerkin solver for large isometric bending of Kirchhoff plates.

The package assembles an interior-penalty discretization of the bending
energy with weakly (Nitsche) imposed clamped boundary conditions, minimizes
it under a linearized isometry constraint with an H2-gradient flow, and
reconstructs discrete Hessians from jump liftings for verification.
"""

from .mesh import Mesh, EdgeInfo, GeometryMap, build_rect_mesh, edge_trace_points, perturb_mesh
from .refelem import RefBasis, QuadRule, quadrature, edge_quadrature, eval_mapped_derivatives

__version__ = "0.1.0"
