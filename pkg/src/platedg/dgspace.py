"""Degrees of freedom, fields, interpolation and edge traces for [V_h^k]^3.

The space is fully discontinuous: every cell owns 3*(k+1)^2 coefficients
(three deformation components times the scalar Lagrange basis) and no dof is
shared.  Evaluation tables at volume and edge quadrature points are
precomputed once per space and reused by assembly, the gradient flow and the
Hessian reconstruction, so all integrals in the package are consistent with
one another.
"""

from dataclasses import dataclass, field as dc_field

import numpy as np

from .mesh import Mesh
from .refelem import RefBasis, quadrature, gauss_points_01, eval_mapped_derivatives


@dataclass(frozen=True)
class BoundaryData:
    """Clamped data (g, Phi) prescribing y and its gradient on the Dirichlet boundary.

    ``g`` maps points (N, 2) to deformed positions (N, 3); ``phi`` maps
    points to gradients (N, 3, 2).  The data is kept analytic and evaluated
    directly at edge quadrature points.
    """

    g: callable
    phi: callable
    homogeneous: bool = False

    @staticmethod
    def zero():
        return BoundaryData(
            g=lambda x: np.zeros((len(np.atleast_2d(x)), 3)),
            phi=lambda x: np.zeros((len(np.atleast_2d(x)), 3, 2)),
            homogeneous=True)

    @staticmethod
    def clamped_flat():
        """g = (x1, x2, 0), Phi = [I2, 0]^T: the flat plate held in place."""

        def g(x):
            x = np.atleast_2d(x)
            return np.column_stack([x[:, 0], x[:, 1], np.zeros(len(x))])

        def phi(x):
            x = np.atleast_2d(x)
            out = np.zeros((len(x), 3, 2))
            out[:, 0, 0] = 1.0
            out[:, 1, 1] = 1.0
            return out

        return BoundaryData(g=g, phi=phi)


class DgSpace:
    """Vector-valued dG space over a mesh with tabulated quadrature data.

    Dof layout: dof = (cell*3 + comp)*n_loc + loc, i.e. cell-major with the
    three components blocked inside each cell.
    """

    N_COMP = 3

    def __init__(self, mesh: Mesh, degree=2, quad_order=None, edge_quad_order=None):
        self.mesh = mesh
        self.degree = degree
        self.basis = RefBasis(degree)
        self.n_loc = self.basis.n
        self.dofs_per_cell = self.N_COMP * self.n_loc
        self.ndofs = mesh.n_cells * self.dofs_per_cell
        self.quad = quadrature(quad_order or degree + 1)
        self.edge_s, self.edge_w = gauss_points_01(edge_quad_order or degree + 1)
        self._tabulate_cells()
        self._tabulate_edges()

    # dof bookkeeping -----------------------------------------------------
    def dof(self, cell, comp, loc):
        return (cell * self.N_COMP + comp) * self.n_loc + loc

    def cell_slice(self, cell):
        return slice(cell * self.dofs_per_cell, (cell + 1) * self.dofs_per_cell)

    def cell_dofs(self, cell):
        return np.arange(cell * self.dofs_per_cell, (cell + 1) * self.dofs_per_cell)

    def component_dofs(self, cell, comp):
        start = (cell * self.N_COMP + comp) * self.n_loc
        return np.arange(start, start + self.n_loc)

    def unflatten(self, coeffs):
        """View coefficients as (n_cells, 3, n_loc)."""
        return np.asarray(coeffs).reshape(self.mesh.n_cells, self.N_COMP, self.n_loc)

    # tabulation ----------------------------------------------------------
    def _tabulate_cells(self):
        m, nq, nl = self.mesh, len(self.quad.square_weights), self.n_loc
        self.cell_points = np.empty((m.n_cells, nq, 2))
        self.cell_wdet = np.empty((m.n_cells, nq))
        self.cell_phi = np.empty((m.n_cells, nq, nl))
        self.cell_grad = np.empty((m.n_cells, nq, nl, 2))
        self.cell_hess = np.empty((m.n_cells, nq, nl, 2, 2))
        for c in range(m.n_cells):
            mb = eval_mapped_derivatives(self.basis, m.geometry_map(c), self.quad.square_points, 2)
            self.cell_points[c] = mb.points
            self.cell_wdet[c] = self.quad.square_weights * mb.det
            self.cell_phi[c] = mb.value
            self.cell_grad[c] = mb.grad
            self.cell_hess[c] = mb.hess

    def _tabulate_edges(self):
        m = self.mesh
        edges = m.edges
        ne, nq, nl = len(edges), len(self.edge_s), self.n_loc
        s = self.edge_s
        self.n_interior = len(m.interior_edges)
        self.edge_h = np.array([e.length for e in edges])
        self.edge_normal = np.array([e.unit_normal for e in edges])
        self.edge_weights = np.outer(self.edge_h, self.edge_w)  # (ne, nq)
        self.edge_points = np.empty((ne, nq, 2))
        self.edge_skeleton = np.array(
            [(not e.is_boundary) or e.dirichlet for e in edges], dtype=bool)
        self.minus_cell = np.array([e.cell_minus for e in edges])
        self.plus_cell = np.array([e.cell_plus for e in m.interior_edges], dtype=int) \
            if self.n_interior else np.zeros(0, dtype=int)

        def tabulate_side(cell, seg):
            ref = np.outer(1.0 - s, seg[0]) + np.outer(s, seg[1])
            return eval_mapped_derivatives(self.basis, m.geometry_map(cell), ref, 3)

        self.minus_phi = np.empty((ne, nq, nl))
        self.minus_grad = np.empty((ne, nq, nl, 2))
        self.minus_hess = np.empty((ne, nq, nl, 2, 2))
        self.minus_third = np.empty((ne, nq, nl, 2, 2, 2))
        self.plus_phi = np.empty((self.n_interior, nq, nl))
        self.plus_grad = np.empty((self.n_interior, nq, nl, 2))
        self.plus_hess = np.empty((self.n_interior, nq, nl, 2, 2))
        self.plus_third = np.empty((self.n_interior, nq, nl, 2, 2, 2))
        for i, e in enumerate(edges):
            a, b = m.vertices[e.endpoints[0]], m.vertices[e.endpoints[1]]
            self.edge_points[i] = np.outer(1.0 - s, a) + np.outer(s, b)
            mb = tabulate_side(e.cell_minus, e.ref_seg_minus)
            self.minus_phi[i], self.minus_grad[i] = mb.value, mb.grad
            self.minus_hess[i], self.minus_third[i] = mb.hess, mb.third
            if not e.is_boundary:
                mb = tabulate_side(e.cell_plus, e.ref_seg_plus)
                self.plus_phi[i], self.plus_grad[i] = mb.value, mb.grad
                self.plus_hess[i], self.plus_third[i] = mb.hess, mb.third


@dataclass
class Field:
    """Coefficients of a deformation plus the boundary data defining its jumps."""

    space: DgSpace
    coeffs: np.ndarray
    boundary_data: BoundaryData = dc_field(default_factory=BoundaryData.zero)

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.shape != (self.space.ndofs,):
            raise ValueError("coefficient vector does not match space")

    def copy(self):
        return Field(self.space, self.coeffs.copy(), self.boundary_data)

    def cell_coeffs(self):
        return self.space.unflatten(self.coeffs)


def interpolate(space, f, boundary_data=None):
    """Lagrange interpolation of an analytic deformation f: (N,2) -> (N,3)."""
    coeffs = np.empty(space.ndofs)
    cc = coeffs.reshape(space.mesh.n_cells, space.N_COMP, space.n_loc)
    for c in range(space.mesh.n_cells):
        pts = space.mesh.geometry_map(c).F(space.basis.nodes)
        cc[c] = np.asarray(f(pts)).T
    return Field(space, coeffs, boundary_data or BoundaryData.zero())


def eval_field_on_cells(field, max_order=1):
    """Field values/derivatives at all volume quadrature points.

    Returns (values, grads, hessians) with shapes (nc, nq, 3),
    (nc, nq, 3, 2), (nc, nq, 3, 2, 2); entries beyond max_order are None.
    """
    sp = field.space
    C = field.cell_coeffs()
    vals = np.einsum('cqn,cdn->cqd', sp.cell_phi, C)
    grads = hess = None
    if max_order >= 1:
        grads = np.einsum('cqni,cdn->cqdi', sp.cell_grad, C)
    if max_order >= 2:
        hess = np.einsum('cqnij,cdn->cqdij', sp.cell_hess, C)
    return vals, grads, hess


@dataclass
class EdgeTraceData:
    """Per-quad-point jump/average data on one edge."""

    points: np.ndarray  # (nq, 2)
    weights: np.ndarray  # (nq,)
    normal: np.ndarray  # (2,)
    value_jump: np.ndarray  # (nq, 3)
    grad_jump: np.ndarray  # (nq, 3, 2)
    avg_dmu_grad: np.ndarray  # (nq, 3, 2): {d_mu grad v}
    avg_dmu_lap: np.ndarray  # (nq, 3): {d_mu lap v}


def _side_traces(space, field_cells, edge_idx, side):
    if side == "minus":
        cell = space.minus_cell[edge_idx]
        phi, grad = space.minus_phi[edge_idx], space.minus_grad[edge_idx]
        hess, third = space.minus_hess[edge_idx], space.minus_third[edge_idx]
    else:
        cell = space.plus_cell[edge_idx]
        phi, grad = space.plus_phi[edge_idx], space.plus_grad[edge_idx]
        hess, third = space.plus_hess[edge_idx], space.plus_third[edge_idx]
    C = field_cells[cell]
    val = np.einsum('qn,dn->qd', phi, C)
    gr = np.einsum('qni,dn->qdi', grad, C)
    he = np.einsum('qnij,dn->qdij', hess, C)
    th = np.einsum('qnijk,dn->qdijk', third, C)
    return val, gr, he, th


def edge_jump_average(field, edge, quad_order=None):
    """Jumps and averages of a field on one edge.

    On interior edges the jump is minus-trace minus plus-trace; on Dirichlet
    boundary edges the boundary data is subtracted (the Nitsche convention),
    and averages are one-sided.  ``quad_order`` other than the space's edge
    rule is not supported; the tabulated rule keeps all integrals consistent.
    """
    sp = field.space
    if quad_order is not None and quad_order != len(sp.edge_s):
        raise ValueError("edge quadrature is fixed by the space")
    i = edge.index
    fc = field.cell_coeffs()
    mu = sp.edge_normal[i]
    val_m, gr_m, he_m, th_m = _side_traces(sp, fc, i, "minus")
    dmu_grad_m = np.einsum('qdij,j->qdi', he_m, mu)
    dmu_lap_m = np.einsum('qdiij->qdj', th_m) @ mu
    if not edge.is_boundary:
        val_p, gr_p, he_p, th_p = _side_traces(sp, fc, i, "plus")
        value_jump = val_m - val_p
        grad_jump = gr_m - gr_p
        avg_dmu_grad = 0.5 * (dmu_grad_m + np.einsum('qdij,j->qdi', he_p, mu))
        avg_dmu_lap = 0.5 * (dmu_lap_m + np.einsum('qdiij->qdj', th_p) @ mu)
    else:
        value_jump, grad_jump = val_m.copy(), gr_m.copy()
        if edge.dirichlet and not field.boundary_data.homogeneous:
            pts = sp.edge_points[i]
            value_jump -= field.boundary_data.g(pts)
            grad_jump -= field.boundary_data.phi(pts)
        avg_dmu_grad, avg_dmu_lap = dmu_grad_m, dmu_lap_m
    return EdgeTraceData(sp.edge_points[i], sp.edge_weights[i], mu,
                         value_jump, grad_jump, avg_dmu_grad, avg_dmu_lap)


@dataclass
class FieldEdgeData:
    """Stacked jump/average data of one field on every edge of the mesh.

    Arrays are indexed (edge, quad point, component, ...); jumps on Dirichlet
    boundary edges include the data subtraction, rows of non-Dirichlet
    boundary edges are raw traces and are masked out of skeleton sums by
    ``space.edge_skeleton``.
    """

    value_jump: np.ndarray  # (ne, nq, 3)
    grad_jump: np.ndarray  # (ne, nq, 3, 2)
    avg_dmu_grad: np.ndarray  # (ne, nq, 3, 2)
    avg_dmu_lap: np.ndarray  # (ne, nq, 3)


def eval_field_on_edges(field):
    """Vectorized edge traces of a field (see FieldEdgeData)."""
    sp = field.space
    C = field.cell_coeffs()
    mu = sp.edge_normal
    Cm = C[sp.minus_cell]
    val = np.einsum('eqn,edn->eqd', sp.minus_phi, Cm)
    grad = np.einsum('eqni,edn->eqdi', sp.minus_grad, Cm)
    dmg = np.einsum('eqnij,edn,ej->eqdi', sp.minus_hess, Cm, mu)
    dml = np.einsum('eqniik,edn,ek->eqd', sp.minus_third, Cm, mu)
    ni = sp.n_interior
    if ni:
        Cp = C[sp.plus_cell]
        mup = mu[:ni]
        val_p = np.einsum('eqn,edn->eqd', sp.plus_phi, Cp)
        grad_p = np.einsum('eqni,edn->eqdi', sp.plus_grad, Cp)
        dmg_p = np.einsum('eqnij,edn,ej->eqdi', sp.plus_hess, Cp, mup)
        dml_p = np.einsum('eqniik,edn,ek->eqd', sp.plus_third, Cp, mup)
        val[:ni] -= val_p
        grad[:ni] -= grad_p
        dmg[:ni] = 0.5 * (dmg[:ni] + dmg_p)
        dml[:ni] = 0.5 * (dml[:ni] + dml_p)
    if not field.boundary_data.homogeneous:
        rows = np.flatnonzero(sp.edge_skeleton[ni:]) + ni
        if len(rows):
            pts = sp.edge_points[rows].reshape(-1, 2)
            nq = sp.edge_points.shape[1]
            val[rows] -= np.asarray(field.boundary_data.g(pts)).reshape(len(rows), nq, 3)
            grad[rows] -= np.asarray(field.boundary_data.phi(pts)).reshape(len(rows), nq, 3, 2)
    return FieldEdgeData(val, grad, dmg, dml)


def l2_project_obstacle(field, ceiling):
    """Project onto {y3 <= ceiling} by clamping third-component coefficients.

    For a Lagrange basis the coefficients are nodal values, so nodal
    truncation is the computable surrogate of the L2-projection onto the
    admissible set; first two components are untouched.
    """
    out = field.copy()
    cc = out.cell_coeffs()
    np.minimum(cc[:, 2, :], ceiling, out=cc[:, 2, :])
    return out
