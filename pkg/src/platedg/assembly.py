"""Assembly of the interior-penalty bilinear form and companion operators.

Everything the flow and the verification layer need is produced here: the
stiffness part A0 of the bending form with homogeneous boundary jumps, the
data vector l_bc and data-data constant c_bc collecting all (g, Phi) terms,
the discrete H2 metric G, the L2 mass M, load vectors, the per-cell
linearized-isometry constraint operator and the isometry defect.

All forms act componentwise on the three deformation components, so the
matrices are assembled once on the scalar space and expanded; the scalar
blocks are kept because the flow factorizes them directly.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .dgspace import DgSpace, Field, eval_field_on_cells


def expand_components(As, n_loc, n_comp=3):
    """Expand a scalar-space operator to the 3-component vector space.

    Scalar dof r = cell*n_loc + loc becomes (cell*n_comp + d)*n_loc + loc
    for each component d; components do not couple.
    """
    As = As.tocoo()
    cell_r, loc_r = As.row // n_loc, As.row % n_loc
    cell_c, loc_c = As.col // n_loc, As.col % n_loc
    rows, cols, vals = [], [], []
    for d in range(n_comp):
        rows.append((cell_r * n_comp + d) * n_loc + loc_r)
        cols.append((cell_c * n_comp + d) * n_loc + loc_c)
        vals.append(As.data)
    n = As.shape[0] * n_comp
    out = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
    return out.tocsr()


class _CooBuilder:
    def __init__(self, shape):
        self.shape = shape
        self.rows, self.cols, self.vals = [], [], []

    def add_block(self, row_dofs, col_dofs, block):
        r, c = np.meshgrid(row_dofs, col_dofs, indexing="ij")
        self.rows.append(r.ravel())
        self.cols.append(c.ravel())
        self.vals.append(np.asarray(block).ravel())

    def build(self):
        if not self.rows:
            return sp.csr_matrix(self.shape)
        coo = sp.coo_matrix(
            (np.concatenate(self.vals), (np.concatenate(self.rows), np.concatenate(self.cols))),
            shape=self.shape)
        out = coo.tocsr()
        out.sum_duplicates()
        return out


def _edge_side_arrays(space, i, interior):
    """Stacked jump/average trace arrays for edge i (minus first, then plus)."""
    mu = space.edge_normal[i]
    phi_m, grad_m = space.minus_phi[i], space.minus_grad[i]
    dmg_m = np.einsum('qnij,j->qni', space.minus_hess[i], mu)
    dml_m = np.einsum('qniik->qnk', space.minus_third[i]) @ mu
    if interior:
        phi_p, grad_p = space.plus_phi[i], space.plus_grad[i]
        dmg_p = np.einsum('qnij,j->qni', space.plus_hess[i], mu)
        dml_p = np.einsum('qniik->qnk', space.plus_third[i]) @ mu
        jump_phi = np.concatenate([phi_m, -phi_p], axis=1)
        jump_grad = np.concatenate([grad_m, -grad_p], axis=1)
        avg_dmg = 0.5 * np.concatenate([dmg_m, dmg_p], axis=1)
        avg_dml = 0.5 * np.concatenate([dml_m, dml_p], axis=1)
    else:
        jump_phi, jump_grad, avg_dmg, avg_dml = phi_m, grad_m, dmg_m, dml_m
    return jump_phi, jump_grad, avg_dmg, avg_dml


def _scalar_edge_dofs(space, i, interior):
    nl = space.n_loc
    cm = space.minus_cell[i]
    dofs = np.arange(cm * nl, (cm + 1) * nl)
    if interior:
        cp = space.plus_cell[i]
        dofs = np.concatenate([dofs, np.arange(cp * nl, (cp + 1) * nl)])
    return dofs


def _assemble_scalar_pair(space, gamma0, gamma1):
    """Scalar blocks of A0 and G in one sweep over cells and skeleton edges."""
    ns = space.mesh.n_cells * space.n_loc
    a_build, g_build = _CooBuilder((ns, ns)), _CooBuilder((ns, ns))
    nl = space.n_loc
    for c in range(space.mesh.n_cells):
        K = np.einsum('q,qnij,qmij->nm', space.cell_wdet[c], space.cell_hess[c], space.cell_hess[c])
        dofs = np.arange(c * nl, (c + 1) * nl)
        a_build.add_block(dofs, dofs, K)
        g_build.add_block(dofs, dofs, K)
    for i in range(len(space.mesh.edges)):
        if not space.edge_skeleton[i]:
            continue
        interior = i < space.n_interior
        w = space.edge_weights[i]
        h = space.edge_h[i]
        jump_phi, jump_grad, avg_dmg, avg_dml = _edge_side_arrays(space, i, interior)
        D1 = np.einsum('q,qni,qmi->nm', w, avg_dmg, jump_grad)
        D2 = np.einsum('q,qn,qm->nm', w, avg_dml, jump_phi)
        P1 = np.einsum('q,qni,qmi->nm', w, jump_grad, jump_grad)
        P0 = np.einsum('q,qn,qm->nm', w, jump_phi, jump_phi)
        dofs = _scalar_edge_dofs(space, i, interior)
        a_build.add_block(dofs, dofs,
                          -(D1 + D1.T) + (D2 + D2.T) + (gamma1 / h) * P1 + (gamma0 / h ** 3) * P0)
        g_build.add_block(dofs, dofs, P1 / h + P0 / h ** 3)
    A0s = a_build.build()
    Gs = g_build.build()
    # the forms are symmetric; scrub the floating-point remainder
    A0s = (A0s + A0s.T) * 0.5
    Gs = (Gs + Gs.T) * 0.5
    return A0s.tocsr(), Gs.tocsr()


def _assemble_data_terms(space, gamma0, gamma1, boundary_data):
    """Vector l_bc and constant c_bc gathering every (g, Phi) term of the form."""
    l_bc = np.zeros(space.ndofs)
    c_bc = 0.0
    if boundary_data.homogeneous:
        return l_bc, c_bc
    for i in range(space.n_interior, len(space.mesh.edges)):
        if not space.edge_skeleton[i]:
            continue
        w, h = space.edge_weights[i], space.edge_h[i]
        pts = space.edge_points[i]
        g = np.asarray(boundary_data.g(pts))  # (nq, 3)
        Phi = np.asarray(boundary_data.phi(pts))  # (nq, 3, 2)
        mu = space.edge_normal[i]
        phi_m, grad_m = space.minus_phi[i], space.minus_grad[i]
        dmg_m = np.einsum('qnij,j->qni', space.minus_hess[i], mu)
        dml_m = np.einsum('qniik->qnk', space.minus_third[i]) @ mu
        # l_bc . v = gamma1 (h^-1 Phi, grad v) + gamma0 (h^-3 g, v)
        #          + ({dmu lap v}, g) - ({dmu grad v}, Phi)
        local = (gamma1 / h) * np.einsum('q,qdi,qni->dn', w, Phi, grad_m)
        local += (gamma0 / h ** 3) * np.einsum('q,qd,qn->dn', w, g, phi_m)
        local += np.einsum('q,qn,qd->dn', w, dml_m, g)
        local -= np.einsum('q,qni,qdi->dn', w, dmg_m, Phi)
        cm = space.minus_cell[i]
        for d in range(space.N_COMP):
            l_bc[space.component_dofs(cm, d)] += local[d]
        c_bc += (gamma1 / h) * np.einsum('q,qdi,qdi->', w, Phi, Phi)
        c_bc += (gamma0 / h ** 3) * np.einsum('q,qd,qd->', w, g, g)
    return l_bc, float(c_bc)


def assemble_ah(space, gamma0, gamma1, boundary_data, quad=None):
    """Bending bilinear form: (A0, l_bc, c_bc) with a_h(y, v) = V'A0 Y - V'l_bc.

    The value-jump penalty carries the h^-3 weight of the discrete H2 norm
    (squared h^-3/2), which is what the coercivity of the form requires.
    ``quad`` other than the space's tabulated rule is not supported.
    """
    if gamma0 <= 0 or gamma1 <= 0:
        raise ValueError("penalty parameters must be positive")
    if quad is not None and quad is not space.quad:
        raise ValueError("quadrature is fixed by the space")
    A0s, _ = _assemble_scalar_pair(space, gamma0, gamma1)
    l_bc, c_bc = _assemble_data_terms(space, gamma0, gamma1, boundary_data)
    return expand_components(A0s, space.n_loc), l_bc, c_bc


def assemble_h2_metric(space, quad=None):
    """SPD matrix of the discrete H2 inner product with homogeneous jumps."""
    if quad is not None and quad is not space.quad:
        raise ValueError("quadrature is fixed by the space")
    _, Gs = _assemble_scalar_pair(space, 1.0, 1.0)
    return expand_components(Gs, space.n_loc)


def _assemble_scalar_cellwise(space, kind):
    ns = space.mesh.n_cells * space.n_loc
    build = _CooBuilder((ns, ns))
    nl = space.n_loc
    for c in range(space.mesh.n_cells):
        if kind == "mass":
            K = np.einsum('q,qn,qm->nm', space.cell_wdet[c], space.cell_phi[c], space.cell_phi[c])
        else:  # broken-gradient stiffness
            K = np.einsum('q,qni,qmi->nm', space.cell_wdet[c], space.cell_grad[c], space.cell_grad[c])
        dofs = np.arange(c * nl, (c + 1) * nl)
        build.add_block(dofs, dofs, 0.5 * (K + K.T))
    return build.build()


def assemble_mass(space):
    """Component-blocked L2 mass matrix."""
    return expand_components(_assemble_scalar_cellwise(space, "mass"), space.n_loc)


def assemble_load(space, f):
    """Load vector (f, v) for an analytic force f: (N,2) -> (N,3)."""
    l_f = np.zeros(space.ndofs)
    for c in range(space.mesh.n_cells):
        fv = np.asarray(f(space.cell_points[c]))  # (nq, 3)
        local = np.einsum('q,qd,qn->dn', space.cell_wdet[c], fv, space.cell_phi[c])
        for d in range(space.N_COMP):
            l_f[space.component_dofs(c, d)] += local[d]
    return l_f


@dataclass
class AssembledForms:
    """All matrices and data vectors of one (space, gamma, data) configuration."""

    space: DgSpace
    gamma0: float
    gamma1: float
    boundary_data: object
    A0: sp.csr_matrix
    G: sp.csr_matrix
    M: sp.csr_matrix
    l_bc: np.ndarray
    c_bc: float
    l_f: np.ndarray
    A0_scalar: sp.csr_matrix
    G_scalar: sp.csr_matrix
    M_scalar: sp.csr_matrix
    grad_stiffness: sp.csr_matrix

    def update_boundary_data(self, boundary_data):
        """Re-integrate only the data terms; matrices are data-independent."""
        self.boundary_data = boundary_data
        self.l_bc, self.c_bc = _assemble_data_terms(self.space, self.gamma0, self.gamma1, boundary_data)


def assemble_forms(space, gamma0, gamma1, boundary_data, f=None):
    if gamma0 <= 0 or gamma1 <= 0:
        raise ValueError("penalty parameters must be positive")
    A0s, Gs = _assemble_scalar_pair(space, gamma0, gamma1)
    Ms = _assemble_scalar_cellwise(space, "mass")
    Ks = _assemble_scalar_cellwise(space, "grad")
    l_bc, c_bc = _assemble_data_terms(space, gamma0, gamma1, boundary_data)
    l_f = assemble_load(space, f) if f is not None else np.zeros(space.ndofs)
    nl = space.n_loc
    return AssembledForms(
        space=space, gamma0=gamma0, gamma1=gamma1, boundary_data=boundary_data,
        A0=expand_components(A0s, nl), G=expand_components(Gs, nl), M=expand_components(Ms, nl),
        l_bc=l_bc, c_bc=c_bc, l_f=l_f,
        A0_scalar=A0s, G_scalar=Gs, M_scalar=Ms,
        grad_stiffness=expand_components(Ks, nl))


def energy(field, forms, l_f=None):
    """Discrete bending energy E_h = 1/2 a_h(y, y) - (f, y).

    Algebraically identical to the matrix form
    1/2 (Y'A0 Y - 2 Y'l_bc + c_bc) - Y'l_f (see ``energy_quadratic_form``),
    but a_h(y, y) is integrated term by term so that states with pointwise
    vanishing Hessian and jumps evaluate to zero without cancellation noise
    from the large penalty scales.
    """
    from .dgspace import eval_field_on_edges

    sp_ = field.space
    lf = forms.l_f if l_f is None else l_f
    _, _, hess = eval_field_on_cells(field, max_order=2)
    ah = np.einsum('cq,cqdij,cqdij->', sp_.cell_wdet, hess, hess)
    tr = eval_field_on_edges(field)
    m = sp_.edge_skeleton
    w, h = sp_.edge_weights[m], sp_.edge_h[m]
    ah -= 2.0 * np.einsum('eq,eqdi,eqdi->', w, tr.avg_dmu_grad[m], tr.grad_jump[m])
    ah += 2.0 * np.einsum('eq,eqd,eqd->', w, tr.avg_dmu_lap[m], tr.value_jump[m])
    ah += forms.gamma1 * np.einsum('e,eq,eqdi,eqdi->', 1.0 / h, w, tr.grad_jump[m], tr.grad_jump[m])
    ah += forms.gamma0 * np.einsum('e,eq,eqd,eqd->', 1.0 / h ** 3, w, tr.value_jump[m], tr.value_jump[m])
    return 0.5 * float(ah) - field.coeffs @ lf


def energy_quadratic_form(field, forms, l_f=None):
    """E_h through the assembled matrices; agrees with ``energy`` up to
    cancellation roundoff proportional to the penalty scale."""
    y = field.coeffs
    lf = forms.l_f if l_f is None else l_f
    return 0.5 * (y @ (forms.A0 @ y) - 2.0 * (y @ forms.l_bc) + forms.c_bc) - y @ lf


def isometry_defect(field):
    """Sum over cells of |int_T grad(y)^T grad(y) - I| (Frobenius)."""
    sp_ = field.space
    _, grads, _ = eval_field_on_cells(field, max_order=1)
    gram = np.einsum('cq,cqdi,cqdj->cij', sp_.cell_wdet, grads, grads)
    areas = sp_.cell_wdet.sum(axis=1)
    gram[:, 0, 0] -= areas
    gram[:, 1, 1] -= areas
    return float(np.sqrt(np.einsum('cij,cij->c', gram, gram)).sum())


CONSTRAINT_COMPONENTS = ((0, 0), (0, 1), (1, 1))


def constraint_operator(space, linearization_point, quad=None):
    """Linearized isometry constraint matrix B (3 rows per cell).

    Row (T, ij) of B applied to v returns
    int_T (d_i y . d_j v + d_j y . d_i v) for ij in {(1,1),(1,2),(2,2)};
    only the symmetric components are kept, the (2,1) row would repeat (1,2).
    """
    if quad is not None and quad is not space.quad:
        raise ValueError("quadrature is fixed by the space")
    if linearization_point.space is not space:
        raise ValueError("linearization point lives in a different space")
    _, gy, _ = eval_field_on_cells(linearization_point, max_order=1)  # (nc, nq, 3, 2)
    nc, nl = space.mesh.n_cells, space.n_loc
    rows, cols, vals = [], [], []
    col_block = np.empty((space.N_COMP * nl,), dtype=int)
    for c in range(nc):
        w = space.cell_wdet[c]
        gb = space.cell_grad[c]  # (nq, nl, 2)
        for k, (i, j) in enumerate(CONSTRAINT_COMPONENTS):
            local = np.einsum('q,qd,qn->dn', w, gy[c, :, :, i], gb[:, :, j])
            local += np.einsum('q,qd,qn->dn', w, gy[c, :, :, j], gb[:, :, i])
            rows.append(np.full(space.N_COMP * nl, 3 * c + k))
            for d in range(space.N_COMP):
                col_block[d * nl:(d + 1) * nl] = space.component_dofs(c, d)
            cols.append(col_block.copy())
            vals.append(local.ravel())
    B = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(3 * nc, space.ndofs))
    return B.tocsr()


def dirichlet_residual(field):
    """L2 norm of y - g over the Dirichlet boundary."""
    sp_ = field.space
    fc = field.cell_coeffs()
    total = 0.0
    for i in range(sp_.n_interior, len(sp_.mesh.edges)):
        if not sp_.edge_skeleton[i]:
            continue
        tr = np.einsum('qn,dn->qd', sp_.minus_phi[i], fc[sp_.minus_cell[i]])
        diff = tr - np.asarray(field.boundary_data.g(sp_.edge_points[i]))
        total += np.einsum('q,qd,qd->', sp_.edge_weights[i], diff, diff)
    return float(np.sqrt(total))


def jump_seminorms(field):
    """Squared jump seminorms (h^-3/2 value, h^-1/2 gradient) over the skeleton."""
    from .dgspace import eval_field_on_edges

    sp_ = field.space
    tr = eval_field_on_edges(field)
    m = sp_.edge_skeleton
    w, h = sp_.edge_weights[m], sp_.edge_h[m]
    val_sq = np.einsum('e,eq,eqd,eqd->', 1.0 / h ** 3, w, tr.value_jump[m], tr.value_jump[m])
    grad_sq = np.einsum('e,eq,eqdi,eqdi->', 1.0 / h, w, tr.grad_jump[m], tr.grad_jump[m])
    return float(val_sq), float(grad_sq)
