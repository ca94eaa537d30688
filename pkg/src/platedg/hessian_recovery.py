"""Jump liftings, the reconstructed Hessian and its energy identity.

Edge jumps of a field are lifted into the cell-local space of broken
Hessians {D^2 w : w in V_h^k(T)}: the gradient-jump lifting r_e pairs
against traces of test Hessians, the value-jump lifting b_e against traces
of their divergences.  The reconstructed Hessian

    H_h[y] = D^2_h y - R_h([grad y]) + B_h([y])

is materialized at the volume quadrature points.  Because every integral
uses the same tabulated rules as assembly, the identity

    1/2 ||H_h||^2 - (f, y) = E_h[y] - J_h[y]

holds to machine precision and is used as an end-to-end check of the
discretization.
"""

from dataclasses import dataclass

import numpy as np

from .assembly import energy
from .dgspace import eval_field_on_cells, eval_field_on_edges


class HessianBasis:
    """Orthonormal bases of the cell-local Hessian spaces.

    On each cell the Hessians of the (k+1)^2 mapped basis functions span the
    local space; a rank-revealing eigendecomposition of their Gram matrix
    (relative cutoff 1e-10, the kernel is the pullback of affine functions)
    yields an orthonormal basis in the quadrature inner product, so lifting
    solves and norms reduce to coefficient arithmetic.
    """

    RANK_TOL = 1e-10

    def __init__(self, space):
        self.space = space
        nc, nq = space.mesh.n_cells, space.cell_wdet.shape[1]
        self.coeff = []  # per cell: (n_active, n_loc)
        self.tau_vol = []  # per cell: (n_active, nq, 2, 2)
        for c in range(nc):
            gram = np.einsum('q,qnij,qmij->nm', space.cell_wdet[c], space.cell_hess[c], space.cell_hess[c])
            lam, vec = np.linalg.eigh(gram)
            keep = lam > self.RANK_TOL * lam[-1]
            coeff = (vec[:, keep] / np.sqrt(lam[keep])).T  # rows: orthonormal tau_alpha
            self.coeff.append(coeff)
            self.tau_vol.append(np.einsum('an,qnij->aqij', coeff, space.cell_hess[c]))

    def dim(self, cell):
        return self.coeff[cell].shape[0]

    def edge_traces(self, edge_idx, side):
        """(tau_mu, div_tau_mu) of the basis on one side of an edge.

        tau_mu[a, q, i] = (tau_alpha mu)_i and div_tau_mu[a, q] =
        (div tau_alpha) . mu at the edge quadrature points.
        """
        sp = self.space
        mu = sp.edge_normal[edge_idx]
        if side == "minus":
            cell = sp.minus_cell[edge_idx]
            hess, third = sp.minus_hess[edge_idx], sp.minus_third[edge_idx]
        else:
            cell = sp.plus_cell[edge_idx]
            hess, third = sp.plus_hess[edge_idx], sp.plus_third[edge_idx]
        coeff = self.coeff[cell]
        tau_mu = np.einsum('an,qnij,j->aqi', coeff, hess, mu)
        div_tau_mu = np.einsum('an,qniik,k->aq', coeff, third, mu)
        return cell, tau_mu, div_tau_mu


@dataclass
class LiftedField:
    """Element of the (vector-valued) Hessian space supported on a few cells.

    ``blocks`` maps cell index -> coefficients (n_active, 3) in the cell's
    orthonormal Hessian basis.
    """

    basis: HessianBasis
    blocks: dict

    def values(self, cell):
        """(nq, 3, 2, 2) quadrature-point values on one cell."""
        nq = self.basis.space.cell_wdet.shape[1]
        if cell not in self.blocks:
            return np.zeros((nq, 3, 2, 2))
        return np.einsum('ad,aqij->qdij', self.blocks[cell], self.basis.tau_vol[cell])

    def l2_norm_sq(self):
        # Parseval in the orthonormal basis
        return float(sum(np.sum(b ** 2) for b in self.blocks.values()))


def _sides_of_edge(space, edge_idx):
    interior = edge_idx < space.n_interior
    rho = 0.5 if interior else 1.0
    sides = ["minus", "plus"] if interior else ["minus"]
    return sides, rho


def lift_gradient_jump(space, field, edge, hbasis=None, edge_data=None):
    """Local lifting r_e of the gradient jump of ``field`` across ``edge``."""
    hb = hbasis or HessianBasis(space)
    tr = edge_data if edge_data is not None else eval_field_on_edges(field)
    i = edge.index
    w = space.edge_weights[i]
    sides, rho = _sides_of_edge(space, i)
    blocks = {}
    for side in sides:
        cell, tau_mu, _ = hb.edge_traces(i, side)
        blocks[cell] = rho * np.einsum('q,qdi,aqi->ad', w, tr.grad_jump[i], tau_mu)
    return LiftedField(hb, blocks)


def lift_value_jump(space, field, edge, hbasis=None, edge_data=None):
    """Local lifting b_e of the value jump of ``field`` across ``edge``."""
    hb = hbasis or HessianBasis(space)
    tr = edge_data if edge_data is not None else eval_field_on_edges(field)
    i = edge.index
    w = space.edge_weights[i]
    sides, rho = _sides_of_edge(space, i)
    blocks = {}
    for side in sides:
        cell, _, div_tau_mu = hb.edge_traces(i, side)
        blocks[cell] = rho * np.einsum('q,qd,aq->ad', w, tr.value_jump[i], div_tau_mu)
    return LiftedField(hb, blocks)


def _global_lift_coeffs(space, field, hbasis):
    """Cellwise coefficients of R_h([grad y]) and B_h([y]) in one sweep."""
    tr = eval_field_on_edges(field)
    R = [np.zeros((hbasis.dim(c), 3)) for c in range(space.mesh.n_cells)]
    Bv = [np.zeros((hbasis.dim(c), 3)) for c in range(space.mesh.n_cells)]
    for i in range(len(space.mesh.edges)):
        if not space.edge_skeleton[i]:
            continue
        w = space.edge_weights[i]
        sides, rho = _sides_of_edge(space, i)
        for side in sides:
            cell, tau_mu, div_tau_mu = hbasis.edge_traces(i, side)
            R[cell] += rho * np.einsum('q,qdi,aqi->ad', w, tr.grad_jump[i], tau_mu)
            Bv[cell] += rho * np.einsum('q,qd,aq->ad', w, tr.value_jump[i], div_tau_mu)
    return R, Bv


def discrete_hessian(space, field, hbasis=None):
    """H_h[y] at the volume quadrature points: (n_cells, nq, 3, 2, 2)."""
    hb = hbasis or HessianBasis(space)
    _, _, hess = eval_field_on_cells(field, max_order=2)
    R, Bv = _global_lift_coeffs(space, field, hb)
    H = hess.copy()
    for c in range(space.mesh.n_cells):
        H[c] += np.einsum('ad,aqij->qdij', Bv[c] - R[c], hb.tau_vol[c])
    return H


@dataclass
class EnergyHessianGap:
    """Both sides of the Hessian energy identity and their ingredients."""

    lhs: float  # 1/2 ||H_h||^2 - (f, y)
    J_h: float
    E_h: float
    hess_norm_sq: float  # ||H_h||^2
    lift_diff_norm_sq: float  # ||B_h - R_h||^2
    jump0_sq: float  # ||h^-3/2 [y]||^2
    jump1_sq: float  # ||h^-1/2 [grad y]||^2

    @property
    def identity_residual(self):
        return self.E_h - self.J_h - self.lhs


def energy_hessian_gap(field, forms, l_f=None, hbasis=None):
    """Evaluate 1/2 ||H_h||^2 - (f, y) and the jump functional J_h.

    J_h = -1/2 ||B_h([y]) - R_h([grad y])||^2
          + gamma0/2 ||h^-3/2 [y]||^2 + gamma1/2 ||h^-1/2 [grad y]||^2,
    the exact gap E_h - (1/2 ||H_h||^2 - (f, y)); it is nonnegative once the
    penalty parameters dominate the lifting constants.
    """
    space = field.space
    hb = hbasis or HessianBasis(space)
    lf = forms.l_f if l_f is None else l_f
    _, _, hess = eval_field_on_cells(field, max_order=2)
    R, Bv = _global_lift_coeffs(space, field, hb)
    hess_sq = 0.0
    for c in range(space.mesh.n_cells):
        Hc = hess[c] + np.einsum('ad,aqij->qdij', Bv[c] - R[c], hb.tau_vol[c])
        hess_sq += np.einsum('q,qdij,qdij->', space.cell_wdet[c], Hc, Hc)
    lift_diff_sq = float(sum(np.sum((Bv[c] - R[c]) ** 2) for c in range(space.mesh.n_cells)))
    from .assembly import jump_seminorms

    jump0_sq, jump1_sq = jump_seminorms(field)
    J_h = -0.5 * lift_diff_sq + 0.5 * forms.gamma0 * jump0_sq + 0.5 * forms.gamma1 * jump1_sq
    lhs = 0.5 * float(hess_sq) - field.coeffs @ lf
    E_h = energy(field, forms, lf)
    return EnergyHessianGap(lhs=lhs, J_h=J_h, E_h=E_h,
                            hess_norm_sq=float(hess_sq), lift_diff_norm_sq=lift_diff_sq,
                            jump0_sq=jump0_sq, jump1_sq=jump1_sq)
