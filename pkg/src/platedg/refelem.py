"""Tensor-product Lagrange basis on the unit square and Gauss quadrature.

Provides reference derivatives up to third order and their push-forward
through a bilinear geometry map.  The second-derivative push-forward uses
the two-term chain rule with the inverse-map curvature; third derivatives
differentiate it once more.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np


@lru_cache(maxsize=32)
def gauss_points_01(n):
    """n-point Gauss-Legendre rule on [0, 1]; exact on degree 2n-1."""
    if n < 1:
        raise ValueError("need at least one quadrature point")
    t, w = np.polynomial.legendre.leggauss(n)
    return (t + 1.0) / 2.0, w / 2.0


@dataclass(frozen=True)
class QuadRule:
    """Tensor Gauss rule on the unit square plus the matching edge rule."""

    n: int
    square_points: np.ndarray  # (n*n, 2)
    square_weights: np.ndarray  # (n*n,)
    edge_points: np.ndarray  # (n,)
    edge_weights: np.ndarray  # (n,)


def quadrature(order_hint):
    """Tensor Gauss rule with ``order_hint`` points per direction."""
    s, w = gauss_points_01(order_hint)
    X, Y = np.meshgrid(s, s, indexing="ij")
    pts = np.column_stack([X.ravel(), Y.ravel()])
    wts = np.outer(w, w).ravel()
    return QuadRule(order_hint, pts, wts, s, w)


def edge_quadrature(order_hint):
    return gauss_points_01(order_hint)


class RefBasis:
    """Degree-k tensor Lagrange basis with equispaced nodes on [0, 1]^2.

    Node index n = b*(k+1) + a corresponds to the point (a/k, b/k); the
    basis has the Kronecker property at the nodes and sums to one.
    """

    def __init__(self, k=2):
        if k < 1:
            raise ValueError("degree must be at least 1")
        self.k = k
        self.nodes_1d = np.linspace(0.0, 1.0, k + 1)
        self.n_1d = k + 1
        self.n = (k + 1) ** 2
        V = np.vander(self.nodes_1d, increasing=True)
        coeffs = np.linalg.inv(V)  # column i: monomial coefficients of l_i
        self._deriv_coeffs = [coeffs]
        for _ in range(3):
            self._deriv_coeffs.append(np.polynomial.polynomial.polyder(self._deriv_coeffs[-1], axis=0))
        xa, yb = np.meshgrid(self.nodes_1d, self.nodes_1d, indexing="xy")
        self.nodes = np.column_stack([xa.ravel(), yb.ravel()])

    def eval_1d(self, x, order):
        """Values of the 1D Lagrange basis derivatives: (npts, k+1)."""
        c = self._deriv_coeffs[order]
        if c.size == 0:
            return np.zeros((len(np.atleast_1d(x)), self.n_1d))
        return np.polynomial.polynomial.polyval(np.atleast_1d(x), c).T

    def tabulate(self, pts, max_order=2):
        """Reference values and derivatives at ``pts``.

        Returns (val, grad, hess, third) with shapes (np, n), (np, n, 2),
        (np, n, 2, 2), (np, n, 2, 2, 2); entries beyond max_order are None.
        """
        pts = np.atleast_2d(pts)
        x, y = pts[:, 0], pts[:, 1]
        X = [self.eval_1d(x, m) for m in range(min(max_order, 3) + 1)]
        Y = [self.eval_1d(y, m) for m in range(min(max_order, 3) + 1)]

        def tensor(mx, my):
            # (np, n) with n = b*(k+1)+a
            return np.einsum('pa,pb->pba', X[mx], Y[my]).reshape(len(x), self.n)

        val = tensor(0, 0)
        grad = hess = third = None
        if max_order >= 1:
            grad = np.stack([tensor(1, 0), tensor(0, 1)], axis=-1)
        if max_order >= 2:
            hess = np.empty((len(x), self.n, 2, 2))
            hess[:, :, 0, 0] = tensor(2, 0)
            hess[:, :, 0, 1] = hess[:, :, 1, 0] = tensor(1, 1)
            hess[:, :, 1, 1] = tensor(0, 2)
        if max_order >= 3:
            third = np.empty((len(x), self.n, 2, 2, 2))
            d = {(3, 0): tensor(3, 0), (2, 1): tensor(2, 1), (1, 2): tensor(1, 2), (0, 3): tensor(0, 3)}
            for i in range(2):
                for j in range(2):
                    for l in range(2):
                        nx = 3 - (i + j + l)
                        third[:, :, i, j, l] = d[(nx, 3 - nx)]
        return val, grad, hess, third


@dataclass
class MappedBasis:
    """Physical-space basis data at a set of points inside one cell."""

    points: np.ndarray  # physical coordinates (np, 2)
    value: np.ndarray  # (np, n)
    grad: np.ndarray | None  # (np, n, 2)
    hess: np.ndarray | None  # (np, n, 2, 2)
    third: np.ndarray | None  # (np, n, 2, 2, 2)
    det: np.ndarray  # (np,) jacobian determinant


def eval_mapped_derivatives(basis, gmap, ref_points, max_order=2):
    """Push basis derivatives through the geometry map at ``ref_points``."""
    if max_order > 3:
        raise ValueError("derivative orders above 3 are not supported")
    ref_points = np.atleast_2d(ref_points)
    val, rgrad, rhess, rthird = basis.tabulate(ref_points, max_order)
    det = gmap.det_DF(ref_points)
    phys = gmap.F(ref_points)
    if max_order == 0:
        return MappedBasis(phys, val, None, None, None, det)
    Dg, D2g, D3g = gmap.inverse_derivatives(ref_points, max_order=min(max_order, 3))
    grad = np.einsum('pnm,pmi->pni', rgrad, Dg)
    hess = third = None
    if max_order >= 2:
        hess = np.einsum('pnml,pmi,plj->pnij', rhess, Dg, Dg)
        hess += np.einsum('pnm,pmij->pnij', rgrad, D2g)
    if max_order >= 3:
        third = np.einsum('pnmlr,pmi,plj,prk->pnijk', rthird, Dg, Dg, Dg)
        third += np.einsum('pnml,pmi,pljk->pnijk', rhess, Dg, D2g)
        third += np.einsum('pnml,pmik,plj->pnijk', rhess, D2g, Dg)
        third += np.einsum('pnml,pmij,plk->pnijk', rhess, D2g, Dg)
        third += np.einsum('pnm,pmijk->pnijk', rgrad, D3g)
    return MappedBasis(phys, val, grad, hess, third, det)
