"""Quadrilateral meshes of rectangular domains with an oriented edge skeleton.

Cells are convex quadrilaterals with counter-clockwise vertex ordering and
bilinear reference-square geometry maps.  Edges are straight segments; each
interior edge stores a fixed unit normal pointing from its "minus" cell
(the lower cell index) to its "plus" cell, and each boundary edge stores the
outward normal together with a Dirichlet marker.
"""

from dataclasses import dataclass

import numpy as np

# Reference-square corners, counter-clockwise, matching cell vertex order.
REF_CORNERS = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])

SIDE_NAMES = ("left", "right", "bottom", "top")


@dataclass(frozen=True)
class EdgeInfo:
    """One edge of the skeleton.

    ``endpoints`` are global vertex indices ordered so that the edge is
    traversed counter-clockwise by ``cell_minus``; ``unit_normal`` is then
    outward for the minus cell.  ``ref_seg_minus``/``ref_seg_plus`` hold the
    reference-square coordinates of the two endpoints inside each adjacent
    cell, in the same global order, so trace points from both sides coincide.
    """

    index: int
    endpoints: tuple
    cell_minus: int
    cell_plus: int | None
    unit_normal: np.ndarray
    length: float
    ref_seg_minus: np.ndarray
    ref_seg_plus: np.ndarray | None
    dirichlet: bool = False

    @property
    def is_boundary(self):
        return self.cell_plus is None


class GeometryMap:
    """Bilinear map F from the unit square to one cell.

    Provides F, DF and the derivatives of the inverse map up to third order,
    all evaluated at reference points (the map is never inverted
    numerically).  For parallelograms D2F = 0, hence D2F_inv = D3F_inv = 0.
    """

    def __init__(self, cell_index, corners):
        self.cell = cell_index
        self.corners = np.asarray(corners, dtype=float)
        p0, p1, p2, p3 = self.corners
        # F(x,y) = c00 + c10 x + c01 y + c11 x y
        self._c00 = p0
        self._c10 = p1 - p0
        self._c01 = p3 - p0
        self._c11 = p0 - p1 + p2 - p3
        self.is_affine = bool(np.max(np.abs(self._c11)) < 1e-14)

    def F(self, ref):
        ref = np.atleast_2d(ref)
        x, y = ref[:, 0:1], ref[:, 1:2]
        return self._c00 + self._c10 * x + self._c01 * y + self._c11 * (x * y)

    def DF(self, ref):
        """Jacobian J[p, i, m] = dF_i/dxhat_m at each point p."""
        ref = np.atleast_2d(ref)
        n = ref.shape[0]
        J = np.empty((n, 2, 2))
        J[:, :, 0] = self._c10 + self._c11 * ref[:, 1:2]
        J[:, :, 1] = self._c01 + self._c11 * ref[:, 0:1]
        return J

    def det_DF(self, ref):
        J = self.DF(ref)
        return J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]

    def DF_inv(self, ref):
        """Dg[p, m, i] = dg_m/dx_i of the inverse map g = F^{-1}."""
        return np.linalg.inv(self.DF(ref))

    def inverse_derivatives(self, ref, max_order=3):
        """Tables (Dg, D2g, D3g) of the inverse map at reference points.

        Dg[p,m,i], D2g[p,m,i,j], D3g[p,m,i,j,k]; entries beyond ``max_order``
        are returned as None.  Obtained by differentiating J^{-1} through the
        chain rule; uses that d2J/dxhat2 = 0 for bilinear maps.
        """
        ref = np.atleast_2d(ref)
        npts = ref.shape[0]
        K = np.linalg.inv(self.DF(ref))  # (p, 2, 2): K[m,i]
        out = [K, None, None]
        if max_order < 2:
            return out
        if self.is_affine:
            out[1] = np.zeros((npts, 2, 2, 2))
            out[2] = np.zeros((npts, 2, 2, 2, 2))
            return out
        # A[q][n,i] = d2F_n/(dxhat_i dxhat_q): column q-complement holds c11
        A = [np.zeros((2, 2)), np.zeros((2, 2))]
        A[0][:, 1] = self._c11
        A[1][:, 0] = self._c11
        # B[q] = dK/dxhat_q = -K A_q K
        B = [-(K @ A[q] @ K) for q in range(2)]
        D2g = np.zeros((npts, 2, 2, 2))
        for q in range(2):
            D2g += np.einsum('pmi,pj->pmij', B[q], K[:, q, :])
        out[1] = D2g
        if max_order < 3:
            return out
        D3g = np.zeros((npts, 2, 2, 2, 2))
        for q in range(2):
            for r in range(2):
                dBq_dr = -(B[r] @ A[q] @ K + K @ A[q] @ B[r])
                D3g += np.einsum('pmi,pj,pk->pmijk', dBq_dr, K[:, q, :], K[:, r, :])
                D3g += np.einsum('pmi,pj,pk->pmijk', B[q], B[r][:, q, :], K[:, r, :])
        out[2] = D3g
        return out

    def D2F_inv(self, ref):
        return self.inverse_derivatives(ref, max_order=2)[1]


class Mesh:
    """Immutable quadrilateral mesh with oriented edge skeleton."""

    def __init__(self, vertices, cells, dirichlet_keys=None):
        self.vertices = np.asarray(vertices, dtype=float)
        self.cells = np.asarray(cells, dtype=int)
        if self.cells.ndim != 2 or self.cells.shape[1] != 4:
            raise ValueError("cells must be an (n, 4) index array")
        dirichlet_keys = dirichlet_keys or set()
        self._check_orientation()
        self.interior_edges, self.boundary_edges = self._build_edges(dirichlet_keys)
        self.edges = self.interior_edges + self.boundary_edges
        self.cell_diameters = self._cell_diameters()
        self.h_max = float(self.cell_diameters.max())

    @property
    def n_cells(self):
        return self.cells.shape[0]

    def cell_corners(self, c):
        return self.vertices[self.cells[c]]

    def geometry_map(self, c):
        return GeometryMap(c, self.cell_corners(c))

    def cell_areas(self):
        # shoelace; exact because edges are straight
        p = self.vertices[self.cells]  # (nc, 4, 2)
        x, y = p[:, :, 0], p[:, :, 1]
        xn, yn = np.roll(x, -1, axis=1), np.roll(y, -1, axis=1)
        return 0.5 * np.abs(np.sum(x * yn - xn * y, axis=1))

    def _check_orientation(self):
        p = self.vertices[self.cells]
        for l in range(4):
            a = p[:, (l + 1) % 4] - p[:, l]
            b = p[:, (l + 3) % 4] - p[:, l]
            det = a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]
            if np.any(det <= 0):
                bad = int(np.argmax(det <= 0))
                raise ValueError(f"cell {bad} is not counter-clockwise convex (corner det <= 0)")

    def _cell_diameters(self):
        p = self.vertices[self.cells]
        d1 = np.linalg.norm(p[:, 2] - p[:, 0], axis=1)
        d2 = np.linalg.norm(p[:, 3] - p[:, 1], axis=1)
        return np.maximum(d1, d2)

    def _build_edges(self, dirichlet_keys):
        first_visit = {}
        pairs = {}  # key -> (minus side, plus side), side = (cell, local)
        for c in range(self.n_cells):
            conn = self.cells[c]
            for l in range(4):
                a, b = int(conn[l]), int(conn[(l + 1) % 4])
                key = (min(a, b), max(a, b))
                if key in first_visit:
                    pairs[key] = (first_visit.pop(key), (c, l))
                else:
                    first_visit[key] = (c, l)
        interior, boundary = [], []

        def ref_segment(cell, local, a, b):
            seg = REF_CORNERS[[local, (local + 1) % 4]]
            if self.cells[cell][local] != a:
                seg = seg[::-1]
            return np.array(seg)

        idx = 0
        for key, ((cm, lm), (cp, lp)) in sorted(pairs.items(), key=lambda kv: (kv[1][0][0], kv[1][0][1])):
            a, b = int(self.cells[cm][lm]), int(self.cells[cm][(lm + 1) % 4])
            t = self.vertices[b] - self.vertices[a]
            length = float(np.linalg.norm(t))
            normal = np.array([t[1], -t[0]]) / length
            interior.append(EdgeInfo(
                index=idx, endpoints=(a, b), cell_minus=cm, cell_plus=cp,
                unit_normal=normal, length=length,
                ref_seg_minus=ref_segment(cm, lm, a, b),
                ref_seg_plus=ref_segment(cp, lp, a, b)))
            idx += 1
        for key, (c, l) in sorted(first_visit.items(), key=lambda kv: (kv[1][0], kv[1][1])):
            a, b = int(self.cells[c][l]), int(self.cells[c][(l + 1) % 4])
            t = self.vertices[b] - self.vertices[a]
            length = float(np.linalg.norm(t))
            normal = np.array([t[1], -t[0]]) / length
            boundary.append(EdgeInfo(
                index=idx, endpoints=(a, b), cell_minus=c, cell_plus=None,
                unit_normal=normal, length=length,
                ref_seg_minus=ref_segment(c, l, a, b), ref_seg_plus=None,
                dirichlet=key in dirichlet_keys))
            idx += 1
        return interior, boundary


def build_rect_mesh(domain, nx, ny, dirichlet_sides=()):
    """Uniform nx-by-ny mesh of the axis-aligned rectangle ``domain``.

    ``domain`` is (x0, x1, y0, y1); ``dirichlet_sides`` is any subset of
    {"left", "right", "bottom", "top"} marking the clamped part of the
    boundary.
    """
    x0, x1, y0, y1 = map(float, domain)
    if nx < 1 or ny < 1:
        raise ValueError("nx and ny must be at least 1")
    if not (x1 > x0 and y1 > y0):
        raise ValueError("degenerate domain")
    unknown = set(dirichlet_sides) - set(SIDE_NAMES)
    if unknown:
        raise ValueError(f"unknown dirichlet sides: {sorted(unknown)}")

    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    xx, yy = np.meshgrid(xs, ys, indexing="xy")
    vertices = np.column_stack([xx.ravel(), yy.ravel()])

    def vid(ix, iy):
        return iy * (nx + 1) + ix

    cells = []
    for iy in range(ny):
        for ix in range(nx):
            cells.append([vid(ix, iy), vid(ix + 1, iy), vid(ix + 1, iy + 1), vid(ix, iy + 1)])

    dirichlet_keys = set()
    sides = set(dirichlet_sides)
    if "left" in sides:
        dirichlet_keys |= {(vid(0, iy), vid(0, iy + 1)) for iy in range(ny)}
    if "right" in sides:
        dirichlet_keys |= {(vid(nx, iy), vid(nx, iy + 1)) for iy in range(ny)}
    if "bottom" in sides:
        dirichlet_keys |= {(vid(ix, 0), vid(ix + 1, 0)) for ix in range(nx)}
    if "top" in sides:
        dirichlet_keys |= {(vid(ix, ny), vid(ix + 1, ny)) for ix in range(nx)}
    dirichlet_keys = {(min(a, b), max(a, b)) for a, b in dirichlet_keys}

    return Mesh(vertices, np.array(cells), dirichlet_keys)


def perturb_mesh(mesh, magnitude=0.15, seed=0):
    """Randomly displace interior vertices, keeping cells convex.

    Test utility producing genuinely bilinear (non-parallelogram) cells.
    ``magnitude`` is relative to the shortest incident edge.
    """
    rng = np.random.default_rng(seed)
    on_boundary = np.zeros(len(mesh.vertices), dtype=bool)
    for e in mesh.boundary_edges:
        on_boundary[list(e.endpoints)] = True
    hmin = min(e.length for e in mesh.edges)
    verts = mesh.vertices.copy()
    free = ~on_boundary
    verts[free] += rng.uniform(-1.0, 1.0, size=(int(free.sum()), 2)) * (magnitude * hmin / 2.0)
    dirichlet_keys = {(min(e.endpoints), max(e.endpoints)) for e in mesh.boundary_edges if e.dirichlet}
    return Mesh(verts, mesh.cells, dirichlet_keys)


def edge_trace_points(mesh, edge, side, quad_order):
    """Quadrature trace points of an edge seen from one adjacent cell.

    Returns (ref_points, physical_points, weights) where ``ref_points`` are
    reference-square coordinates inside the requested cell, points from the
    two sides of an interior edge coincide pairwise, and the weights sum to
    the edge length.
    """
    from .refelem import gauss_points_01

    if side not in ("minus", "plus"):
        raise ValueError("side must be 'minus' or 'plus'")
    if side == "plus" and edge.cell_plus is None:
        raise ValueError("boundary edge has no plus side")
    s, w = gauss_points_01(quad_order)
    a = mesh.vertices[edge.endpoints[0]]
    b = mesh.vertices[edge.endpoints[1]]
    phys = np.outer(1.0 - s, a) + np.outer(s, b)
    seg = edge.ref_seg_minus if side == "minus" else edge.ref_seg_plus
    ref = np.outer(1.0 - s, seg[0]) + np.outer(s, seg[1])
    return ref, phys, w * edge.length
