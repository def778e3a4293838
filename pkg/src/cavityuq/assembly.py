"""Galerkin assembly of stiffness and mass matrices on a mapped patch.

Scalar Helmholtz bilinear forms are integrated in the parametric square:
gradients are pulled back with the inverse Jacobian transpose and volume
elements carry ``|det J|``.  Quadrature is (p+1)-point Gauss-Legendre per
direction on every cell of the merged field/geometry breakpoint grid.
"""

import numpy as np
import scipy.sparse as sp

from .errors import AssemblyError, DomainError, SingularityError
from .splines import BSplineBasis, uniform_open_knots

BC_KINDS = ("dirichlet", "neumann")


class DiscreteSpace:
    """Tensor-product B-spline field space on the parametric unit square.

    Fields live upstream of the geometry map: a coefficient vector is paired
    with the plain spline basis here and composed with the patch inverse, so
    one space serves every deformed configuration of the same patch.
    """

    def __init__(self, degree, n_elements):
        if int(degree) != degree or degree < 1:
            raise DomainError(f"polynomial degree must be a positive integer, got {degree}")
        if np.isscalar(n_elements):
            n_elements = (n_elements, n_elements)
        if len(n_elements) != 2 or any(int(n) != n or n < 1 for n in n_elements):
            raise DomainError(f"bad element counts {n_elements!r}")
        self.degree = int(degree)
        self.n_elements = tuple(int(n) for n in n_elements)
        self.bases = tuple(
            BSplineBasis(uniform_open_knots(self.degree, n), self.degree)
            for n in self.n_elements
        )

    @property
    def shape(self):
        return tuple(b.n_basis for b in self.bases)

    @property
    def n_dofs(self):
        nu, nv = self.shape
        return nu * nv

    def flat_index(self, i, j):
        return i * self.shape[1] + j


_SIDES = ("left", "right", "bottom", "top")


def boundary_dofs(space, sides="all"):
    """Flat indices of basis functions with nonzero trace on the named sides.

    left/right select u = 0/1, bottom/top select v = 0/1.
    """
    if sides == "all":
        sides = _SIDES
    elif isinstance(sides, str):
        sides = (sides,)
    nu, nv = space.shape
    picked = set()
    for side in sides:
        if side == "left":
            picked.update(space.flat_index(0, j) for j in range(nv))
        elif side == "right":
            picked.update(space.flat_index(nu - 1, j) for j in range(nv))
        elif side == "bottom":
            picked.update(space.flat_index(i, 0) for i in range(nu))
        elif side == "top":
            picked.update(space.flat_index(i, nv - 1) for i in range(nu))
        else:
            raise DomainError(f"unknown side {side!r}; expected one of {_SIDES}")
    return np.array(sorted(picked), dtype=int)


class MatrixPencil:
    """Symmetric (K, M) pair with DOF bookkeeping.

    ``kept`` records which flat tensor-space indices survived boundary
    elimination, so eigenvectors can be scattered back onto the patch.
    """

    def __init__(self, stiffness, mass, kept=None, n_total=None, bc=None, validate=True):
        K = sp.csr_matrix(stiffness)
        M = sp.csr_matrix(mass)
        if K.shape != M.shape or K.shape[0] != K.shape[1]:
            raise DomainError(f"pencil shapes disagree: {K.shape} vs {M.shape}")
        if K.shape[0] == 0:
            raise DomainError("empty pencil; the space has no retained DOFs")
        if validate:
            for name, A in (("K", K), ("M", M)):
                skew = abs(A - A.T)
                top = abs(A).max()
                if skew.nnz and skew.max() > 1e-12 * top:
                    raise DomainError(f"{name} is not symmetric: |A-A^T| = {skew.max():.3e}")
            if M.diagonal().min() <= 0.0:
                raise DomainError("mass matrix has a nonpositive diagonal entry")
        self.stiffness = K
        self.mass = M
        self.kept = None if kept is None else np.asarray(kept, dtype=int)
        self.n_total = n_total
        self.bc = bc

    @property
    def n(self):
        return self.stiffness.shape[0]


class _DirectionRule:
    """Per-direction quadrature cells with cached basis values."""

    def __init__(self, basis, geo_breaks):
        merged = np.unique(np.concatenate([basis.kv.breakpoints, geo_breaks]))
        keep = [merged[0]]
        for x in merged[1:]:
            if x - keep[-1] > 1e-12:
                keep.append(x)
        xg, wg = np.polynomial.legendre.leggauss(basis.degree + 1)
        self.cells = []
        for a, b in zip(keep[:-1], keep[1:]):
            mid, half = 0.5 * (a + b), 0.5 * (b - a)
            nodes = mid + half * xg
            span = basis.find_span(mid)
            vals = np.empty((nodes.size, basis.degree + 1))
            ders = np.empty_like(vals)
            for k, u in enumerate(nodes):
                _, table = basis.eval_basis_derivatives(u, 1)
                vals[k] = table[0]
                ders[k] = table[1]
            self.cells.append((span, nodes, half * wg, vals, ders))


def assemble_full(geom, space):
    """Assemble (K, M) on the whole tensor space, no boundary conditions."""
    du = geom.bases[0].kv.domain
    ds = space.bases[0].kv.domain
    if du != ds or geom.bases[1].kv.domain != space.bases[1].kv.domain:
        raise DomainError("field space and geometry live on different parameter domains")
    rule_u = _DirectionRule(space.bases[0], geom.bases[0].kv.breakpoints)
    rule_v = _DirectionRule(space.bases[1], geom.bases[1].kv.breakpoints)
    p = space.degree
    nloc1 = p + 1
    nloc = nloc1 * nloc1
    nv_tot = space.shape[1]

    rows, cols, k_vals, m_vals = [], [], [], []
    for span_u, nodes_u, w_u, vals_u, ders_u in rule_u.cells:
        first_u = span_u - p
        for span_v, nodes_v, w_v, vals_v, ders_v in rule_v.cells:
            first_v = span_v - p
            k_loc = np.zeros((nloc, nloc))
            m_loc = np.zeros((nloc, nloc))
            grad = np.empty((2, nloc))
            for iu in range(nodes_u.size):
                for iv in range(nodes_v.size):
                    uv = (nodes_u[iu], nodes_v[iv])
                    try:
                        _, J = geom.map_and_jacobian(uv)
                    except SingularityError as exc:
                        raise AssemblyError(str(exc)) from exc
                    det = J[0, 0] * J[1, 1] - J[0, 1] * J[1, 0]
                    if not np.isfinite(det) or det <= 0.0:
                        raise AssemblyError(
                            f"Jacobian determinant {det:.3e} at quadrature point "
                            f"({uv[0]:.6f}, {uv[1]:.6f})"
                        )
                    shape = np.multiply.outer(vals_u[iu], vals_v[iv]).ravel()
                    grad[0] = np.multiply.outer(ders_u[iu], vals_v[iv]).ravel()
                    grad[1] = np.multiply.outer(vals_u[iu], ders_v[iv]).ravel()
                    phys = np.linalg.solve(J.T, grad)
                    w = w_u[iu] * w_v[iv] * det
                    k_loc += w * (phys.T @ phys)
                    m_loc += w * np.multiply.outer(shape, shape)
            idx = (
                np.arange(first_u, first_u + nloc1)[:, None] * nv_tot
                + np.arange(first_v, first_v + nloc1)
            ).ravel()
            rows.append(np.repeat(idx, nloc))
            cols.append(np.tile(idx, nloc))
            k_vals.append(k_loc.ravel())
            m_vals.append(m_loc.ravel())

    n = space.n_dofs
    shape = (n, n)
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    K = sp.coo_matrix((np.concatenate(k_vals), (rows, cols)), shape=shape).tocsr()
    M = sp.coo_matrix((np.concatenate(m_vals), (rows, cols)), shape=shape).tocsr()
    return K, M


def assemble(geom, space, bc="dirichlet"):
    """Assembled pencil with the requested boundary treatment.

    Dirichlet rows and columns are eliminated outright; Neumann is the
    natural condition and keeps every DOF.
    """
    if bc not in BC_KINDS:
        raise DomainError(f"unknown boundary condition {bc!r}; expected one of {BC_KINDS}")
    K, M = assemble_full(geom, space)
    if bc == "dirichlet":
        drop = boundary_dofs(space)
        kept = np.setdiff1d(np.arange(space.n_dofs), drop)
    else:
        kept = np.arange(space.n_dofs)
    K = K[kept][:, kept].tocsr()
    M = M[kept][:, kept].tocsr()
    return MatrixPencil(K, M, kept=kept, n_total=space.n_dofs, bc=bc)


def save_pencil_coo(pencil, path):
    """Write both matrices as labeled coordinate-list text for debugging.

    Format: comment header, then one entry per line as
    ``<K|M> <row> <col> <value>`` with full-precision values.
    """
    with open(path, "w") as fh:
        fh.write("# matrix pencil, coordinate list\n")
        fh.write(f"# size {pencil.n}\n")
        for label, A in (("K", pencil.stiffness), ("M", pencil.mass)):
            coo = A.tocoo()
            for i, j, v in zip(coo.row, coo.col, coo.data):
                fh.write(f"{label} {i} {j} {v:.17g}\n")


def load_pencil_coo(path):
    """Read the text format of :func:`save_pencil_coo` back into a pencil."""
    size = None
    entries = {"K": ([], [], []), "M": ([], [], [])}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                parts = line[1:].split()
                if parts[:1] == ["size"]:
                    size = int(parts[1])
                continue
            label, i, j, v = line.split()
            rows, cols, vals = entries[label]
            rows.append(int(i))
            cols.append(int(j))
            vals.append(float(v))
    if size is None:
        raise DomainError(f"{path}: missing size header")
    mats = [
        sp.coo_matrix((vals, (rows, cols)), shape=(size, size)).tocsr()
        for rows, cols, vals in (entries["K"], entries["M"])
    ]
    return MatrixPencil(mats[0], mats[1])
