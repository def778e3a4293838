"""Tests for Galerkin assembly on mapped patches."""

import math

import numpy as np
import pytest
import scipy.linalg as la
import scipy.sparse as sp

from cavityuq.assembly import (
    DiscreteSpace,
    MatrixPencil,
    assemble,
    assemble_full,
    boundary_dofs,
    load_pencil_coo,
    save_pencil_coo,
)
from cavityuq.errors import AssemblyError, DomainError
from cavityuq.geometry import GeometryMap, build_disk_patch, unit_square_patch
from cavityuq.oracle import bessel_derivative_zero, bessel_zero
from cavityuq.splines import BSplineBasis, ControlNet, uniform_open_knots


def dirichlet_eigs(geom, degree, n_elements, count):
    pen = assemble(geom, DiscreteSpace(degree, n_elements), bc="dirichlet")
    w = la.eigh(pen.stiffness.toarray(), pen.mass.toarray(), eigvals_only=True)
    return w[:count]


class TestDiscreteSpace:
    def test_shapes_and_counts(self):
        s = DiscreteSpace(2, (4, 6))
        assert s.shape == (6, 8)
        assert s.n_dofs == 48
        assert s.flat_index(2, 3) == 2 * 8 + 3

    def test_validation(self):
        with pytest.raises(DomainError):
            DiscreteSpace(0, 4)
        with pytest.raises(DomainError):
            DiscreteSpace(2, 0)


class TestBoundaryDofs:
    def test_full_ring_of_4x4(self):
        s = DiscreteSpace(2, 2)
        assert s.shape == (4, 4)
        ring = boundary_dofs(s)
        assert ring.size == 12
        inner = np.setdiff1d(np.arange(16), ring)
        np.testing.assert_array_equal(inner, [5, 6, 9, 10])

    def test_single_sides(self):
        s = DiscreteSpace(2, 2)
        assert boundary_dofs(s, "left").size == 4
        assert boundary_dofs(s, ("left", "right")).size == 8
        with pytest.raises(DomainError):
            boundary_dofs(s, "backside")

    def test_eliminated_dimension_matches_assembly(self):
        s = DiscreteSpace(2, 5)
        pen = assemble(unit_square_patch(), s, bc="dirichlet")
        assert pen.n == s.n_dofs - boundary_dofs(s).size
        assert pen.kept.size == pen.n
        assert assemble(unit_square_patch(), s, bc="neumann").n == s.n_dofs


class TestSquareAssembly:
    def test_laplace_eigenvalues(self):
        w = dirichlet_eigs(unit_square_patch(), 2, 16, 4)
        exact = math.pi**2 * np.array([2.0, 5.0, 5.0, 8.0])
        np.testing.assert_allclose(w, exact, rtol=1e-4)

    def test_mass_sums_to_area_exactly(self):
        pen = assemble(unit_square_patch(), DiscreteSpace(3, 7), bc="neumann")
        assert abs(pen.mass.sum() - 1.0) <= 1e-14

    def test_neumann_kernel_contains_constants(self):
        pen = assemble(unit_square_patch(), DiscreteSpace(2, 8), bc="neumann")
        resid = np.abs(pen.stiffness @ np.ones(pen.n)).max()
        assert resid <= 1e-12 * np.abs(pen.stiffness).max()

    def test_symmetry(self):
        K, M = assemble_full(unit_square_patch(), DiscreteSpace(3, 6))
        for A in (K, M):
            skew = abs(A - A.T)
            assert skew.nnz == 0 or skew.max() <= 1e-12 * abs(A).max()


class TestDiskAssembly:
    def test_mass_sums_to_disk_area(self):
        g = build_disk_patch(0.05)
        area = math.pi * 0.05**2
        for degree, nel in [(2, 16), (3, 16)]:
            pen = assemble(g, DiscreteSpace(degree, nel), bc="neumann")
            assert abs(pen.mass.sum() / area - 1.0) <= 1e-10

    def test_first_eigenvalue_converges_monotonically(self):
        g = build_disk_patch(0.05)
        exact = (bessel_zero(0, 1) / 0.05) ** 2
        errs = [abs(dirichlet_eigs(g, 2, nel, 1)[0] / exact - 1.0) for nel in (4, 8, 16)]
        assert errs[0] > errs[1] > errs[2]
        assert errs[2] < 1e-5

    def test_radius_scaling_divides_eigenvalues(self):
        w1 = dirichlet_eigs(build_disk_patch(0.05), 2, 8, 5)
        w2 = dirichlet_eigs(build_disk_patch(0.15), 2, 8, 5)
        np.testing.assert_allclose(w2, w1 / 9.0, rtol=1e-10)

    def test_neumann_spectrum_hits_derivative_zero(self):
        # smallest nonzero Neumann eigenvalue is (x'_11 / r)^2
        g = build_disk_patch(0.05)
        pen = assemble(g, DiscreteSpace(2, 16), bc="neumann")
        w = la.eigh(pen.stiffness.toarray(), pen.mass.toarray(), eigvals_only=True)
        assert abs(w[0]) <= 1e-7 * w[3]
        exact = (bessel_derivative_zero(1, 1) / 0.05) ** 2
        np.testing.assert_allclose(w[1], exact, rtol=1e-4)
        np.testing.assert_allclose(w[2], exact, rtol=1e-4)


class TestErrors:
    def test_folded_geometry_raises(self):
        # twisted bilinear net flips the Jacobian sign inside the cell
        kv = uniform_open_knots(1, 1)
        basis = BSplineBasis(kv, 1)
        pts = np.array([[[0.0, 0.0], [0.0, 1.0]], [[1.0, 1.0], [1.0, 0.0]]])
        g = GeometryMap((basis, basis), ControlNet(pts), validate=False)
        with pytest.raises(AssemblyError):
            assemble_full(g, DiscreteSpace(2, 4))

    def test_unknown_bc_rejected(self):
        with pytest.raises(DomainError):
            assemble(unit_square_patch(), DiscreteSpace(2, 4), bc="robin")


class TestMatrixPencil:
    def test_validation_rejects_asymmetry(self):
        K = sp.csr_matrix(np.array([[1.0, 2.0], [0.5, 1.0]]))
        M = sp.identity(2, format="csr")
        with pytest.raises(DomainError):
            MatrixPencil(K, M)

    def test_validation_rejects_bad_mass_diagonal(self):
        K = sp.identity(2, format="csr")
        M = sp.csr_matrix(np.diag([1.0, -1.0]))
        with pytest.raises(DomainError):
            MatrixPencil(K, M)

    def test_coo_round_trip(self, tmp_path):
        pen = assemble(unit_square_patch(), DiscreteSpace(2, 3), bc="dirichlet")
        path = tmp_path / "pencil.txt"
        save_pencil_coo(pen, path)
        back = load_pencil_coo(path)
        assert (back.stiffness - pen.stiffness).nnz == 0
        assert (back.mass - pen.mass).nnz == 0
