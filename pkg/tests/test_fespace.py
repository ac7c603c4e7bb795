import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stokesmg.fespace import (BlockVector, UnsupportedDegreeError, apply_dirichlet, build_dofmap,
                              evaluate, gauss_legendre, interpolate, lagrange_1d,
                              pressure_mean_project)
from stokesmg.mesh import make_unit_hypercube

from conftest import channel_level, cube_level, square_level


def taylor_hood_2d(N):
    return 2 * (2 * N + 1) ** 2 + (N + 1) ** 2


def taylor_hood_3d(N):
    return 3 * (2 * N + 1) ** 3 + (N + 1) ** 3


class TestDofCounts:
    @pytest.mark.parametrize("n_ref,n,m", [(0, 18, 4), (1, 50, 9)])
    def test_square(self, n_ref, n, m):
        dm = square_level(n_ref)
        assert (dm.n, dm.m) == (n, m)

    def test_cube(self):
        dm = cube_level(0)
        assert (dm.n, dm.m, dm.size) == (81, 8, 89)

    @pytest.mark.parametrize("n_ref", [2, 3, 4])
    def test_square_formula(self, n_ref):
        assert square_level(n_ref).size == taylor_hood_2d(2**n_ref)

    def test_known_sizes(self):
        assert taylor_hood_2d(16) == 2467
        assert taylor_hood_2d(128) == 148739
        assert taylor_hood_3d(4) == 2312
        assert taylor_hood_3d(16) == 112724
        assert cube_level(2).size == 2312

    def test_higher_degree(self):
        dm = square_level(1, k=3)
        assert dm.n_scalar == 7**2 and dm.m == 5**2

    def test_degree_one_rejected(self):
        with pytest.raises(UnsupportedDegreeError):
            build_dofmap(make_unit_hypercube(2)[0], 1)


class TestBasis:
    @given(st.integers(1, 6), st.lists(st.floats(-2, 2), min_size=1, max_size=12))
    @settings(max_examples=30, deadline=None)
    def test_gauss_exactness(self, n, coeffs):
        coeffs = np.array(coeffs[: 2 * n])  # degree <= 2n-1
        x, w = gauss_legendre(n)
        exact = sum(c / (i + 1) for i, c in enumerate(coeffs))
        np.testing.assert_allclose(w @ np.polyval(coeffs[::-1], x), exact, atol=1e-12)

    def test_lagrange_nodal_and_partition(self):
        nodes = np.linspace(0, 1, 4)
        vals, ders = lagrange_1d(nodes, nodes)
        np.testing.assert_allclose(vals, np.eye(4), atol=1e-14)
        x = np.linspace(0, 1, 11)
        vals, ders = lagrange_1d(nodes, x)
        np.testing.assert_allclose(vals.sum(axis=1), 1.0)
        np.testing.assert_allclose(ders.sum(axis=1), 0.0, atol=1e-12)

    @given(st.lists(st.floats(-1, 1), min_size=9, max_size=9))
    @settings(max_examples=20, deadline=None)
    def test_interpolation_reproduces_q2(self, c):
        """Nodal interpolation is exact for biquadratic fields."""
        dm = square_level(1)
        c = np.reshape(c, (3, 3))
        f = lambda p: sum(c[i, j] * p[:, 0] ** i * p[:, 1] ** j for i in range(3) for j in range(3))
        x = interpolate(dm, velocity=lambda p: np.column_stack([f(p), -f(p)]),
                        pressure=lambda p: p[:, 0] * p[:, 1])
        ref = np.array([[0.13, 0.71], [0.5, 0.25], [0.9, 0.05]])
        pts, u, p = evaluate(dm, x, ref)
        flat = pts.reshape(-1, 2)
        np.testing.assert_allclose(u[..., 0].ravel(), f(flat), atol=1e-12)
        np.testing.assert_allclose(u[..., 1].ravel(), -f(flat), atol=1e-12)
        np.testing.assert_allclose(p.ravel(), flat[:, 0] * flat[:, 1], atol=1e-12)


class TestConstraints:
    def test_pressure_weights_integrate_domain(self):
        for dm in (square_level(0), square_level(2), cube_level(1)):
            np.testing.assert_allclose(dm.pressure_weights.sum(), 1.0, rtol=1e-13)
        exact = 2.2 * 0.41 - np.pi * 0.05**2
        assert abs(channel_level(2).pressure_weights.sum() - exact) < 1e-3

    def test_mean_constraint_default(self):
        assert square_level(1).pressure_mean_constrained
        assert not channel_level(0).pressure_mean_constrained

    def test_dirichlet_nodes(self):
        dm = square_level(2)
        # all boundary nodes of the 9x9 Q2 lattice
        assert dm.dirichlet_nodes.size == 4 * 8
        ch = channel_level(0)
        outflow = ch.velocity_points[:, 0] > 2.2 - 1e-12
        interior_outflow = outflow & (ch.velocity_points[:, 1] > 1e-12) & (ch.velocity_points[:, 1] < 0.41 - 1e-12)
        assert not np.any(np.isin(np.flatnonzero(interior_outflow), ch.dirichlet_nodes))

    def test_apply_dirichlet(self):
        dm = square_level(1)
        g = lambda p: np.column_stack([p[:, 0] + 1.0, 2 * p[:, 1]])
        x = apply_dirichlet(dm, g, np.zeros(dm.size))
        nodes = dm.dirichlet_nodes
        np.testing.assert_allclose(x[nodes], dm.velocity_points[nodes, 0] + 1.0)
        np.testing.assert_allclose(x[dm.n_scalar + nodes], 2 * dm.velocity_points[nodes, 1])
        assert np.count_nonzero(x[dm.n:]) == 0
        bv = apply_dirichlet(dm, g, BlockVector.zeros(dm))
        np.testing.assert_allclose(bv.to_array(), x)

    def test_mean_projection(self, rng):
        dm = square_level(2)
        x = rng.standard_normal(dm.size)
        y = pressure_mean_project(dm, x)
        assert abs(dm.pressure_weights @ y[dm.n:]) < 1e-14
        np.testing.assert_array_equal(y[: dm.n], x[: dm.n])

    def test_block_vector(self, rng):
        dm = square_level(1)
        x = rng.standard_normal(dm.size)
        bv = BlockVector.from_array(x, dm)
        np.testing.assert_array_equal(bv.to_array(), x)
        with pytest.raises(ValueError):
            BlockVector.from_array(x[:-1], dm)
