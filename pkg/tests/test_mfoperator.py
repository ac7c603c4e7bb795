import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stokesmg.fespace import BlockVector, interpolate
from stokesmg.mfoperator import DimensionError, SingularDiagonalError, StokesOperator
from stokesmg.verify import assemble

from conftest import channel_level, cube_level, square_level


def rel_max(a, b):
    return np.abs(a - b).max() / np.abs(b).max()


ORACLE_CASES = [
    ("square Q2", lambda: square_level(1), 1.0, 0.0),
    ("square Q3", lambda: square_level(1, k=3), 0.3, 2.0),
    ("cube Q2", lambda: cube_level(1), 1.0, 1.0),
    ("channel", lambda: channel_level(1), 1.0, 0.0),
]


@pytest.mark.parametrize("name,make,mu,gr", ORACLE_CASES, ids=[c[0] for c in ORACLE_CASES])
class TestAssembledOracle:
    def test_blocks(self, name, make, mu, gr, rng):
        dm = make()
        op, S = StokesOperator(dm, mu, gr), assemble(dm, mu, gr)
        for _ in range(10):
            x = rng.standard_normal(dm.size)
            u, p = x[: dm.n], x[dm.n:]
            assert rel_max(op.apply_K(x), S.K() @ x) <= 1e-12
            assert rel_max(op.apply_K(x, constrained=False), S.K(False) @ x) <= 1e-12
            assert rel_max(op.apply_A(u), S.A_c @ u) <= 1e-12
            assert rel_max(op.apply_B(u), S.B_c @ u) <= 1e-12
            assert rel_max(op.apply_Bt(p), S.B_c.T @ p) <= 1e-12
            assert rel_max(op.apply_Mp(p), S.M_p @ p) <= 1e-12
            assert rel_max(op.apply_Mv(u), S.M_v @ u) <= 1e-12

    def test_diagonals(self, name, make, mu, gr):
        dm = make()
        op, S = StokesOperator(dm, mu, gr), assemble(dm, mu, gr)
        np.testing.assert_allclose(op.compute_diag_A(), S.A.diagonal(), rtol=1e-13)
        np.testing.assert_allclose(op.compute_diag_Mp(), S.M_p.diagonal(), rtol=1e-13)
        assert np.all(op.compute_diag_A() > 0)
        assert np.all(op.compute_diag_Mp() > 0)


class TestActions:
    def test_zero(self, square2):
        dm, op, _ = square2
        np.testing.assert_array_equal(op.apply_K(np.zeros(dm.size)), 0.0)

    def test_block_vector_input(self, square2, rng):
        dm, op, _ = square2
        x = rng.standard_normal(dm.size)
        y = op.apply_K(BlockVector.from_array(x, dm))
        np.testing.assert_array_equal(y.to_array(), op.apply_K(x))

    def test_constant_velocity_is_divergence_free(self):
        dm = square_level(2)
        op = StokesOperator(dm)
        x = interpolate(dm, velocity=lambda p: np.tile([0.3, -1.2], (len(p), 1)))
        np.testing.assert_allclose(op.apply_B(x[: dm.n], constrained=False), 0.0, atol=1e-14)

    def test_linear_velocity_is_discretely_harmonic(self):
        dm = square_level(2)
        op = StokesOperator(dm)
        x = interpolate(dm, velocity=lambda p: np.column_stack([2 * p[:, 0] - p[:, 1], p[:, 0] + 3 * p[:, 1]]))
        y = op.apply_A(x[: dm.n], constrained=False)
        fixed = dm.constraints.fixed[: dm.n]
        np.testing.assert_allclose(y[~fixed], 0.0, atol=1e-13)
        assert np.abs(y[fixed]).max() > 0.1

    def test_pressure_mass_integrates_one(self):
        dm = square_level(2)
        op = StokesOperator(dm)
        np.testing.assert_allclose(op.apply_Mp(np.ones(dm.m)).sum(), 1.0, rtol=1e-14)

    def test_adjoint(self, square8, rng):
        dm, op, _ = square8
        u, p = rng.standard_normal(dm.n), rng.standard_normal(dm.m)
        lhs, rhs = op.apply_B(u) @ p, u @ op.apply_Bt(p)
        assert abs(lhs - rhs) <= 1e-12 * abs(lhs)

    def test_symmetry(self, square8, rng):
        dm, op, _ = square8
        x, y = rng.standard_normal(dm.size), rng.standard_normal(dm.size)
        a, b = op.apply_K(x) @ y, x @ op.apply_K(y)
        assert abs(a - b) <= 1e-12 * abs(a)

    def test_constant_pressure_in_kernel_of_Bt(self, square8):
        dm, op, _ = square8
        np.testing.assert_allclose(op.apply_Bt(np.ones(dm.m)), 0.0, atol=1e-13)

    def test_determinism(self, square8, rng):
        dm, op, _ = square8
        x = rng.standard_normal(dm.size)
        np.testing.assert_array_equal(op.apply_K(x), op.apply_K(x))

    def test_reaction_term_enters_A(self):
        dm = square_level(1)
        u = np.ones(dm.n)
        a0 = StokesOperator(dm, 1.0, 0.0).apply_A(u, constrained=False)
        a1 = StokesOperator(dm, 1.0, 5.0).apply_A(u, constrained=False)
        np.testing.assert_allclose((a1 - a0).sum(), 5.0 * 2, rtol=1e-13)

    def test_wrong_level(self, square2):
        dm, op, _ = square2
        with pytest.raises(DimensionError):
            op.apply_K(np.zeros(dm.size + 1))
        with pytest.raises(DimensionError):
            op.apply_Bt(np.zeros(dm.n))

    def test_load_vector(self):
        dm = square_level(2)
        op = StokesOperator(dm)
        f = op.load_vector(lambda p: np.column_stack([np.ones(len(p)), p[:, 0]]))
        np.testing.assert_allclose(f[: dm.n_scalar].sum(), 1.0, rtol=1e-13)
        np.testing.assert_allclose(f[dm.n_scalar:].sum(), 0.5, rtol=1e-13)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.01, 10.0), st.floats(0.0, 100.0))
def test_A_positive_semidefinite(seed, mu, gr):
    dm = square_level(2)
    op = StokesOperator(dm, mu, gr)
    v = np.random.default_rng(seed).standard_normal(dm.n)
    free = ~dm.constraints.fixed[: dm.n]
    assert v @ op.apply_A(v, constrained=False) >= -1e-12
    v[~free] = 0.0
    assert v @ op.apply_A(v) > 0


class TestDiagonalScaling:
    @pytest.mark.parametrize("dim", [2, 3])
    def test_interior_diagonal_scales_like_h_power(self, dim):
        """Vertex-node diagonal entries scale like ``h^(d-2)``."""
        make = square_level if dim == 2 else cube_level
        vals = []
        for n_ref in (1, 2):
            dm = make(n_ref)
            d = StokesOperator(dm).compute_diag_A()[: dm.n_scalar]
            centre = np.flatnonzero(np.all(np.isclose(dm.velocity_points, 0.5), axis=1))
            vals.append(d[centre[0]])
        np.testing.assert_allclose(vals[1] / vals[0], 2.0 ** (2 - dim), rtol=1e-12)


class TestSchurDiagonals:
    def test_single_cell_matches_dense_formula(self):
        dm = square_level(0)
        op, S = StokesOperator(dm), assemble(dm)
        free = ~dm.constraints.fixed[: dm.n]
        B = S.B.toarray()[:, free]
        dense = np.diag(B @ np.diag(1.0 / S.A.diagonal()[free]) @ B.T)
        np.testing.assert_allclose(op.compute_schur_diag_local(), dense, rtol=1e-13)

    def test_differs_from_global_but_bounded(self):
        from stokesmg.verify import diag_Sd

        ratios = []
        for n_ref in (1, 2, 3):
            dm = square_level(n_ref)
            loc = StokesOperator(dm).compute_schur_diag_local()
            glob = diag_Sd(assemble(dm))
            r = loc / glob
            ratios.append((r.min(), r.max()))
            assert np.all(loc > 0)
        assert not np.allclose(ratios[0], 1.0)
        lo = min(r[0] for r in ratios)
        hi = max(r[1] for r in ratios)
        assert 0.1 < lo and hi < 10.0
        # the interval settles once interior cells dominate
        np.testing.assert_allclose(ratios[1], ratios[2], rtol=0.05)

    def test_singular_element_diagonal(self):
        dm = square_level(0)
        op = StokesOperator(dm, mu=0.0, gamma_rho=0.0)
        with pytest.raises(SingularDiagonalError):
            op.compute_schur_diag_local()
