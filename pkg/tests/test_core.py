import numpy as np
import pytest
import scipy.linalg
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from gausskry.core import (BandedMatrix, QSpace, banded_solve, dense_solve, energy, q_inner,
                           q_norm, small_skew_expm)
from gausskry.errors import InvalidInput, SingularMatrix
from gausskry.krylov import q_arnoldi_extend, q_arnoldi_start
from gausskry.models import mass_spring_chain

from conftest import random_skew, random_spd


class TestQSpace:
    def test_symmetric_storage_and_cholesky(self, rng):
        Q = random_spd(rng, 6)
        Q[0, 1] += 1e-16  # below the symmetry tolerance
        space = QSpace(Q)
        np.testing.assert_array_equal(space.Q, space.Q.T)
        L = space.dense_chol()
        np.testing.assert_allclose(L @ L.T, space.Q, rtol=0, atol=1e-12 * np.max(np.abs(Q)))

    def test_sparse_cholesky_matches_dense(self):
        Q = mass_spring_chain(7).Q
        space = QSpace(Q)
        assert space.is_sparse
        L = space.dense_chol()
        np.testing.assert_allclose(L, np.linalg.cholesky(Q.toarray()), atol=1e-12)

    def test_rejects_asymmetric(self):
        with pytest.raises(InvalidInput):
            QSpace(np.array([[1.0, 0.5], [0.0, 1.0]]))

    def test_rejects_indefinite(self):
        with pytest.raises(InvalidInput):
            QSpace(np.diag([1.0, -1.0]))
        with pytest.raises(InvalidInput):
            QSpace(sp.diags([1.0, 0.0, 2.0]))


class TestQInner:
    def test_orthogonal_unit_vectors(self):
        assert q_inner(QSpace(np.eye(2)), np.array([1.0, 0]), np.array([0, 1.0])) == 0.0

    def test_picks_diagonal_entry(self):
        space = QSpace(np.diag([0.5, 1.0, 1.5]))
        e1 = np.array([1.0, 0, 0])
        assert q_inner(space, e1, e1) == 0.5

    def test_random_symmetry_and_dense_oracle(self, rng):
        Q = random_spd(rng, 5)
        space = QSpace(Q)
        x, y = rng.standard_normal((2, 5))
        assert q_inner(space, x, y) == pytest.approx(q_inner(space, y, x), rel=1e-14)
        assert q_inner(space, x, y) == pytest.approx(x @ Q @ y, rel=1e-13)

    def test_dimension_mismatch(self):
        space = QSpace(np.eye(3))
        with pytest.raises(InvalidInput):
            q_inner(space, np.ones(3), np.ones(2))
        with pytest.raises(InvalidInput):
            q_norm(space, np.ones(4))

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 8))
    def test_symmetry_property(self, seed, n):
        rng = np.random.default_rng(seed)
        space = QSpace(random_spd(rng, n))
        x, y = rng.standard_normal((2, n))
        np.testing.assert_allclose(q_inner(space, x, y), q_inner(space, y, x), rtol=1e-12, atol=1e-12)
        assert q_norm(space, x) > 0
        assert q_norm(space, np.zeros(n)) == 0.0


class TestQNorm:
    def test_zero(self):
        assert q_norm(QSpace(np.eye(3)), np.zeros(3)) == 0.0

    def test_euclidean(self):
        assert q_norm(QSpace(np.eye(2)), np.array([3.0, 4.0])) == pytest.approx(5.0, rel=1e-15)

    def test_chain_first_position(self):
        model = mass_spring_chain(3)
        e1 = np.zeros(6)
        e1[0] = 1.0
        dense = np.sqrt(e1 @ model.Q.toarray() @ e1)
        assert q_norm(model.space, e1) == pytest.approx(dense, rel=1e-15)
        assert q_norm(model.space, e1) == pytest.approx(np.sqrt(124.0), rel=1e-15)


class TestEnergy:
    def test_zero(self):
        assert energy(QSpace(np.eye(3)), np.zeros(3)) == 0.0

    def test_rigid_body_value(self):
        space = QSpace(np.diag([0.5, 1.0, 1.5]))
        y0 = np.array([3.0, 3.0, 2.0])
        assert energy(space, y0) == pytest.approx(0.5 * y0 @ np.diag([0.5, 1, 1.5]) @ y0, rel=1e-15)
        assert energy(space, y0) == pytest.approx(9.75, rel=1e-15)

    def test_half_squared_norm(self, rng):
        space = QSpace(random_spd(rng, 4))
        y = rng.standard_normal(4)
        assert energy(space, y) == pytest.approx(0.5 * q_norm(space, y) ** 2, rel=1e-13)


def _random_banded(rng, k, bw, dtype=float):
    M = rng.standard_normal((k, k))
    if dtype is complex:
        M = M + 1j * rng.standard_normal((k, k))
    M[np.abs(np.subtract.outer(np.arange(k), np.arange(k))) > bw] = 0.0
    return M + 4.0 * np.eye(k)


class TestBandedMatrix:
    def test_round_trip(self, rng):
        M = _random_banded(rng, 9, 2)
        B = BandedMatrix.from_dense(M, 2)
        np.testing.assert_array_equal(B.to_dense(), M)
        x = rng.standard_normal(9)
        np.testing.assert_allclose(B.matvec(x), M @ x, atol=1e-13)

    def test_out_of_band_reads_zero(self, rng):
        B = BandedMatrix.from_dense(_random_banded(rng, 6, 1), 1)
        assert B.entry(0, 4) == 0.0
        assert B.entry(5, 0) == 0.0

    def test_from_dense_rejects_lost_entries(self, rng):
        with pytest.raises(InvalidInput):
            BandedMatrix.from_dense(_random_banded(rng, 6, 2), 1)

    def test_from_sparse(self, rng):
        M = _random_banded(rng, 7, 3)
        B = BandedMatrix.from_sparse(sp.csr_matrix(M))
        assert B.bw == 3
        np.testing.assert_array_equal(B.to_dense(), M)

    def test_small_order_wider_band(self):
        # band wider than the matrix itself
        M = np.array([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_array_equal(BandedMatrix.from_dense(M, 3).to_dense(), M)


class TestBandedSolve:
    def test_identity(self, rng):
        b = rng.standard_normal(5)
        np.testing.assert_array_equal(banded_solve(BandedMatrix.from_dense(np.eye(5), 0), b), b)

    def _arnoldi_H(self, k=3):
        model = mass_spring_chain(3)
        A = model.step_matrix(0.1)
        st_ = q_arnoldi_start(model.space, model.y0)
        for _ in range(k):
            q_arnoldi_extend(st_, A)
        return st_.Hk

    def test_shifted_tridiagonal_real(self):
        H = self._arnoldi_H()
        M = H - 2.0 * np.eye(3)
        e1 = np.eye(3)[0]
        x = banded_solve(BandedMatrix.from_dense(M, 1), e1)
        np.testing.assert_allclose(x, scipy.linalg.solve(M, e1), rtol=1e-12, atol=1e-14)

    def test_shifted_tridiagonal_complex(self):
        H = self._arnoldi_H()
        M = H - (3.0 - np.sqrt(3.0) * 1j) * np.eye(3)
        e1 = np.eye(3)[0]
        x = banded_solve(BandedMatrix.from_dense(M, 1), e1)
        assert np.iscomplexobj(x)
        np.testing.assert_allclose(x, scipy.linalg.solve(M, e1), rtol=1e-12, atol=1e-14)

    def test_pivoting_needed(self):
        # zero leading entry forces a row interchange
        M = np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 1.0], [0.0, 1.0, 1.0]])
        b = np.array([1.0, 2.0, 3.0])
        np.testing.assert_allclose(banded_solve(BandedMatrix.from_dense(M, 1), b),
                                   np.linalg.solve(M, b), atol=1e-14)

    def test_singular(self):
        M = np.array([[1.0, 1.0, 0.0], [1.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
        with pytest.raises(SingularMatrix):
            banded_solve(BandedMatrix.from_dense(M, 1), np.ones(3))
        with pytest.raises(SingularMatrix):
            dense_solve(M, np.ones(3))

    def test_residual_bound(self, rng):
        M = _random_banded(rng, 40, 3)
        b = rng.standard_normal(40)
        x = banded_solve(BandedMatrix.from_dense(M, 3), b)
        bound = 1e-12 * (np.linalg.norm(M, 2) * np.linalg.norm(x) + np.linalg.norm(b))
        assert np.linalg.norm(M @ x - b) <= bound

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), k=st.integers(1, 50), bw=st.integers(0, 4),
           cplx=st.booleans())
    def test_matches_dense_lu(self, seed, k, bw, cplx):
        rng = np.random.default_rng(seed)
        M = _random_banded(rng, k, bw, complex if cplx else float)
        b = rng.standard_normal(k)
        x = banded_solve(BandedMatrix.from_dense(M, bw), b)
        ref = scipy.linalg.lu_solve(scipy.linalg.lu_factor(M), b)
        assert np.linalg.norm(x - ref) <= 1e-11 * np.linalg.norm(ref)


class TestSmallSkewExpm:
    def test_zero(self):
        np.testing.assert_array_equal(small_skew_expm(np.zeros((4, 4))), np.eye(4))

    def test_rotation(self):
        # exp([[0, t], [-t, 0]]) = [[cos t, sin t], [-sin t, cos t]]
        t = np.pi / 2
        E = small_skew_expm(np.array([[0.0, t], [-t, 0.0]]))
        np.testing.assert_allclose(E, [[0.0, 1.0], [-1.0, 0.0]], atol=1e-13)

    def test_matches_eigen_oracle(self, rng):
        H = random_skew(rng, 8)
        lam, U = np.linalg.eigh(1j * H)
        ref = np.real(U @ np.diag(np.exp(-1j * lam)) @ U.conj().T)
        np.testing.assert_allclose(small_skew_expm(H), ref, atol=1e-11)

    def test_large_norm(self, rng):
        H = random_skew(rng, 10, scale=30.0)
        np.testing.assert_allclose(small_skew_expm(H), scipy.linalg.expm(H), atol=1e-10)

    def test_rejects_non_skew(self):
        with pytest.raises(InvalidInput):
            small_skew_expm(np.array([[0.0, 1.0], [1.0, 0.0]]))

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), k=st.integers(1, 20),
           scale=st.floats(1e-3, 20.0))
    def test_orthogonal_unit_determinant(self, seed, k, scale):
        rng = np.random.default_rng(seed)
        E = small_skew_expm(random_skew(rng, k, scale))
        assert np.max(np.abs(E.T @ E - np.eye(k))) <= 1e-10
        P, _, U = scipy.linalg.lu(E)
        det = np.linalg.det(P) * np.prod(np.diag(U))
        assert det == pytest.approx(1.0, abs=1e-10)
