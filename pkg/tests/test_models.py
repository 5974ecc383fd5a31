import json

import numpy as np
import pytest
import scipy.io
import scipy.sparse as sp

from gausskry.errors import InvalidInput
from gausskry.models import (PoissonModel, cross_matrix, mass_spring_chain, reference_nonlinear,
                             rigid_body)


def chain_oracle(N, m, k):
    """Literal element-by-element transcription of the block pattern."""
    n = 2 * N
    J = np.zeros((n, n))
    Q = np.zeros((n, n))
    for i in range(N):
        J[2 * i, 2 * i + 1] = 1.0
        J[2 * i + 1, 2 * i] = -1.0
        Q[2 * i + 1, 2 * i + 1] = 1.0 / m[i]
        Q[2 * i, 2 * i] = k[0] if i == 0 else k[i - 1] + k[i]
        if i + 1 < N:
            Q[2 * i, 2 * i + 2] = -k[i]
            Q[2 * i + 2, 2 * i] = -k[i]
    return J, Q


class TestMassSpringChain:
    @pytest.mark.parametrize("N", [1, 2, 3, 4])
    def test_transcription_oracle_defaults(self, N):
        model = mass_spring_chain(N)
        J, Q = chain_oracle(N, [0.5] * N, [124.0] * N)
        np.testing.assert_array_equal(model.J_at().toarray(), J)
        np.testing.assert_array_equal(model.Q.toarray(), Q)
        assert model.n == 2 * N
        np.testing.assert_array_equal(model.y0, np.eye(2 * N)[0])

    @pytest.mark.parametrize("N", [2, 4])
    def test_transcription_oracle_varied(self, N, rng):
        m = rng.uniform(0.2, 2.0, N)
        k = rng.uniform(10.0, 200.0, N)
        model = mass_spring_chain(N, m, k)
        J, Q = chain_oracle(N, m, k)
        np.testing.assert_allclose(model.Q.toarray(), Q, rtol=1e-15)
        np.testing.assert_array_equal(model.J_at().toarray(), J)

    def test_single_oscillator(self):
        model = mass_spring_chain(1)
        np.testing.assert_array_equal(model.Q.toarray(), np.diag([124.0, 2.0]))
        np.testing.assert_array_equal(model.J_at().toarray(), [[0.0, 1.0], [-1.0, 0.0]])
        A = (model.J_at() @ model.Q).toarray()
        Qd = model.Q.toarray()
        np.testing.assert_allclose(Qd @ A + A.T @ Qd, 0.0, atol=1e-13)

    def test_defaults_n3(self):
        Q = mass_spring_chain(3).Q.toarray()
        assert Q[0, 0] == 124.0 and Q[0, 2] == -124.0 and Q[1, 1] == 2.0

    @pytest.mark.parametrize("N", [1, 5, 20])
    def test_lie_algebra_probe(self, N, rng):
        model = mass_spring_chain(N)
        Qd = model.Q.toarray()
        A = (model.J_at() @ model.Q).toarray()
        np.testing.assert_allclose(Qd @ A + A.T @ Qd, 0.0, atol=1e-12 * np.max(np.abs(Qd @ A)))

    @pytest.mark.parametrize("kwargs", [{"N": 0}, {"N": 2.5}, {"N": 3, "m": 0.0},
                                        {"N": 3, "k": -1.0}, {"N": 3, "m": [1.0, 2.0]}])
    def test_invalid_parameters(self, kwargs):
        with pytest.raises(InvalidInput):
            mass_spring_chain(**kwargs)

    def test_sparse_storage(self):
        model = mass_spring_chain(10)
        assert sp.issparse(model.Q) and sp.issparse(model.J_at())
        assert sp.issparse(model.step_matrix(0.1))

    def test_json_and_matrix_market(self, tmp_path):
        model = mass_spring_chain(3)
        d = json.loads(model.to_json())
        assert d == {"label": "mass-spring-N3", "n": 6,
                     "parameters": {"N": 3, "m": 0.5, "k": 124.0}}
        paths = model.export_matrix_market(tmp_path)
        assert len(paths) == 2
        Q = scipy.io.mmread(str(paths[0]))
        np.testing.assert_array_equal(Q.toarray(), model.Q.toarray())


class TestRigidBody:
    def test_cross_matrix(self):
        np.testing.assert_array_equal(cross_matrix(np.array([0.0, 0.0, 1.0])),
                                      [[0, -1, 0], [1, 0, 0], [0, 0, 0]])

    def test_defaults(self):
        model = rigid_body()
        np.testing.assert_allclose(model.Q, np.diag([0.5, 1.0, 1.5]), rtol=1e-15)
        assert model.energy(model.y0) == pytest.approx(9.75, rel=1e-15)
        assert not model.is_linear

    def test_J_annihilates_state(self, rng):
        model = rigid_body()
        for _ in range(10):
            y = rng.standard_normal(3)
            np.testing.assert_allclose(model.J_at(y) @ y, 0.0, atol=1e-15)

    def test_rhs_is_euler_equations(self, rng):
        I1, I2, I3 = 2.0, 1.0, 2.0 / 3.0
        model = rigid_body()
        y = rng.standard_normal(3)
        expected = [(1 / I3 - 1 / I2) * y[1] * y[2],
                    (1 / I1 - 1 / I3) * y[2] * y[0],
                    (1 / I2 - 1 / I1) * y[0] * y[1]]
        np.testing.assert_allclose(model.rhs(y), expected, atol=1e-14)

    def test_step_matrix_needs_constant_J(self):
        with pytest.raises(InvalidInput):
            rigid_body().step_matrix(0.1)

    def test_invalid_inertia(self):
        with pytest.raises(InvalidInput):
            rigid_body(I1=0.0)


class TestPoissonModel:
    def test_rejects_non_skew(self):
        with pytest.raises(InvalidInput):
            PoissonModel(np.ones((2, 2)), np.eye(2), [1.0, 0.0])
        with pytest.raises(InvalidInput):
            PoissonModel(lambda y: np.diag(y), np.eye(2), [1.0, 0.0])

    def test_rejects_bad_Q(self):
        with pytest.raises(InvalidInput):
            PoissonModel(np.zeros((2, 2)), np.diag([1.0, -1.0]), [1.0, 0.0])
        with pytest.raises(InvalidInput):
            PoissonModel(np.zeros((2, 2)), np.eye(3), [1.0, 0.0])


@pytest.fixture(scope="module")
def ref():
    model = rigid_body()
    return model, reference_nonlinear(model, np.linspace(0.0, 1.0, 11))


class TestReferenceNonlinear:
    def test_initial_value(self, ref):
        model, r = ref
        np.testing.assert_array_equal(r.states[0], model.y0)

    def test_energy(self, ref):
        _, r = ref
        assert r.max_energy_dev <= 1e-11

    def test_self_convergence(self, ref):
        model, r = ref
        tighter = reference_nonlinear(model, r.times, abs_tol=5e-14)
        assert np.max(np.abs(tighter.states[-1] - r.states[-1])) <= 1e-11

    def test_casimir(self, ref):
        _, r = ref
        norms = np.linalg.norm(r.states, axis=1)
        np.testing.assert_allclose(norms, norms[0], rtol=1e-11)

    def test_bad_grid(self):
        with pytest.raises(InvalidInput):
            reference_nonlinear(rigid_body(), [0.5, 1.0])
