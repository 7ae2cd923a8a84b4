import numpy as np
import pytest

from lfsim.model import (ModelParams, StateKind, disordered_state,
                         make_disordered_system, make_ordered_system,
                         ordered_state, untransform)


def params(**kw):
    base = dict(lambda0=1.0, lambda1=0.5, alpha=1.0, beta=1.0,
                gamma0=-1.0, gamma2=1.0, dim=2)
    base.update(kw)
    return ModelParams(**base)


class TestModelParams:
    def test_rejects_nonpositive_gamma2(self):
        with pytest.raises(ValueError, match="gamma2"):
            params(gamma2=0.0)
        with pytest.raises(ValueError, match="gamma2"):
            params(gamma2=-1.0)

    def test_rejects_nonpositive_beta(self):
        with pytest.raises(ValueError, match="beta"):
            params(beta=-1.0)

    def test_rejects_bad_dim(self):
        for dim in (1, 4, 0):
            with pytest.raises(ValueError, match="dim"):
                params(dim=dim)

    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            params(alpha=float("nan"))

    def test_swimming_speed(self):
        p = params(alpha=-4.0, beta=1.0)
        assert p.swimming_speed == 2.0
        with pytest.raises(ValueError):
            params(alpha=1.0).swimming_speed


class TestSteadyStates:
    def test_disordered_is_rest(self):
        s = disordered_state(params())
        assert s.kind is StateKind.DISORDERED
        assert np.all(s.V == 0.0)

    def test_ordered_speed(self):
        s = ordered_state(params(alpha=-1.0))
        assert s.kind is StateKind.ORDERED
        assert np.allclose(s.V, [1.0, 0.0])

    def test_ordered_requires_negative_alpha(self):
        with pytest.raises(ValueError, match="alpha"):
            ordered_state(params(alpha=0.0))

    def test_ordered_requires_unit_direction(self):
        with pytest.raises(ValueError, match="unit"):
            ordered_state(params(alpha=-1.0), direction=[2.0, 0.0])

    @pytest.mark.parametrize("alpha,beta", [(-1.0, 1.0), (-4.0, 1.0),
                                            (-0.3, 2.5), (-2.0, 0.7)])
    def test_speed_identity(self, alpha, beta):
        rng = np.random.default_rng(3)
        for _ in range(10):
            d = rng.standard_normal(2)
            d /= np.linalg.norm(d)
            sys = make_ordered_system(params(alpha=alpha, beta=beta), d)
            assert abs(np.dot(sys.V, sys.V) * beta + alpha) <= 1e-12 * abs(alpha)


class TestDisorderedSystem:
    @pytest.mark.parametrize("alpha,dim", [(1.0, 2), (0.0, 3), (-2.0, 2)])
    def test_coefficients(self, alpha, dim):
        sys = make_disordered_system(params(alpha=alpha, dim=dim))
        assert np.array_equal(sys.M, alpha * np.eye(dim))
        assert np.all(sys.V == 0.0)
        assert not sys.has_quadratic
        assert sys.scalar_m == alpha

    def test_quadratic_identically_zero(self):
        sys = make_disordered_system(params(alpha=0.7))
        rng = np.random.default_rng(0)
        for _ in range(5):
            u = rng.standard_normal((2, 4, 4))
            assert np.all(sys.evaluate_quadratic(u) == 0.0)


class TestOrderedSystem:
    def test_m_matrix_e1(self):
        sys = make_ordered_system(params(alpha=-1.0), [1.0, 0.0])
        assert np.allclose(sys.M, [[2.0, 0.0], [0.0, 0.0]])

    def test_m_matrix_e2_speed2(self):
        sys = make_ordered_system(params(alpha=-4.0), [0.0, 1.0])
        assert np.allclose(sys.V, [0.0, 2.0])
        assert np.allclose(sys.M, [[0.0, 0.0], [0.0, 8.0]])

    def test_quadratic_closed_form_example(self):
        # V=(1,0), beta=1, u=(1,1): N(u) = -|u|^2 V - 2 (u.V) u = (-4, -2)
        sys = make_ordered_system(params(alpha=-1.0), [1.0, 0.0])
        out = sys.evaluate_quadratic(np.array([1.0, 1.0]))
        assert np.allclose(out, [-4.0, -2.0], atol=1e-14)

    @pytest.mark.parametrize("dim", [2, 3])
    def test_quadratic_matches_closed_form(self, dim):
        rng = np.random.default_rng(11)
        for _ in range(100):
            beta = float(rng.uniform(0.2, 3.0))
            alpha = float(-rng.uniform(0.1, 4.0))
            d = rng.standard_normal(dim)
            d /= np.linalg.norm(d)
            sys = make_ordered_system(params(alpha=alpha, beta=beta, dim=dim), d)
            u = rng.standard_normal(dim)
            expect = (-beta * np.dot(u, u) * sys.V
                      - 2.0 * beta * np.dot(u, sys.V) * u)
            got = sys.evaluate_quadratic(u)
            assert np.max(np.abs(got - expect)) <= 1e-12 * max(
                1.0, float(np.max(np.abs(expect))))

    def test_quad_coeffs_symmetrized(self):
        sys = make_ordered_system(params(alpha=-2.0, dim=3), [0.0, 0.0, 1.0])
        assert np.array_equal(sys.quad_coeffs,
                              np.swapaxes(sys.quad_coeffs, 0, 1))

    @pytest.mark.parametrize("dim", [2, 3])
    def test_m_positive_semidefinite(self, dim):
        rng = np.random.default_rng(5)
        for _ in range(20):
            d = rng.standard_normal(dim)
            d /= np.linalg.norm(d)
            sys = make_ordered_system(params(alpha=-1.5, dim=dim), d)
            eigs = np.linalg.eigvalsh(sys.M)
            assert eigs.min() >= -1e-12

    def test_rejects_positive_alpha(self):
        with pytest.raises(ValueError, match="alpha"):
            make_ordered_system(params(alpha=0.5))


class TestUntransform:
    def test_disordered_identity(self):
        sys = make_disordered_system(params())
        u = np.random.default_rng(1).standard_normal((2, 8, 8))
        assert np.array_equal(untransform(u, sys), u)

    def test_ordered_adds_drift(self):
        sys = make_ordered_system(params(alpha=-1.0), [1.0, 0.0])
        u = np.zeros((2, 4, 4))
        v = untransform(u, sys)
        assert np.allclose(v[0], 1.0) and np.all(v[1] == 0.0)
        u[0] += 0.1
        v = untransform(u, sys)
        assert np.allclose(v[0], 1.1)

    def test_dimension_mismatch(self):
        sys = make_disordered_system(params(dim=3))
        with pytest.raises(ValueError, match="components"):
            untransform(np.zeros((2, 4, 4)), sys)
