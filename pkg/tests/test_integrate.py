import math

import numpy as np
import pytest

from lfsim.model import ModelParams, make_disordered_system, make_ordered_system
from lfsim.spectral import (SpectralField, SpectralGrid, forward, inverse,
                            project_coeffs, zero_nyquist)
from lfsim.integrate import (BlowUpError, SolverConfig, SolverState, Stepper,
                             _phi, amp_label, nonlinear_rhs,
                             random_solenoidal_field, recover_pressure, run,
                             single_mode_field, step)
from lfsim.stability import growth_rate
from lfsim.diagnostics import fit_growth


def params(**kw):
    base = dict(lambda0=1.0, lambda1=0.0, alpha=0.1, beta=1.0,
                gamma0=-1.0, gamma2=1.0, dim=2)
    base.update(kw)
    return ModelParams(**base)


@pytest.fixture(scope="module")
def grid32():
    return SpectralGrid(2, 32, 20.0 * np.pi)


class TestPhi:
    def test_values_at_zero(self):
        z = np.array([0.0])
        assert abs(_phi(z, 1)[0] - 1.0) < 1e-15
        assert abs(_phi(z, 2)[0] - 0.5) < 1e-15
        assert abs(_phi(z, 3)[0] - 1.0 / 6.0) < 1e-15

    def test_both_branches_match_reference(self):
        # Taylor (|z| < 0.5) and direct (|z| >= 0.5) branches against the
        # closed forms evaluated with expm1
        def exact(z, j):
            e = math.expm1(z)
            return (e / z, (e - z) / z**2,
                    (e - z - 0.5 * z**2) / z**3)[j - 1]

        for z in (-0.5000001, -0.4999999, -0.2, 0.3, 0.4999999, 0.5000001,
                  2.0, -4.0):
            for j in (1, 2, 3):
                got = _phi(np.array([z]), j)[0]
                assert abs(got - exact(z, j)) <= 1e-11 * abs(exact(z, j))

    def test_identity_phi1(self):
        z = np.array([-3.0, -0.2, 0.0, 0.3, 2.0])
        expect = np.where(z != 0, np.expm1(z) / np.where(z == 0, 1, z), 1.0)
        assert np.max(np.abs(_phi(z, 1) - expect)) < 1e-13


class TestStepExactness:
    def test_pure_stiff_decay_is_exact(self, grid32):
        # nonlinearity off, M = 0, V = 0: one step is exactly the
        # integrating factor exp(-dt (g2 k^4 + g0 k^2))
        p = params(alpha=0.0, gamma0=0.7, gamma2=1.3)
        sys = make_disordered_system(p)
        k = np.array([0.4, 0.3])
        u0 = single_mode_field(grid32, k, [-0.3, 0.4], 2.0)
        stepper = Stepper(sys, grid32, dt=0.05, linearized=True)
        uh = stepper.from_state(u0)
        out = stepper.step(uh, 0.0)
        ksq = 0.25
        factor = math.exp(-0.05 * (1.3 * ksq**2 + 0.7 * ksq))
        amp = stepper.to_state(out).mode_amplitude(k)
        assert abs(amp - factor) <= 1e-14 * factor

    def test_zero_is_fixed_point(self, grid32):
        for sys in (make_disordered_system(params()),
                    make_ordered_system(params(alpha=-1.0))):
            stepper = Stepper(sys, grid32, dt=1e-2)
            uh = stepper.from_state(
                SpectralField(grid32, np.zeros((2, 32, 32), complex)))
            for _ in range(3):
                uh = stepper.step(uh, 0.0)
            assert np.max(np.abs(uh)) == 0.0

    def test_imex_nonlinear_short_run(self, grid32):
        sys = make_disordered_system(params())
        u0 = random_solenoidal_field(grid32, 1e-2, 0.5, 13)
        cfg = SolverConfig(dt=5e-3, t_end=0.05, scheme="imex_euler")
        traj = run(u0, sys, grid32, cfg)
        assert traj.final.u_hat.divergence_residual() <= 1e-12
        assert np.all(np.isfinite(traj.final.u_hat.coeffs.view(np.float64)))

    def test_imex_linear_decay(self, grid32):
        p = params(alpha=0.0, gamma0=1.0)
        sys = make_disordered_system(p)
        k = np.array([0.4, 0.0])
        u0 = single_mode_field(grid32, k, [0.0, 1.0], 1.0)
        stepper = Stepper(sys, grid32, dt=0.1, scheme="imex_euler",
                          linearized=True)
        out = stepper.step(stepper.from_state(u0), 0.0)
        ksq = 0.16
        expect = 1.0 / (1.0 + 0.1 * (ksq**2 + ksq))
        amp = 2.0 * np.max(np.abs(out))
        assert abs(amp - expect) < 1e-14


class TestStructuralInvariants:
    def test_divergence_reality_hermitian_after_steps(self, grid32):
        sys = make_disordered_system(params())
        u0 = random_solenoidal_field(grid32, 1e-2, 0.5, 3)
        stepper = Stepper(sys, grid32, dt=5e-3)
        uh = stepper.from_state(u0)
        for i in range(20):
            uh = stepper.step(uh, i * 5e-3)
        f = stepper.to_state(uh)
        assert f.divergence_residual() <= 1e-12
        assert f.hermitian_residual() <= 1e-13 * np.max(np.abs(f.coeffs))
        phys = np.fft.ifftn(f.coeffs, axes=(1, 2), norm="forward")
        assert np.max(np.abs(phys.imag)) <= 1e-12 * max(
            1.0, float(np.max(np.abs(phys.real))))

    def test_translation_equivariance(self, grid32):
        sys = make_ordered_system(params(alpha=-1.0, gamma0=-0.5))
        u0 = random_solenoidal_field(grid32, 1e-3, 0.5, 5)
        shift = np.array([grid32.length / 8.0, grid32.length / 4.0])
        phase = np.exp(-1j * np.einsum("a,a...->...", shift, grid32.k))
        u0_shifted = SpectralField(grid32, u0.coeffs * phase)
        cfg = SolverConfig(dt=5e-3, t_end=0.2)
        t1 = run(u0, sys, grid32, cfg)
        t2 = run(u0_shifted, sys, grid32, cfg)
        moved = t1.final.u_hat.coeffs * phase
        scale = np.max(np.abs(moved))
        assert np.max(np.abs(t2.final.u_hat.coeffs - moved)) <= 1e-11 * scale

    def test_rotational_equals_convective_after_projection(self, grid32):
        # the stepper's rotational advection must project to the same field
        # as the convective form evaluated with exact padded products
        p = params(alpha=0.0, gamma0=1.0, beta=1.0)
        sys = make_disordered_system(p)
        u0 = random_solenoidal_field(grid32, 0.3, 0.6, 9)
        stepper = Stepper(sys, grid32, dt=1e-3)
        uh = stepper.from_state(u0)
        G = stepper._nonlinear_G(uh).reshape((2,) + grid32.half_shape)
        from lfsim.spectral import from_half, gradient_coeffs, pad_spectrum, \
            truncate_spectrum
        G_full = from_half(grid32, G)
        coeffs = zero_nyquist(grid32, u0.coeffs.copy())
        grads = gradient_coeffs(grid32, coeffs).reshape((4,) + grid32.shape)
        fine = np.real(np.fft.ifftn(
            pad_spectrum(grid32, np.concatenate([coeffs, grads]), 64),
            axes=(1, 2), norm="forward"))
        uf, gf = fine[:2], fine[2:].reshape(2, 2, 64, 64)
        adv = np.einsum("a...,ai...->i...", uf, gf)
        s = np.sum(uf * uf, axis=0)
        conv = p.lambda0 * adv + p.beta * s * uf
        conv_hat = zero_nyquist(grid32, truncate_spectrum(
            grid32, np.fft.fftn(conv, axes=(1, 2), norm="forward")))
        lhs = project_coeffs(grid32, G_full)
        rhs = project_coeffs(grid32, conv_hat)
        scale = max(np.max(np.abs(rhs)), 1e-30)
        assert np.max(np.abs(lhs - rhs)) <= 1e-12 * scale

    def test_large_dt_in_band_warns(self, grid32):
        sys = make_disordered_system(params(alpha=0.1, gamma0=-1.0))
        with pytest.warns(RuntimeWarning, match="max linear growth"):
            Stepper(sys, grid32, dt=1.0)

    @pytest.mark.filterwarnings("ignore:overflow:RuntimeWarning")
    @pytest.mark.filterwarnings("ignore:invalid value:RuntimeWarning")
    @pytest.mark.filterwarnings("ignore:dt:RuntimeWarning")
    def test_blowup_raises(self, grid32):
        sys = make_disordered_system(params())
        u0 = single_mode_field(grid32, [0.5, 0.0], [0.0, 1.0], 1e160)
        with pytest.raises(BlowUpError, match="resolution"):
            run(u0, sys, grid32, SolverConfig(dt=1.0, t_end=5.0))

    def test_initial_must_be_solenoidal(self, grid32):
        bad = np.zeros((2, 32, 32), complex)
        idx = grid32.mode_index([0.5, 0.0])
        bad[(slice(None),) + idx] = [1.0, 0.0]          # pure gradient mode
        bad[(slice(None),) + grid32.mode_index([-0.5, 0.0])] = [1.0, 0.0]
        with pytest.raises(ValueError, match="solenoidal"):
            run(SpectralField(grid32, bad), make_disordered_system(params()),
                grid32, SolverConfig(dt=1e-3, t_end=1e-2))


@pytest.fixture(scope="module")
def grid3d():
    return SpectralGrid(3, 16, 20.0 * np.pi)


class TestThreeDimensional:
    def test_linear_fidelity_3d(self, grid3d):
        p = params(alpha=-1.0, gamma0=-0.5, dim=3)
        sys = make_ordered_system(p, [1.0, 0.0, 0.0])
        k = np.array([0.0, 0.5, 0.0])           # k perp V
        pol = np.array([0.0, 0.0, 1.0])         # pol perp {V, k}
        u0 = single_mode_field(grid3d, k, pol, 1e-4)
        cfg = SolverConfig(dt=2e-3, t_end=1.0, diagnostics_interval=2e-2)
        traj = run(u0, sys, grid3d, cfg, linearized=True,
                   tracked_wavevectors=[tuple(k)])
        fit = fit_growth(traj.times, traj.series[amp_label(tuple(k))])
        predicted = growth_rate(sys, k)
        assert abs(predicted - 0.0625) < 1e-14
        assert abs(fit.rate - predicted) <= 1e-6

    def test_nonlinear_run_invariants_3d(self, grid3d):
        sys = make_ordered_system(params(alpha=-1.0, gamma0=-0.5, dim=3))
        u0 = random_solenoidal_field(grid3d, 1e-2, 0.4, 17)
        cfg = SolverConfig(dt=5e-3, t_end=0.05, diagnostics_interval=5e-3)
        traj = run(u0, sys, grid3d, cfg)
        f = traj.final.u_hat
        assert f.divergence_residual() <= 1e-12
        assert f.hermitian_residual() <= 1e-13 * np.max(np.abs(f.coeffs))
        assert np.max(traj.series["div_residual"]) <= 1e-12

    def test_rotational_equals_convective_3d(self, grid3d):
        from lfsim.spectral import from_half, gradient_coeffs, pad_spectrum, \
            truncate_spectrum
        p = params(alpha=0.0, gamma0=1.0, dim=3)
        sys = make_disordered_system(p)
        u0 = random_solenoidal_field(grid3d, 0.3, 0.5, 23)
        stepper = Stepper(sys, grid3d, dt=1e-3)
        uh = stepper.from_state(u0)
        G = stepper._nonlinear_G(uh).reshape((3,) + grid3d.half_shape)
        G_full = from_half(grid3d, G)
        coeffs = zero_nyquist(grid3d, u0.coeffs.copy())
        grads = gradient_coeffs(grid3d, coeffs).reshape((9,) + grid3d.shape)
        fine = np.real(np.fft.ifftn(
            pad_spectrum(grid3d, np.concatenate([coeffs, grads]), 32),
            axes=(1, 2, 3), norm="forward"))
        uf, gf = fine[:3], fine[3:].reshape(3, 3, 32, 32, 32)
        conv = p.lambda0 * np.einsum("a...,ai...->i...", uf, gf) \
            + p.beta * np.sum(uf * uf, axis=0) * uf
        conv_hat = zero_nyquist(grid3d, truncate_spectrum(
            grid3d, np.fft.fftn(conv, axes=(1, 2, 3), norm="forward")))
        lhs = project_coeffs(grid3d, G_full)
        rhs = project_coeffs(grid3d, conv_hat)
        assert np.max(np.abs(lhs - rhs)) <= 1e-12 * np.max(np.abs(rhs))


class TestNonlinearRhs:
    def test_zero_state_is_equilibrium(self, grid32):
        zero = SpectralField(grid32, np.zeros((2, 32, 32), complex))
        for sys in (make_disordered_system(params()),
                    make_ordered_system(params(alpha=-1.0))):
            out = nonlinear_rhs(SolverState(0.0, zero, sys, grid32))
            assert np.max(np.abs(out.coeffs)) == 0.0

    def test_single_mode_leading_order(self, grid32):
        # at mode k the tendency is -alpha*u plus O(eps^2) couplings
        sys = make_disordered_system(params(alpha=0.4))
        k = (0.5, 0.0)
        idx = (slice(None),) + grid32.mode_index(k)
        resid = []
        for eps in (1e-3, 1e-4):
            u0 = single_mode_field(grid32, k, [0.0, 1.0], eps)
            out = nonlinear_rhs(SolverState(0.0, u0, sys, grid32))
            resid.append(np.max(np.abs(out.coeffs[idx] + 0.4 * u0.coeffs[idx])))
        # the defect shrinks at least quadratically with eps
        assert resid[0] <= 1e-5
        assert resid[1] <= resid[0] / 50.0

    def test_drift_term_is_spectral_phase(self, grid32):
        # linearized ordered system with gamma-free params: for u perp V at
        # k || V the tendency is exactly -i lam0 (V.k) u
        p = params(alpha=-1.0, gamma0=0.0, lambda0=1.7)
        sys = make_ordered_system(p, [1.0, 0.0])
        k = (0.5, 0.0)
        u0 = single_mode_field(grid32, k, [0.0, 1.0], 1e-3)
        out = nonlinear_rhs(SolverState(0.0, u0, sys, grid32),
                            linearized=True)
        kvec = grid32.k
        expect = -1j * 1.7 * (sys.V[0] * kvec[0]) * u0.coeffs
        assert np.max(np.abs(out.coeffs - expect)) <= 1e-15

    def test_rejects_nonfinite_state(self, grid32):
        bad = np.zeros((2, 32, 32), complex)
        bad[0, 1, 1] = np.nan
        sys = make_disordered_system(params())
        with pytest.raises(BlowUpError):
            nonlinear_rhs(SolverState(0.0, SpectralField(grid32, bad),
                                      sys, grid32))


class TestLinearFidelity:
    @pytest.mark.parametrize("mode", ["disordered", "ordered_par", "ordered_perp"])
    def test_measured_matches_symbol(self, grid32, mode):
        if mode == "disordered":
            sys = make_disordered_system(params(alpha=0.1))
            k, pol = np.array([0.5, 0.5]), np.array([1.0, -1.0])
        elif mode == "ordered_par":
            sys = make_ordered_system(params(alpha=-1.0, gamma0=-0.5))
            k, pol = np.array([0.5, 0.0]), np.array([0.0, 1.0])
        else:
            # k perp V in 2D: the M term acts with full weight 2 beta |V|^2
            sys = make_ordered_system(params(alpha=-1.0, gamma0=-0.5))
            k, pol = np.array([0.0, 0.5]), np.array([1.0, 0.0])
        u0 = single_mode_field(grid32, k, pol, 1e-4)
        cfg = SolverConfig(dt=1e-3, t_end=1.0, diagnostics_interval=1e-2)
        traj = run(u0, sys, grid32, cfg, linearized=True,
                   tracked_wavevectors=[tuple(k)])
        fit = fit_growth(traj.times, traj.series[amp_label(tuple(k))])
        predicted = growth_rate(sys, k)
        assert abs(fit.rate - predicted) <= 1e-6 * max(1.0, abs(predicted))
        assert fit.r_squared >= 0.9999


class TestRunLoop:
    def test_series_and_snapshots(self, grid32):
        sys = make_disordered_system(params())
        u0 = random_solenoidal_field(grid32, 1e-3, 0.5, 1)
        cfg = SolverConfig(dt=1e-2, t_end=0.2, snapshot_interval=0.1,
                           diagnostics_interval=0.05)
        traj = run(u0, sys, grid32, cfg, collect_snapshots=True,
                   tracked_wavevectors=[(0.5, 0.5)])
        assert np.allclose(traj.times, [0.0, 0.05, 0.1, 0.15, 0.2])
        assert traj.snapshot_times == [0.0, 0.1, 0.2]
        assert set(traj.series) >= {"l2_norm_sq", "l4_norm_4", "grad_norm_sq",
                                    "lap_norm_sq", "div_residual", "m_form",
                                    "ordered_proj_sq", "amp_0.5_0.5"}
        assert traj.final.t == pytest.approx(0.2)

    def test_determinism(self, grid32):
        sys = make_disordered_system(params())
        cfg = SolverConfig(dt=5e-3, t_end=0.1, seed=77)
        runs = []
        for _ in range(2):
            u0 = random_solenoidal_field(grid32, 1e-3, 0.5, cfg.seed)
            runs.append(run(u0, sys, grid32, cfg))
        assert np.array_equal(runs[0].final.u_hat.coeffs,
                              runs[1].final.u_hat.coeffs)
        for key in runs[0].series:
            assert np.array_equal(runs[0].series[key], runs[1].series[key])

    def test_forcing_reaches_linear_steady_state(self, grid32):
        # u' = -(L_k + alpha) u + f  settles at u = f/(L_k + alpha)
        p = params(alpha=0.5, gamma0=1.0)
        sys = make_disordered_system(p)
        k = np.array([0.5, 0.0])
        famp = 1e-3
        fhat = single_mode_field(grid32, k, [0.0, 1.0], famp)

        def forcing(t):
            return fhat

        u0 = SpectralField(grid32, np.zeros((2, 32, 32), complex))
        cfg = SolverConfig(dt=5e-3, t_end=40.0, diagnostics_interval=1.0)
        traj = run(u0, sys, grid32, cfg, forcing=forcing, linearized=True,
                   tracked_wavevectors=[tuple(k)])
        ksq = 0.25
        expect = 0.5 * famp / (ksq**2 + ksq + 0.5)   # coefficient amplitude
        got = traj.series[amp_label(tuple(k))][-1]
        assert abs(got - expect) <= 1e-8 * expect

    def test_one_off_step_matches_stepper(self, grid32):
        sys = make_disordered_system(params())
        u0 = random_solenoidal_field(grid32, 1e-3, 0.5, 2)
        cfg = SolverConfig(dt=1e-3, t_end=1.0)
        state = SolverState(0.0, u0, sys, grid32)
        new = step(state, cfg)
        stepper = Stepper(sys, grid32, dt=1e-3)
        expect = stepper.to_state(stepper.step(stepper.from_state(u0), 0.0))
        assert np.max(np.abs(new.u_hat.coeffs - expect.coeffs)) < 1e-16
        assert new.t == pytest.approx(1e-3)


class TestInitialData:
    def test_random_field_properties(self, grid32):
        f = random_solenoidal_field(grid32, 0.05, 0.5, 123)
        assert f.divergence_residual() < 1e-13
        assert f.hermitian_residual() < 1e-15
        assert np.all(f.coeffs[:, 0, 0] == 0.0)
        rms = math.sqrt(float(np.sum(np.abs(f.coeffs) ** 2)))
        assert abs(rms - 0.05) < 1e-12
        phys = inverse(f)
        assert np.max(np.abs(phys.imag if np.iscomplexobj(phys) else 0.0)) == 0.0

    def test_single_mode_physical_shape(self, grid32):
        k = np.array([0.3, 0.0])
        f = single_mode_field(grid32, k, [0.0, 1.0], 0.7)
        phys = inverse(f)
        expect = 0.7 * np.cos(k[0] * grid32.mesh[0])
        assert np.max(np.abs(phys[1] - expect)) < 1e-13
        assert np.max(np.abs(phys[0])) < 1e-15

    def test_single_mode_requires_transverse_polarization(self, grid32):
        with pytest.raises(ValueError, match="orthogonal"):
            single_mode_field(grid32, [0.3, 0.0], [1.0, 0.0], 1.0)


class TestSolverConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            SolverConfig(dt=-1.0, t_end=1.0)
        with pytest.raises(ValueError):
            SolverConfig(dt=1e-3, t_end=0.0)
        with pytest.raises(ValueError):
            SolverConfig(dt=0.5, t_end=0.1)
        with pytest.raises(ValueError):
            SolverConfig(dt=1e-3, t_end=1.0, scheme="rk4")
        with pytest.raises(ValueError):
            SolverConfig(dt=1e-3, t_end=1.0, diagnostics_interval=1e-4)


class TestPressure:
    def test_zero_state(self, grid32):
        sys = make_disordered_system(params())
        state = SolverState(0.0, SpectralField(
            grid32, np.zeros((2, 32, 32), complex)), sys, grid32)
        out = recover_pressure(state)
        assert np.max(np.abs(out.grad_q)) == 0.0
        assert np.max(np.abs(out.q)) == 0.0

    def test_gradient_is_curl_free(self, grid32):
        sys = make_ordered_system(params(alpha=-1.0, lambda1=0.3))
        u0 = random_solenoidal_field(grid32, 0.1, 0.6, 31)
        state = SolverState(0.0, u0, sys, grid32)
        out = recover_pressure(state)
        gq = np.fft.fftn(out.grad_q, axes=(1, 2), norm="forward")
        curl = grid32.k_deriv[0] * gq[1] - grid32.k_deriv[1] * gq[0]
        assert np.max(np.abs(curl)) <= 1e-12 * max(
            1.0, float(np.max(np.abs(gq))))

    def test_single_transverse_mode_has_no_pressure(self, grid32):
        # Mu is solenoidal for scalar M and a transverse plane wave does not
        # self-advect, so grad q vanishes identically at first order
        sys = make_disordered_system(params(alpha=0.4))
        u0 = single_mode_field(grid32, [0.5, 0.0], [0.0, 1.0], 1e-3)
        out = recover_pressure(SolverState(0.0, u0, sys, grid32))
        assert np.max(np.abs(out.grad_q)) <= 1e-18

    def test_pressure_is_second_order_in_amplitude(self, grid32):
        # two crossed modes: the advection cross terms give grad q = O(eps^2)
        sys = make_disordered_system(params(alpha=0.4))
        norms = []
        for eps in (1e-3, 1e-4):
            a = single_mode_field(grid32, [0.5, 0.0], [0.0, 1.0], eps)
            b = single_mode_field(grid32, [0.0, 0.4], [1.0, 0.0], eps)
            u0 = SpectralField(grid32, a.coeffs + b.coeffs)
            out = recover_pressure(SolverState(0.0, u0, sys, grid32))
            norms.append(np.max(np.abs(out.grad_q)))
        assert norms[0] > 0.0
        ratio = norms[0] / norms[1]
        assert 95.0 < ratio < 105.0   # quadratic in eps

    def test_physical_pressure_gauge(self, grid32):
        # p = q + lambda1 |v|^2 (band-projected product) and q has zero mean
        from lfsim.spectral import pad_spectrum, truncate_spectrum
        sys = make_ordered_system(params(alpha=-1.0, lambda1=0.7))
        u0 = random_solenoidal_field(grid32, 0.05, 0.5, 8)
        state = SolverState(0.0, u0, sys, grid32)
        out = recover_pressure(state, with_physical_pressure=True)
        assert abs(np.mean(out.q)) < 1e-13
        # independent route: |v|^2 formed exactly on a fine lattice
        vhat = u0.coeffs.copy()
        vhat[:, 0, 0] += sys.V
        vf = np.real(np.fft.ifftn(pad_spectrum(grid32, vhat, 64),
                                  axes=(1, 2), norm="forward"))
        vsq_hat = zero_nyquist(grid32, truncate_spectrum(
            grid32, np.fft.fftn(np.sum(vf * vf, axis=0), norm="forward")))
        vsq = np.real(np.fft.ifftn(vsq_hat, norm="forward"))
        diff = out.p - out.q - 0.7 * vsq
        assert np.max(np.abs(diff)) < 1e-12
