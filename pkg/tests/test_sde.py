"""SDE solver tests: coefficients, deterministic fixtures, scheme agreement.

Statistical oracles: a reflected Brownian motion with constant coefficients
has stationary exponential law with mean sigma^2 / (2 |b|); the projected
Euler chain for it is exactly a Gaussian Lindley recursion, whose stationary
mean carries the known boundary correction ~ -0.583 sigma sqrt(dt).  The unit
tests target the discrete chain's own mean, so they stay sharp at any dt.
"""

import math

import numpy as np
import pytest

from levelq.distributions import make_renewal_spec, make_stream
from levelq.queue_sim import LevelStructure
from levelq.reflection import piecewise_constant
from levelq.sde import (
    CoefficientField,
    local_time_estimate,
    make_coefficients,
    run_sde_ensemble,
    solve_mirror,
    solve_projected,
    threshold_occupation,
)
from levelq.analysis import ks_distance

EXP = make_renewal_spec("exponential")
BOUNDARY_COEF = 0.5826  # leading discrete-reflection shift, in units of sigma sqrt(dt)


def drift_levels():
    return LevelStructure([1.0], [1.0, 1.0], [1.0, 1.0], [0.0, 0.0], [1.0, 2.0], 1.0)


def rbm_field(b=-1.0, sigma=math.sqrt(2.0)):
    return CoefficientField([], [b, b], [sigma, sigma])


class TestCoefficientField:
    def test_make_coefficients_values(self):
        coeffs = make_coefficients(drift_levels(), EXP, EXP)
        assert np.allclose(coeffs.drift, [0.0, -1.0, -2.0])
        assert np.allclose(coeffs.diffusion, [1.0, math.sqrt(2.0), math.sqrt(2.0)])

    def test_right_closed_pieces(self):
        coeffs = make_coefficients(drift_levels(), EXP, EXP)
        assert coeffs.b(1.0) == -1.0  # threshold belongs to the piece below
        assert coeffs.b(1.0 + 1e-12) == -2.0
        assert coeffs.sigma(0.0) == 1.0
        assert coeffs.b(0.0) == 0.0

    def test_mirror_extension_signs(self):
        coeffs = make_coefficients(drift_levels(), EXP, EXP)
        assert coeffs.mirror_diffusion(-0.5) == -coeffs.sigma(0.5)
        assert coeffs.mirror_drift(0.0) == 0.0
        assert coeffs.mirror_diffusion(0.0) == -coeffs.sigma(0.0)  # sgn(0) = -1
        assert coeffs.mirror_drift(-2.0) == 2.0

    def test_sigma_discontinuous_config(self):
        levels = LevelStructure([1.0], [1.0, 4.0], [1.0, 4.0], [0.0, 0.0], [1.0, 2.0], 1.0)
        coeffs = make_coefficients(levels, EXP, EXP)
        assert np.allclose(coeffs.diffusion, [1.0, math.sqrt(2.0), math.sqrt(8.0)])

    def test_piece_count_validation(self):
        with pytest.raises(ValueError):
            CoefficientField([1.0], [0.0, -1.0], [1.0, 1.0])


class TestProjectedScheme:
    def test_pure_drift_with_reflection(self):
        coeffs = CoefficientField([], [-1.0, -1.0], [0.0, 0.0])
        path = solve_projected(coeffs, 1.0, 2.0, 0.01, dw=np.zeros(200))
        k = np.arange(201)
        assert np.allclose(path.x, np.maximum(0.0, 1.0 - k * 0.01), atol=1e-12)
        assert path.boundary[-1] == pytest.approx(1.0, abs=1e-9)
        assert np.all(path.boundary[:100] == 0.0)  # flat until the state reaches 0

    def test_flat_noise_flat_path(self):
        coeffs = CoefficientField([], [0.0, 0.0], [1.0, 1.0])
        path = solve_projected(coeffs, 0.7, 1.0, 0.01, dw=np.zeros(100))
        assert np.all(path.x == 0.7)
        assert np.all(path.boundary == 0.0)

    def test_nonnegative_and_boundary_complementarity(self):
        coeffs = make_coefficients(drift_levels(), EXP, EXP)
        path = solve_projected(coeffs, 0.0, 2.0, 1e-3, make_stream(3, 2, 0, 0))
        assert np.all(path.x >= 0.0)
        dl = np.diff(path.boundary)
        assert np.all(dl >= 0.0)
        # the boundary term moves only into steps that land exactly at zero
        assert np.all(path.x[1:][dl > 0] == 0.0)

    def test_rbm_stationary_mean_with_boundary_correction(self):
        # Lindley-chain oracle: stationary mean ~ sigma^2/(2|b|) - 0.583 sigma sqrt(dt)
        sigma, dt = math.sqrt(2.0), 1e-3
        ens = run_sde_ensemble(rbm_field(), 0.0, 20.0, dt, 20000, 77, "projected",
                               probe_times=(20.0,), chunk=20000)
        x = ens.x_at(20.0)
        se = x.std(ddof=1) / math.sqrt(x.size)
        target = 1.0 - BOUNDARY_COEF * sigma * math.sqrt(dt)
        assert abs(x.mean() - target) <= 4.0 * se + 0.01


class TestMirrorScheme:
    def test_no_boundary_contact_is_pure_euler(self):
        coeffs = CoefficientField([], [0.0, 0.0], [1.0, 1.0])
        rng = np.random.default_rng(5)
        dw = rng.standard_normal(100) * 0.1
        path = solve_mirror(coeffs, 10.0, 1.0, 0.01, dw=dw)
        assert path.q is not None and np.all(path.q > 0)
        assert np.allclose(path.x, path.q)
        assert np.allclose(path.boundary, 0.0, atol=1e-12)

    def test_shared_noise_matches_projected_while_positive(self):
        coeffs = CoefficientField([], [0.3, 0.3], [1.0, 1.0])
        rng = np.random.default_rng(6)
        dw = rng.standard_normal(400) * math.sqrt(0.005)
        pj = solve_projected(coeffs, 4.0, 2.0, 0.005, dw=dw)
        mi = solve_mirror(coeffs, 4.0, 2.0, 0.005, dw=dw)
        if np.all(mi.q > 0):
            assert np.allclose(pj.x, mi.x, atol=1e-12)

    def test_monotone_boundary_and_nonnegative_state(self):
        coeffs = make_coefficients(drift_levels(), EXP, EXP)
        path = solve_mirror(coeffs, 0.0, 2.0, 1e-3, make_stream(4, 2, 1, 0))
        assert np.all(path.x >= 0.0)
        assert np.all(np.diff(path.boundary) >= -1e-12)

    def test_rbm_terminal_mean(self):
        ens = run_sde_ensemble(rbm_field(), 0.0, 20.0, 1e-3, 20000, 78, "mirror",
                               probe_times=(20.0,), chunk=20000)
        x = ens.x_at(20.0)
        se = x.std(ddof=1) / math.sqrt(x.size)
        assert abs(x.mean() - 1.0) <= 4.0 * se + 0.02


class TestGridValidation:
    def test_bad_dt(self):
        coeffs = rbm_field()
        with pytest.raises(ValueError):
            solve_projected(coeffs, 0.0, 1.0, 0.0, dw=np.zeros(1))
        with pytest.raises(ValueError):
            solve_projected(coeffs, 0.0, 0.005, 0.01, dw=np.zeros(1))
        with pytest.raises(ValueError):
            solve_projected(coeffs, 0.0, 1.0, 0.3, dw=np.zeros(3))

    def test_negative_start(self):
        with pytest.raises(ValueError):
            solve_projected(rbm_field(), -0.5, 1.0, 0.01, dw=np.zeros(100))

    def test_noise_length_checked(self):
        with pytest.raises(ValueError):
            solve_projected(rbm_field(), 0.0, 1.0, 0.01, dw=np.zeros(7))


class TestLocalTime:
    def test_zero_off_support(self):
        coeffs = rbm_field()
        path = solve_projected(coeffs, 5.0, 0.1, 0.01, dw=np.zeros(10))
        assert local_time_estimate(path, 0.0, 0.05, coeffs) == 0.0

    @pytest.mark.slow
    def test_matches_boundary_term_on_ensemble(self):
        # ensemble average of the band estimator vs twice the boundary term;
        # needs steps much finer than the band, hence dt = 1e-4
        coeffs = rbm_field()
        ens = run_sde_ensemble(coeffs, 0.0, 5.0, 1e-4, 800, 11, "projected",
                               probe_times=(5.0,), local_time_bands=((0.0, 0.05),))
        lt = ens.local_time[(0.0, 0.05)].mean()
        lb = 2.0 * ens.boundary_at(5.0).mean()
        assert abs(lt - lb) / lb < 0.2

    def test_single_path_estimator_agrees_with_ensemble_accumulator(self):
        coeffs = rbm_field()
        ens = run_sde_ensemble(coeffs, 0.0, 1.0, 0.01, 3, 9, "projected",
                               probe_times=(1.0,), local_time_bands=((0.0, 0.1),), chunk=1)
        for i in range(3):
            path = solve_projected(coeffs, 0.0, 1.0, 0.01, make_stream(9, 2, 0, i))
            want = local_time_estimate(path, 0.0, 0.1, coeffs)
            assert ens.local_time[(0.0, 0.1)][i] == pytest.approx(want, rel=1e-12)


class TestThresholdOccupation:
    def test_constant_paths(self):
        far = piecewise_constant([0.0], [2.0])
        assert threshold_occupation(far, 1.0, 0.1, 5.0) == 0.0
        at = piecewise_constant([0.0], [1.0])
        assert threshold_occupation(at, 1.0, 0.1, 5.0) == 5.0

    def test_segment_exact(self):
        path = piecewise_constant([0.0, 1.0, 3.0], [0.0, 1.05, 2.0])
        assert threshold_occupation(path, 1.0, 0.1, 5.0) == pytest.approx(2.0)
        assert threshold_occupation(path, 1.0, 0.1, 2.0) == pytest.approx(1.0)

    def test_grid_path_left_endpoints(self):
        # binary-exact fixture: dt = 1/128 and unit down-drift keep X_k = 1 - k/128
        coeffs = CoefficientField([], [-1.0, -1.0], [0.0, 0.0])
        dt = 1.0 / 128.0
        path = solve_projected(coeffs, 1.0, 1.0, dt, dw=np.zeros(128))
        # |X_k - 1| <= 16/128 holds for k = 0..16: seventeen left endpoints
        assert threshold_occupation(path, 1.0, 0.125, 1.0) == 17.0 * dt

    def test_linear_path_rejected(self):
        from levelq.reflection import piecewise_linear

        with pytest.raises(ValueError):
            threshold_occupation(piecewise_linear([0.0], [0.0], [1.0]), 1.0, 0.1, 1.0)


class TestEnsembleRunner:
    def test_matches_single_path_solver_chunk1(self):
        coeffs = make_coefficients(drift_levels(), EXP, EXP)
        ens = run_sde_ensemble(coeffs, 0.5, 1.0, 0.01, 2, 31, "projected",
                               probe_times=(0.5, 1.0), chunk=1)
        for i in range(2):
            path = solve_projected(coeffs, 0.5, 1.0, 0.01, make_stream(31, 2, 0, i))
            assert ens.x_at(1.0)[i] == path.x[-1]
            assert ens.x_at(0.5)[i] == path.x[50]
            assert ens.boundary_at(1.0)[i] == path.boundary[-1]

    def test_mirror_chunk1_matches(self):
        coeffs = make_coefficients(drift_levels(), EXP, EXP)
        ens = run_sde_ensemble(coeffs, 0.0, 1.0, 0.01, 2, 32, "mirror",
                               probe_times=(1.0,), chunk=1)
        for i in range(2):
            path = solve_mirror(coeffs, 0.0, 1.0, 0.01, make_stream(32, 2, 1, i))
            assert ens.x_at(1.0)[i] == path.x[-1]

    def test_chunking_invariant(self):
        coeffs = rbm_field()
        a = run_sde_ensemble(coeffs, 0.0, 1.0, 0.01, 10, 33, "projected",
                             probe_times=(1.0,), chunk=4)
        b = run_sde_ensemble(coeffs, 0.0, 1.0, 0.01, 10, 33, "projected",
                             probe_times=(1.0,), chunk=4)
        assert np.array_equal(a.x_at(1.0), b.x_at(1.0))

    def test_probe_off_grid_rejected(self):
        with pytest.raises(ValueError):
            run_sde_ensemble(rbm_field(), 0.0, 1.0, 0.01, 4, 1, probe_times=(0.505,))

    def test_unknown_scheme(self):
        with pytest.raises(ValueError):
            run_sde_ensemble(rbm_field(), 0.0, 1.0, 0.01, 4, 1, scheme="heun")


@pytest.mark.slow
class TestSchemeAgreement:
    def test_cross_scheme_ks_reference_config(self):
        # both schemes target the same law; desk-scale version of the check
        coeffs = make_coefficients(drift_levels(), EXP, EXP)
        kwargs = dict(probe_times=(2.0,))
        pj = run_sde_ensemble(coeffs, 0.0, 2.0, 1e-3, 4000, 51, "projected", **kwargs)
        mi = run_sde_ensemble(coeffs, 0.0, 2.0, 1e-3, 4000, 51, "mirror", **kwargs)
        assert ks_distance(pj.x_at(2.0), mi.x_at(2.0)) <= 0.05

    def test_grid_refinement_stable(self):
        coeffs = make_coefficients(drift_levels(), EXP, EXP)
        coarse = run_sde_ensemble(coeffs, 0.0, 2.0, 2e-3, 3000, 52, "projected",
                                  probe_times=(2.0,))
        fine = run_sde_ensemble(coeffs, 0.0, 2.0, 1e-3, 3000, 53, "projected",
                                probe_times=(2.0,))
        noise = 1.36 * math.sqrt(2.0 / 3000.0)
        assert ks_distance(coarse.x_at(2.0), fine.x_at(2.0)) <= 2.0 * noise
