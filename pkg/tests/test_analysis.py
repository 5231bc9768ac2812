"""Statistics layer tests: KS distance, battery, QV match, convergence report."""

import math

import numpy as np
import pytest

from levelq.analysis import (
    EnsembleSummary,
    convergence_report,
    ks_distance,
    martingale_battery,
    qv_bias_budget,
    qv_match_stats,
    qv_match_test,
)
from levelq.decomposition import build_record
from levelq.distributions import make_renewal_spec, make_stream
from levelq.experiment import run_queue_ensemble
from levelq.queue_sim import LevelStructure, scale_system, simulate_queue

EXP = make_renewal_spec("exponential")


def drift_levels():
    return LevelStructure([1.0], [1.0, 1.0], [1.0, 1.0], [0.0, 0.0], [1.0, 2.0], 1.0)


class TestKsDistance:
    def test_identical(self):
        assert ks_distance([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]) == 0.0

    def test_disjoint(self):
        assert ks_distance([0.0, 0.0, 0.0], [1.0, 1.0]) == 1.0

    def test_enumerated_breakpoints(self):
        # F1 jumps at 0 and 1 by 1/2; F2 jumps at 0.5: gap is 1/2 everywhere between
        assert ks_distance([0.0, 1.0], [0.5]) == 0.5

    def test_symmetry_range_triangle(self):
        rng = np.random.default_rng(8)
        for _ in range(25):
            a = rng.normal(size=40)
            b = rng.normal(size=25) + 0.3
            c = rng.exponential(size=33)
            dab, dba = ks_distance(a, b), ks_distance(b, a)
            assert dab == dba
            assert 0.0 <= dab <= 1.0
            # sup-norm metric on the three empirical cdfs
            assert ks_distance(a, c) <= dab + ks_distance(b, c) + 1e-15

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            ks_distance([], [1.0])


class TestEnsembleSummary:
    def test_moments_and_sorting(self):
        s = EnsembleSummary.from_samples((1.0,), [np.array([3.0, 1.0, 2.0])], seed=5)
        assert np.array_equal(s.sorted_samples[0], [1.0, 2.0, 3.0])
        assert s.mean[0] == pytest.approx(2.0)
        assert s.se[0] == pytest.approx(s.sd[0] / math.sqrt(3.0))
        assert s.meta["seed"] == 5

    def test_needs_two_replications(self):
        with pytest.raises(ValueError):
            EnsembleSummary.from_samples((1.0,), [np.array([1.0])])


class TestQvMatch:
    def test_zero_time_trivial(self):
        rep = qv_match_stats(np.zeros(10), np.zeros((10, 3)), np.ones(3), 0.0)
        assert rep.passed and rep.mean == 0.0

    def test_misaligned_rejected(self):
        with pytest.raises(ValueError):
            qv_match_stats(np.zeros(10), np.zeros((9, 3)), np.ones(3), 1.0)

    @pytest.mark.slow
    def test_real_ensemble_passes_and_mutation_fails(self):
        levels = drift_levels()
        run = run_queue_ensemble(levels, EXP, EXP, 100, 2.0, 500, 31, (2.0,))
        var = 1.0
        sigma_sq = np.concatenate(([levels.lam0 * var], levels.lam * var + levels.mu * var))
        budget = qv_bias_budget(levels, var, var, 100, 2.0)
        good = qv_match_stats(run.qv_at(2.0), run.occupation_at(2.0), sigma_sq, 2.0, budget)
        assert good.passed
        bad = qv_match_stats(run.qv_at(2.0), run.occupation_at(2.0), 4.0 * sigma_sq, 2.0, budget)
        assert not bad.passed

    @pytest.mark.slow
    def test_record_level_interface(self):
        levels = drift_levels()
        system = scale_system(levels, 64)
        paths = [
            simulate_queue(system, EXP, EXP, 2.0, (make_stream(3, r, 0), make_stream(3, r, 1)))
            for r in range(200)
        ]
        records = [build_record(p) for p in paths]
        rep = qv_match_test(records, paths, levels, 2.0)
        assert rep.passed
        with pytest.raises(ValueError):
            qv_match_test(records[:-1], paths, levels, 2.0)


class TestBattery:
    def test_validation(self):
        with pytest.raises(ValueError):
            martingale_battery([1.0, 2.0], [0.0, 0.0], [0.0, 0.0], 2.0, 1.0)
        with pytest.raises(ValueError):
            martingale_battery([1.0], [0.0], [0.0], 1.0, 2.0)

    def test_deterministic_constant_paths_all_zero(self):
        rep = martingale_battery(np.ones(50), np.zeros(50), np.zeros(50), 1.0, 2.0)
        assert np.all(rep.means == 0.0)
        assert rep.passed

    @pytest.mark.slow
    def test_martingale_passes_state_fails(self):
        # transient rise of the state is picked up; the martingale is not
        run = run_queue_ensemble(drift_levels(), EXP, EXP, 100, 2.5, 1500, 11, (0.25, 2.5))
        good = martingale_battery(
            run.xhat_at(0.25), run.m_at(0.25), run.m_at(2.5), 0.25, 2.5
        )
        assert good.passed
        fake = martingale_battery(
            run.xhat_at(0.25), run.xhat_at(0.25), run.xhat_at(2.5), 0.25, 2.5
        )
        assert not fake.passed_each[0]  # the constant functional sees the drift


class TestConvergenceReport:
    def test_split_sample_self_noise(self):
        rng = np.random.default_rng(12)
        x = rng.exponential(size=4000)
        half = 2000
        d = ks_distance(x[:half], x[half:])
        assert d <= 1.36 * math.sqrt(2.0 / half) * 1.5

    def test_empty_and_single_grid_rejected(self):
        with pytest.raises(ValueError):
            convergence_report({}, np.ones(5), T=1.0)
        with pytest.raises(ValueError):
            convergence_report({100: np.ones(5)}, np.ones(5), T=1.0)

    def test_report_fields_and_flags(self):
        rng = np.random.default_rng(13)
        target = rng.exponential(size=3000)
        close = rng.exponential(size=3000)
        far = rng.exponential(size=3000) + 0.5
        rep = convergence_report(
            {10: far, 1000: close},
            target,
            T=2.0,
            ks_threshold=0.06,
            queue_boundary={10: far, 1000: close + 1.0},
            sde_boundary=target + 1.0,
            boundary_tol=0.1,
            queue_martingale={10: far, 1000: close},
        )
        assert rep.monotone
        assert rep.passed_ks
        assert rep.passed_boundary
        assert rep.passed
        d = rep.to_dict()
        assert d["ks"]["10"] > d["ks"]["1000"]
        assert set(d["second_moments"]) == {"10", "1000"}

    def test_failing_threshold_flagged(self):
        rng = np.random.default_rng(14)
        rep = convergence_report(
            {10: rng.normal(size=500) + 2.0, 100: rng.normal(size=500) + 1.0},
            rng.normal(size=500),
            T=1.0,
            ks_threshold=0.06,
        )
        assert not rep.passed

    @pytest.mark.slow
    def test_martingale_second_moment_flat_in_n(self):
        # uniform-integrability surrogate: E[M(t)^2] shows no growth along n
        m2 = {}
        for n in (64, 400):
            run = run_queue_ensemble(drift_levels(), EXP, EXP, n, 2.0, 300, 21, (2.0,))
            m2[n] = float(np.mean(run.m_at(2.0) ** 2))
        assert m2[400] <= 2.0 * m2[64]
