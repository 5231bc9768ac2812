"""Decomposition tests: hand fixtures, exact identities, ensemble properties."""

import math

import numpy as np
import pytest

from levelq.decomposition import (
    DecompositionRecord,
    build_record,
    centered_marks,
    compensated_cumsum,
    error_processes,
    optional_qv,
    verify_dm_identity,
)
from levelq.distributions import make_renewal_spec, make_stream, sample_epochs, renewal_count
from levelq.experiment import run_queue_ensemble
from levelq.queue_sim import LevelStructure, scale_system, simulate_queue

EXP = make_renewal_spec("exponential")


def flat_levels():
    """Two levels with identical rates, so the scaled queue is a plain queue."""
    return LevelStructure([1.0], [1.0, 1.0], [1.0, 1.0], [0.0, 0.0], [0.0, 0.0], 1.0)


def drift_levels():
    return LevelStructure([1.0], [1.0, 1.0], [1.0, 1.0], [0.0, 0.0], [1.0, 2.0], 1.0)


class FixtureSpec:
    def __init__(self, marks, variance=1.0):
        self._marks = list(marks)
        self.variance = variance
        self.family = "fixture"

    def sample(self, stream, size):
        head = [self._marks.pop(0) for _ in range(min(size, len(self._marks)))]
        return np.array(head + [1.0] * (size - len(head)))


def streams(seed, rep=0):
    return make_stream(seed, rep, 0), make_stream(seed, rep, 1)


class TestCenteredMarks:
    def test_unit_marks_vanish(self):
        assert np.array_equal(centered_marks([1.0, 1.0, 1.0]), [0.0, 0.0, 0.0])

    def test_direct(self):
        assert np.array_equal(centered_marks([0.5, 2.0]), [0.5, -1.0])

    def test_clt_mean(self):
        z = EXP.sample(np.random.default_rng(1), 1_000_000)
        zeta = centered_marks(z)
        assert abs(zeta.mean()) < 4.0 / 1e3


class TestCompensatedCumsum:
    def test_matches_plain_cumsum_on_short_input(self):
        x = np.array([1.0, -2.0, 3.5])
        assert np.array_equal(compensated_cumsum(x), np.cumsum(x))

    def test_long_mean_zero_accumulation(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal(300_000)
        out = compensated_cumsum(x, block=512)
        exact = np.cumsum(x.astype(np.longdouble)).astype(float)
        assert np.abs(out - exact).max() < 1e-9


class TestBuildRecordFixture:
    def make_path(self):
        # arrival marks 2.0, 0.5, 1.0, ...; service marks 0.9, 10, ...
        system = scale_system(flat_levels(), 1)
        arr = FixtureSpec([2.0, 0.5, 1.0])
        svc = FixtureSpec([0.9, 10.0])
        return simulate_queue(system, arr, svc, 2.6, streams(0))

    def test_hand_computed_jumps(self):
        path = self.make_path()
        assert path.arrivals_total == 2 and path.departures_total == 0
        rec = build_record(path, n=4)
        jumps = rec.jump_arrival[rec.jump_arrival != 0.0]
        # centered second mark over sqrt(4): (1 - 0.5) / 2
        assert jumps.tolist() == [0.25]
        assert rec.m_arrival[-1] == 0.25
        # first event at t = 2: martingale term is the first summand
        k = int(np.flatnonzero(path.d_arrival)[0])
        assert path.times[k] == 2.0
        assert rec.m_arrival[k] == 0.25

    def test_residual_bounds_and_values(self):
        path = self.make_path()
        rec = build_record(path, n=4)
        assert np.all(rec.resid_arrival >= 0.0)
        assert np.all(rec.resid_arrival <= 2.0)  # largest consumed mark
        k = int(np.flatnonzero(path.d_arrival)[0])
        assert rec.resid_arrival[k] == pytest.approx(0.5)
        k2 = int(np.flatnonzero(path.d_arrival)[1])
        assert rec.resid_arrival[k2] == pytest.approx(1.0)

    def test_hand_computed_error_process(self):
        path = self.make_path()
        rec = build_record(path, n=4)
        k = int(np.flatnonzero(path.d_arrival)[0])
        # ([R_A - Z_A(0)] - [R_S - Z_S(0)]) / 2 at the first event:
        # R_A = 0.5 against Z_A(0) = 2, while the frozen service clock still
        # shows the full first mark, so its residual term cancels
        want = ((0.5 - 2.0) - (0.9 - 0.9)) / 2.0
        assert rec.err[k] == pytest.approx(want)
        assert rec.err[0] == 0.0

    def test_empty_arrival_path_gives_flat_martingale(self):
        system = scale_system(flat_levels(), 1)
        arr = FixtureSpec([1e9])
        path = simulate_queue(system, arr, EXP, 1.0, streams(0))
        rec = build_record(path, n=16)
        assert np.all(rec.m_arrival == 0.0)


class TestDmIdentity:
    def test_raw_renewal_identity(self):
        # the plain counting identity, no queue involved
        seq = sample_epochs(EXP, 50.0, make_stream(5, 0, 0))
        zeta = centered_marks(seq.marks)
        for t in np.linspace(0.0, 50.0, 97):
            a = renewal_count(seq, float(t))
            resid = seq.epochs[a] - t
            m = zeta[1 : a + 1].sum()
            assert a - (t + resid - seq.marks[0] + m) == pytest.approx(0.0, abs=1e-9)

    def test_seeded_path_defect_within_bound(self):
        system = scale_system(drift_levels(), 400)
        path = simulate_queue(system, EXP, EXP, 5.0, streams(8))
        rec = build_record(path)
        assert verify_dm_identity(rec, path) <= 1e-8 * (1 + path.arrivals_total)

    def test_corrupted_residuals_detected(self):
        system = scale_system(flat_levels(), 1)
        arr = FixtureSpec([2.0, 0.5, 1.0])
        svc = FixtureSpec([0.9, 10.0])
        path = simulate_queue(system, arr, svc, 2.6, streams(0))
        rec = build_record(path, n=1)
        rec.resid_arrival = rec.resid_arrival + 0.5
        assert verify_dm_identity(rec, path) >= 0.5

    def test_mismatched_record_rejected(self):
        system = scale_system(flat_levels(), 16)
        p1 = simulate_queue(system, EXP, EXP, 2.0, streams(1))
        p2 = simulate_queue(system, EXP, EXP, 3.0, streams(2))
        rec = build_record(p1)
        with pytest.raises(ValueError):
            verify_dm_identity(rec, p2)

    def test_insufficient_marks_rejected(self):
        system = scale_system(flat_levels(), 16)
        path = simulate_queue(system, EXP, EXP, 2.0, streams(3))
        with pytest.raises(ValueError, match="insufficient"):
            build_record(path, arr_marks=np.ones(2), svc_marks=None)


class TestOptionalQv:
    def test_two_jumps_sum_of_squares(self):
        times = np.array([0.0, 1.0, 2.0])
        rec = DecompositionRecord(
            times=times, n=1, z_a0=1.0, z_s0=1.0, var_arrival=1.0, var_service=1.0,
            jump_arrival=np.array([0.0, 0.7, -0.2]),
            jump_service=np.zeros(3),
        )
        qa, qs, cross, total = optional_qv(rec)
        assert qa[-1] == pytest.approx(0.7**2 + 0.2**2)
        assert np.all(qs == 0.0) and np.all(cross == 0.0)
        assert np.array_equal(total, qa)

    def test_continuous_laws_have_no_shared_jumps(self):
        system = scale_system(drift_levels(), 200)
        path = simulate_queue(system, EXP, EXP, 5.0, streams(12))
        rec = build_record(path)
        assert np.all(rec.qv_cross == 0.0)

    def test_tie_fixture_cross_product(self):
        system = scale_system(flat_levels(), 1)
        arr = FixtureSpec([0.25, 0.75, 5.0])
        svc = FixtureSpec([0.75, 5.0])
        path = simulate_queue(system, arr, svc, 2.0, streams(0))
        rec = build_record(path)
        # single combined event: product of the two centered marks, (1-5)(1-5)
        assert rec.qv_cross[-1] == pytest.approx(16.0)
        assert rec.qv[-1] == pytest.approx(rec.qv_arrival[-1] - 32.0 + rec.qv_service[-1])


class TestErrorProcesses:
    def test_zero_at_origin(self):
        system = scale_system(drift_levels(), 100)
        path = simulate_queue(system, EXP, EXP, 2.0, streams(4))
        rec = build_record(path)
        err, err_a, err_s = error_processes(rec, path, 100)
        assert err[0] == 0.0
        assert err_a[0] == 0.0 and err_s[0] == 0.0

    @pytest.mark.slow
    def test_sup_error_decays_with_n(self):
        means = {}
        for n in (100, 1600):
            run = run_queue_ensemble(
                drift_levels(), EXP, EXP, n, 2.0, 100, 2024, (1.0, 2.0)
            )
            means[n] = run.sup_err_arrival.mean()
        assert means[1600] <= means[100] / 1.5


@pytest.fixture(scope="module")
def small_ensemble():
    return run_queue_ensemble(drift_levels(), EXP, EXP, 64, 2.0, 600, 7, (1.0, 2.0))


@pytest.mark.slow
class TestMartingaleEnsemble:
    @pytest.fixture
    def run(self, small_ensemble):
        return small_ensemble

    def test_mean_zero(self, run):
        m = run.m_at(2.0)
        assert abs(m.mean()) <= 3.5 * m.std(ddof=1) / math.sqrt(m.size)

    def test_second_moment_matches_predictable_qv(self, run):
        m2 = run.m_at(2.0) ** 2
        pq = run.pqv_at(2.0)
        gap = m2 - pq
        se = gap.std(ddof=1) / math.sqrt(gap.size)
        assert abs(gap.mean()) <= 3.5 * se

    def test_cross_variation_centered(self, run):
        # exponential inputs never share jumps, so the cross term is exactly 0
        assert np.all(run.max_cross == 0.0)
