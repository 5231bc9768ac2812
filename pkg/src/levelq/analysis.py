"""Ensemble statistics: distances, martingale checks, convergence verdicts.

Pass/fail thresholds are plain mean-versus-standard-error comparisons, never
p-values; every report carries enough metadata (seed, config hash) to rerun
bit-identically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "EnsembleSummary",
    "ks_distance",
    "qv_bias_budget",
    "qv_match_stats",
    "qv_match_test",
    "martingale_battery",
    "convergence_report",
    "BatteryReport",
    "QvMatchReport",
    "ConvergenceReport",
]


@dataclass(eq=False)
class EnsembleSummary:
    """Per-probe sample vectors with their first two moments and sorted copies."""

    probe_times: tuple[float, ...]
    samples: list[np.ndarray]
    mean: np.ndarray
    sd: np.ndarray
    se: np.ndarray
    sorted_samples: list[np.ndarray]
    meta: dict = field(default_factory=dict)

    @classmethod
    def from_samples(cls, probe_times, samples, **meta) -> "EnsembleSummary":
        samples = [np.asarray(s, dtype=float) for s in samples]
        if len(samples) != len(probe_times):
            raise ValueError("one sample vector per probe time")
        for s in samples:
            if s.size < 2:
                raise ValueError("need at least two replications")
        mean = np.array([s.mean() for s in samples])
        sd = np.array([s.std(ddof=1) for s in samples])
        se = sd / np.sqrt([s.size for s in samples])
        return cls(
            probe_times=tuple(float(p) for p in probe_times),
            samples=samples,
            mean=mean,
            sd=sd,
            se=se,
            sorted_samples=[np.sort(s) for s in samples],
            meta=dict(meta),
        )


def ks_distance(s1, s2) -> float:
    """Two-sample Kolmogorov-Smirnov statistic, exact by merge scan."""
    s1 = np.sort(np.asarray(s1, dtype=float))
    s2 = np.sort(np.asarray(s2, dtype=float))
    if s1.size == 0 or s2.size == 0:
        raise ValueError("samples must be nonempty")
    grid = np.concatenate((s1, s2))
    cdf1 = np.searchsorted(s1, grid, side="right") / s1.size
    cdf2 = np.searchsorted(s2, grid, side="right") / s2.size
    return float(np.abs(cdf1 - cdf2).max())


@dataclass(eq=False)
class QvMatchReport:
    t: float
    mean: float
    se: float
    sides: tuple[float, float]
    passed: bool
    replications: int

    def to_dict(self) -> dict:
        return {
            "t": self.t,
            "mean_defect": self.mean,
            "se": self.se,
            "mean_qv": self.sides[0],
            "mean_occupation_form": self.sides[1],
            "passed": self.passed,
            "replications": self.replications,
        }


def qv_match_stats(qv_at_t, occupation_at_t, sigma_sq, t, bias_budget: float = 0.0) -> QvMatchReport:
    """Compare total optional QV against the occupation form sum_i sigma_i^2 H_i.

    ``occupation_at_t`` has one row per replication and one column per piece
    (the empty-state column included); ``sigma_sq`` supplies the matching
    squared diffusion values.  Passes when |mean defect| <= 3 SE + budget.
    """
    qv = np.asarray(qv_at_t, dtype=float)
    occ = np.asarray(occupation_at_t, dtype=float)
    sigma_sq = np.asarray(sigma_sq, dtype=float)
    if occ.ndim != 2 or occ.shape[0] != qv.size or occ.shape[1] != sigma_sq.size:
        raise ValueError("misaligned ensembles")
    form = occ @ sigma_sq
    defect = qv - form
    mean = float(defect.mean())
    se = float(defect.std(ddof=1) / np.sqrt(defect.size))
    return QvMatchReport(
        t=float(t),
        mean=mean,
        se=se,
        sides=(float(qv.mean()), float(form.mean())),
        passed=abs(mean) <= 3.0 * se + bias_budget,
        replications=qv.size,
    )


def qv_bias_budget(levels, var_arrival, var_service, n, t) -> float:
    """First-order bias of the limit-coefficient occupation form at finite n.

    The running system works at rates perturbed by lam_hat/sqrt(n) and
    mu_hat/sqrt(n), so the compensator differs from the limit form by at most
    (max |lam_hat| var_A + max |mu_hat| var_S) t / sqrt(n).
    """
    la = float(np.max(np.abs(levels.lam_hat), initial=0.0))
    mu = float(np.max(np.abs(levels.mu_hat), initial=0.0))
    return (la * var_arrival + mu * var_service) * t / math.sqrt(n)


def qv_match_test(records, paths, levels, t, bias_budget: float | None = None) -> QvMatchReport:
    """Per-replication QV defect from full records and paths.

    The occupation form keeps the empty-state column, whose coefficient is the
    empty-state arrival rate times the arrival variance: at finite n the
    arrival count keeps growing through idle stretches, so dropping the column
    would inject an order-idleness bias into an otherwise centered defect.
    The default bias budget is the analytic first-order bound from the rate
    perturbations (see qv_bias_budget).
    """
    if len(records) != len(paths):
        raise ValueError("misaligned ensembles")
    var_a = records[0].var_arrival
    var_s = records[0].var_service
    if bias_budget is None:
        bias_budget = qv_bias_budget(levels, var_a, var_s, records[0].n, t)
    sigma_sq = np.concatenate(
        ([levels.lam0 * var_a], levels.lam * var_a + levels.mu * var_s)
    )
    qv = np.array([rec.at("qv", t) for rec in records])
    occ = np.stack([p.occupation_at(t) for p in paths])
    return qv_match_stats(qv, occ, sigma_sq, t, bias_budget)


_BATTERY = ("one", "clipped_state", "clipped_martingale", "above_median")


@dataclass(eq=False)
class BatteryReport:
    s: float
    t: float
    names: tuple[str, ...]
    means: np.ndarray
    ses: np.ndarray
    passed_each: np.ndarray
    replications: int

    @property
    def passed(self) -> bool:
        return bool(np.all(self.passed_each))

    def to_dict(self) -> dict:
        return {
            "s": self.s,
            "t": self.t,
            "replications": self.replications,
            "functionals": [
                {"name": n, "mean": float(m), "se": float(e), "passed": bool(p)}
                for n, m, e, p in zip(self.names, self.means, self.ses, self.passed_each)
            ],
            "passed": self.passed,
        }


def martingale_battery(x_at_s, m_at_s, m_at_t, s: float, t: float) -> BatteryReport:
    """Orthogonality of martingale increments against a fixed battery.

    The battery is four bounded functionals of the ensemble sampled at the
    earlier probe: the constant 1, the state clipped to [0, 10], the
    martingale clipped to [-10, 10], and the indicator of sitting above the
    ensemble median.  Each statistic must satisfy |mean| <= 3 SE; a zero-SE
    statistic passes only at exactly zero mean.
    """
    if not s < t:
        raise ValueError("need s < t")
    x_s = np.asarray(x_at_s, dtype=float)
    m_s = np.asarray(m_at_s, dtype=float)
    m_t = np.asarray(m_at_t, dtype=float)
    if not (x_s.size == m_s.size == m_t.size) or x_s.size < 2:
        raise ValueError("aligned ensembles with at least two replications required")
    inc = m_t - m_s
    hs = {
        "one": np.ones_like(inc),
        "clipped_state": np.clip(x_s, 0.0, 10.0),
        "clipped_martingale": np.clip(m_s, -10.0, 10.0),
        "above_median": (x_s > np.median(x_s)).astype(float),
    }
    means = np.empty(len(_BATTERY))
    ses = np.empty(len(_BATTERY))
    for i, name in enumerate(_BATTERY):
        prod = hs[name] * inc
        means[i] = prod.mean()
        ses[i] = prod.std(ddof=1) / np.sqrt(prod.size)
    passed = np.abs(means) <= 3.0 * ses
    return BatteryReport(
        s=float(s), t=float(t), names=_BATTERY, means=means, ses=ses,
        passed_each=passed, replications=int(x_s.size),
    )


@dataclass(eq=False)
class ConvergenceReport:
    T: float
    n_grid: tuple[int, ...]
    ks: dict
    ks_threshold: float
    monotone: bool
    passed_ks: bool
    boundary_gap: float | None
    boundary_tol: float | None
    passed_boundary: bool | None
    second_moments: dict
    meta: dict

    @property
    def passed(self) -> bool:
        ok = self.passed_ks and self.monotone
        if self.passed_boundary is not None:
            ok = ok and self.passed_boundary
        return ok

    def to_dict(self) -> dict:
        return {
            "T": self.T,
            "n_grid": list(self.n_grid),
            "ks": {str(n): v for n, v in self.ks.items()},
            "ks_threshold": self.ks_threshold,
            "ks_monotone": self.monotone,
            "passed_ks": self.passed_ks,
            "boundary_gap": self.boundary_gap,
            "boundary_tol": self.boundary_tol,
            "passed_boundary": self.passed_boundary,
            "second_moments": {str(n): v for n, v in self.second_moments.items()},
            "passed": self.passed,
            **self.meta,
        }


def convergence_report(
    queue_terminal: dict,
    sde_terminal,
    T: float,
    ks_threshold: float = 0.06,
    queue_boundary: dict | None = None,
    sde_boundary=None,
    boundary_tol: float | None = None,
    queue_martingale: dict | None = None,
    **meta,
) -> ConvergenceReport:
    """Distance of the scaled queue marginals to the diffusion marginal per n.

    Reports the KS distance for every n in the grid, whether it shrinks from
    the smallest to the largest n, whether the largest n meets the threshold,
    and (when boundary samples are supplied) the gap between the mean scaled
    idleness and the mean boundary term.  ``queue_martingale`` samples, when
    given, produce the per-n second moments used as a flat-in-n sanity check.
    """
    if not queue_terminal:
        raise ValueError("empty n grid")
    if len(queue_terminal) < 2:
        raise ValueError("need at least two n values")
    sde_terminal = np.asarray(sde_terminal, dtype=float)
    n_grid = tuple(sorted(queue_terminal))
    ks = {n: ks_distance(queue_terminal[n], sde_terminal) for n in n_grid}
    monotone = ks[n_grid[-1]] < ks[n_grid[0]]
    passed_ks = ks[n_grid[-1]] <= ks_threshold

    boundary_gap = None
    passed_boundary = None
    if queue_boundary is not None and sde_boundary is not None:
        gap = float(
            np.mean(queue_boundary[n_grid[-1]]) - np.mean(np.asarray(sde_boundary, float))
        )
        boundary_gap = gap
        if boundary_tol is not None:
            passed_boundary = abs(gap) <= boundary_tol

    second_moments = {}
    if queue_martingale is not None:
        second_moments = {
            n: float(np.mean(np.square(np.asarray(v, float)))) for n, v in queue_martingale.items()
        }

    return ConvergenceReport(
        T=float(T),
        n_grid=n_grid,
        ks=ks,
        ks_threshold=float(ks_threshold),
        monotone=monotone,
        passed_ks=passed_ks,
        boundary_gap=boundary_gap,
        boundary_tol=boundary_tol,
        passed_boundary=passed_boundary,
        second_moments=second_moments,
        meta=dict(meta),
    )
