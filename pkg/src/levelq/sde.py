"""Reflected diffusion with piecewise-constant coefficients.

Two structurally different discretizations of the same equation are provided:
a projected Euler scheme (Euler step composed with reflection at 0, the
boundary term collected from the projections) and a mirror scheme (Euler on
the whole line for the odd-extended coefficients, the state is the absolute
value and the boundary term is the discrete Tanaka residual).  No convergence
guarantee exists for either under discontinuous coefficients, which is why
both are kept and cross-checked.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass

import numpy as np

from .distributions import RenewalSpec, make_stream
from .queue_sim import LevelStructure
from .reflection import CadlagPath

__all__ = [
    "CoefficientField",
    "SdeGridPath",
    "SdeEnsemble",
    "make_coefficients",
    "solve_projected",
    "solve_mirror",
    "local_time_estimate",
    "threshold_occupation",
    "run_sde_ensemble",
]

_SDE_TAG = 2
_SCHEMES = {"projected": 0, "mirror": 1}


@dataclass(frozen=True, eq=False)
class CoefficientField:
    """Drift and diffusion constant on each piece of the state partition.

    The pieces are {0}, (0, t_0], ..., (t_{K-2}, infinity) for interior
    ``thresholds`` t_i, so ``drift`` and ``diffusion`` carry one value per
    piece with index 0 owned by the origin.  Pieces are right closed: a
    threshold takes the value of the piece it terminates.
    """

    thresholds: np.ndarray
    drift: np.ndarray
    diffusion: np.ndarray

    def __post_init__(self):
        for name in ("thresholds", "drift", "diffusion"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if self.drift.size != self.thresholds.size + 2 or self.diffusion.size != self.drift.size:
            raise ValueError("need one drift/diffusion value per piece (thresholds + 2)")
        if self.thresholds.size and (
            np.any(self.thresholds <= 0) or np.any(np.diff(self.thresholds) <= 0)
        ):
            raise ValueError("thresholds must be positive and strictly increasing")

    def piece_of(self, x):
        """Piece index of x >= 0; 0 exactly at the origin."""
        x = np.asarray(x)
        idx = np.searchsorted(self.thresholds, x, side="left") + 1
        out = np.where(x == 0, 0, idx)
        return out if out.shape else int(out)

    def b(self, x):
        return self.drift[self.piece_of(x)]

    def sigma(self, x):
        return self.diffusion[self.piece_of(x)]

    def mirror_drift(self, q):
        """Odd extension sgn(q) b(|q|) with sgn(0) = -1."""
        q = np.asarray(q)
        sg = np.where(q > 0, 1.0, -1.0)
        out = sg * self.drift[self.piece_of(np.abs(q))]
        return out if out.shape else float(out)

    def mirror_diffusion(self, q):
        q = np.asarray(q)
        sg = np.where(q > 0, 1.0, -1.0)
        out = sg * self.diffusion[self.piece_of(np.abs(q))]
        return out if out.shape else float(out)


def make_coefficients(
    levels: LevelStructure, spec_a: RenewalSpec, spec_s: RenewalSpec
) -> CoefficientField:
    """Coefficients induced by the limit regime and the two mark variances.

    Drift is the per-level perturbation gap (zero on the origin piece);
    squared diffusion adds the two variances weighted by the level's rates,
    and on the origin it is the empty-state arrival rate times the arrival
    variance.
    """
    var_a, var_s = spec_a.variance, spec_s.variance
    drift = np.concatenate(([0.0], levels.drift))
    sig = np.concatenate(
        ([math.sqrt(levels.lam0 * var_a)], np.sqrt(levels.lam * var_a + levels.mu * var_s))
    )
    if np.any(sig <= 0):
        raise ValueError("degenerate diffusion coefficient")
    return CoefficientField(levels.thresholds, drift, sig)


@dataclass(eq=False)
class SdeGridPath:
    """One discretized trajectory: state, boundary term and driving noise."""

    times: np.ndarray
    x: np.ndarray
    boundary: np.ndarray
    noise: np.ndarray
    dt: float
    x0: float
    scheme: str
    q: np.ndarray | None = None


def _grid(T: float, dt: float):
    if dt <= 0:
        raise ValueError("dt must be positive")
    if T < dt:
        raise ValueError("horizon must cover at least one step")
    steps = int(round(T / dt))
    if abs(steps * dt - T) > 1e-9 * max(T, 1.0):
        raise ValueError("horizon must be an integer number of steps")
    return steps, dt * np.arange(steps + 1)


def _noise(steps: int, dt: float, stream, dw):
    if dw is not None:
        dw = np.asarray(dw, dtype=float)
        if dw.size != steps:
            raise ValueError("noise override must supply one increment per step")
        return dw
    if stream is None:
        raise ValueError("either a stream or a noise override is required")
    return stream.standard_normal(steps) * math.sqrt(dt)


def solve_projected(coeffs, x0, T, dt, stream=None, dw=None) -> SdeGridPath:
    """Euler step composed with reflection at 0, one path on a uniform grid.

    Per step: x* = x + b(x) dt + sigma(x) dW; the new state is max(0, x*) and
    the boundary term collects max(0, -x*).
    """
    if x0 < 0:
        raise ValueError("initial state must be nonnegative")
    steps, times = _grid(T, dt)
    dw = _noise(steps, dt, stream, dw)
    thr = coeffs.thresholds.tolist()
    drift = coeffs.drift.tolist()
    sig = coeffs.diffusion.tolist()
    x = np.empty(steps + 1)
    l = np.empty(steps + 1)
    x[0], l[0] = float(x0), 0.0
    xk, lk = float(x0), 0.0
    for k in range(steps):
        p = 0 if xk == 0.0 else bisect.bisect_left(thr, xk) + 1
        star = xk + (drift[p] * dt + sig[p] * dw[k])
        if star >= 0.0:
            xk = star
        else:
            lk -= star
            xk = 0.0
        x[k + 1], l[k + 1] = xk, lk
    return SdeGridPath(times, x, l, dw, dt, float(x0), "projected")


def solve_mirror(coeffs, x0, T, dt, stream=None, dw=None) -> SdeGridPath:
    """Euler on the whole line for the odd-extended coefficients.

    The state is |Q| and the boundary term is the discrete Tanaka residual
    L_k = X_k - x0 - sum_{j<k} [ b(X_j) dt + sigma(X_j) dW_j ], which is flat
    while Q keeps its sign and picks up 2 |Q_{k+1}| at sign changes.
    """
    if x0 < 0:
        raise ValueError("initial state must be nonnegative")
    steps, times = _grid(T, dt)
    dw = _noise(steps, dt, stream, dw)
    thr = coeffs.thresholds.tolist()
    drift = coeffs.drift.tolist()
    sig = coeffs.diffusion.tolist()
    x = np.empty(steps + 1)
    l = np.empty(steps + 1)
    q = np.empty(steps + 1)
    qk = float(x0)
    x[0], l[0], q[0] = abs(qk), 0.0, qk
    lk = 0.0
    for k in range(steps):
        xk = abs(qk)
        p = 0 if xk == 0.0 else bisect.bisect_left(thr, xk) + 1
        sg = 1.0 if qk > 0 else -1.0
        inc = drift[p] * dt + sig[p] * dw[k]
        qk = qk + sg * inc
        xk1 = abs(qk)
        lk += xk1 - xk - inc
        x[k + 1], l[k + 1], q[k + 1] = xk1, lk, qk
    return SdeGridPath(times, x, l, dw, dt, float(x0), "mirror", q=q)


def local_time_estimate(path: SdeGridPath, a: float, eps: float, coeffs: CoefficientField) -> float:
    """Occupation-measured local time near level a.

    Discrete version of (1/eps) * integral of 1{X in [a, a+eps)} against the
    quadratic variation, evaluated with left endpoints.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    xk = path.x[:-1]
    inside = (xk >= a) & (xk < a + eps)
    if not np.any(inside):
        return 0.0
    sig = coeffs.diffusion[coeffs.piece_of(xk[inside])]
    return float(np.sum(sig * sig) * path.dt / eps)


def threshold_occupation(path, level: float, eps: float, T: float) -> float:
    """Time spent within eps of a level over [0, T], exact on the representation.

    Grid paths count left endpoints; piecewise-constant cadlag paths are
    integrated segment-exactly.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if isinstance(path, SdeGridPath):
        steps = int(round(T / path.dt))
        if abs(steps * path.dt - T) > 1e-9 * max(T, 1.0) or steps > path.x.size - 1:
            raise ValueError("T must align with the grid and lie within it")
        xk = path.x[:steps]
        return float(np.count_nonzero(np.abs(xk - level) <= eps) * path.dt)
    if isinstance(path, CadlagPath):
        if path.is_linear:
            raise ValueError("exact occupation is defined for piecewise-constant paths")
        ends = np.append(path.times[1:], max(T, path.times[-1]))
        seg = np.clip(np.minimum(ends, T) - np.minimum(path.times, T), 0.0, None)
        return float(np.sum(seg * (np.abs(path.values - level) <= eps)))
    raise TypeError("expected an SdeGridPath or a piecewise-constant CadlagPath")


@dataclass(eq=False)
class SdeEnsemble:
    """Probe marginals and per-path accumulators for a batch of trajectories."""

    scheme: str
    dt: float
    probe_times: tuple[float, ...]
    x: np.ndarray
    boundary: np.ndarray
    occupation: dict
    local_time: dict
    n_paths: int
    master_seed: int

    def x_at(self, t: float) -> np.ndarray:
        return self.x[self.probe_times.index(t)]

    def boundary_at(self, t: float) -> np.ndarray:
        return self.boundary[self.probe_times.index(t)]


def _sde_chunk(args):
    """One vectorized chunk of paths; seeded by its absolute chunk index."""
    (coeffs, x0, dt, steps, size, seed_key, mirror, probe_idx,
     occupation_bands, local_time_bands) = args
    gen = make_stream(*seed_key)
    root_dt = math.sqrt(dt)
    thr, drift, sig = coeffs.thresholds, coeffs.drift, coeffs.diffusion

    x = np.full(size, float(x0))
    l = np.zeros(size)
    q = np.full(size, float(x0)) if mirror else None
    occ = [np.zeros(size) for _ in occupation_bands]
    lt = [np.zeros(size) for _ in local_time_bands]
    x_probe = {k: None for k in probe_idx}
    l_probe = {k: None for k in probe_idx}

    def record(k):
        if k in x_probe:
            x_probe[k] = x.copy()
            l_probe[k] = l.copy()

    record(0)
    for k in range(steps):
        piece = np.where(x == 0.0, 0, np.searchsorted(thr, x, side="left") + 1)
        bk = drift[piece]
        sk = sig[piece]
        for (lev, eps), acc in zip(occupation_bands, occ):
            acc += dt * (np.abs(x - lev) <= eps)
        for (a, eps), acc in zip(local_time_bands, lt):
            inside = (x >= a) & (x < a + eps)
            acc += inside * (sk * sk) * (dt / eps)
        dw = gen.standard_normal(size) * root_dt
        inc = bk * dt + sk * dw
        if mirror:
            sg = np.where(q > 0, 1.0, -1.0)
            q += sg * inc
            x_new = np.abs(q)
            l += x_new - x - inc
            x = x_new
        else:
            star = x + inc
            x = np.maximum(star, 0.0)
            l += np.maximum(-star, 0.0)
        record(k + 1)
    return x_probe, l_probe, occ, lt


def sde_chunk_plan(n_paths: int, chunk: int):
    """(chunk index, start, size) triples covering the ensemble."""
    plan = []
    lo = 0
    ci = 0
    while lo < n_paths:
        size = min(chunk, n_paths - lo)
        plan.append((ci, lo, size))
        lo += size
        ci += 1
    return plan


def sde_chunk_args(
    coeffs, x0, T, dt, master_seed, scheme, probe_times, occupation_bands, local_time_bands, size, ci
):
    """Argument tuple for one chunk; exposed so workers can run chunks directly."""
    if scheme not in _SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    steps, _ = _grid(T, dt)
    probe_idx = {}
    for p in probe_times:
        k = int(round(p / dt))
        if abs(k * dt - p) > 1e-9 * max(T, 1.0) or not 0 <= k <= steps:
            raise ValueError(f"probe time {p} does not sit on the grid")
        probe_idx[k] = p
    seed_key = (master_seed, _SDE_TAG, _SCHEMES[scheme], ci)
    return (
        coeffs, x0, dt, steps, size, seed_key, scheme == "mirror", probe_idx,
        tuple(occupation_bands), tuple(local_time_bands),
    )


def run_sde_ensemble(
    coeffs: CoefficientField,
    x0: float,
    T: float,
    dt: float,
    n_paths: int,
    master_seed: int,
    scheme: str = "projected",
    probe_times=(None,),
    occupation_bands=(),
    local_time_bands=(),
    chunk: int = 8192,
    pool=None,
) -> SdeEnsemble:
    """Batch of paths reduced to probe marginals and per-path accumulators.

    Chunks are seeded by their absolute index, so results do not depend on how
    chunks are distributed over workers (pass a multiprocessing pool to spread
    them).  Occupation bands are (level, eps) pairs integrated over [0, T];
    local-time bands are (a, eps) pairs for the boundary estimator.  Full
    trajectories are never stored.
    """
    probe_times = tuple(T if p is None else float(p) for p in probe_times)
    plan = sde_chunk_plan(n_paths, chunk)
    args = [
        sde_chunk_args(
            coeffs, x0, T, dt, master_seed, scheme, probe_times,
            occupation_bands, local_time_bands, size, ci,
        )
        for ci, _, size in plan
    ]
    results = pool.map(_sde_chunk, args) if pool is not None else map(_sde_chunk, args)

    key_of: dict[int, list[int]] = {}
    for row, p in enumerate(probe_times):
        key_of.setdefault(int(round(p / dt)), []).append(row)
    x_out = np.empty((len(probe_times), n_paths))
    l_out = np.empty((len(probe_times), n_paths))
    occ_out = {band: np.empty(n_paths) for band in occupation_bands}
    lt_out = {band: np.empty(n_paths) for band in local_time_bands}
    for (ci, lo, size), (x_probe, l_probe, occ, lt) in zip(plan, results):
        for k, rows in key_of.items():
            for row in rows:
                x_out[row, lo : lo + size] = x_probe[k]
                l_out[row, lo : lo + size] = l_probe[k]
        for band, acc in zip(occupation_bands, occ):
            occ_out[band][lo : lo + size] = acc
        for band, acc in zip(local_time_bands, lt):
            lt_out[band][lo : lo + size] = acc

    return SdeEnsemble(
        scheme=scheme,
        dt=dt,
        probe_times=probe_times,
        x=x_out,
        boundary=l_out,
        occupation=occ_out,
        local_time=lt_out,
        n_paths=n_paths,
        master_seed=master_seed,
    )
