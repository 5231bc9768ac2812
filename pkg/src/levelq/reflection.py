"""Cadlag path algebra and the one-sided reflection map on the half line.

Paths are represented by their breakpoints and are either piecewise constant
or piecewise linear (with jumps allowed at breakpoints in both cases).  The
reflection map, the complementarity integral and the path functionals are all
computed segment-exactly from the breakpoints; no evaluation grid is ever
introduced.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "CadlagPath",
    "piecewise_constant",
    "piecewise_linear",
    "path_add",
    "path_sub",
    "sup_norm_diff",
    "skorokhod_map",
    "complementarity_defect",
    "path_functionals",
]


@dataclass(frozen=True)
class CadlagPath:
    """Right-continuous path with left limits on [0, infinity).

    ``times`` are strictly increasing breakpoints starting at 0, ``values``
    holds the right value at each breakpoint, and ``slopes`` the per-segment
    slope (``None`` marks a piecewise-constant path).  The final segment
    extends beyond the last breakpoint with its own slope.
    """

    times: np.ndarray
    values: np.ndarray
    slopes: np.ndarray | None = None

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)
        if self.slopes is not None:
            slopes = np.asarray(self.slopes, dtype=float)
            object.__setattr__(self, "slopes", slopes)
            if slopes.shape != times.shape:
                raise ValueError("slopes must match breakpoints")
        if times.ndim != 1 or times.size == 0:
            raise ValueError("need at least one breakpoint")
        if times[0] != 0.0:
            raise ValueError("breakpoints must start at 0")
        if times.size > 1 and not np.all(np.diff(times) > 0):
            raise ValueError("breakpoints must be strictly increasing")
        if values.shape != times.shape:
            raise ValueError("values must match breakpoints")

    @property
    def is_linear(self) -> bool:
        return self.slopes is not None

    def segment_index(self, t):
        """Index of the segment containing t (right-continuous convention)."""
        return np.maximum(np.searchsorted(self.times, t, side="right") - 1, 0)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < 0):
            raise ValueError("paths are defined on t >= 0")
        k = self.segment_index(t)
        out = self.values[k]
        if self.slopes is not None:
            out = out + self.slopes[k] * (t - self.times[k])
        return out if out.shape else float(out)

    def left_limit(self, t):
        """Value at t-, for t > 0."""
        t = np.asarray(t, dtype=float)
        if np.any(t <= 0):
            raise ValueError("left limits need t > 0")
        k = np.maximum(np.searchsorted(self.times, t, side="left") - 1, 0)
        out = self.values[k]
        if self.slopes is not None:
            out = out + self.slopes[k] * (t - self.times[k])
        return out if out.shape else float(out)

    def jumps(self):
        """Jump times and sizes, with the convention that the jump at 0 is the value there."""
        if self.times.size == 1:
            return self.times[:1], self.values[:1]
        left = self.values[:-1].copy()
        if self.slopes is not None:
            left += self.slopes[:-1] * np.diff(self.times)
        sizes = np.concatenate(([self.values[0]], self.values[1:] - left))
        return self.times, sizes


def piecewise_constant(times, values) -> CadlagPath:
    return CadlagPath(np.asarray(times, float), np.asarray(values, float), None)


def piecewise_linear(times, values, slopes) -> CadlagPath:
    return CadlagPath(
        np.asarray(times, float), np.asarray(values, float), np.asarray(slopes, float)
    )


def _merged_times(p: CadlagPath, q: CadlagPath) -> np.ndarray:
    return np.union1d(p.times, q.times)


def _resample(p: CadlagPath, times: np.ndarray):
    """Values and slopes of p on a refinement of its breakpoint set."""
    k = p.segment_index(times)
    values = p.values[k]
    if p.slopes is None:
        slopes = np.zeros_like(values)
    else:
        values = values + p.slopes[k] * (times - p.times[k])
        slopes = p.slopes[k]
    return values, slopes


def path_add(p: CadlagPath, q: CadlagPath) -> CadlagPath:
    times = _merged_times(p, q)
    vp, sp = _resample(p, times)
    vq, sq = _resample(q, times)
    if p.slopes is None and q.slopes is None:
        return CadlagPath(times, vp + vq, None)
    return CadlagPath(times, vp + vq, sp + sq)


def path_sub(p: CadlagPath, q: CadlagPath) -> CadlagPath:
    times = _merged_times(p, q)
    vp, sp = _resample(p, times)
    vq, sq = _resample(q, times)
    if p.slopes is None and q.slopes is None:
        return CadlagPath(times, vp - vq, None)
    return CadlagPath(times, vp - vq, sp - sq)


def sup_norm_diff(p: CadlagPath, q: CadlagPath, T: float) -> float:
    """sup over [0, T] of |p - q|, exact on the merged breakpoints."""
    return path_functionals(path_sub(p, q), T, T)[0]


def _segment_minima(path: CadlagPath):
    """Per-segment start values and end left-limits (the last segment is open)."""
    a = path.values
    if path.times.size == 1:
        return a, a.copy()
    gaps = np.diff(path.times)
    end = a[:-1].copy()
    if path.slopes is not None:
        end += path.slopes[:-1] * gaps
    return a, np.concatenate((end, a[-1:]))


def skorokhod_map(psi: CadlagPath) -> tuple[CadlagPath, CadlagPath]:
    """Reflect psi at 0: returns (phi, eta) with eta(t) = sup_{s<=t} psi(s)^-.

    phi = psi + eta is nonnegative, eta is nondecreasing with eta(0) = 0, and
    eta increases only where phi sits at 0.  Piecewise-linear segments are
    handled analytically: a linear piece attains its minimum at an endpoint,
    and the time at which it first reaches the running minimum is solved in
    closed form, so the output breakpoints are exact.
    """
    if psi.values[0] < 0:
        raise ValueError("reflection input must start nonnegative")

    times = psi.times
    a = psi.values
    m = times.size
    slopes = psi.slopes if psi.slopes is not None else np.zeros(m)

    start, end = _segment_minima(psi)
    seg_min = np.minimum(start, end)
    # running minimum strictly before each segment, then including its start
    before = np.concatenate(([np.inf], np.minimum.accumulate(seg_min)[:-1]))
    at_start = np.minimum(before, a)
    eta_at = np.maximum(0.0, -at_start)

    # level that eta tracks inside segment j, and the time it is first hit
    floor = np.minimum(at_start, 0.0)
    gaps = np.concatenate((np.diff(times), [np.inf]))
    descending = slopes < 0
    # a descending final segment always reaches the floor eventually
    reaches = descending.copy()
    reaches[:-1] &= end[:-1] < floor[:-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        hit = np.where(reaches, times + (floor - a) / np.where(slopes == 0, 1.0, slopes), np.inf)
    hit = np.where(reaches, np.maximum(hit, times), np.inf)

    # a hit at the segment start means eta rises from the breakpoint itself
    immediate = reaches & (hit <= times)
    interior = reaches & (hit > times) & (hit < times + gaps)

    eta_slope_seg = np.where(immediate, -slopes, 0.0)

    n_extra = int(np.count_nonzero(interior))
    total = m + n_extra
    out_t = np.empty(total)
    out_v = np.empty(total)
    out_s = np.empty(total)
    counts = 1 + interior.astype(np.intp)
    pos = np.concatenate(([0], np.cumsum(counts)))[:-1]
    out_t[pos] = times
    out_v[pos] = eta_at
    out_s[pos] = eta_slope_seg
    if n_extra:
        ip = pos[interior] + 1
        out_t[ip] = hit[interior]
        out_v[ip] = -floor[interior]
        out_s[ip] = -slopes[interior]

    if psi.slopes is None:
        eta = CadlagPath(out_t, out_v, None)
    else:
        eta = CadlagPath(out_t, out_v, out_s)
    phi = path_add(psi, eta)
    return phi, eta


def complementarity_defect(phi: CadlagPath, eta: CadlagPath, T: float) -> float:
    """Stieltjes integral of phi against d(eta) over [0, T], segment-exact.

    Jumps of eta (including the one at time 0 when eta(0) > 0) contribute
    phi(t) * jump; linear growth contributes rate * integral of phi over the
    segment, evaluated in closed form.
    """
    times = _merged_times(phi, eta)
    times = times[times <= T]
    if times.size == 0 or times[-1] < T:
        times = np.append(times, T)
    vp, sp = _resample(phi, times)
    ve, se = _resample(eta, times)
    if np.any(np.diff(ve) < -1e-12 * (1.0 + np.abs(ve[:-1]))) or np.any(se < -1e-12):
        raise ValueError("eta must be nondecreasing")

    gaps = np.diff(times)
    # continuous part on [t_k, t_{k+1})
    cont = se[:-1] * (vp[:-1] * gaps + 0.5 * sp[:-1] * gaps * gaps)
    # jumps of eta at interior merged breakpoints and at 0
    left = ve[:-1] + se[:-1] * gaps
    jump = np.concatenate(([ve[0]], ve[1:] - left))
    total = float(np.sum(cont) + np.sum(vp * jump))
    return total


def path_functionals(xi: CadlagPath, T: float, delta: float) -> tuple[float, float]:
    """Sup norm over [0, T] and the modulus of continuity at scale delta.

    Both are computed exactly from the breakpoints.  For the modulus, the
    extremal pair of times has each point at a breakpoint, at a left limit, at
    T, or at distance exactly delta from one of these, so a finite candidate
    set suffices.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    if delta > T:
        raise ValueError("delta cannot exceed the horizon")

    keep = xi.times <= T
    bp = xi.times[keep]
    cand_t = [bp, np.array([T])]
    cand_v = [xi(bp) * np.ones(bp.size), np.atleast_1d(xi(T))]
    interior = bp[bp > 0]
    if interior.size:
        cand_t.append(interior)
        cand_v.append(np.atleast_1d(xi.left_limit(interior)))
    base_t = np.concatenate(cand_t)
    shifted = np.unique(np.clip(np.concatenate((base_t + delta, base_t - delta)), 0.0, T))
    cand_t.append(shifted)
    cand_v.append(np.atleast_1d(xi(shifted)))
    t = np.concatenate(cand_t)
    v = np.concatenate(cand_v)

    order = np.argsort(t, kind="stable")
    t, v = t[order], v[order]
    sup = float(np.max(np.abs(v)))

    lo = np.searchsorted(t, t - delta, side="left")
    w = 0.0
    for i in range(t.size):
        if lo[i] < i:
            window = v[lo[i] : i + 1]
            w = max(w, float(window.max() - v[i]), float(v[i] - window.min()))
    return sup, w
