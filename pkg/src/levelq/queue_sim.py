"""Event-driven simulation of the level-dependent single-server queue.

The queue length X moves on the integers.  Two clocks U, V advance at the
rates attached to the level X currently occupies (the service clock is frozen
at rate 0 while X = 0); an arrival fires when U reaches the next arrival
epoch, a departure when V reaches the next service epoch.  Both clocks are
piecewise linear in wall time, so inside a stretch of levels with identical
rates whole blocks of events can be generated at once and scanned with numpy;
only boundary crossings and the horizon end a stretch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .distributions import EpochSequence, RenewalSpec
from .reflection import CadlagPath

__all__ = [
    "LevelStructure",
    "ScaledSystem",
    "QueuePath",
    "ScaledPath",
    "scale_system",
    "simulate_queue",
    "occupation_times",
    "diffusion_scale",
    "verify_flow_balance",
]

_INT_INF = np.iinfo(np.int64).max // 4


@dataclass(frozen=True, eq=False)
class LevelStructure:
    """Limit-regime parameters: thresholds, critically loaded rates, perturbations.

    ``thresholds`` are the K-1 interior boundaries (the origin is always its
    own level); ``lam`` and ``mu`` are the per-level base rates, which must
    agree (critical load); ``lam_hat``/``mu_hat`` are the second-order rate
    perturbations and ``lam0`` the arrival rate on the empty state.
    """

    thresholds: np.ndarray
    lam: np.ndarray
    mu: np.ndarray
    lam_hat: np.ndarray
    mu_hat: np.ndarray
    lam0: float

    def __post_init__(self):
        for name in ("thresholds", "lam", "mu", "lam_hat", "mu_hat"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        k = self.lam.size
        if k < 2:
            raise ValueError("need at least two levels")
        if self.thresholds.size != k - 1:
            raise ValueError("thresholds must have one entry fewer than the rate lists")
        if np.any(self.thresholds <= 0) or np.any(np.diff(self.thresholds) <= 0):
            raise ValueError("thresholds must be positive and strictly increasing")
        if self.mu.size != k or self.lam_hat.size != k or self.mu_hat.size != k:
            raise ValueError("rate lists must share one length")
        if np.any(self.lam <= 0):
            raise ValueError("base rates must be positive")
        if not np.array_equal(self.lam, self.mu):
            raise ValueError("critical load violated: lam[i] must equal mu[i] on every level")
        if self.lam0 <= 0:
            raise ValueError("lam0 must be positive")

    @property
    def K(self) -> int:
        return self.lam.size

    @property
    def drift(self) -> np.ndarray:
        """Per-level drift of the limit: lam_hat - mu_hat."""
        return self.lam_hat - self.mu_hat


@dataclass(frozen=True, eq=False)
class ScaledSystem:
    """The n-th system: integer thresholds ~ sqrt(n), rates ~ n.

    ``lam_n`` and ``mu_n`` have length K+1 with index 0 attached to the empty
    state (mu_n[0] = 0).
    """

    levels: LevelStructure
    n: int
    thresholds_n: np.ndarray
    lam_n: np.ndarray
    mu_n: np.ndarray

    @property
    def lam_bar0(self) -> float:
        return self.lam_n[0] / self.n

    def level_of(self, x):
        """Index of the partition piece holding queue length x."""
        x = np.asarray(x)
        lev = np.searchsorted(self.thresholds_n, x, side="left") + 1
        out = np.where(x == 0, 0, lev)
        return out if out.shape else int(out)


def scale_system(levels: LevelStructure, n: int) -> ScaledSystem:
    """Scale the limit parameters to the n-th system (o(1) terms set to zero)."""
    if n < 1:
        raise ValueError("n must be a positive integer")
    root = math.sqrt(n)
    thr = np.ceil(root * levels.thresholds).astype(np.int64)
    if np.any(thr <= 0) or (thr.size > 1 and np.any(np.diff(thr) <= 0)):
        raise ValueError(f"scaled thresholds collide for n={n}: {thr.tolist()}")
    lam_n = np.concatenate(([n * levels.lam0], n * levels.lam + root * levels.lam_hat))
    mu_n = np.concatenate(([0.0], n * levels.mu + root * levels.mu_hat))
    for i in range(1, levels.K + 1):
        if lam_n[i] <= 0:
            raise ValueError(
                f"lam_n[{i}] = {lam_n[i]} is not positive for n={n}; adjust lam_hat[{i}]"
            )
        if mu_n[i] <= 0:
            raise ValueError(
                f"mu_n[{i}] = {mu_n[i]} is not positive for n={n}; adjust mu_hat[{i}]"
            )
    return ScaledSystem(levels, int(n), thr, lam_n, mu_n)


@dataclass(eq=False)
class QueuePath:
    """Event log of one simulated system plus everything needed to replay it.

    Row 0 is the initial state at time 0 and, unless an event lands exactly on
    the horizon, a closing row at the horizon repeats the final state; both
    carry d_arrival = d_departure = 0.  ``occupation[k]`` is the per-level
    occupation vector at ``times[k]`` and ``level[k]`` the level occupied on
    [times[k], times[k+1]).
    """

    system: ScaledSystem
    horizon: float
    times: np.ndarray
    d_arrival: np.ndarray
    d_departure: np.ndarray
    queue: np.ndarray
    arrivals: np.ndarray
    departures: np.ndarray
    u_clock: np.ndarray
    v_clock: np.ndarray
    level: np.ndarray
    occupation: np.ndarray
    arrival_epochs: EpochSequence
    service_epochs: EpochSequence
    arrival_spec: RenewalSpec
    service_spec: RenewalSpec

    @property
    def arrivals_total(self) -> int:
        return int(self.arrivals[-1])

    @property
    def departures_total(self) -> int:
        return int(self.departures[-1])

    def index_at(self, t):
        t = np.asarray(t)
        if np.any(t < 0) or np.any(t > self.horizon):
            raise ValueError("query time outside [0, horizon]")
        return np.maximum(np.searchsorted(self.times, t, side="right") - 1, 0)

    def queue_at(self, t):
        return self.queue[self.index_at(t)]

    def arrivals_at(self, t):
        return self.arrivals[self.index_at(t)]

    def departures_at(self, t):
        return self.departures[self.index_at(t)]

    def clocks_at(self, t):
        k = self.index_at(t)
        lev = self.level[k]
        gap = np.asarray(t) - self.times[k]
        u = self.u_clock[k] + self.system.lam_n[lev] * gap
        v = self.v_clock[k] + self.system.mu_n[lev] * gap
        return u, v

    def occupation_at(self, t):
        k = int(self.index_at(t))
        out = self.occupation[k].copy()
        out[self.level[k]] += float(t) - self.times[k]
        return out

    def residuals_at(self, t):
        """Residual times of the two driving renewal streams at the current clocks."""
        u, v = self.clocks_at(t)
        a = self.arrivals_at(t)
        d = self.departures_at(t)
        return self.arrival_epochs.epochs[a] - u, self.service_epochs.epochs[d] - v


@dataclass(frozen=True, eq=False)
class ScaledPath:
    """Diffusion-scaled queue, idleness and netput paths (see diffusion_scale)."""

    n: int
    xhat: CadlagPath
    ihat: CadlagPath
    yhat: CadlagPath


def _regimes(system: ScaledSystem):
    """Maximal runs of levels >= 1 sharing (lam_n, mu_n): upper bounds and rates."""
    K = system.levels.K
    thr = system.thresholds_n
    bounds, lam, mu = [], [], []
    start = 1
    for i in range(1, K + 1):
        if i < K and system.lam_n[i + 1] == system.lam_n[i] and system.mu_n[i + 1] == system.mu_n[i]:
            continue
        bounds.append(thr[i - 1] if i < K else _INT_INF)
        lam.append(system.lam_n[start])
        mu.append(system.mu_n[start])
        start = i + 1
    return np.asarray(bounds, dtype=np.int64), np.asarray(lam), np.asarray(mu)


def simulate_queue(
    system: ScaledSystem,
    arrival: RenewalSpec,
    service: RenewalSpec,
    horizon: float,
    streams,
    epoch_block: int = 8192,
    block0: int = 64,
    block_growth: int = 4,
) -> QueuePath:
    """Run the n-th system on [0, horizon] started empty.

    ``streams`` is a pair of independent generators, one per renewal source.
    A simultaneous arrival and departure (exact wall-clock tie) is recorded as
    a single combined event with both increments set and the queue unchanged;
    the level seen by the rates after any event is that of the post-event
    queue length.
    """
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    gen_a, gen_s = streams
    arr = EpochSequence(arrival, gen_a, epoch_block)
    svc = EpochSequence(service, gen_s, epoch_block)

    K = system.levels.K
    lam_n = system.lam_n
    reg_hi, reg_lam, reg_mu = _regimes(system)

    t, u, v = 0.0, 0.0, 0.0
    x, ka, kd = 0, 0, 0
    occ = np.zeros(K + 1)
    chunks: list[tuple] = []

    while t < horizon:
        if x == 0:
            # server frozen: the only candidate is the next arrival
            lam0 = lam_n[0]
            arr.ensure_count(ka + 2)
            wall = t + (arr.epochs[ka] - u) / lam0
            if wall > horizon:
                occ[0] += horizon - t
                u = min(u + lam0 * (horizon - t), np.nextafter(arr.epochs[ka], -np.inf))
                t = horizon
                break
            occ[0] += wall - t
            t = wall
            u = float(arr.epochs[ka])
            ka += 1
            x = 1
            chunks.append((
                np.array([t]), np.ones(1, np.uint8), np.zeros(1, np.uint8),
                np.array([1], np.int64), np.array([ka], np.int64), np.array([kd], np.int64),
                np.array([u]), np.array([v]),
                np.array([system.level_of(1)], np.int64), occ.copy()[None, :],
            ))
            continue

        # busy regime stretch containing x
        r = int(np.searchsorted(reg_hi, x, side="left"))
        lam, mu = float(reg_lam[r]), float(reg_mu[r])
        lo = 0 if r == 0 else int(reg_hi[r - 1])
        hi = int(reg_hi[r])
        t0, u0, v0 = t, u, v
        m = block0
        while True:
            arr.ensure_count(ka + m + 1)
            svc.ensure_count(kd + m + 1)
            wall_a = t0 + (arr.epochs[ka : ka + m] - u0) / lam
            wall_d = t0 + (svc.epochs[kd : kd + m] - v0) / mu
            a_open = wall_a[-1] <= horizon
            d_open = wall_d[-1] <= horizon

            # merge the two strictly increasing candidate lists; exact wall
            # ties become single combined events
            pos = np.searchsorted(wall_d, wall_a)
            tie_a = np.zeros(wall_a.size, dtype=bool)
            inside = pos < wall_d.size
            tie_a[inside] = wall_d[pos[inside]] == wall_a[inside]
            keep_d = np.ones(wall_d.size, dtype=bool)
            keep_d[pos[tie_a]] = False
            wd = wall_d[keep_d]
            total = wall_a.size + wd.size
            at = np.searchsorted(wd, wall_a, side="left") + np.arange(wall_a.size)
            dt_pos = np.searchsorted(wall_a, wd, side="right") + np.arange(wd.size)
            times = np.empty(total)
            da = np.zeros(total, dtype=np.uint8)
            dd = np.zeros(total, dtype=np.uint8)
            times[at] = wall_a
            times[dt_pos] = wd
            da[at] = 1
            dd[at] = tie_a
            dd[dt_pos] = 1

            # rows are trustworthy only up to the shorter candidate stream
            cut = min(horizon, float(wall_a[-1]), float(wall_d[-1]))
            keep = int(np.searchsorted(times, cut, side="right"))
            times, da, dd = times[:keep], da[:keep], dd[:keep]

            x_after = x + np.cumsum(da.astype(np.int64) - dd.astype(np.int64))
            exit_mask = (x_after > hi) | (x_after <= lo)
            exiting = bool(exit_mask.any())

            if not exiting and (a_open or d_open):
                m *= block_growth
                continue

            take = int(np.argmax(exit_mask)) + 1 if exiting else times.size
            if take > 0:
                tt = times[:take]
                ta, td = da[:take], dd[:take]
                xs = x_after[:take]
                aa = ka + np.cumsum(ta.astype(np.int64))
                dds = kd + np.cumsum(td.astype(np.int64))
                uu = u0 + lam * (tt - t0)
                vv = v0 + mu * (tt - t0)
                is_a = ta == 1
                is_d = td == 1
                # clocks hit their epochs exactly at their own events and can
                # never have passed the next epoch in between
                uu[is_a] = arr.epochs[aa[is_a] - 1]
                vv[is_d] = svc.epochs[dds[is_d] - 1]
                next_a = arr.epochs[aa]
                bad = ~is_a & (uu >= next_a)
                if np.any(bad):
                    uu[bad] = np.nextafter(next_a[bad], -np.inf)
                next_d = svc.epochs[dds]
                bad = ~is_d & (vv >= next_d)
                if np.any(bad):
                    vv[bad] = np.nextafter(next_d[bad], -np.inf)

                # occupation splits by the level occupied on each inter-event
                # segment, i.e. the level before the row's event
                lev_prev = np.asarray(
                    system.level_of(np.concatenate(([x], xs[:-1]))), dtype=np.int64
                )
                gaps = tt - np.concatenate(([t0], tt[:-1]))
                hh = np.tile(occ, (take, 1))
                for lv in np.unique(lev_prev):
                    hh[:, lv] = occ[lv] + np.cumsum(np.where(lev_prev == lv, gaps, 0.0))
                lev_after = np.asarray(system.level_of(xs), dtype=np.int64)
                chunks.append((tt, ta, td, xs, aa, dds, uu, vv, lev_after, hh))

                t, u, v = float(tt[-1]), float(uu[-1]), float(vv[-1])
                x, ka, kd = int(xs[-1]), int(aa[-1]), int(dds[-1])
                occ = hh[-1].copy()

            if exiting:
                break
            # stretch reaches the horizon: close out occupation and clocks
            lev = int(system.level_of(x))
            occ[lev] += horizon - t
            u = min(u0 + lam * (horizon - t0), np.nextafter(arr.epochs[ka], -np.inf))
            v = min(v0 + mu * (horizon - t0), np.nextafter(svc.epochs[kd], -np.inf))
            t = horizon
            break

    # assemble: initial row, event rows, closing row at the horizon
    times = np.concatenate([np.zeros(1)] + [c[0] for c in chunks])
    da = np.concatenate([np.zeros(1, np.uint8)] + [c[1] for c in chunks])
    dd = np.concatenate([np.zeros(1, np.uint8)] + [c[2] for c in chunks])
    xs = np.concatenate([np.zeros(1, np.int64)] + [c[3] for c in chunks])
    aa = np.concatenate([np.zeros(1, np.int64)] + [c[4] for c in chunks])
    dds = np.concatenate([np.zeros(1, np.int64)] + [c[5] for c in chunks])
    uu = np.concatenate([np.zeros(1)] + [c[6] for c in chunks])
    vv = np.concatenate([np.zeros(1)] + [c[7] for c in chunks])
    lev = np.concatenate([np.zeros(1, np.int64)] + [c[8] for c in chunks])
    hh = np.concatenate([np.zeros((1, K + 1))] + [c[9] for c in chunks], axis=0)

    if times[-1] < horizon:
        times = np.append(times, horizon)
        da = np.append(da, 0)
        dd = np.append(dd, 0)
        xs = np.append(xs, xs[-1])
        aa = np.append(aa, aa[-1])
        dds = np.append(dds, dds[-1])
        uu = np.append(uu, u)
        vv = np.append(vv, v)
        lev = np.append(lev, lev[-1])
        hh = np.vstack((hh, occ))

    # sub-ulp epoch gaps can collide in float wall time; nudge duplicates so
    # the breakpoint sequence stays strictly increasing
    if np.any(np.diff(times) <= 0):
        for i in range(1, times.size):
            if times[i] <= times[i - 1]:
                times[i] = np.nextafter(times[i - 1], np.inf)

    arr.ensure_count(int(aa[-1]) + 1)
    svc.ensure_count(int(dds[-1]) + 1)
    return QueuePath(
        system=system,
        horizon=float(horizon),
        times=times,
        d_arrival=da,
        d_departure=dd,
        queue=xs,
        arrivals=aa,
        departures=dds,
        u_clock=uu,
        v_clock=vv,
        level=lev,
        occupation=hh,
        arrival_epochs=arr,
        service_epochs=svc,
        arrival_spec=arrival,
        service_spec=service,
    )


def occupation_times(path: QueuePath, t: float) -> np.ndarray:
    """Per-level occupation vector H(t); the components sum to t."""
    if t > path.horizon:
        raise ValueError("query beyond the simulated horizon")
    return path.occupation_at(t)


def diffusion_scale(path: QueuePath, system: ScaledSystem) -> ScaledPath:
    """Diffusion-scaled triple (xhat, ihat, yhat = xhat - ihat).

    xhat is the queue over sqrt(n), ihat the idleness blown up by
    sqrt(n) * lam_bar0, and yhat their difference, the netput whose
    reflection reproduces the pair.
    """
    if path.system is not system:
        same = path.system.n == system.n and np.array_equal(
            path.system.lam_n, system.lam_n
        ) and np.array_equal(path.system.mu_n, system.mu_n)
        if not same:
            raise ValueError("path was not produced under the given system")
    n = system.n
    root = math.sqrt(n)
    scale_i = root * system.lam_bar0
    xv = path.queue / root
    iv = scale_i * path.occupation[:, 0]
    islope = scale_i * (path.level == 0)
    xhat = CadlagPath(path.times, xv, None)
    ihat = CadlagPath(path.times, iv, islope)
    yhat = CadlagPath(path.times, xv - iv, -islope)
    return ScaledPath(n=n, xhat=xhat, ihat=ihat, yhat=yhat)


def verify_flow_balance(path: QueuePath) -> float:
    """Max defect of X = A - D and of the counters against their increments."""
    x_defect = np.abs(path.queue - (path.arrivals - path.departures))
    a_defect = np.abs(path.arrivals - np.cumsum(path.d_arrival.astype(np.int64)))
    d_defect = np.abs(path.departures - np.cumsum(path.d_departure.astype(np.int64)))
    return float(max(x_defect.max(initial=0), a_defect.max(initial=0), d_defect.max(initial=0)))
