"""Experiment configuration, seeding policy and parallel ensemble running.

Replication r of the queue draws its two renewal streams from the keys
(master_seed, r, 0) and (master_seed, r, 1); diffusion chunks use a three-part
key (see sde).  Reductions happen inside the workers, are keyed by replication
index and are reassembled in index order, so results are independent of the
worker count.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from multiprocessing import Pool

import numpy as np

from . import analysis, sde
from .decomposition import build_record, verify_dm_identity
from .distributions import RenewalSpec, make_renewal_spec, make_stream
from .queue_sim import LevelStructure, scale_system, simulate_queue, verify_flow_balance

__all__ = [
    "ExperimentConfig",
    "QueueEnsemble",
    "reference_config",
    "reference_sigma_config",
    "run_queue_ensemble",
    "run_sde_ensemble_parallel",
    "compare_run",
    "render_report_text",
]

TOOL_VERSION = "levelq 0.1.0"


def reference_config() -> dict:
    """Two levels, drift discontinuous at the first threshold, Markov inputs."""
    return {
        "levels": {
            "thresholds": [1.0],
            "lam": [1.0, 1.0],
            "mu": [1.0, 1.0],
            "lam_hat": [0.0, 0.0],
            "mu_hat": [1.0, 2.0],
            "lam0": 1.0,
        },
        "arrival_dist": {"family": "exponential", "params": []},
        "service_dist": {"family": "exponential", "params": []},
        "n_grid": [100, 10000],
        "horizon": 5.0,
        "replications": 4000,
        "sde_dt": 1e-4,
        "sde_paths": 4000,
        "probe_times": [2.5, 5.0],
        "martingale_probes": [2.0, 5.0],
        "master_seed": 42,
        "ks_threshold": 0.06,
        "boundary_tol": 0.1,
        "workers": 2,
        "export_paths": 4,
        "out_dir": "out",
    }


def reference_sigma_config() -> dict:
    """Variant with unequal per-level rates, so the diffusion coefficient jumps."""
    cfg = reference_config()
    cfg["levels"]["lam"] = [1.0, 4.0]
    cfg["levels"]["mu"] = [1.0, 4.0]
    return cfg


_REQUIRED = (
    "levels", "arrival_dist", "service_dist", "n_grid", "horizon",
    "replications", "sde_dt", "sde_paths", "probe_times",
    "martingale_probes", "master_seed",
)


@dataclass(eq=False)
class ExperimentConfig:
    """Validated experiment description plus the hash of its raw form."""

    levels: LevelStructure
    arrival: RenewalSpec
    service: RenewalSpec
    n_grid: tuple[int, ...]
    horizon: float
    replications: int
    sde_dt: float
    sde_paths: int
    probe_times: tuple[float, ...]
    martingale_probes: tuple[float, float]
    master_seed: int
    ks_threshold: float = 0.06
    boundary_tol: float = 0.1
    workers: int = 1
    export_paths: int = 4
    out_dir: str = "out"
    raw: dict = field(default_factory=dict)

    @property
    def config_hash(self) -> str:
        # runtime knobs do not define the experiment: the same (config, seed)
        # must hash identically at any worker count or output location
        canon = {k: v for k, v in self.raw.items() if k not in ("workers", "out_dir")}
        blob = json.dumps(canon, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        for key in _REQUIRED:
            if key not in raw:
                raise ValueError(f"config key missing: {key}")

        def ctx(key, fn, *args):
            try:
                return fn(*args)
            except (ValueError, TypeError, KeyError) as exc:
                raise ValueError(f"config key {key}: {exc}") from exc

        lv = raw["levels"]
        levels = ctx(
            "levels",
            lambda: LevelStructure(
                thresholds=lv["thresholds"], lam=lv["lam"], mu=lv["mu"],
                lam_hat=lv["lam_hat"], mu_hat=lv["mu_hat"], lam0=float(lv["lam0"]),
            ),
        )
        arrival = ctx(
            "arrival_dist",
            lambda: make_renewal_spec(raw["arrival_dist"]["family"], raw["arrival_dist"].get("params", ())),
        )
        service = ctx(
            "service_dist",
            lambda: make_renewal_spec(raw["service_dist"]["family"], raw["service_dist"].get("params", ())),
        )
        n_grid = tuple(int(n) for n in raw["n_grid"])
        if not n_grid or any(n < 1 for n in n_grid):
            raise ValueError("config key n_grid: need positive system sizes")
        horizon = float(raw["horizon"])
        if horizon <= 0:
            raise ValueError("config key horizon: must be positive")
        reps = int(raw["replications"])
        if reps < 2:
            raise ValueError("config key replications: need at least 2")
        sde_dt = float(raw["sde_dt"])
        if sde_dt <= 0 or sde_dt > horizon:
            raise ValueError("config key sde_dt: must lie in (0, horizon]")
        sde_paths = int(raw["sde_paths"])
        if sde_paths < 2:
            raise ValueError("config key sde_paths: need at least 2")
        probes = tuple(float(p) for p in raw["probe_times"])
        if any(p <= 0 or p > horizon for p in probes):
            raise ValueError("config key probe_times: probes must lie in (0, horizon]")
        mart = tuple(float(p) for p in raw["martingale_probes"])
        if len(mart) != 2 or not mart[0] < mart[1] <= horizon:
            raise ValueError("config key martingale_probes: need s < t <= horizon")
        # scaled rates must stay positive at every n in the grid
        for n in n_grid:
            ctx("n_grid", scale_system, levels, n)
        return cls(
            levels=levels,
            arrival=arrival,
            service=service,
            n_grid=n_grid,
            horizon=horizon,
            replications=reps,
            sde_dt=sde_dt,
            sde_paths=sde_paths,
            probe_times=probes,
            martingale_probes=(mart[0], mart[1]),
            master_seed=int(raw["master_seed"]),
            ks_threshold=float(raw.get("ks_threshold", 0.06)),
            boundary_tol=float(raw.get("boundary_tol", 0.1)),
            workers=int(raw.get("workers", 1)),
            export_paths=int(raw.get("export_paths", 4)),
            out_dir=str(raw.get("out_dir", "out")),
            raw=dict(raw),
        )


def replication_streams(master_seed: int, replication: int):
    """The (arrival, service) generator pair owned by one replication."""
    return make_stream(master_seed, replication, 0), make_stream(master_seed, replication, 1)


@dataclass(eq=False)
class QueueEnsemble:
    """Per-replication reductions of one batch of queue runs."""

    n: int
    horizon: float
    replications: int
    master_seed: int
    collect_times: tuple[float, ...]
    xhat: np.ndarray
    ihat: np.ndarray
    m: np.ndarray
    qv: np.ndarray
    pqv: np.ndarray
    err_arrival: np.ndarray
    occupation: np.ndarray
    sup_err_arrival: np.ndarray
    sup_err: np.ndarray
    max_cross: np.ndarray
    dm_defect: np.ndarray
    flow_defect: np.ndarray
    arrivals_end: np.ndarray

    def _row(self, t: float) -> int:
        return self.collect_times.index(float(t))

    def xhat_at(self, t):
        return self.xhat[self._row(t)]

    def ihat_at(self, t):
        return self.ihat[self._row(t)]

    def m_at(self, t):
        return self.m[self._row(t)]

    def qv_at(self, t):
        return self.qv[self._row(t)]

    def pqv_at(self, t):
        return self.pqv[self._row(t)]

    def err_arrival_at(self, t):
        return self.err_arrival[self._row(t)]

    def occupation_at(self, t):
        return self.occupation[self._row(t)]


def _queue_chunk(args):
    (levels, arrival, service, n, horizon, master_seed, rep_lo, rep_hi, collect) = args
    system = scale_system(levels, n)
    root = math.sqrt(n)
    scale_i = root * system.lam_bar0
    tq = np.asarray(collect)
    out = {
        "xhat": [], "ihat": [], "m": [], "qv": [], "pqv": [], "err_arrival": [],
        "occupation": [],
        "sup_err_arrival": [], "sup_err": [], "max_cross": [],
        "dm_defect": [], "flow_defect": [], "arrivals_end": [],
    }
    for rep in range(rep_lo, rep_hi):
        path = simulate_queue(system, arrival, service, horizon, replication_streams(master_seed, rep))
        rec = build_record(path)
        idx = path.index_at(tq)
        out["xhat"].append(path.queue[idx] / root)
        occ = path.occupation[idx].copy()
        lev = path.level[idx]
        gaps = tq - path.times[idx]
        occ[np.arange(tq.size), lev] += gaps
        out["occupation"].append(occ)
        out["ihat"].append(scale_i * occ[:, 0])
        out["m"].append(rec.at("m", tq))
        out["qv"].append(rec.at("qv", tq))
        out["pqv"].append(rec.at("pqv_arrival", tq) + rec.at("pqv_service", tq))
        out["err_arrival"].append(rec.at("err_arrival", tq))
        out["sup_err_arrival"].append(np.abs(rec.err_arrival).max())
        out["sup_err"].append(np.abs(rec.err).max())
        out["max_cross"].append(np.abs(rec.qv_cross).max())
        out["dm_defect"].append(verify_dm_identity(rec, path))
        out["flow_defect"].append(verify_flow_balance(path))
        out["arrivals_end"].append(path.arrivals_total)
    return {k: np.asarray(v) for k, v in out.items()}


def run_queue_ensemble(
    levels: LevelStructure,
    arrival: RenewalSpec,
    service: RenewalSpec,
    n: int,
    horizon: float,
    replications: int,
    master_seed: int,
    collect_times,
    workers: int = 1,
    chunk: int = 50,
) -> QueueEnsemble:
    """Simulate and reduce a batch of replications, in replication order."""
    collect = tuple(float(t) for t in collect_times)
    spans = [(lo, min(lo + chunk, replications)) for lo in range(0, replications, chunk)]
    args = [
        (levels, arrival, service, n, horizon, master_seed, lo, hi, collect)
        for lo, hi in spans
    ]
    if workers > 1 and len(args) > 1:
        with Pool(min(workers, len(args))) as pool:
            parts = pool.map(_queue_chunk, args, chunksize=1)
    else:
        parts = [_queue_chunk(a) for a in args]
    merged = {k: np.concatenate([p[k] for p in parts]) for k in parts[0]}
    return QueueEnsemble(
        n=int(n),
        horizon=float(horizon),
        replications=int(replications),
        master_seed=int(master_seed),
        collect_times=collect,
        xhat=merged["xhat"].T.copy(),
        ihat=merged["ihat"].T.copy(),
        m=merged["m"].T.copy(),
        qv=merged["qv"].T.copy(),
        pqv=merged["pqv"].T.copy(),
        err_arrival=merged["err_arrival"].T.copy(),
        occupation=np.swapaxes(merged["occupation"], 0, 1).copy(),
        sup_err_arrival=merged["sup_err_arrival"],
        sup_err=merged["sup_err"],
        max_cross=merged["max_cross"],
        dm_defect=merged["dm_defect"],
        flow_defect=merged["flow_defect"],
        arrivals_end=merged["arrivals_end"],
    )


def run_sde_ensemble_parallel(
    coeffs, x0, T, dt, n_paths, master_seed, scheme="projected",
    probe_times=(None,), occupation_bands=(), local_time_bands=(),
    chunk=8192, workers=1,
):
    """run_sde_ensemble with chunks spread over a process pool."""
    if workers > 1:
        with Pool(workers) as pool:
            return sde.run_sde_ensemble(
                coeffs, x0, T, dt, n_paths, master_seed, scheme, probe_times,
                occupation_bands, local_time_bands, chunk, pool=pool,
            )
    return sde.run_sde_ensemble(
        coeffs, x0, T, dt, n_paths, master_seed, scheme, probe_times,
        occupation_bands, local_time_bands, chunk,
    )


def compare_run(cfg: ExperimentConfig, with_samples: bool = False):
    """Full comparison pipeline: queue ensembles per n, both schemes, verdicts.

    With ``with_samples`` the raw terminal sample vectors are returned next to
    the report, keyed by series name, for CSV export.
    """
    s, t = cfg.martingale_probes
    T = cfg.horizon
    collect = tuple(sorted({*cfg.probe_times, s, t, T}))
    coeffs = sde.make_coefficients(cfg.levels, cfg.arrival, cfg.service)
    thr0 = float(cfg.levels.thresholds[0])

    queue_runs = {
        n: run_queue_ensemble(
            cfg.levels, cfg.arrival, cfg.service, n, T, cfg.replications,
            cfg.master_seed, collect, workers=cfg.workers,
        )
        for n in cfg.n_grid
    }
    occupation_bands = ((thr0, 0.1), (thr0, 0.05))
    local_bands = ((0.0, 0.05), (0.0, 0.1))
    sde_runs = {
        scheme: run_sde_ensemble_parallel(
            coeffs, 0.0, T, cfg.sde_dt, cfg.sde_paths, cfg.master_seed,
            scheme=scheme, probe_times=collect,
            occupation_bands=occupation_bands, local_time_bands=local_bands,
            workers=cfg.workers,
        )
        for scheme in ("projected", "mirror")
    }
    proj = sde_runs["projected"]

    n_big = max(cfg.n_grid)
    conv = analysis.convergence_report(
        {n: queue_runs[n].xhat_at(T) for n in cfg.n_grid},
        proj.x_at(T),
        T=T,
        ks_threshold=cfg.ks_threshold,
        queue_boundary={n: queue_runs[n].ihat_at(T) for n in cfg.n_grid},
        sde_boundary=proj.boundary_at(T),
        boundary_tol=cfg.boundary_tol,
        queue_martingale={n: queue_runs[n].m_at(T) for n in cfg.n_grid},
        master_seed=cfg.master_seed,
        config_hash=cfg.config_hash,
    )
    battery = {
        n: analysis.martingale_battery(
            run.xhat_at(s), run.m_at(s), run.m_at(t), s, t
        )
        for n, run in queue_runs.items()
    }
    var_a, var_s = cfg.arrival.variance, cfg.service.variance
    sigma_sq = np.concatenate(
        ([cfg.levels.lam0 * var_a], cfg.levels.lam * var_a + cfg.levels.mu * var_s)
    )
    qv_match = {
        n: analysis.qv_match_stats(
            run.qv_at(T), run.occupation_at(T), sigma_sq, T,
            bias_budget=analysis.qv_bias_budget(cfg.levels, var_a, var_s, n, T),
        )
        for n, run in queue_runs.items()
    }
    cross_ks = analysis.ks_distance(proj.x_at(T), sde_runs["mirror"].x_at(T))
    occ_ratio = float(
        np.mean(proj.occupation[(thr0, 0.1)]) / np.mean(proj.occupation[(thr0, 0.05)])
    )
    local_rel = float(
        np.mean(proj.local_time[(0.0, 0.05)]) / (2.0 * np.mean(proj.boundary_at(T)))
    )

    report = {
        "tool_version": TOOL_VERSION,
        "config_hash": cfg.config_hash,
        "master_seed": cfg.master_seed,
        "horizon": T,
        "n_grid": list(cfg.n_grid),
        "replications": cfg.replications,
        "sde_paths": cfg.sde_paths,
        "sde_dt": cfg.sde_dt,
        "convergence": conv.to_dict(),
        "martingale_battery": {str(n): battery[n].to_dict() for n in cfg.n_grid},
        "qv_match": {str(n): qv_match[n].to_dict() for n in cfg.n_grid},
        "scheme_cross_ks": cross_ks,
        "threshold_occupation_ratio": occ_ratio,
        "local_time_over_2L": local_rel,
        "dm_defect_max": {
            str(n): float(run.dm_defect.max()) for n, run in queue_runs.items()
        },
        "dm_defect_bound": {
            str(n): float((1e-8 * (1.0 + run.arrivals_end)).min()) for n, run in queue_runs.items()
        },
        "flow_defect_max": {
            str(n): float(run.flow_defect.max()) for n, run in queue_runs.items()
        },
        "passed": bool(
            conv.passed and all(b.passed for b in battery.values())
            and all(q.passed for q in qv_match.values())
        ),
    }
    if with_samples:
        samples = {f"xhat_T_n{n}": run.xhat_at(T) for n, run in queue_runs.items()}
        samples |= {f"ihat_T_n{n}": run.ihat_at(T) for n, run in queue_runs.items()}
        samples["sde_X_T_projected"] = proj.x_at(T)
        samples["sde_X_T_mirror"] = sde_runs["mirror"].x_at(T)
        samples["sde_L_T_projected"] = proj.boundary_at(T)
        return report, samples
    return report


def render_report_text(report: dict) -> str:
    """Aligned-column human rendering of the comparison report."""
    lines = []
    push = lines.append
    push(f"{report['tool_version']}  config={report['config_hash']}  seed={report['master_seed']}")
    push(
        f"horizon={report['horizon']}  n_grid={report['n_grid']}  "
        f"reps={report['replications']}  sde_paths={report['sde_paths']}  dt={report['sde_dt']}"
    )
    push("")
    conv = report["convergence"]
    push("terminal-marginal distance to the diffusion")
    for n, v in conv["ks"].items():
        flag = "pass" if float(v) <= conv["ks_threshold"] else "    "
        push(f"  n={n:>8}  KS={float(v):8.4f}  {flag}")
    push(f"  shrinking in n: {conv['ks_monotone']}   threshold {conv['ks_threshold']}")
    if conv["boundary_gap"] is not None:
        push(
            f"  boundary-term gap {conv['boundary_gap']:+.4f}"
            f"  (tol {conv['boundary_tol']})  pass={conv['passed_boundary']}"
        )
    push("")
    push("martingale increment battery (|mean| <= 3 SE)")
    for n, rep in report["martingale_battery"].items():
        push(f"  n={n}")
        for f in rep["functionals"]:
            push(
                f"    {f['name']:<18} mean={f['mean']:+.5f}  se={f['se']:.5f}  "
                f"{'pass' if f['passed'] else 'FAIL'}"
            )
    push("")
    push("quadratic-variation match (optional vs occupation form)")
    for n, rep in report["qv_match"].items():
        push(
            f"  n={n:>8}  mean defect={rep['mean_defect']:+.5f}  se={rep['se']:.5f}  "
            f"{'pass' if rep['passed'] else 'FAIL'}"
        )
    push("")
    push(f"scheme cross-check KS          {report['scheme_cross_ks']:.4f}")
    push(f"threshold occupation ratio     {report['threshold_occupation_ratio']:.3f}")
    push(f"local time / (2 L)             {report['local_time_over_2L']:.3f}")
    push("")
    push(f"overall: {'pass' if report['passed'] else 'FAIL'}")
    return "\n".join(lines) + "\n"
