"""Command line entry point: config ingestion, runs, bit-exact emission.

Subcommands: simulate, decompose, sde, compare, selftest.  Exit codes are 0
for success/pass, 1 for a failed check, 2 for a configuration error.  Output
files embed the config hash and tool version; floats are written with full
round-trip precision and no timestamps, so identical (config, seed) pairs
produce byte-identical files.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import analysis, decomposition, distributions, experiment, reflection, sde
from .experiment import ExperimentConfig, TOOL_VERSION, reference_config
from .queue_sim import diffusion_scale, scale_system, simulate_queue, verify_flow_balance

__all__ = ["main", "run_command"]


def _fmt(x) -> str:
    return repr(float(x))


def _write_csv(path: Path, header: str, columns, cfg_hash: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = len(columns[0])
    with open(path, "w") as fh:
        fh.write(f"# tool={TOOL_VERSION}\n# config_hash={cfg_hash}\n")
        fh.write(header + "\n")
        for i in range(rows):
            fh.write(",".join(_fmt(c[i]) for c in columns) + "\n")


def _write_json(path: Path, payload: dict, cfg_hash: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {"tool": TOOL_VERSION, "config_hash": cfg_hash, **payload}
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _load_config(ns) -> ExperimentConfig:
    if ns.config is None:
        raw = reference_config()
    else:
        with open(ns.config) as fh:
            raw = json.load(fh)
    if ns.seed is not None:
        raw["master_seed"] = ns.seed
    if ns.workers is not None:
        raw["workers"] = ns.workers
    if ns.out is not None:
        raw["out_dir"] = ns.out
    if ns.n is not None:
        raw["n_grid"] = [int(x) for x in ns.n.split(",")]
    if ns.reps is not None:
        raw["replications"] = ns.reps
    return ExperimentConfig.from_dict(raw)


def _export_queue_paths(cfg: ExperimentConfig, out: Path, with_decomposition: bool) -> dict:
    summary: dict = {"paths": [], "dm_defects": {}}
    for n in cfg.n_grid:
        system = scale_system(cfg.levels, n)
        defects = []
        for rep in range(min(cfg.export_paths, cfg.replications)):
            path = simulate_queue(
                system, cfg.arrival, cfg.service, cfg.horizon,
                experiment.replication_streams(cfg.master_seed, rep),
            )
            stem = f"queue_n{n}_rep{rep}"
            _write_csv(
                out / "paths" / f"{stem}.csv",
                "time,X,A,D,U,V",
                (path.times, path.queue, path.arrivals, path.departures, path.u_clock, path.v_clock),
                cfg.config_hash,
            )
            events = {
                "n": n,
                "replication": rep,
                "horizon": cfg.horizon,
                "flow_defect": verify_flow_balance(path),
                "events": [
                    [float(t), int(a), int(d)]
                    for t, a, d in zip(path.times, path.d_arrival, path.d_departure)
                    if a or d
                ],
            }
            _write_json(out / "paths" / f"{stem}.json", events, cfg.config_hash)
            summary["paths"].append(str(out / "paths" / f"{stem}.csv"))
            if with_decomposition:
                rec = decomposition.build_record(path)
                defect = decomposition.verify_dm_identity(rec, path)
                defects.append(defect)
                _write_csv(
                    out / "paths" / f"decomp_n{n}_rep{rep}.csv",
                    "time,M_A,M_S,M,QV_A,QV_S,QV_cross,eA,eS,e",
                    (
                        rec.times, rec.m_arrival, rec.m_service, rec.m,
                        rec.qv_arrival, rec.qv_service, rec.qv_cross,
                        rec.err_arrival, rec.err_service, rec.err,
                    ),
                    cfg.config_hash,
                )
        if with_decomposition:
            summary["dm_defects"][str(n)] = defects
    return summary


def _cmd_simulate(cfg: ExperimentConfig) -> int:
    out = Path(cfg.out_dir)
    summary = _export_queue_paths(cfg, out, with_decomposition=False)
    _write_json(out / "simulate.json", summary, cfg.config_hash)
    print(f"wrote {len(summary['paths'])} paths under {out / 'paths'}")
    return 0


def _cmd_decompose(cfg: ExperimentConfig) -> int:
    out = Path(cfg.out_dir)
    summary = _export_queue_paths(cfg, out, with_decomposition=True)
    worst = max((d for ds in summary["dm_defects"].values() for d in ds), default=0.0)
    _write_json(out / "decompose.json", summary, cfg.config_hash)
    print(f"max identity defect {worst:.3e}")
    return 0


def _cmd_sde(cfg: ExperimentConfig) -> int:
    out = Path(cfg.out_dir)
    coeffs = sde.make_coefficients(cfg.levels, cfg.arrival, cfg.service)
    terminal = {}
    for scheme in ("projected", "mirror"):
        for i in range(cfg.export_paths):
            stream = distributions.make_stream(cfg.master_seed, 3, int(scheme == "mirror"), i)
            solver = sde.solve_projected if scheme == "projected" else sde.solve_mirror
            gp = solver(coeffs, 0.0, cfg.horizon, cfg.sde_dt, stream)
            _write_csv(
                out / "sde" / f"{scheme}_path{i}.csv",
                "time,X,L",
                (gp.times, gp.x, gp.boundary),
                cfg.config_hash,
            )
        ens = experiment.run_sde_ensemble_parallel(
            coeffs, 0.0, cfg.horizon, cfg.sde_dt, cfg.sde_paths, cfg.master_seed,
            scheme=scheme, probe_times=(cfg.horizon,), workers=cfg.workers,
        )
        terminal[scheme] = ens.x_at(cfg.horizon)
        _write_csv(
            out / "sde" / f"terminal_{scheme}.csv", "X_T", (terminal[scheme],), cfg.config_hash
        )
    ks = analysis.ks_distance(terminal["projected"], terminal["mirror"])
    _write_json(out / "sde.json", {"scheme_cross_ks": ks}, cfg.config_hash)
    print(f"cross-scheme KS at T: {ks:.4f}")
    return 0


def _cmd_compare(cfg: ExperimentConfig) -> int:
    out = Path(cfg.out_dir)
    report, samples = experiment.compare_run(cfg, with_samples=True)
    _write_json(out / "report.json", report, cfg.config_hash)
    text = experiment.render_report_text(report)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.txt").write_text(text)
    for name, values in samples.items():
        _write_csv(out / "samples" / f"{name}.csv", name, (values,), cfg.config_hash)
    print(text, end="")
    return 0 if report["passed"] else 1


class _FixtureSpec:
    """Stands in for a renewal spec: plays back preset marks, then unit marks."""

    def __init__(self, marks, variance=1.0):
        self._marks = list(marks)
        self.variance = variance
        self.family = "fixture"

    def sample(self, stream, size):
        head = [self._marks.pop(0) for _ in range(min(size, len(self._marks)))]
        return np.array(head + [1.0] * (size - len(head)))


def _selftest_checks():
    checks = []

    def check(name, fn):
        try:
            fn()
            checks.append((name, True, ""))
        except AssertionError as exc:
            checks.append((name, False, str(exc)))

    def renewal_counts():
        epochs = np.cumsum([1.0, 1.0, 1.0, 1.0])
        assert distributions.renewal_count(epochs, 0.5) == 0
        assert distributions.renewal_count(epochs, 1.0) == 1
        assert distributions.renewal_count(epochs, 2.5) == 2

    def spec_normalization():
        assert distributions.make_renewal_spec("exponential", [3.0]).variance == 1.0
        assert distributions.make_renewal_spec("gamma", [4.0]).variance == 0.25
        ln = distributions.make_renewal_spec("lognormal", [0.5])
        assert abs(ln.variance - math.expm1(0.25)) < 1e-15

    def skorokhod_cases():
        up = reflection.piecewise_linear([0.0], [0.0], [1.0])
        phi, eta = reflection.skorokhod_map(up)
        assert eta(5.0) == 0.0 and phi(5.0) == 5.0
        down = reflection.piecewise_linear([0.0], [0.0], [-1.0])
        phi, eta = reflection.skorokhod_map(down)
        assert eta(3.0) == 3.0 and phi(3.0) == 0.0
        vee = reflection.piecewise_linear([0.0, 1.0], [1.0, -1.0], [-2.0, 2.0])
        phi, eta = reflection.skorokhod_map(vee)
        for t, want in ((0.25, 0.0), (0.75, 0.5), (1.5, 1.0), (2.0, 1.0)):
            assert abs(eta(t) - want) < 1e-12, f"eta({t})"

    def seeded_queue():
        cfg = ExperimentConfig.from_dict(reference_config())
        system = scale_system(cfg.levels, 100)
        path = simulate_queue(
            system, cfg.arrival, cfg.service, 2.0,
            experiment.replication_streams(cfg.master_seed, 0),
        )
        assert verify_flow_balance(path) == 0.0
        counted = distributions.renewal_count(path.arrival_epochs, float(path.u_clock[5]))
        assert counted == path.arrivals[5]
        rec = decomposition.build_record(path)
        defect = decomposition.verify_dm_identity(rec, path)
        assert defect <= 1e-8 * (1 + path.arrivals_total), f"defect {defect}"
        scaled = diffusion_scale(path, system)
        gap = reflection.sup_norm_diff(
            reflection.path_sub(scaled.xhat, scaled.ihat), scaled.yhat, 2.0
        )
        assert gap == 0.0
        phi, eta = reflection.skorokhod_map(scaled.yhat)
        assert reflection.sup_norm_diff(phi, scaled.xhat, 2.0) <= 1e-8
        assert reflection.sup_norm_diff(eta, scaled.ihat, 2.0) <= 1e-8
        occ = path.occupation_at(1.5)
        assert abs(occ.sum() - 1.5) < 1e-9

    def tie_cross_variation():
        from .queue_sim import LevelStructure

        levels = LevelStructure([1.0], [1.0, 1.0], [1.0, 1.0], [0.0, 0.0], [0.0, 0.0], 1.0)
        system = scale_system(levels, 1)
        arr = _FixtureSpec([0.25, 0.75, 5.0])
        svc = _FixtureSpec([0.75, 5.0])
        path = simulate_queue(system, arr, svc, 2.0, (np.random.default_rng(0), np.random.default_rng(1)))
        tie_rows = (path.d_arrival == 1) & (path.d_departure == 1)
        assert tie_rows.sum() == 1, "expected one combined event"
        rec = decomposition.build_record(path)
        assert abs(rec.qv_cross[-1] - 16.0) < 1e-12, f"cross {rec.qv_cross[-1]}"

    def sde_fixtures():
        drift_only = sde.CoefficientField([], [-1.0, -1.0], [0.0, 0.0])
        gp = sde.solve_projected(drift_only, 1.0, 2.0, 0.01, dw=np.zeros(200))
        assert abs(gp.x[-1]) < 1e-12 and abs(gp.boundary[-1] - 1.0) < 1e-9
        still = sde.CoefficientField([], [0.0, 0.0], [1.0, 1.0])
        gp = sde.solve_projected(still, 0.7, 1.0, 0.01, dw=np.zeros(100))
        assert np.all(gp.x == 0.7) and gp.boundary[-1] == 0.0
        rng = np.random.default_rng(7)
        dw = rng.standard_normal(100) * math.sqrt(0.01)
        pj = sde.solve_projected(still, 5.0, 1.0, 0.01, dw=dw)
        mi = sde.solve_mirror(still, 5.0, 1.0, 0.01, dw=dw)
        if np.all(mi.q > 0):
            assert np.allclose(pj.x, mi.x, atol=1e-12)

    def ks_cases():
        assert analysis.ks_distance([1.0, 2.0], [1.0, 2.0]) == 0.0
        assert analysis.ks_distance([0.0, 0.0], [1.0, 1.0]) == 1.0
        assert analysis.ks_distance([0.0, 1.0], [0.5]) == 0.5

    check("renewal count definition", renewal_counts)
    check("unit-mean normalization", spec_normalization)
    check("reflection map analytic cases", skorokhod_cases)
    check("seeded queue invariants", seeded_queue)
    check("combined-event cross variation", tie_cross_variation)
    check("sde deterministic fixtures", sde_fixtures)
    check("ks distance cases", ks_cases)
    return checks


def _cmd_selftest(_cfg=None) -> int:
    checks = _selftest_checks()
    width = max(len(name) for name, _, _ in checks)
    ok = True
    for name, passed, detail in checks:
        mark = "pass" if passed else "FAIL"
        suffix = f"  ({detail})" if detail else ""
        print(f"{name:<{width}}  {mark}{suffix}")
        ok &= passed
    return 0 if ok else 1


def run_command(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="levelq",
        description="level-dependent queue simulation and its diffusion comparison",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("simulate", "decompose", "sde", "compare", "selftest"):
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="JSON experiment config")
        p.add_argument("--seed", type=int, default=None, help="master seed override")
        p.add_argument("--workers", type=int, default=None, help="process count override")
        p.add_argument("--out", default=None, help="output directory override")
        p.add_argument("--n", default=None, help="comma-separated n grid override")
        p.add_argument("--reps", type=int, default=None, help="replication override")
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0

    if ns.command == "selftest":
        return _cmd_selftest()
    try:
        cfg = _load_config(ns)
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    handler = {
        "simulate": _cmd_simulate,
        "decompose": _cmd_decompose,
        "sde": _cmd_sde,
        "compare": _cmd_compare,
    }[ns.command]
    return handler(cfg)


def main() -> None:
    sys.exit(run_command())
