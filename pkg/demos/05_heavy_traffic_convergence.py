"""Desk-scale look at the heavy-traffic limit.

As n grows, the scaled queue's terminal marginal approaches the reflected
diffusion's, and the blown-up idleness approaches the diffusion's boundary
term.  This script runs a reduced version of the full comparison (the real
one lives behind ``levelq compare`` and the acceptance suite): the distance
table should decrease down the rows.
"""

from levelq import (
    ExperimentConfig,
    ks_distance,
    make_coefficients,
    martingale_battery,
    reference_config,
    run_queue_ensemble,
    run_sde_ensemble_parallel,
)

cfg = ExperimentConfig.from_dict(reference_config())
T = cfg.horizon
reps, sde_paths, workers = 1200, 1200, 2

coeffs = make_coefficients(cfg.levels, cfg.arrival, cfg.service)
sde = run_sde_ensemble_parallel(
    coeffs, 0.0, T, 2e-4, sde_paths, cfg.master_seed,
    probe_times=(T,), workers=workers,
)
x_sde = sde.x_at(T)
print(f"diffusion: mean X(T) = {x_sde.mean():.4f}, mean L(T) = {sde.boundary_at(T).mean():.4f}")

print(f"\n{'n':>8}  {'KS to diffusion':>16}  {'mean xhat(T)':>13}  {'mean ihat(T)':>13}")
for n in (25, 100, 400, 1600):
    run = run_queue_ensemble(
        cfg.levels, cfg.arrival, cfg.service, n, T, reps, cfg.master_seed,
        (2.0, T), workers=workers,
    )
    d = ks_distance(run.xhat_at(T), x_sde)
    print(f"{n:8d}  {d:16.4f}  {run.xhat_at(T).mean():13.4f}  {run.ihat_at(T).mean():13.4f}")
    if n == 1600:
        rep = martingale_battery(run.xhat_at(2.0), run.m_at(2.0), run.m_at(T), 2.0, T)
        print("\nmartingale increment battery at n=1600:")
        for name, m, s, ok in zip(rep.names, rep.means, rep.ses, rep.passed_each):
            print(f"  {name:<18} mean {m:+.4f}  3se {3*s:.4f}  {'ok' if ok else 'off'}")
