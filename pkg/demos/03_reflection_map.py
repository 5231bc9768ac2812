"""The one-sided reflection map, alone and on a scaled queue path.

The map sends a path psi to the pair (phi, eta) with eta the running maximum
of the negative part and phi = psi + eta: the smallest push keeping phi
nonnegative.  Scaled queue paths satisfy the same relation exactly: the
scaled queue and blown-up idleness are the image of the netput.
"""

from levelq import (
    ExperimentConfig,
    complementarity_defect,
    diffusion_scale,
    make_stream,
    piecewise_linear,
    reference_config,
    scale_system,
    simulate_queue,
    skorokhod_map,
)
from levelq.reflection import sup_norm_diff

# a vee: down at slope -2 for one unit, then up at slope 2
psi = piecewise_linear([0.0, 1.0], [1.0, -1.0], [-2.0, 2.0])
phi, eta = skorokhod_map(psi)
print("vee input: psi(t) = 1 - 2t, then 2t - 3")
for t in (0.0, 0.5, 0.75, 1.0, 1.5, 2.0):
    print(f"  t={t:4}  psi={psi(t):+.3f}  phi={phi(t):+.3f}  eta={eta(t):.3f}")
print(f"complementarity integral over [0, 2]: {complementarity_defect(phi, eta, 2.0):.2e}")

# the same map reproduces the queue's own reflection structure
cfg = ExperimentConfig.from_dict(reference_config())
system = scale_system(cfg.levels, 900)
path = simulate_queue(
    system, cfg.arrival, cfg.service, cfg.horizon,
    (make_stream(cfg.master_seed, 0, 0), make_stream(cfg.master_seed, 0, 1)),
)
scaled = diffusion_scale(path, system)
phi_q, eta_q = skorokhod_map(scaled.yhat)
print(f"\nqueue at n=900 over [0, {cfg.horizon}]:")
print(f"  sup |Gamma(yhat)_1 - xhat| = {sup_norm_diff(phi_q, scaled.xhat, cfg.horizon):.3e}")
print(f"  sup |Gamma(yhat)_2 - ihat| = {sup_norm_diff(eta_q, scaled.ihat, cfg.horizon):.3e}")
