"""Level-dependent single-server queues at the diffusion scale.

Simulation of critically loaded queues whose arrival and service rates switch
at queue-length thresholds, the exact martingale decomposition of their
counting processes, the one-sided reflection map, solvers for the limiting
reflected diffusion with piecewise-constant coefficients, and the statistical
machinery comparing the two descriptions.
"""

from .analysis import (
    EnsembleSummary,
    convergence_report,
    ks_distance,
    martingale_battery,
    qv_match_stats,
    qv_match_test,
)
from .decomposition import (
    DecompositionRecord,
    build_record,
    centered_marks,
    error_processes,
    optional_qv,
    verify_dm_identity,
)
from .distributions import (
    EpochSequence,
    RenewalSpec,
    make_renewal_spec,
    make_stream,
    renewal_count,
    sample_epochs,
)
from .experiment import (
    ExperimentConfig,
    QueueEnsemble,
    compare_run,
    reference_config,
    reference_sigma_config,
    run_queue_ensemble,
    run_sde_ensemble_parallel,
)
from .queue_sim import (
    LevelStructure,
    QueuePath,
    ScaledPath,
    ScaledSystem,
    diffusion_scale,
    occupation_times,
    scale_system,
    simulate_queue,
    verify_flow_balance,
)
from .reflection import (
    CadlagPath,
    complementarity_defect,
    path_functionals,
    piecewise_constant,
    piecewise_linear,
    skorokhod_map,
)
from .sde import (
    CoefficientField,
    SdeEnsemble,
    SdeGridPath,
    local_time_estimate,
    make_coefficients,
    run_sde_ensemble,
    solve_mirror,
    solve_projected,
    threshold_occupation,
)

__version__ = "0.1.0"
