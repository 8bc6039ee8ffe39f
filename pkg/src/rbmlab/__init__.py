"""rbmlab: simulation and verification toolkit for random-batch
interacting particle systems.

Submodules: models (drift/kernel registry), batching (divisions and the
batchmate-exchange coupling), sim (time stepping), oracle (closed-form
references), metrics (distances and rate fits), harness (experiments),
cli (command line).
"""

__version__ = "0.1.0"

from .batching import (  # noqa: F401
    BatchDivision,
    CouplingLaw,
    CouplingOutcome,
    couple_division,
    division_count,
    enumerate_divisions,
    exchange_batchmates,
    joint_coupling_law,
    sample_division,
)
from .config import AppConfig, load_config, parse_config  # noqa: F401
from .errors import (  # noqa: F401
    CapacityError,
    ConfigError,
    DivergenceError,
    DomainError,
    RbmlabError,
    ValidationError,
)
from .harness import (  # noqa: F401
    EXPERIMENTS,
    ExperimentReport,
    Verdict,
    moment_reference,
    oracle_table,
    run_experiment,
    write_points_csv,
)
from .metrics import (  # noqa: F401
    HistTv,
    RateFit,
    RatePoint,
    TailFit,
    empirical_moment,
    fit_gaussian,
    hist_tv,
    hist_tv_report,
    regress_rate,
    subgaussian_tail,
    w1_1d,
    w1_sliced,
)
from .models import (  # noqa: F401
    InitialLaw,
    Model,
    ModelSpec,
    build_model,
    probe_one_sided_lipschitz,
    register_family,
    registered_families,
)
from .oracle import (  # noqa: F401
    GaussianMoments,
    HierarchyBoundReport,
    HierarchyTable,
    LinearParams,
    full_cov_linear,
    full_cov_linear_dense,
    gaussian_kl,
    hierarchy_bound_check,
    hierarchy_table,
    k_marginal_exchangeable_kl,
    meanfield_moments_linear,
    pointwise_hierarchy_bound,
    rbm_cov_linear,
    weighted_sum_bound,
)
from .rng import stream, stream_key  # noqa: F401
from .sim import (  # noqa: F401
    CoupledResult,
    ParticleState,
    SimConfig,
    SimResult,
    coupled_simulate,
    default_division,
    default_init,
    default_noise,
    em_step,
    full_drift,
    rbm_drift,
    simulate,
    write_summary_csv,
    write_trajectory_csv,
)
