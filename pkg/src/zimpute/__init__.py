"""Imputation for zero-inflated survey variables.

Mixture-model single imputation (random and balanced variants), design-based
variance estimation for the imputed total, and a Monte Carlo simulation lab.
The balancing walks run on a compiled core when available; see
``zimpute._kernels.BACKEND`` and ``python -m zimpute.bench``.
"""

from ._kernels import BACKEND as KERNEL_BACKEND
from .frames import (
    FrameError,
    NotObservedError,
    PopulationFrame,
    RandomStream,
    SampleFrame,
    build_population,
    derive_eta,
)
from .design import (
    DesignError,
    DesignSpec,
    draw_sample,
    hajek_cdf,
    ht_total,
    inclusion_probabilities,
    joint_inclusion_probabilities,
    population_quantile,
)
from .model import (
    ConvergenceError,
    PhiModel,
    PoolError,
    RegularizedFit,
    ResidualPool,
    SeparationError,
    build_residual_pool,
    fit_phi,
    fit_regression,
)
from .cube import (
    BalancingProblem,
    CubeOutcome,
    balanced_bernoulli,
    balanced_donor_assignment,
    flight_phase,
    landing_phase,
)
from .impute import (
    METHODS,
    ImputationResult,
    impute,
    impute_bmrr,
    impute_brr,
    impute_mrr,
    impute_rr,
    imputed_cdf,
    imputed_total,
)
from .variance import (
    LinearizedComponents,
    VarianceReport,
    bootstrap_variance,
    linearized_components,
    total_variance,
    v1_hajek_rosen,
    v1_joint,
)
from .simlab import (
    ApplicationConfig,
    ApplicationReport,
    MonteCarloTable,
    ScenarioConfig,
    calibrate_intercept,
    generate_population,
    generate_response,
    run_application_scenario,
    run_monte_carlo,
)

__version__ = "0.1.0"
