"""Error-stability stopping criterion for Bayesian active learning."""
from ._backend import BACKEND
from .bayes_linear import (
    BrrHyper,
    GaussianPosterior,
    RbfBasis,
    blr_laplace_posterior,
    blr_map,
    brr_acquisition,
    brr_posterior,
    brr_update_hyper,
    design_matrix,
    entropy_acquisition,
    gaussian_kl,
)
from .bdnn import (
    BdnnPosterior,
    DropoutLayerParams,
    bdnn_kl_bound,
    bdnn_kl_bound_simplified,
    load_bdnn_posterior,
    save_bdnn_posterior,
)
from .engine import (
    Dataset,
    LabeledPool,
    Profile,
    StoppingConfig,
    Task,
    TraceRecord,
    load_csv,
    normalize,
    read_trace_csv,
    run_active_learning,
    run_random_baseline,
    split,
    write_trace_csv,
)
from .evaluation import (
    ExperimentConfig,
    FilteredSequences,
    filter_running_min,
    pearson_correlation,
    run_experiment,
)
from .gp import (
    GpHyper,
    GpState,
    gp_acquisition,
    gp_extend,
    gp_fit_hyper,
    gp_incremental_kl_backward,
    gp_incremental_kl_forward,
    gp_posterior,
)
from .stability import (
    ConfigurationError,
    Decision,
    KlPair,
    MartingaleParams,
    StoppingError,
    StoppingState,
    error_bound_width,
    lambert_w0,
    martingale_threshold,
    stability_radius,
    stability_radius_general,
    step_stopping,
)

__version__ = "0.1.0"
