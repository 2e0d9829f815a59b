"""Covariate-dependent mixture models with tree stick-breaking priors."""

from .tree import (
    NodeId,
    ROOT,
    TreeKind,
    TreeTopology,
    adjacent_leaf_pairs,
    ancestors,
    build_balanced,
    build_custom,
    build_lopsided,
    choose_num_leaves,
    is_left_descendant,
)
from .stick_breaking import (
    SplitCoefficientSet,
    SplitValues,
    WeightVector,
    logistic,
    split_values,
    weights_for_covariate,
    weights_from_splits,
)
from .polya_gamma import PGParams, pg_mean, pg_variance, sample_pg, sample_pg1
from .prior_moments import (
    MeasureMomentInputs,
    a_bt,
    a_lt_finite,
    a_lt_truncated,
    ev_product_logitnormal,
    lower_bound_bt,
    lower_bound_lt,
    mc_corr_measures,
    mc_sum_cross_moment,
    measure_moments,
)
from .gibbs import (
    KernelHyperprior,
    KernelParams,
    MixtureState,
    PosteriorTrace,
    RunConfig,
    allocate_observations,
    gibbs_cost_sum,
    gibbs_sweep,
    run_chain,
    update_atoms,
    update_gamma_node,
)
from .diagnostics import (
    covariate_effect_differences,
    jaccard_distance,
    pointwise_ci,
    posthoc_sort,
    variance_decay_report,
)
from .data_io import Dataset, generate_section4, load_csv, sample_skew_normal, section4_design
from .errors import ConfigurationError, DataError, NumericalError, TreesbError

__version__ = "0.1.0"
