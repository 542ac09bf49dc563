"""Closed-form RELU networks that flatten piecewise-linear manifolds.

A chain of affine segments joined at folds is mapped isometrically onto R^m by a
two-layer network with one hidden unit per fold beyond m base units.
"""

from .analysis import (
    ErrorReport,
    error_bound,
    exp_bound,
    measure_errors,
    perturbation_error,
    required_c,
    rigid_align,
    unfolding_oracle,
)
from .builder import (
    BuilderState,
    ParamCount,
    build_combined,
    build_hierarchical,
    build_monotonic,
    build_worstcase,
    compute_stitching,
    embed_chain,
    hierarchical_weight_counts,
    parameter_counts,
    worstcase_chain,
    worstcase_extreme_params,
)
from .exceptions import *  # noqa: F401,F403
from .experiments import (
    ExperimentResult,
    SwissRollSpec,
    arc_length,
    gen_random_chain,
    gen_swiss_roll,
    run_swiss_roll_experiment,
    run_worstcase_demo,
)
from .fitting import LabeledSamples, fit_chain, fit_segment, split_into_monotonic
from .geometry import (
    AffineSegment,
    ChainComplex,
    FoldGeometry,
    Hyperplane,
    MonotonicChain,
    ValidationReport,
    default_fold_hyperplane,
    intersection_geometry,
    middle_segment,
    one_sided_curvature,
    principal_angles,
    total_curvature,
    validate_monotonic,
)
from .network import (
    FlatteningNetwork,
    Layer,
    active_linear_map,
    activation_pattern,
    deserialize,
    evaluate,
    evaluate_batch,
    segment_operator,
    serialize,
)

__version__ = "0.1.0"
