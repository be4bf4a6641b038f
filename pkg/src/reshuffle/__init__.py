"""Random Reshuffling, Shuffle-Once, Incremental Gradient and SGD on finite sums,
with the shuffling-variance quantities and executable convergence-bound checks."""

from .core import (
    ConvergenceError,
    CosineQuadraticProblem,
    GenericProblem,
    LogisticProblem,
    Problem,
    ProblemConstants,
    QuadraticProblem,
    component_gradient,
    gradient,
    make_cosine_quadratic,
    make_generic,
    make_logistic,
    make_quadratic,
    objective,
    smoothness_constants,
)
from .data import (
    Dataset,
    MinibatchPartition,
    batch_smoothness,
    default_regularizer,
    group_minibatches,
    load_libsvm,
    parse_libsvm,
    serialize_libsvm,
)
from .optim import (
    DivergenceError,
    RunConfig,
    StepSchedule,
    Trajectory,
    run,
    run_ensemble,
    run_epoch,
    solve_reference,
    step_size,
)
from .shuffle import (
    OrderingScheme,
    RngStream,
    enumerate_permutation_expectation,
    epoch_ordering,
    sample_permutation,
    wor_mean_and_variance,
)

from . import analysis
from .analysis import BoundCheck, PreconditionError, check_bound, sigma_shuffle_sq, sigma_star_sq

__version__ = "0.1.0"
