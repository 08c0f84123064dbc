"""Decentralized Newton optimization over gossip networks, with multi-step
consensus, compressed Hessian tracking, a gradient-tracking baseline, and
convergence diagnostics at desk scale."""

from .compress import CompressedPayload, CompressorSpec, compress, delta_bound, payload_bits
from .diagnostics import (
    MetricWeights,
    RateFit,
    RoundMetrics,
    Trace,
    compute_metrics,
    fit_rate,
    stage_two_window,
    theoretical_caps,
)
from .gradient_tracking import GTParams, gt_run, gt_step, tune_alpha
from .graph import (
    MixingMatrix,
    Topology,
    consensus_apply,
    generate_topology,
    load_matrix,
    metropolis_weights,
    save_matrix,
    second_singular_value,
)
from .newton import (
    AlgoParams,
    CGBreakdownError,
    ConstantSchedule,
    GeometricRamp,
    NetworkState,
    TwoStageSchedule,
    cg_solve,
    init_state,
    run,
    run_lockstep,
    step_efficient,
    step_reference,
)
from .objectives import (
    LogisticInstance,
    Problem,
    QuadraticInstance,
    centralized_solve,
    estimate_constants,
    eval_gradient,
    eval_hessian,
    load_problem,
    make_logistic,
    make_quadratic,
    save_problem,
)

__version__ = "0.1.0"
