"""Cross-layer adaptive m-QAM transmission scheduling toolkit.

Builds the channel/queue decision model, solves it by value iteration and two
monotone policy-iteration variants, verifies the monotone-policy structure
with executable checks, and approximates the optimal threshold policy online
with constrained discrete stochastic approximation.
"""

__version__ = "0.1.0"

from .channel import ChannelParams, FsmcChannel, build_fsmc, sample_next_state
from .mdp import (
    ArrivalDist,
    SystemConfig,
    SystemModel,
    SystemState,
    full_transition,
    immediate_cost,
    make_poisson_arrivals,
    queue_next,
    queue_transition_row,
)
from .solvers import (
    SolveReport,
    SolverConvergenceError,
    evaluate_policy,
    mpi_lnatural,
    mpi_submodular,
    q_table,
    q_value,
    value_iteration,
)
from .structure import (
    StructureReport,
    build_structure_report,
    check_bounded_marginal,
    weight_condition_margins,
    check_first_order_dominance,
    check_monotone_b,
    check_monotone_h,
    check_q_lnatural,
    check_q_submodular,
    monotone_policy_from_thresholds,
    policy_to_thresholds,
    thresholds_to_policy,
)
from .dspsa import (
    DspsaConfig,
    DspsaState,
    dspsa_gradient,
    dspsa_run,
    exact_objective,
    simulate_j_hat,
)
