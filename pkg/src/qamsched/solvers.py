"""Discounted-cost solvers for the scheduling MDP.

Three algorithms share one Bellman sweep kernel so they agree bitwise on the
value iterates whenever the theory says they should:

  value_iteration   full action search per state (plain DP),
  mpi_submodular    per-state search restricted to {theta(b-1,h) .. A_m},
  mpi_lnatural      per-state search restricted to {theta(b-1,h), theta(b-1,h)+1},

where theta is the argmin computed earlier in the same sweep and b is swept in
ascending order (the restriction at b = 0 is the full action set). SolveReport
counts the Q(x, a) evaluations each algorithm's action sets prescribe; the
final policy-extraction pass is excluded from the counts.

Queue states b are 0-based array rows, channel states h are 1-based in scalar
APIs and 1-based labels for column j = h - 1 of the (B, H) tables.
"""

from dataclasses import dataclass
import math

import numpy as np

from .mdp import SystemModel

MODE_DP = "dp"
MODE_MPI_SUB = "mpi_sub"
MODE_MPI_LNAT = "mpi_lnat"


class SolverConvergenceError(RuntimeError):
    """Raised when a solve hits its iteration cap before reaching epsilon."""


@dataclass
class SolveReport:
    """Convergence and instrumentation record of one solve."""

    algorithm: str
    epsilon: float
    iterations: int
    q_evals_total: int
    q_evals_per_iteration: list
    sup_norm_trace: list
    max_iterations: int

    @property
    def q_evals_per_iteration_avg(self) -> float:
        return self.q_evals_total / self.iterations if self.iterations else 0.0

    def to_dict(self) -> dict:
        return {
            "algorithm": self.algorithm,
            "epsilon": self.epsilon,
            "iterations": self.iterations,
            "q_evals_total": self.q_evals_total,
            "q_evals_per_iteration": list(self.q_evals_per_iteration),
            "q_evals_per_iteration_avg": self.q_evals_per_iteration_avg,
            "sup_norm_trace": [float(x) for x in self.sup_norm_trace],
            "max_iterations": self.max_iterations,
        }


def q_value(model: SystemModel, values: np.ndarray, b: int, h: int, a: int) -> float:
    """State-action value c(b,h,a) + beta * E[V(b',h')]. Scalar reference form."""
    beta = model.config.discount
    qrow = model.queue_kernel[a, b]                        # (B,)
    hrow = model.config.channel.transition[h - 1]          # (H,)
    return float(model.cost[b, h - 1, a] + beta * qrow @ values @ hrow)


def q_table(model: SystemModel, values: np.ndarray) -> np.ndarray:
    """All state-action values at once, shape (B, H, A).

    This is the single Q kernel every solver (and the structure checkers) uses,
    so Q entries are bit-identical across algorithms for the same V.
    """
    beta = model.config.discount
    Pc = model.config.channel.transition
    W = values @ Pc.T                                        # (B, H): E over h'
    T = np.tensordot(model.queue_kernel, W, axes=([2], [0]))  # (A, B, H): E over b'
    return model.cost + beta * np.moveaxis(T, 0, 2)


def bellman_sweep(model: SystemModel, values: np.ndarray, mode: str = MODE_DP):
    """One sweep V <- min_{a in A(x)} Q(x, a) over all states.

    Returns (new_values, policy, q_evals) where policy is the per-state argmin
    (ties to the smallest action) and q_evals counts the Q evaluations the
    sweep's action sets prescribe.
    """
    B, H, A = model.shape
    Q = q_table(model, values)
    if mode == MODE_DP:
        policy = Q.argmin(axis=2)
        new_values = np.take_along_axis(Q, policy[:, :, None], axis=2)[:, :, 0]
        return new_values, policy, B * H * A

    policy = np.zeros((B, H), dtype=np.int64)
    new_values = np.empty((B, H))
    a_idx = np.arange(A)[None, :]
    evals = 0
    for b in range(B):
        Qb = Q[b]                                            # (H, A)
        if b == 0:
            theta_b = Qb.argmin(axis=1)
            evals += H * A
        else:
            lo = policy[b - 1][:, None]                      # (H, 1)
            if mode == MODE_MPI_SUB:
                mask = a_idx >= lo
            elif mode == MODE_MPI_LNAT:
                mask = (a_idx == lo) | (a_idx == np.minimum(lo + 1, A - 1))
            else:
                raise ValueError(f"unknown sweep mode: {mode!r}")
            evals += int(mask.sum())
            theta_b = np.where(mask, Qb, np.inf).argmin(axis=1)
        policy[b] = theta_b
        new_values[b] = Qb[np.arange(H), theta_b]
    return new_values, policy, evals


def default_iteration_cap(epsilon: float, discount: float) -> int:
    """Generous cap on sweeps: ten times the contraction-bound iteration count."""
    if discount <= 0:
        return 64
    est = 10.0 * math.log(epsilon * (1.0 - discount)) / math.log(discount)
    return max(64, math.ceil(est))


def _solve(model: SystemModel, epsilon: float, mode: str, v0=None, max_iterations=None):
    if not epsilon > 0:
        raise ValueError(f"epsilon must be > 0, got {epsilon}")
    B, H, A = model.shape
    if v0 is None:
        values = np.zeros((B, H))
    else:
        values = np.array(v0, dtype=float)
        if values.shape != (B, H):
            raise ValueError(f"v0 must have shape {(B, H)}, got {values.shape}")
    cap = default_iteration_cap(epsilon, model.config.discount) if max_iterations is None else max_iterations

    trace = []
    evals_per_iter = []
    for _ in range(cap):
        new_values, _, evals = bellman_sweep(model, values, mode)
        gap = float(np.max(np.abs(new_values - values)))
        trace.append(gap)
        evals_per_iter.append(evals)
        values = new_values
        if gap <= epsilon:
            break
    else:
        raise SolverConvergenceError(
            f"{mode} did not reach epsilon={epsilon} within {cap} iterations "
            f"(last gap {trace[-1]:.3e})"
        )

    # Greedy policy from the converged V over the full action set; not counted.
    policy = q_table(model, values).argmin(axis=2)
    report = SolveReport(
        algorithm=mode,
        epsilon=epsilon,
        iterations=len(trace),
        q_evals_total=int(sum(evals_per_iter)),
        q_evals_per_iteration=evals_per_iter,
        sup_norm_trace=trace,
        max_iterations=cap,
    )
    return values, policy, report


def value_iteration(model: SystemModel, epsilon: float = 1e-4, v0=None, max_iterations=None):
    """Plain value iteration; returns (values, policy, report)."""
    return _solve(model, epsilon, MODE_DP, v0, max_iterations)


def mpi_submodular(model: SystemModel, epsilon: float = 1e-4, v0=None, max_iterations=None):
    """Monotone policy iteration using the nondecreasing-argmin restriction."""
    return _solve(model, epsilon, MODE_MPI_SUB, v0, max_iterations)


def mpi_lnatural(model: SystemModel, epsilon: float = 1e-4, v0=None, max_iterations=None):
    """Monotone policy iteration using the unit-increment (two-action) restriction."""
    return _solve(model, epsilon, MODE_MPI_LNAT, v0, max_iterations)


def validate_policy(model: SystemModel, policy: np.ndarray) -> np.ndarray:
    B, H, A = model.shape
    pol = np.asarray(policy)
    if pol.shape != (B, H):
        raise ValueError(f"policy must have shape {(B, H)}, got {pol.shape}")
    if not np.issubdtype(pol.dtype, np.integer):
        raise ValueError("policy entries must be integers")
    if pol.min() < 0 or pol.max() >= A:
        raise ValueError(f"policy entries must lie in 0..{A - 1}")
    return pol


def policy_transition_matrix(model: SystemModel, policy: np.ndarray) -> np.ndarray:
    """Closed-loop transition matrix over flattened states x = b * H + (h - 1)."""
    B, H, _ = model.shape
    pol = validate_policy(model, policy)
    Pc = model.config.channel.transition
    b_of_x = np.repeat(np.arange(B), H)
    h_of_x = np.tile(np.arange(H), B)
    qrows = model.queue_kernel[pol.ravel(), b_of_x]        # (X, B)
    hrows = Pc[h_of_x]                                     # (X, H)
    return (qrows[:, :, None] * hrows[:, None, :]).reshape(B * H, B * H)


def evaluate_policy(model: SystemModel, policy: np.ndarray) -> np.ndarray:
    """Exact discounted value of a stationary policy via its linear fixed point."""
    B, H, _ = model.shape
    pol = validate_policy(model, policy)
    beta = model.config.discount
    P = policy_transition_matrix(model, pol)
    c = np.take_along_axis(model.cost, pol[:, :, None], axis=2)[:, :, 0].ravel()
    V = np.linalg.solve(np.eye(B * H) - beta * P, c)
    return V.reshape(B, H)
