"""Simulation-based search for the optimal queue-threshold vector.

The discounted objective J(thresholds) = sum over initial states of the
closed-loop discounted cost is estimated by simulating one trajectory per
initial state and accumulating discounted per-epoch costs until the increments
stay below a tolerance for a run of epochs (or a hard horizon is hit). A
two-simulation simultaneous-perturbation gradient on the integer lattice
drives a projected stochastic approximation with an augmented-Lagrangian
penalty enforcing row-sortedness of the threshold table.

Reproducibility: every iteration derives its randomness from (seed, iteration)
alone, so runs are bit-identical for equal (model, config, seed) and a run can
be resumed mid-stream (e.g. across a parameter switch) without perturbing the
draw sequence.
"""

from dataclasses import dataclass, field
import math

import numpy as np
from numba import njit

from .mdp import SystemModel
from .solvers import evaluate_policy
from .structure import monotone_policy_from_thresholds


@dataclass(frozen=True)
class DspsaConfig:
    """Schedules and simulation controls for one search run.

    Step sizes follow A / (B + n)^alpha1 and the penalty coefficient grows as
    R * n^alpha2 with the global iteration index n.
    """

    iterations: int
    seed: int = 0
    A: float = 0.015
    B: float = 100.0
    alpha1: float = 0.602
    alpha2: float = 0.1
    R: float = 10.0
    sim_tolerance: float = 1e-4
    sim_patience: int = 10
    common_random_numbers: bool = True   # share draws across the +/- probe pair
    trace_every: int = 1                 # exact-J trace thinning (1 = every iteration)

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if not (self.A > 0 and self.B > 0 and self.R > 0):
            raise ValueError("A, B and R must be > 0")
        if not 0 < self.alpha1 <= 1:
            raise ValueError("alpha1 must be in (0, 1]")
        if self.alpha2 < 0:
            raise ValueError("alpha2 must be >= 0")
        if not self.sim_tolerance > 0:
            raise ValueError("sim_tolerance must be > 0")
        if self.sim_patience < 1:
            raise ValueError("sim_patience must be >= 1")
        if self.trace_every < 1:
            raise ValueError("trace_every must be >= 1")

    def step_size(self, n: int) -> float:
        return self.A / (self.B + n) ** self.alpha1

    def penalty_coefficient(self, n: int) -> float:
        return self.R * n ** self.alpha2


def _empty_trace() -> dict:
    return {
        "n": [],
        "step_size": [],
        "penalty": [],
        "j_rounded": [],
        "normalized_error": [],
        "max_lambda": [],
        "clamped": [],
    }


@dataclass
class DspsaState:
    """Mutable search state: continuous estimate, multipliers, counters, trace."""

    theta_tilde: np.ndarray            # (H, A_m) float, inside [0, L_B + 1]
    multipliers: np.ndarray            # (H, A_m - 1) >= 0
    iteration: int = 0                 # global iteration index n
    num_simulations: int = 0
    clamp_iterations: int = 0          # iterations where box clamping fired
    trace: dict = field(default_factory=_empty_trace)

    @property
    def clamp_fraction(self) -> float:
        return self.clamp_iterations / self.iteration if self.iteration else 0.0

    @property
    def diverged(self) -> bool:
        """Estimate spent most of the run pinned to the box boundary."""
        return self.clamp_fraction > 0.5


def initial_state(model: SystemModel) -> DspsaState:
    """Fresh state: all-zero estimate and multipliers."""
    B, H, A = model.shape
    Am = A - 1
    return DspsaState(
        theta_tilde=np.zeros((H, Am)),
        multipliers=np.zeros((H, max(Am - 1, 0))),
    )


@njit(cache=True)
def _trajectory_kernel(policy_x, cost_xa, cum_f, cum_h, beta, tol, patience,
                       u_f, u_h, queue_size, H):
    """Lockstep simulation of one trajectory per initial state.

    Lane j starts at (b, h) = (j // H, j % H). Each lane accumulates discounted
    costs and truncates after `patience` successive epochs with increment below
    tol; the pre-drawn uniforms bound the horizon. Fixed-order float arithmetic
    keeps results bit-reproducible.
    """
    T, X = u_f.shape
    K = cum_h.shape[0]
    nf = cum_f.shape[0]
    totals = np.zeros(X)
    done = np.zeros(X, np.bool_)
    streak = np.zeros(X, np.int64)
    b = np.empty(X, np.int64)
    h = np.empty(X, np.int64)
    for j in range(X):
        b[j] = j // H
        h[j] = j % H
    coef = 1.0
    for t in range(T):
        alive = False
        for j in range(X):
            if done[j]:
                continue
            alive = True
            s = b[j] * H + h[j]
            a = policy_x[s]
            inc = coef * cost_xa[s, a]
            totals[j] += inc
            if inc < tol:
                streak[j] += 1
                if streak[j] >= patience:
                    done[j] = True
                    continue
            else:
                streak[j] = 0
            u = u_f[t, j]
            f = 0
            while f < nf - 1 and u >= cum_f[f]:
                f += 1
            bn = b[j] - a
            if bn < 0:
                bn = 0
            bn += f
            if bn > queue_size:
                bn = queue_size
            b[j] = bn
            u = u_h[t, j]
            hn = 0
            while hn < K - 1 and u >= cum_h[h[j], hn]:
                hn += 1
            h[j] = hn
        if not alive:
            break
        coef *= beta
    total = 0.0
    for j in range(X):
        total += totals[j]
    return total


def sim_horizon(model: SystemModel, tolerance: float) -> int:
    """Hard trajectory cap: past it the whole remaining tail is below tolerance."""
    beta = model.config.discount
    c_max = float(model.cost.max())
    if beta <= 0.0 or c_max <= 0.0:
        return 1
    x = tolerance * (1.0 - beta) / c_max
    if x >= 1.0:
        return 1
    return max(1, math.ceil(math.log(x) / math.log(beta)))


def simulate_j_hat(model: SystemModel, thresholds: np.ndarray, rng: np.random.Generator,
                   tolerance: float = 1e-4, patience: int = 10) -> float:
    """Noisy objective: summed discounted trajectory cost over all initial states.

    The threshold table is decoded by the total max-active-level rule, so
    infeasible (unsorted) integer probe points are simulated as-is. Draws come
    from `rng` in a fixed order (the full horizon of arrival uniforms, then
    channel uniforms), so two calls on equally seeded generators see common
    random numbers.
    """
    cfg = model.config
    B, H, A = model.shape
    th = np.asarray(thresholds)
    if th.shape != (H, A - 1):
        raise ValueError(f"thresholds must have shape {(H, A - 1)}, got {th.shape}")
    policy = monotone_policy_from_thresholds(th, cfg.queue_size)
    T = sim_horizon(model, tolerance)
    X = B * H
    u_f = rng.random((T, X))
    u_h = rng.random((T, X))
    cum_f = np.cumsum(cfg.arrivals.pmf)
    cum_h = np.cumsum(cfg.channel.transition, axis=1)
    return float(
        _trajectory_kernel(
            policy.ravel(), model.cost.reshape(X, A), cum_f, cum_h,
            cfg.discount, tolerance, patience, u_f, u_h, cfg.queue_size, H,
        )
    )


def exact_objective(model: SystemModel, thresholds: np.ndarray) -> float:
    """Exact J: policy evaluation of the decoded thresholds, summed over states."""
    policy = monotone_policy_from_thresholds(thresholds, model.config.queue_size)
    return float(evaluate_policy(model, policy).sum())


def dspsa_gradient(model: SystemModel, theta_tilde: np.ndarray, rng=None, *,
                   tolerance: float = 1e-4, patience: int = 10,
                   common_random_numbers: bool = True,
                   objective=None, delta=None) -> np.ndarray:
    """Two-point simultaneous-perturbation gradient on the integer lattice.

    Probes floor(theta) + (1 +/- delta)/2 with a Bernoulli +/-1 perturbation
    delta (drawn from rng unless given) and returns (J+ - J-) * delta, since
    each delta component is its own inverse. `objective` replaces the
    simulator with an exact/deterministic J for calibration tests.
    """
    theta = np.asarray(theta_tilde, dtype=float)
    shape = theta.shape
    D = theta.size
    if rng is None and (delta is None or objective is None):
        raise ValueError("rng is required unless both objective and delta are supplied")
    if delta is None:
        delta = rng.integers(0, 2, size=D) * 2 - 1
    else:
        delta = np.asarray(delta, dtype=np.int64).reshape(D)
        if not np.all(np.abs(delta) == 1):
            raise ValueError("delta entries must be +/-1")
    base = np.floor(theta.ravel())
    phi_plus = (base + (1 + delta) / 2).astype(np.int64).reshape(shape)
    phi_minus = (base + (1 - delta) / 2).astype(np.int64).reshape(shape)
    if objective is not None:
        j_plus = objective(phi_plus)
        j_minus = objective(phi_minus)
    else:
        seed_plus = int(rng.integers(0, 2 ** 63 - 1))
        seed_minus = seed_plus if common_random_numbers else int(rng.integers(0, 2 ** 63 - 1))
        j_plus = simulate_j_hat(model, phi_plus, np.random.default_rng(seed_plus),
                                tolerance, patience)
        j_minus = simulate_j_hat(model, phi_minus, np.random.default_rng(seed_minus),
                                 tolerance, patience)
    return ((j_plus - j_minus) * delta).reshape(shape)


def project_thresholds(theta_tilde: np.ndarray, queue_size: int) -> np.ndarray:
    """Nearest integer point, then the minimal feasible repair (sort each row)."""
    rounded = np.rint(np.asarray(theta_tilde, dtype=float)).astype(np.int64)
    rounded = np.clip(rounded, 0, queue_size + 1)
    return np.sort(rounded, axis=1)


def dspsa_run(model: SystemModel, config: DspsaConfig, reference=None, state=None):
    """Run `config.iterations` more search iterations (fresh start by default).

    reference: optional optimal threshold table for the normalized-error trace.
    state: resume point; the global iteration index keeps the step-size and
    penalty schedules and the per-iteration random streams continuous across
    segments. Returns (projected feasible thresholds, state).
    """
    cfg = model.config
    B, H, A = model.shape
    Am = A - 1
    L = cfg.queue_size
    if state is None:
        state = initial_state(model)
    theta = np.array(state.theta_tilde, dtype=float)
    lam = np.array(state.multipliers, dtype=float)
    if theta.shape != (H, Am) or lam.shape != (H, max(Am - 1, 0)):
        raise ValueError("state shapes do not match the model")

    ref = None
    denom = math.nan
    if reference is not None:
        ref = np.asarray(reference, dtype=float)
        if ref.shape != (H, Am):
            raise ValueError(f"reference thresholds must have shape {(H, Am)}")
        denom = float(np.linalg.norm(theta - ref))

    trace = state.trace
    for step in range(config.iterations):
        n = state.iteration + 1
        a_n = config.step_size(n)
        r_n = config.penalty_coefficient(n)
        it_rng = np.random.default_rng(np.random.SeedSequence((config.seed, n)))
        g = dspsa_gradient(
            model, theta, it_rng,
            tolerance=config.sim_tolerance, patience=config.sim_patience,
            common_random_numbers=config.common_random_numbers,
        )
        state.num_simulations += 2

        # Sortedness constraints theta[h,i] - theta[h,i+1] <= 0, handled by the
        # multiplier-first augmented-Lagrangian update: the clipped coefficient
        # is both the penalty weight in this step and the new multiplier.
        penalty_grad = np.zeros_like(theta)
        if Am >= 2:
            ups = theta[:, :-1] - theta[:, 1:]
            lam = np.maximum(0.0, lam + r_n * ups)
            penalty_grad[:, :-1] += lam
            penalty_grad[:, 1:] -= lam

        raw = theta - a_n * (g + penalty_grad)
        theta = np.clip(raw, 0.0, L + 1.0)
        clamped = bool(np.any(raw != theta))
        state.iteration = n
        if clamped:
            state.clamp_iterations += 1

        want_trace = (n % config.trace_every == 0) or (step == config.iterations - 1)
        j_rounded = exact_objective(model, np.rint(theta).astype(np.int64)) if want_trace else math.nan
        norm_err = float(np.linalg.norm(theta - ref)) / denom if (ref is not None and denom > 0) else math.nan
        trace["n"].append(n)
        trace["step_size"].append(a_n)
        trace["penalty"].append(r_n)
        trace["j_rounded"].append(j_rounded)
        trace["normalized_error"].append(norm_err)
        trace["max_lambda"].append(float(lam.max()) if lam.size else 0.0)
        trace["clamped"].append(int(clamped))

    state.theta_tilde = theta
    state.multipliers = lam
    return project_thresholds(theta, L), state
