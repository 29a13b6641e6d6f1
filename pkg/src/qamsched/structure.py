"""Executable checks of monotone policy structure, and the threshold codec.

Every structural claim the solver stack relies on is a numeric check here:
monotonicity of a policy in queue and channel state, the unit-increment bound
in queue state, first-order stochastic dominance of the channel rows, the
weight-factor condition that guarantees channel-state monotonicity, and
submodularity / discrete (L-natural) convexity of the state-action value
table. Checkers are pure and return (ok, witnesses); witnesses use 1-based
channel states to match the table column labels.

The threshold codec maps b-monotone policies to per-channel-state queue
thresholds and back: thresholds[h-1, i-1] is the smallest b at which action
level i is active in channel state h, with queue_size + 1 encoding "never".
Encoding by "smallest b with theta >= i" keeps the map total when a monotone
policy skips an action level, and makes decoding its exact inverse.
"""

from dataclasses import dataclass

import numpy as np

from .mdp import SystemConfig, SystemModel
from .solvers import q_table

# Absolute slack for all structural inequalities: one order below the error a
# 1e-4-converged value table can carry.
STRUCTURE_TOL = 1e-9


def check_monotone_b(policy: np.ndarray):
    """Policy nondecreasing in queue state: theta(b+1,h) >= theta(b,h)."""
    pol = np.asarray(policy)
    bad = np.argwhere(pol[1:, :] < pol[:-1, :])
    witnesses = [(int(b), int(h) + 1) for b, h in bad]
    return len(witnesses) == 0, witnesses


def check_bounded_marginal(policy: np.ndarray):
    """Unit marginal effect in queue state: theta(b+1,h) <= theta(b,h) + 1."""
    pol = np.asarray(policy)
    bad = np.argwhere(pol[1:, :] > pol[:-1, :] + 1)
    witnesses = [(int(b), int(h) + 1) for b, h in bad]
    return len(witnesses) == 0, witnesses


def check_monotone_h(policy: np.ndarray):
    """Policy nondecreasing in channel state: theta(b,h+1) >= theta(b,h)."""
    pol = np.asarray(policy)
    bad = np.argwhere(pol[:, 1:] < pol[:, :-1])
    witnesses = [(int(b), int(h) + 1) for b, h in bad]
    return len(witnesses) == 0, witnesses


def check_first_order_dominance(transition: np.ndarray, tol: float = STRUCTURE_TOL):
    """Rows first-order stochastically nondecreasing in the row index.

    Uses the finite equivalent of the expectation ordering: the CDF of row
    h+1 must lie pointwise at or below the CDF of row h. Witnesses are
    (h, column) pairs (both 1-based) where the CDFs cross the wrong way.
    """
    P = np.asarray(transition, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise ValueError("transition must be a square matrix")
    if np.any(P < -tol) or np.max(np.abs(P.sum(axis=1) - 1.0)) > 1e-9:
        raise ValueError("transition must be row-stochastic")
    cdf = np.cumsum(P, axis=1)
    bad = np.argwhere(cdf[1:, :] > cdf[:-1, :] + tol)
    witnesses = [(int(h) + 1, int(col) + 1) for h, col in bad]
    return len(witnesses) == 0, witnesses


def transmit_cost_table(config: SystemConfig) -> np.ndarray:
    """(H, A) transmit-power costs, same state-1 SNR substitution as the model."""
    A = config.num_actions
    snr = config.channel.effective_snr_table()
    coeff = -np.log(5.0 * config.ber_constraint) / 1.5
    return coeff * (2.0 ** np.arange(A)[None, :] - 1.0) / snr[:, None]


def weight_condition_margins(config: SystemConfig) -> dict:
    """Weight-factor margins for channel-state monotonicity.

    Two views of the sufficient condition, both computed from the transmit
    cost table. The closed-form bound requires
    w <= min_h 2 * (ctr(h,1) - ctr(h+1,1)) (the adjacent-state power saving at
    one bit/symbol, doubled); its slack is weight_bound_margin. The raw mixed
    difference ctr(h+1,a) + ctr(h,a+1) - ctr(h,a) - ctr(h+1,a+1) minimized over
    all (h, a) pairs gives mixed_difference_margin. The closed-form bound's derivation
    lower-bounds 2^a by 2, so the raw margin can be the smaller (negative even
    when the bound passes); both are reported.
    """
    ctr = transmit_cost_table(config)
    H, A = ctr.shape
    if H < 2:
        return {
            "weight_bound_min": float("inf"),
            "weight_bound_margin": float("inf"),
            "weight_bound_ok": True,
            "mixed_difference_min": float("inf"),
            "mixed_difference_margin": float("inf"),
            "mixed_difference_ok": True,
            "weight": config.weight,
        }
    snr = config.channel.effective_snr_table()
    coeff = -np.log(5.0 * config.ber_constraint) / 1.5
    rhs = 2.0 * coeff * (1.0 / snr[:-1] - 1.0 / snr[1:])
    rhs_min = float(rhs.min())
    if A >= 2:
        diff = ctr[1:, :-1] + ctr[:-1, 1:] - ctr[:-1, :-1] - ctr[1:, 1:]
        diff_min = float(diff.min())
    else:
        diff_min = float("inf")
    return {
        "weight_bound_min": rhs_min,
        "weight_bound_margin": rhs_min - config.weight,
        "weight_bound_ok": config.weight <= rhs_min,
        "mixed_difference_min": diff_min,
        "mixed_difference_margin": diff_min - config.weight,
        "mixed_difference_ok": config.weight <= diff_min,
        "weight": config.weight,
    }


def check_q_submodular(model: SystemModel, values: np.ndarray, tol: float = STRUCTURE_TOL):
    """Pairwise diminishing differences of Q over (b, h, a).

    Checks Q(x+e_i) + Q(x+e_j) >= Q(x) + Q(x+e_i+e_j) for the mixed coordinate
    pairs (b,h), (b,a) and (h,a) at every anchor point. Witnesses are
    (pair, b, h, a) with h 1-based.
    """
    Q = q_table(model, np.asarray(values, dtype=float))
    witnesses = []
    margins = {
        "bh": Q[1:, :-1, :] + Q[:-1, 1:, :] - Q[:-1, :-1, :] - Q[1:, 1:, :],
        "ba": Q[1:, :, :-1] + Q[:-1, :, 1:] - Q[:-1, :, :-1] - Q[1:, :, 1:],
        "ha": Q[:, 1:, :-1] + Q[:, :-1, 1:] - Q[:, :-1, :-1] - Q[:, 1:, 1:],
    }
    for pair, m in margins.items():
        for b, h, a in np.argwhere(m < -tol):
            witnesses.append((pair, int(b), int(h) + 1, int(a)))
    return len(witnesses) == 0, witnesses


def check_q_lnatural(model: SystemModel, values: np.ndarray, tol: float = STRUCTURE_TOL):
    """Discrete (L-natural) convexity of Q in (b, a) for each channel state.

    Equivalent to submodularity of psi((b,a), z) = Q(b-z, a-z): the (b,a) pair
    gives the plain diminishing-differences inequality, and the pairs with the
    shift coordinate give the two diagonal discrete-midpoint inequalities
    Q(b+1,a) + Q(b-1,a-1) >= Q(b,a) + Q(b,a-1) and
    Q(b,a+1) + Q(b-1,a-1) >= Q(b,a) + Q(b-1,a).
    """
    Q = q_table(model, np.asarray(values, dtype=float))
    witnesses = []
    margins = {
        "ba": Q[1:, :, :-1] + Q[:-1, :, 1:] - Q[:-1, :, :-1] - Q[1:, :, 1:],
        "bz": Q[2:, :, 1:] + Q[:-2, :, :-1] - Q[1:-1, :, 1:] - Q[1:-1, :, :-1],
        "az": Q[1:, :, 2:] + Q[:-1, :, :-2] - Q[1:, :, 1:-1] - Q[:-1, :, 1:-1],
    }
    offsets = {"ba": (0, 0), "bz": (1, 1), "az": (1, 1)}
    for pair, m in margins.items():
        db, da = offsets[pair]
        for b, h, a in np.argwhere(m < -tol):
            witnesses.append((pair, int(b) + db, int(h) + 1, int(a) + da))
    return len(witnesses) == 0, witnesses


def monotone_policy_from_thresholds(thresholds: np.ndarray, queue_size: int) -> np.ndarray:
    """Decode thresholds by the max-active-level rule; total for any integers.

    theta(b, h) = max{i : b >= thresholds[h-1, i-1]}, or 0 when no level is
    active. Defined for arbitrary integer threshold tables (rows need not be
    sorted, values may exceed queue_size + 1), which the stochastic search
    exploits for its perturbed probe points; the result is always nondecreasing
    in b.
    """
    th = np.asarray(thresholds)
    H, Am = th.shape
    B = queue_size + 1
    if Am == 0:
        return np.zeros((B, H), dtype=np.int64)
    active = th[None, :, :] <= np.arange(B)[:, None, None]          # (B, H, Am)
    levels = np.where(active, np.arange(1, Am + 1)[None, None, :], 0)
    return levels.max(axis=2).astype(np.int64)                      # (B, H)


def thresholds_to_policy(thresholds: np.ndarray, queue_size: int) -> np.ndarray:
    """Decode a feasible (row-sorted) threshold table into a (B, H) policy."""
    th = np.asarray(thresholds)
    if th.ndim != 2:
        raise ValueError("thresholds must be a 2-D table")
    if np.any(th < 0) or np.any(th > queue_size + 1):
        raise ValueError(f"thresholds must lie in 0..{queue_size + 1}")
    if th.shape[1] > 1 and np.any(th[:, 1:] < th[:, :-1]):
        raise ValueError("threshold rows must be nondecreasing")
    return monotone_policy_from_thresholds(th, queue_size)


def policy_to_thresholds(policy: np.ndarray, max_action: int) -> np.ndarray:
    """Encode a b-monotone policy: smallest b with theta(b,h) >= i per level i.

    Levels never reached in a channel state encode as queue_size + 1. Raises
    on a policy that is not nondecreasing in b.
    """
    pol = np.asarray(policy)
    ok, witnesses = check_monotone_b(pol)
    if not ok:
        raise ValueError(f"policy is not nondecreasing in queue state at {witnesses[:5]}")
    B, H = pol.shape
    never = B  # == queue_size + 1
    th = np.full((H, max_action), never, dtype=np.int64)
    for i in range(1, max_action + 1):
        hit = pol >= i                                   # (B, H), monotone columns
        any_hit = hit.any(axis=0)
        first = hit.argmax(axis=0)
        th[:, i - 1] = np.where(any_hit, first, never)
    return th


@dataclass
class StructureReport:
    """Aggregated outcome of the structural checks on one solved instance."""

    monotone_in_b: bool
    bounded_marginal: bool
    monotone_in_h: bool
    violations: dict
    weight_bound_margin: float
    mixed_difference_margin: float
    dominance_ok: bool
    q_submodular_ok: bool | None = None
    q_lnatural_ok: bool | None = None
    details: dict | None = None

    def to_dict(self) -> dict:
        return {
            "monotone_in_b": self.monotone_in_b,
            "bounded_marginal": self.bounded_marginal,
            "monotone_in_h": self.monotone_in_h,
            "violations": self.violations,
            "weight_bound_margin": self.weight_bound_margin,
            "mixed_difference_margin": self.mixed_difference_margin,
            "dominance_ok": self.dominance_ok,
            "q_submodular_ok": self.q_submodular_ok,
            "q_lnatural_ok": self.q_lnatural_ok,
            "details": self.details,
        }


def build_structure_report(model: SystemModel, policy: np.ndarray, values=None) -> StructureReport:
    """Run every checker on a solved instance (Q-table checks need values)."""
    mono_b, wit_b = check_monotone_b(policy)
    bounded, wit_bm = check_bounded_marginal(policy)
    mono_h, wit_h = check_monotone_h(policy)
    dom_ok, wit_dom = check_first_order_dominance(model.config.channel.transition)
    margins = weight_condition_margins(model.config)
    violations = {
        "monotone_b": wit_b,
        "bounded_marginal": wit_bm,
        "monotone_h": wit_h,
        "dominance": wit_dom,
    }
    sub_ok = lnat_ok = None
    if values is not None:
        sub_ok, wit_sub = check_q_submodular(model, values)
        lnat_ok, wit_lnat = check_q_lnatural(model, values)
        violations["q_submodular"] = wit_sub
        violations["q_lnatural"] = wit_lnat
    return StructureReport(
        monotone_in_b=mono_b,
        bounded_marginal=bounded,
        monotone_in_h=mono_h,
        violations=violations,
        weight_bound_margin=margins["weight_bound_margin"],
        mixed_difference_margin=margins["mixed_difference_margin"],
        dominance_ok=dom_ok,
        q_submodular_ok=sub_ok,
        q_lnatural_ok=lnat_ok,
        details=margins,
    )
