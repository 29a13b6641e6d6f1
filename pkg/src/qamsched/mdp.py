"""Controlled Markov chain for the cross-layer scheduler.

State x = (b, h): queue occupancy b in {0..L_B} and channel state h in {1..K}.
Action a in {0..A_m} selects the 2^a-QAM constellation (a = 0: no transmission)
and equals the number of packets served per epoch. The queue follows the
Lindley recursion b' = min([b-a]^+ + f, L_B) with i.i.d. arrivals f, the
channel evolves independently, and the per-epoch cost is the weighted expected
overflow plus the minimum transmit power meeting the BER constraint.

SystemModel precomputes the cost tables and the queue kernel so solver inner
loops are table lookups; instances are immutable and safe to share.
"""

from dataclasses import dataclass
import hashlib

import numpy as np
from scipy import stats

from .channel import FsmcChannel


@dataclass(frozen=True)
class ArrivalDist:
    """I.i.d. per-epoch packet arrival distribution on {0..L_B}."""

    pmf: np.ndarray

    def __post_init__(self):
        pmf = np.array(self.pmf, dtype=float)
        if pmf.ndim != 1 or pmf.size < 1:
            raise ValueError("arrival pmf must be a nonempty 1-D vector")
        if np.any(pmf < 0):
            raise ValueError("arrival pmf entries must be nonnegative")
        if abs(pmf.sum() - 1.0) > 1e-12:
            raise ValueError("arrival pmf must sum to 1 within 1e-12")
        pmf.setflags(write=False)
        object.__setattr__(self, "pmf", pmf)

    @property
    def max_packets(self) -> int:
        return self.pmf.size - 1


def make_poisson_arrivals(rate: float, queue_size: int, truncation: str = "renormalize") -> ArrivalDist:
    """Poisson(rate) arrivals truncated to {0..queue_size}.

    truncation: "renormalize" rescales the retained mass to 1 (default);
    "lump_tail" moves the tail mass onto f = queue_size instead.
    """
    if rate < 0:
        raise ValueError(f"arrival rate must be >= 0, got {rate}")
    support = np.arange(queue_size + 1)
    pmf = stats.poisson.pmf(support, rate)
    if truncation == "renormalize":
        pmf = pmf / pmf.sum()
    elif truncation == "lump_tail":
        pmf = pmf.copy()
        pmf[-1] = stats.poisson.sf(queue_size - 1, rate)  # exact tail mass P(f >= L_B)
        pmf = pmf / pmf.sum()
    else:
        raise ValueError(f"unknown truncation mode: {truncation!r}")
    return ArrivalDist(pmf=pmf)


@dataclass(frozen=True)
class SystemConfig:
    """Scalar system parameters plus the arrival and channel models."""

    queue_size: int          # L_B, packets
    max_action: int          # A_m <= L_B, bits/symbol at the top constellation
    weight: float            # w > 0, priority of overflow loss vs transmit power
    ber_constraint: float    # target bit error rate, in (0, 0.2]
    discount: float          # beta in [0, 1)
    arrivals: ArrivalDist
    channel: FsmcChannel
    packet_bits: int | None = None   # L_P, informational (T_D = L_P * T_S)

    def __post_init__(self):
        if self.queue_size < 1:
            raise ValueError(f"queue_size must be >= 1, got {self.queue_size}")
        if not 0 <= self.max_action <= self.queue_size:
            raise ValueError(f"max_action must be in 0..queue_size, got {self.max_action}")
        if not self.weight > 0:
            raise ValueError(f"weight must be > 0, got {self.weight}")
        if not 0 < self.ber_constraint <= 0.2:
            raise ValueError(f"ber_constraint must be in (0, 0.2], got {self.ber_constraint}")
        if not 0 <= self.discount < 1:
            raise ValueError(f"discount must be in [0, 1), got {self.discount}")
        if self.arrivals.max_packets != self.queue_size:
            raise ValueError("arrival pmf support must be exactly {0..queue_size}")

    @property
    def num_queue_states(self) -> int:
        return self.queue_size + 1

    @property
    def num_channel_states(self) -> int:
        return self.channel.num_states

    @property
    def num_actions(self) -> int:
        return self.max_action + 1


@dataclass(frozen=True)
class SystemState:
    """Joint state: queue occupancy b (0-based) and channel state h (1-based)."""

    b: int
    h: int

    def __post_init__(self):
        if self.b < 0 or self.h < 1:
            raise ValueError(f"invalid system state ({self.b}, {self.h})")


def queue_next(b: int, a: int, f: int, queue_size: int) -> int:
    """Lindley recursion: serve a, then admit f, capped at the buffer size."""
    return min(max(b - a, 0) + f, queue_size)


def queue_transition_row(b: int, a: int, arrivals: ArrivalDist, queue_size: int) -> np.ndarray:
    """Distribution of the next queue state given occupancy b and action a."""
    pmf = arrivals.pmf
    y = max(b - a, 0)
    row = np.zeros(queue_size + 1)
    row[y:queue_size] = pmf[: queue_size - y]
    row[queue_size] = pmf[queue_size - y :].sum()
    return row


def transmit_power_cost(h: int, a: int, ber_constraint: float, channel: FsmcChannel) -> float:
    """Minimum power to send a bits/symbol in channel state h at the target BER."""
    coeff = -np.log(5.0 * ber_constraint) / 1.5
    return coeff * (2.0 ** a - 1.0) / channel.effective_snr(h)


def immediate_cost(b: int, h: int, a: int, config: SystemConfig) -> float:
    """Per-epoch cost c(b, h, a): weighted expected overflow plus transmit power."""
    pmf = config.arrivals.pmf
    y = max(b - a, 0)
    overflow = float(np.sum(pmf * np.maximum(y + np.arange(pmf.size) - config.queue_size, 0)))
    return config.weight * overflow + transmit_power_cost(h, a, config.ber_constraint, config.channel)


class SystemModel:
    """Immutable bundle of the config and its precomputed tables.

    Tables (all read-only):
      cost            (B, H, A)  immediate cost c(b, h, a)
      cost_queue      (B, A)     weighted expected-overflow part
      cost_tx         (H, A)     transmit-power part
      expected_overflow (B, A)   E_f[ [[b-a]^+ + f - L_B]^+ ] (unweighted)
      queue_kernel    (A, B, B)  P^a[b, b']
    Channel transitions live on config.channel.transition (H, H).
    """

    def __init__(self, config: SystemConfig, poisson_truncation: str = "renormalize"):
        self.config = config
        self.poisson_truncation = poisson_truncation  # informational echo for reports
        B, H, A = config.num_queue_states, config.num_channel_states, config.num_actions
        L = config.queue_size
        pmf = config.arrivals.pmf

        # Rows of the queue kernel depend on b, a only through y = [b-a]^+.
        rows_by_y = np.zeros((B, B))
        overflow_by_y = np.zeros(B)
        f = np.arange(B)
        for y in range(B):
            rows_by_y[y, y:L] = pmf[: L - y]
            rows_by_y[y, L] = pmf[L - y :].sum()
            overflow_by_y[y] = float(np.sum(pmf * np.maximum(y + f - L, 0)))

        b_idx = np.arange(B)[:, None]
        a_idx = np.arange(A)[None, :]
        y_table = np.maximum(b_idx - a_idx, 0)            # (B, A)

        self.expected_overflow = overflow_by_y[y_table]    # (B, A)
        self.cost_queue = config.weight * self.expected_overflow
        snr = config.channel.effective_snr_table()         # (H,)
        coeff = -np.log(5.0 * config.ber_constraint) / 1.5
        self.cost_tx = coeff * (2.0 ** np.arange(A)[None, :] - 1.0) / snr[:, None]  # (H, A)
        self.cost = self.cost_queue[:, None, :] + self.cost_tx[None, :, :]          # (B, H, A)
        self.queue_kernel = rows_by_y[y_table.T]           # (A, B, B)

        if np.max(np.abs(self.queue_kernel.sum(axis=2) - 1.0)) > 1e-12:
            raise ValueError("queue kernel rows must sum to 1 within 1e-12")
        if np.any(self.cost < 0):
            raise ValueError("immediate cost must be nonnegative")
        for arr in (self.cost, self.cost_queue, self.cost_tx, self.expected_overflow, self.queue_kernel):
            arr.setflags(write=False)

    @property
    def shape(self) -> tuple:
        """(B, H, A)."""
        return self.cost.shape

    def summary(self) -> dict:
        """JSON-ready model summary: config echo, table checksum, decided options."""
        cfg = self.config
        return {
            "queue_size": cfg.queue_size,
            "max_action": cfg.max_action,
            "weight": cfg.weight,
            "ber_constraint": cfg.ber_constraint,
            "discount": cfg.discount,
            "arrival_pmf": [float(x) for x in cfg.arrivals.pmf],
            "packet_bits": cfg.packet_bits,
            "channel": cfg.channel.build_report(),
            "cost_table_sha256": hashlib.sha256(np.ascontiguousarray(self.cost).tobytes()).hexdigest(),
            "options": {
                "poisson_truncation": self.poisson_truncation,
                "lowest_state_snr": "conditional median of the bottom SNR region (quantile 1/(2K))",
            },
        }


def full_transition(state: SystemState, a: int, model: SystemModel) -> np.ndarray:
    """Joint next-state distribution over (b', h'), shape (B, H)."""
    cfg = model.config
    B, H, A = model.shape
    if not (0 <= state.b < B and 1 <= state.h <= H and 0 <= a < A):
        raise ValueError(f"invalid (state, action): (({state.b}, {state.h}), {a})")
    qrow = model.queue_kernel[a, state.b]                  # (B,)
    hrow = cfg.channel.transition[state.h - 1]             # (H,)
    return np.outer(qrow, hrow)
