"""Finite-state Markov chain models of a slow, flat Rayleigh-fading channel.

The SNR range is partitioned into K equiprobable regions of the Rayleigh SNR
distribution (exponential with mean ``average_snr``), and transitions between
adjacent regions are derived from the level crossing rate, giving a tridiagonal
row-stochastic matrix. All SNR values are linear scale; dB conversion happens
at the CLI boundary only.
"""

from dataclasses import dataclass

import numpy as np

# Normalized Doppler above which the slow-fading premise is considered broken.
SLOW_FADING_LIMIT = 0.01


@dataclass(frozen=True)
class ChannelParams:
    """Physical parameters of the fading channel and decision process.

    average_snr is the linear-scale mean SNR, doppler_hz the maximum Doppler
    shift f_D, epoch_seconds the decision-epoch duration T_D, num_states the
    number K of FSMC states.
    """

    average_snr: float
    doppler_hz: float
    epoch_seconds: float
    num_states: int

    def __post_init__(self):
        if not self.average_snr > 0:
            raise ValueError(f"average_snr must be > 0, got {self.average_snr}")
        if self.doppler_hz < 0:
            raise ValueError(f"doppler_hz must be >= 0, got {self.doppler_hz}")
        if not self.epoch_seconds > 0:
            raise ValueError(f"epoch_seconds must be > 0, got {self.epoch_seconds}")
        if self.num_states < 1:
            raise ValueError(f"num_states must be >= 1, got {self.num_states}")

    @property
    def normalized_doppler(self) -> float:
        return self.doppler_hz * self.epoch_seconds


@dataclass(frozen=True)
class FsmcChannel:
    """K-state FSMC: SNR region boundaries, stationary vector, transition matrix.

    boundaries[k] is the lower SNR edge of state k+1 (1-based state h = k+1);
    the top region extends to infinity. transition is row-stochastic; stationary
    is a left fixed point of transition. Channel states are 1-based in all
    public surfaces. Instances are immutable and safe to share across workers.
    """

    params: ChannelParams
    boundaries: np.ndarray       # (K,) ascending, boundaries[0] == 0 for equiprobable builds
    stationary: np.ndarray       # (K,) probability vector
    transition: np.ndarray       # (K, K) row-stochastic
    clamp_events: tuple = ()     # rows (1-based) whose off-diagonals were rescaled
    slow_fading_broken: bool = False   # some off-diagonal exceeded 0.5 before clamping

    def __post_init__(self):
        K = self.params.num_states
        bnd = np.array(self.boundaries, dtype=float)
        pi = np.array(self.stationary, dtype=float)
        P = np.array(self.transition, dtype=float)
        if bnd.shape != (K,) or pi.shape != (K,) or P.shape != (K, K):
            raise ValueError("boundaries/stationary/transition shapes inconsistent with num_states")
        if K > 1 and not np.all(np.diff(bnd) > 0):
            raise ValueError("boundaries must be strictly increasing")
        if np.any(P < 0) or np.any(P > 1):
            raise ValueError("transition entries must lie in [0, 1]")
        if np.max(np.abs(P.sum(axis=1) - 1.0)) > 1e-12:
            raise ValueError("transition rows must sum to 1 within 1e-12")
        if abs(pi.sum() - 1.0) > 1e-12 or np.any(pi < 0):
            raise ValueError("stationary must be a probability vector within 1e-12")
        if np.max(np.abs(pi @ P - pi)) > 1e-9:
            raise ValueError("stationary must be a left fixed point of transition within 1e-9")
        for arr in (bnd, pi, P):
            arr.setflags(write=False)
        object.__setattr__(self, "boundaries", bnd)
        object.__setattr__(self, "stationary", pi)
        object.__setattr__(self, "transition", P)

    @property
    def num_states(self) -> int:
        return self.params.num_states

    @property
    def doppler_warning(self) -> bool:
        return self.params.normalized_doppler > SLOW_FADING_LIMIT

    def effective_snr(self, h: int) -> float:
        """Representative linear SNR of state h used by the power-cost model.

        For h >= 2 this is the lower region boundary. The lowest region starts
        at SNR 0, which would make the inverse-SNR power cost singular, so h=1
        uses the conditional median of its region instead: the Rayleigh-SNR
        quantile at probability 1/(2K).
        """
        K = self.num_states
        if not 1 <= h <= K:
            raise ValueError(f"channel state must be in 1..{K}, got {h}")
        if h == 1:
            snr = -self.params.average_snr * np.log1p(-1.0 / (2 * K))
        else:
            snr = float(self.boundaries[h - 1])
        if snr <= 0:
            raise ValueError(f"non-positive effective SNR for channel state {h}")
        return float(snr)

    def effective_snr_table(self) -> np.ndarray:
        return np.array([self.effective_snr(h) for h in range(1, self.num_states + 1)])

    def with_transition(self, matrix) -> "FsmcChannel":
        """Same channel with an explicit transition matrix (stationary recomputed)."""
        P = np.array(matrix, dtype=float)
        return FsmcChannel(
            params=self.params,
            boundaries=self.boundaries.copy(),
            stationary=stationary_distribution(P),
            transition=P,
            clamp_events=self.clamp_events,
            slow_fading_broken=self.slow_fading_broken,
        )

    def build_report(self) -> dict:
        """JSON-ready summary of the constructed channel."""
        return {
            "params": {
                "average_snr": self.params.average_snr,
                "doppler_hz": self.params.doppler_hz,
                "epoch_seconds": self.params.epoch_seconds,
                "num_states": self.params.num_states,
            },
            "boundaries": [float(x) for x in self.boundaries],
            "stationary": [float(x) for x in self.stationary],
            "transition": [[float(x) for x in row] for row in self.transition],
            "effective_snr": [float(x) for x in self.effective_snr_table()],
            "clamp_events": list(self.clamp_events),
            "slow_fading_broken": self.slow_fading_broken,
            "normalized_doppler": self.params.normalized_doppler,
            "doppler_warning": self.doppler_warning,
        }


def level_crossing_rate(snr: np.ndarray, average_snr: float, doppler_hz: float) -> np.ndarray:
    """Expected number of downward crossings per second of the given SNR level."""
    snr = np.asarray(snr, dtype=float)
    return np.sqrt(2.0 * np.pi * snr / average_snr) * doppler_hz * np.exp(-snr / average_snr)


def stationary_distribution(P: np.ndarray) -> np.ndarray:
    """A left fixed point of a row-stochastic matrix.

    Solved as the normalized null vector of (P^T - I); the minimum-norm
    least-squares solution also covers reducible chains (where the fixed point
    is not unique) with a valid interior choice.
    """
    K = P.shape[0]
    if K == 1:
        return np.ones(1)
    A = np.vstack([P.T - np.eye(K), np.ones((1, K))])
    b = np.zeros(K + 1)
    b[-1] = 1.0
    pi = np.linalg.lstsq(A, b, rcond=None)[0]
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


def build_fsmc(params: ChannelParams) -> FsmcChannel:
    """Construct the equiprobable-partition FSMC for the given parameters.

    Boundaries are the Rayleigh-SNR quantiles at probabilities (k-1)/K, so
    every region carries stationary mass exactly 1/K. Transitions are
    tridiagonal, derived from the level crossing rate at the shared boundary:
    P[k, k+1] = N(boundary[k+1]) * T_D / pi_k (and symmetrically downward).
    Off-diagonals are rescaled if they would drive a diagonal negative; every
    such clamp is recorded on the returned channel.
    """
    K = params.num_states
    gbar = params.average_snr
    k = np.arange(1, K + 1)
    boundaries = -gbar * np.log1p(-(k - 1) / K)
    boundaries[0] = 0.0

    pi_design = np.full(K, 1.0 / K)
    P = np.zeros((K, K))
    clamps = []
    slow_broken = False
    if K == 1:
        P[0, 0] = 1.0
    else:
        # Crossing rate at each interior boundary, shared by the two adjacent states.
        rates = level_crossing_rate(boundaries[1:], gbar, params.doppler_hz)
        up = rates * params.epoch_seconds * K      # P[k, k+1] for k = 0..K-2
        down = up.copy()                           # P[k+1, k]; equal because pi is uniform
        if np.max(up) > 0.5:
            slow_broken = True
        for row in range(K):
            u = up[row] if row < K - 1 else 0.0
            d = down[row - 1] if row > 0 else 0.0
            s = u + d
            if s > 1.0:
                u, d = u / s, d / s
                diag = 0.0
                clamps.append(row + 1)
            else:
                diag = 1.0 - s
            if row < K - 1:
                P[row, row + 1] = u
            if row > 0:
                P[row, row - 1] = d
            P[row, row] = diag
    stationary = pi_design if not clamps else stationary_distribution(P)

    return FsmcChannel(
        params=params,
        boundaries=boundaries,
        stationary=stationary,
        transition=P,
        clamp_events=tuple(clamps),
        slow_fading_broken=slow_broken,
    )


def sample_next_state(channel: FsmcChannel, h: int, rng: np.random.Generator) -> int:
    """Draw the next channel state (1-based) from row h of the transition matrix."""
    K = channel.num_states
    if not 1 <= h <= K:
        raise ValueError(f"channel state must be in 1..{K}, got {h}")
    u = rng.random()
    cdf = np.cumsum(channel.transition[h - 1])
    return min(int(np.searchsorted(cdf, u, side="right")), K - 1) + 1
