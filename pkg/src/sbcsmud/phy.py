"""Uplink signal assembly: sporadic activity, block spreading, block-fading channel, AWGN.

The channel acts per subcarrier (frequency domain), so one chip of a
spreading sequence rides on one subcarrier gain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DomainError
from .modem import SymbolFrame


@dataclass(frozen=True, eq=False)
class ActivityVector:
    active: np.ndarray

    @property
    def k(self) -> int:
        return int(np.count_nonzero(self.active))

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.active)


def draw_activity(n: int, p_a: float, rng: np.random.Generator) -> ActivityVector:
    """Independent Bernoulli(p_a) activity for each of ``n`` users."""
    if not 0.0 < p_a < 1.0:
        raise ConfigurationError(f"activity probability must lie in (0, 1), got {p_a}")
    if n < 1:
        raise ConfigurationError(f"user count must be positive, got {n}")
    return ActivityVector(rng.random(n) < p_a)


def spread_frame(frame, block: np.ndarray) -> np.ndarray:
    """Spread symbol l over the block's sequence at position l mod D.

    ``block`` is the M x D matrix of the user's sequences; ``frame`` a
    :class:`SymbolFrame` or a plain symbol vector.
    """
    symbols = frame.symbols if isinstance(frame, SymbolFrame) else np.asarray(frame)
    block = np.asarray(block)
    if block.ndim == 1:
        block = block[:, None]
    d = block.shape[1]
    n_cols = symbols.shape[0]
    if n_cols % d:
        raise DomainError(f"frame length {n_cols} is not a multiple of block size {d}")
    return block[:, np.arange(n_cols) % d] * symbols[None, :]


@dataclass(frozen=True, eq=False)
class ChannelRealization:
    """Per-user frequency responses, constant over each fading block.

    ``freq_response`` has shape (N, n_blocks, M); ``taps`` has shape
    (N, n_blocks, tap_count).  Block b covers symbol columns
    ``[b * fading_block_length, (b + 1) * fading_block_length)``.
    """

    freq_response: np.ndarray
    taps: np.ndarray
    fading_block_length: int
    n_cols: int

    def gains(self, user: int) -> np.ndarray:
        """M x L matrix of the subcarrier gain seen by each symbol column."""
        block_of = np.arange(self.n_cols) // self.fading_block_length
        return self.freq_response[user, block_of, :].T

    @classmethod
    def flat(cls, n_users: int, m: int, n_cols: int, gain: complex = 1.0) -> "ChannelRealization":
        """Frequency-flat, time-invariant channel with a common gain (test fixture)."""
        resp = np.full((n_users, 1, m), gain, dtype=np.complex128)
        taps = np.full((n_users, 1, 1), gain, dtype=np.complex128)
        return cls(resp, taps, max(n_cols, 1), n_cols)


def tap_power_profile(tap_count: int, decay_constant: float) -> np.ndarray:
    p = np.exp(-decay_constant * np.arange(tap_count))
    return p / p.sum()


def draw_channel(
    n_users: int,
    m_subcarriers: int,
    tap_count: int,
    decay_constant: float,
    fading_block_length: int,
    n_symbol_columns: int,
    rng: np.random.Generator,
) -> ChannelRealization:
    """Exponentially decaying Rayleigh taps, redrawn every fading block, DFT'd at M points."""
    if n_users < 1 or m_subcarriers < 1 or n_symbol_columns < 1:
        raise ConfigurationError("user, subcarrier and column counts must be positive")
    if not 1 <= tap_count <= m_subcarriers:
        raise ConfigurationError(f"tap count must lie in [1, M={m_subcarriers}], got {tap_count}")
    if not decay_constant > 0:
        raise ConfigurationError(f"decay constant must be positive, got {decay_constant}")
    if fading_block_length < 1:
        raise ConfigurationError("fading block length must be >= 1")
    n_blocks = -(-n_symbol_columns // fading_block_length)
    p = tap_power_profile(tap_count, decay_constant)
    shape = (n_users, n_blocks, tap_count)
    taps = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) * np.sqrt(p / 2)
    resp = np.fft.fft(taps, n=m_subcarriers, axis=-1)
    return ChannelRealization(resp, taps, fading_block_length, n_symbol_columns)


def noise_variance(snr_db: float) -> float:
    """Complex noise variance per chip for unit-energy spread symbols."""
    if math.isnan(snr_db):
        raise ConfigurationError("SNR is NaN")
    if snr_db == math.inf:
        return 0.0
    return 10.0 ** (-snr_db / 10.0)


@dataclass(frozen=True, eq=False)
class Observation:
    y: np.ndarray
    noise_variance: float
    channel: ChannelRealization | None
    snr_db: float

    @property
    def shape(self):
        return self.y.shape


def assemble_observation(spread_signals, activity: ActivityVector, channel: ChannelRealization,
                         snr_db: float, rng: np.random.Generator) -> Observation:
    """Y = sum over active n of (channel gains * spread_n) + W.

    ``spread_signals[n]`` must be the M x L spread frame of user n for every
    active n; entries for inactive users are never read.  Noise is drawn
    even at infinite SNR so the random stream does not depend on the SNR.
    """
    sigma2 = noise_variance(snr_db)
    m = channel.freq_response.shape[2]
    n_cols = channel.n_cols
    if activity.active.shape[0] != channel.freq_response.shape[0]:
        raise DomainError("activity and channel disagree on the number of users")
    y = np.zeros((m, n_cols), dtype=np.complex128)
    for n in activity.support:
        s = np.asarray(spread_signals[n])
        if s.shape != (m, n_cols):
            raise DomainError(f"user {n}: spread frame shape {s.shape} != {(m, n_cols)}")
        y += channel.gains(n) * s
    w = rng.standard_normal((m, n_cols)) + 1j * rng.standard_normal((m, n_cols))
    y += w * math.sqrt(sigma2 / 2)
    if not np.all(np.isfinite(y)):
        raise DomainError("observation contains non-finite values")
    return Observation(y, sigma2, channel, snr_db)
