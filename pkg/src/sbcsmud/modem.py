"""Rate-1/2 convolutional code with random interleaving, and DQPSK.

Trellis convention: the encoder register holds the current input in its
most significant bit, so a generator's octal MSB taps the newest bit
(the usual reading of the (133, 171) pair).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import kernels
from .errors import ConfigurationError, DomainError


@dataclass(frozen=True)
class CodecConfig:
    constraint_length: int = 7
    generators: tuple[int, int] = (0o133, 0o171)
    interleaver_seed: int = 2024
    info_bits: int = 100

    def __post_init__(self):
        k = self.constraint_length
        if k < 2:
            raise ConfigurationError("constraint length must be >= 2")
        if len(self.generators) != 2:
            raise ConfigurationError("rate-1/2 code needs exactly two generators")
        for g in self.generators:
            if not 0 < g < (1 << k):
                raise ConfigurationError(f"generator {oct(g)} does not fit constraint length {k}")
        if self.info_bits < 1:
            raise ConfigurationError("info_bits must be positive")

    @property
    def tail(self) -> int:
        return self.constraint_length - 1

    @property
    def coded_length(self) -> int:
        return 2 * (self.info_bits + self.tail)

    @cached_property
    def taps(self) -> np.ndarray:
        """(2, K) array; ``taps[g, i]`` multiplies the input delayed by i."""
        k = self.constraint_length
        return np.array(
            [[(g >> (k - 1 - i)) & 1 for i in range(k)] for g in self.generators], dtype=np.uint8
        )

    @cached_property
    def permutation(self) -> np.ndarray:
        """Interleaver map: transmitted position p carries coded bit ``permutation[p]``."""
        return np.random.default_rng(self.interleaver_seed).permutation(self.coded_length)

    @cached_property
    def trellis(self) -> tuple[np.ndarray, np.ndarray, int]:
        k = self.constraint_length
        n_states = 1 << (k - 1)
        regs = (np.arange(n_states)[:, None] << 1) | np.arange(2)[None, :]
        prev_state = (regs & (n_states - 1)).astype(np.int64)
        prev_out = np.empty((n_states, 2, 2), dtype=np.uint8)
        for gi, g in enumerate(self.generators):
            prev_out[:, :, gi] = np.vectorize(lambda r: bin(r & g).count("1") & 1)(regs)
        return prev_state, prev_out, k - 2


def _as_bits(bits, n, what) -> np.ndarray:
    b = np.asarray(bits)
    if b.ndim != 1 or b.shape[0] != n:
        raise DomainError(f"{what}: expected {n} bits, got shape {b.shape}")
    if b.size and (b.min() < 0 or b.max() > 1):
        raise DomainError(f"{what}: values must be 0 or 1")
    return b.astype(np.uint8)


def encode_frame(info_bits, cfg: CodecConfig) -> np.ndarray:
    """Terminated convolutional encoding followed by interleaving.

    Output length is ``2 * (L_c + K - 1)``; the two generator outputs are
    serialized alternately before interleaving.
    """
    u = _as_bits(info_bits, cfg.info_bits, "encode_frame")
    u = np.concatenate([u, np.zeros(cfg.tail, dtype=np.uint8)])
    coded = kernels.conv_encode(u, cfg.taps).reshape(-1)
    return coded[cfg.permutation]


def deinterleave(bits, cfg: CodecConfig) -> np.ndarray:
    out = np.empty(cfg.coded_length, dtype=np.uint8)
    out[cfg.permutation] = bits
    return out


def viterbi_decode(bits, cfg: CodecConfig) -> np.ndarray:
    """Deinterleave and run hard-decision Viterbi; returns the ``L_c`` info bits."""
    rx = _as_bits(bits, cfg.coded_length, "viterbi_decode")
    pairs = deinterleave(rx, cfg).reshape(-1, 2)
    prev_state, prev_out, shift = cfg.trellis
    return kernels.viterbi(pairs, prev_state, prev_out, shift)[: cfg.info_bits]


# Gray map between bit pairs and phase increments in quarter turns
_QUARTER_OF = np.array([0, 1, 3, 2])  # index b0*2+b1 -> quarter turns
_BITS_OF = np.array([[0, 0], [0, 1], [1, 1], [1, 0]], dtype=np.uint8)  # quarter turns -> bits
_QPSK = np.array([1, 1j, -1, -1j], dtype=np.complex128)


@dataclass(frozen=True, eq=False)
class SymbolFrame:
    """Reference symbol, differential payload, then zero-increment padding."""

    symbols: np.ndarray
    l_payload: int
    l_pad: int = 0

    @property
    def length(self) -> int:
        return self.symbols.shape[0]


def frame_length(coded_bits: int, d: int) -> tuple[int, int]:
    """(L, l_pad) for a frame carrying ``coded_bits`` and divisible by ``d``."""
    payload = coded_bits // 2
    unpadded = 1 + payload
    total = -(-unpadded // d) * d
    return total, total - unpadded


def dqpsk_modulate(coded_bits, d: int = 1) -> SymbolFrame:
    b = np.asarray(coded_bits, dtype=np.uint8)
    if b.ndim != 1 or b.shape[0] % 2:
        raise DomainError(f"DQPSK needs an even number of bits, got {b.shape}")
    if d < 1:
        raise DomainError("block size must be >= 1")
    pairs = b.reshape(-1, 2)
    quarters = _QUARTER_OF[pairs[:, 0] * 2 + pairs[:, 1]]
    total, pad = frame_length(b.shape[0], d)
    steps = np.concatenate([[0], quarters, np.zeros(pad, dtype=np.int64)])
    phase = np.cumsum(steps) % 4
    symbols = _QPSK[phase]
    return SymbolFrame(symbols, l_payload=pairs.shape[0], l_pad=pad)


def dqpsk_demodulate(estimates, l_payload: int, l_pad: int = 0) -> np.ndarray:
    """Differential detection: quadrant of x_l * conj(x_{l-1}), inverse Gray map."""
    x = np.asarray(estimates, dtype=np.complex128)
    if x.ndim != 1 or x.shape[0] != 1 + l_payload + l_pad:
        raise DomainError(
            f"estimate length {x.shape} does not match 1 + {l_payload} + {l_pad}"
        )
    if l_payload == 0:
        return np.zeros(0, dtype=np.uint8)
    z = x[1 : l_payload + 1] * np.conj(x[:l_payload])
    quarters = np.rint(np.angle(z) / (np.pi / 2)).astype(np.int64) % 4
    return _BITS_OF[quarters].reshape(-1)
