"""Sequence-block group OMP multiuser detection.

Each iteration correlates every user's sequence block with the residual,
adds the best-scoring user to the support, re-fits all supported users by
per-column least squares and updates the residual.  With D = 1 this is
the conventional group OMP detector.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ConfigurationError, DomainError, OverSaturationError
from .modem import CodecConfig, dqpsk_demodulate, viterbi_decode
from .phy import Observation
from .seqdesign import BlockAssignment, SensingMatrix, block_correlation_matrix

STOP_MODES = ("known_k", "residual_threshold", "both")

# Gram eigenvalue ratio below which a position is solved by SVD least squares;
# keeps the normal-equation error near cond(B)^2 * eps <= 1e-10.
_GRAM_RCOND = 1e-6


@dataclass(frozen=True)
class StopRule:
    """When to end the greedy iterations.

    ``gamma`` is compared against the squared Frobenius norm of the residual.
    ``max_iters=None`` means K for ``known_k`` and M otherwise.
    """

    mode: str = "known_k"
    k: int | None = None
    gamma: float | None = None
    max_iters: int | None = None

    def __post_init__(self):
        if self.mode not in STOP_MODES:
            raise ConfigurationError(f"unknown stop mode {self.mode!r}; expected one of {STOP_MODES}")
        if self.mode in ("known_k", "both") and (self.k is None or self.k < 0):
            raise ConfigurationError(f"{self.mode} stopping needs k >= 0")
        if self.mode in ("residual_threshold", "both") and not (self.gamma is not None and self.gamma > 0):
            raise ConfigurationError(f"{self.mode} stopping needs gamma > 0")
        if self.max_iters is not None and self.max_iters < 1:
            raise ConfigurationError("max_iters must be >= 1")

    @classmethod
    def known_k(cls, k: int, max_iters=None) -> "StopRule":
        return cls("known_k", k=k, max_iters=max_iters)

    @classmethod
    def threshold(cls, gamma: float, max_iters=None) -> "StopRule":
        return cls("residual_threshold", gamma=gamma, max_iters=max_iters)

    @classmethod
    def noise_floor(cls, sigma2, m, n_cols, margin=0.25, *, k=None, max_iters=None) -> "StopRule":
        """Threshold at the expected noise energy plus a relative margin.

        gamma = (1 + margin) * M * L * sigma2.  In the noiseless case the
        threshold falls back to a numerical-zero floor.
        """
        gamma = (1.0 + margin) * m * n_cols * sigma2
        if gamma <= 0:
            gamma = 1e-18 * m * n_cols
        mode = "residual_threshold" if k is None else "both"
        return cls(mode, k=k, gamma=gamma, max_iters=max_iters)

    def resolved_max_iters(self, m: int, n: int) -> int:
        if self.max_iters is not None:
            return self.max_iters
        if self.mode == "known_k":
            return min(self.k, n)
        return min(m, n)

    def fires(self, q: int, energy: float) -> bool:
        if self.mode in ("known_k", "both") and q >= self.k:
            return True
        if self.mode in ("residual_threshold", "both") and energy < self.gamma:
            return True
        return False


@dataclass(frozen=True, eq=False)
class DetectionResult:
    """Detected users in selection order, their symbol estimates and the iteration trace.

    ``residual_energy_trace[0]`` is ||Y||^2; entry q is the residual energy
    after iteration q.
    """

    support: tuple[int, ...]
    estimates: np.ndarray
    residual_energy_trace: tuple[float, ...]
    iterations: int
    truncated: bool = False
    rank_deficient: bool = False
    scores: list = field(default_factory=list, repr=False)

    def estimate_for(self, user: int) -> np.ndarray:
        return self.estimates[self.support.index(user)]


def _as_matrix(y) -> np.ndarray:
    y = y.y if isinstance(y, Observation) else np.asarray(y, dtype=np.complex128)
    if y.ndim != 2:
        raise DomainError(f"observation must be an M x L matrix, got shape {y.shape}")
    return y


def _check_layout(y, a: SensingMatrix, blk: BlockAssignment):
    m, n_cols = y.shape
    if m != a.m:
        raise DomainError(f"observation has {m} rows but sensing matrix has M={a.m}")
    if blk.blocks.max(initial=0) >= a.n:
        raise DomainError("block assignment indexes past the sensing matrix")
    if n_cols == 0 or n_cols % blk.d:
        raise DomainError(f"L={n_cols} is not a positive multiple of D={blk.d}")


def block_residual_correlation(block, residual, d_of=None) -> float:
    """Sum over symbol columns of |b_{d(l)}^H r_l| for one user's block.

    ``d_of`` maps column l to its block position; default ``l mod D``.
    """
    block = np.asarray(block)
    if block.ndim == 1:
        block = block[:, None]
    residual = np.asarray(residual)
    if residual.ndim != 2 or residual.shape[0] != block.shape[0]:
        raise DomainError(f"residual shape {residual.shape} incompatible with block {block.shape}")
    n_cols = residual.shape[1]
    if d_of is None:
        if n_cols % block.shape[1]:
            raise DomainError(f"L={n_cols} is not a multiple of D={block.shape[1]}")
        d_of = np.arange(n_cols) % block.shape[1]
    d_of = np.asarray(d_of)
    if d_of.shape != (n_cols,):
        raise DomainError("d_of must give one block position per column")
    b = block[:, d_of]
    return float(np.abs(np.sum(b.conj() * residual, axis=0)).sum())


def _fit(support, blk: BlockAssignment, a: SensingMatrix, y: np.ndarray):
    """Per-position least squares; returns (estimates, residual, ill_conditioned).

    Well-conditioned positions use the normal equations (identical to the
    pseudo-inverse solution for full column rank); the rest fall back to
    minimum-norm SVD least squares.
    """
    m, n_cols = y.shape
    k = len(support)
    if k > m:
        raise OverSaturationError(f"support of {k} users exceeds M={m} chips")
    if k == 0:
        return np.zeros((0, n_cols), dtype=np.complex128), y.copy(), False
    d = blk.d
    groups = n_cols // d
    rows = blk.blocks[list(support)]
    # (D, M, k) dictionaries and (D, M, G) observations, one slice per block position
    b = np.moveaxis(a.entries[:, rows.T], 0, 1)
    yd = y.reshape(m, groups, d).transpose(2, 0, 1)
    bh = b.conj().transpose(0, 2, 1)
    gram = bh @ b
    rhs = bh @ yd
    eig = np.linalg.eigvalsh(gram)
    good = eig[:, 0] > _GRAM_RCOND * eig[:, -1]
    sol = np.empty((d, k, groups), dtype=np.complex128)
    if good.all():
        sol[:] = np.linalg.solve(gram, rhs)
    else:
        for pos in range(d):
            if good[pos]:
                sol[pos] = np.linalg.solve(gram[pos], rhs[pos])
            else:
                sol[pos] = np.linalg.lstsq(b[pos], yd[pos], rcond=None)[0]
    r = yd - b @ sol
    x = sol.transpose(1, 2, 0).reshape(k, n_cols)
    r = r.transpose(1, 2, 0).reshape(m, n_cols)
    return x, r, not bool(good.all())


def ls_estimate(support, assignment: BlockAssignment, a: SensingMatrix, y) -> np.ndarray:
    """Least-squares symbol estimates of the supported users, shape (|support|, L).

    Column l is solved against the matrix of each supported user's sequence
    at block position l mod D (minimum-norm solution if rank deficient).
    """
    y = _as_matrix(y)
    _check_layout(y, a, assignment)
    support = [int(s) for s in support]
    if len(set(support)) != len(support):
        raise DomainError("support contains duplicates")
    return _fit(support, assignment, a, y)[0]


def sb_gomp(y, assignment: BlockAssignment, a: SensingMatrix, stop: StopRule,
            *, penalty: bool = False, keep_scores: bool = False) -> DetectionResult:
    """Greedy joint activity and data detection.

    ``penalty=True`` enables the scoring variant that subtracts the block
    correlation with the previously selected user from the (1/L-scaled)
    score.  Ties in the argmax go to the lowest user index.
    """
    y = _as_matrix(y)
    _check_layout(y, a, assignment)
    m, n_cols = y.shape
    n_users = assignment.n_users
    a_h = np.ascontiguousarray(a.entries.conj().T)
    blocks = np.ascontiguousarray(assignment.blocks)
    corr = block_correlation_matrix(a, assignment) if penalty else None
    limit = stop.resolved_max_iters(m, n_users)

    support: list[int] = []
    chosen = np.zeros(n_users, dtype=bool)
    x = np.zeros((0, n_cols), dtype=np.complex128)
    residual = y
    energy = float(np.vdot(y, y).real)
    trace = [energy]
    deficient = False
    all_scores = []
    truncated = False

    while not stop.fires(len(support), energy):
        if len(support) >= limit or len(support) >= n_users:
            truncated = True
            break
        scores = kernels.block_scores(a_h @ residual, blocks)
        if penalty and support:
            scores = scores / n_cols - corr[:, support[-1]]
        scores[chosen] = -np.inf
        if keep_scores:
            all_scores.append(scores.copy())
        pick = int(np.argmax(scores))
        support.append(pick)
        chosen[pick] = True
        try:
            x, residual, dflag = _fit(support, assignment, a, y)
        except OverSaturationError as exc:
            partial = DetectionResult(tuple(support[:-1]), x, tuple(trace), len(trace) - 1,
                                      truncated=True, rank_deficient=deficient)
            raise OverSaturationError(str(exc), partial=partial) from None
        deficient |= dflag
        energy = float(np.vdot(residual, residual).real)
        trace.append(energy)

    return DetectionResult(tuple(support), x, tuple(trace), len(support),
                           truncated=truncated, rank_deficient=deficient, scores=all_scores)


def brute_force_support_oracle(y, assignment: BlockAssignment, a: SensingMatrix, k: int,
                               *, max_subsets: int = 100_000, return_residual: bool = False):
    """Exhaustive search for the k-subset of users with least LS residual energy."""
    y = _as_matrix(y)
    _check_layout(y, a, assignment)
    n_users = assignment.n_users
    if not 0 <= k <= n_users:
        raise DomainError(f"k={k} out of range for N={n_users}")
    count = math.comb(n_users, k)
    if count > max_subsets:
        raise DomainError(f"C({n_users},{k})={count} subsets exceeds the limit of {max_subsets}")
    best, best_energy = (), math.inf
    for subset in itertools.combinations(range(n_users), k):
        _, r, _ = _fit(subset, assignment, a, y)
        e = float(np.vdot(r, r).real)
        if e < best_energy:
            best, best_energy = subset, e
    best = tuple(int(u) for u in best)
    return (best, best_energy) if return_residual else best


def decode_detected(result: DetectionResult, codec: CodecConfig, users=None) -> dict[int, np.ndarray]:
    """Differential demodulation plus Viterbi decoding of each detected user's estimates.

    ``users`` restricts decoding to a subset of the support.
    """
    n_cols = result.estimates.shape[1]
    l_payload = codec.coded_length // 2
    l_pad = n_cols - 1 - l_payload
    if l_pad < 0:
        raise DomainError(f"estimate length {n_cols} too short for {codec.coded_length} coded bits")
    out = {}
    for row, user in enumerate(result.support):
        if users is not None and user not in users:
            continue
        hard = dqpsk_demodulate(result.estimates[row], l_payload, l_pad)
        out[user] = viterbi_decode(hard, codec)
    return out
