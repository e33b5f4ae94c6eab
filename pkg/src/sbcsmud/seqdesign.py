"""Sensing-matrix construction, sliding-window block assignment and coherence diagnostics."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, DomainError


@dataclass(frozen=True, eq=False)
class SensingMatrix:
    """M x N dictionary of spreading sequences, stored with unit-norm columns.

    ``column_norm`` is the Euclidean norm each column had before
    normalization (``sqrt(M)`` for unit-modulus chips).
    """

    entries: np.ndarray
    column_norm: float
    seed: int | None = None

    def __post_init__(self):
        self.entries.setflags(write=False)

    @property
    def m(self) -> int:
        return self.entries.shape[0]

    @property
    def n(self) -> int:
        return self.entries.shape[1]

    @property
    def raw(self) -> np.ndarray:
        """Unit-modulus chips, i.e. the columns before normalization."""
        return self.entries * self.column_norm

    @classmethod
    def from_array(cls, arr, *, require_overloaded=True, seed=None) -> "SensingMatrix":
        """Wrap an arbitrary complex matrix, normalizing its columns.

        ``require_overloaded=False`` admits M >= N, which is only useful for
        building reference cases such as an orthonormal basis.
        """
        arr = np.array(arr, dtype=np.complex128, ndmin=2)
        m, n = arr.shape
        _check_shape(m, n, require_overloaded)
        norms = np.linalg.norm(arr, axis=0)
        if np.any(norms == 0):
            raise ConfigurationError("sensing matrix has an all-zero column")
        common = float(norms[0]) if np.allclose(norms, norms[0]) else 1.0
        return cls(arr / norms, common, seed)


def _check_shape(m, n, require_overloaded=True):
    if m < 1:
        raise ConfigurationError(f"chip count must be >= 1, got {m}")
    if n < 2:
        raise ConfigurationError(f"sequence count must be >= 2, got {n}")
    if require_overloaded and m >= n:
        raise ConfigurationError(f"system is not overloaded: M={m} >= N={n}")


def generate_sensing_matrix(m: int, n: int, seed) -> SensingMatrix:
    """Random unit-circle sequences exp(j 2 pi nu), nu ~ U[0, 1), normalized per column."""
    _check_shape(m, n)
    rng = np.random.default_rng(seed)
    raw = np.exp(2j * np.pi * rng.random((m, n)))
    norm = np.sqrt(m)
    return SensingMatrix(raw / norm, float(norm), seed if isinstance(seed, int) else None)


@dataclass(frozen=True, eq=False)
class BlockAssignment:
    """Row n holds the D column indices forming user n's signature, in spreading order."""

    blocks: np.ndarray

    def __post_init__(self):
        self.blocks.setflags(write=False)

    @property
    def d(self) -> int:
        return self.blocks.shape[1]

    @property
    def n_users(self) -> int:
        return self.blocks.shape[0]

    def __getitem__(self, user):
        return self.blocks[user]

    def columns(self, a: SensingMatrix, user: int) -> np.ndarray:
        """M x D matrix of the user's sequences."""
        return a.entries[:, self.blocks[user]]


def assign_blocks(a: SensingMatrix | int, d: int) -> BlockAssignment:
    """Sliding window of width ``d`` over the columns, wrapping modulo N.

    User n gets columns (n, n+1, ..., n+d-1) mod N, so the indices at any
    fixed block position form a permutation of 0..N-1.
    """
    n = a if isinstance(a, (int, np.integer)) else a.n
    if not 1 <= d <= n:
        raise ConfigurationError(f"block size must satisfy 1 <= D <= N={n}, got {d}")
    blocks = (np.arange(n)[:, None] + np.arange(d)[None, :]) % n
    return BlockAssignment(blocks.astype(np.intp))


def _normalized_gram(a: SensingMatrix) -> np.ndarray:
    # columns are already unit norm; divide anyway in case of a hand-built matrix
    e = a.entries
    norms = np.linalg.norm(e, axis=0)
    return np.abs(e.conj().T @ e) / np.outer(norms, norms)


def block_correlation_matrix(a: SensingMatrix, blk: BlockAssignment) -> np.ndarray:
    """N x N matrix of block correlations; the diagonal is 1 by construction."""
    g = _normalized_gram(a)
    acc = np.zeros((blk.n_users, blk.n_users))
    for d in range(blk.d):
        idx = blk.blocks[:, d]
        acc += g[np.ix_(idx, idx)]
    return acc / blk.d


def pairwise_block_correlation(a: SensingMatrix, blk: BlockAssignment, i: int, j: int) -> float:
    """Mean over block positions of the normalized |b_{i,d}^H b_{j,d}|."""
    if i == j:
        raise DomainError("block correlation is only defined for distinct users")
    for u in (i, j):
        if not 0 <= u < blk.n_users:
            raise DomainError(f"user index {u} out of range")
    bi = a.entries[:, blk.blocks[i]]
    bj = a.entries[:, blk.blocks[j]]
    num = np.abs(np.sum(bi.conj() * bj, axis=0))
    den = np.linalg.norm(bi, axis=0) * np.linalg.norm(bj, axis=0)
    return float(np.mean(num / den))


@dataclass(frozen=True)
class CoherenceReport:
    mu: float
    mu_block: float
    argmax_pair: tuple[int, int]
    mu_pair: tuple[int, int]


def _offdiag_argmax(mat):
    m = mat.copy()
    np.fill_diagonal(m, -np.inf)
    i, j = np.unravel_index(np.argmax(m), m.shape)
    return float(m[i, j]), (int(min(i, j)), int(max(i, j)))


def coherence_report(a: SensingMatrix, blk: BlockAssignment) -> CoherenceReport:
    """Mutual coherence of the columns and block coherence of the user signatures.

    ``argmax_pair`` locates ``mu_block`` (user indices); ``mu_pair`` locates
    ``mu`` (column indices).
    """
    mu, mu_pair = _offdiag_argmax(_normalized_gram(a))
    mu_b, pair = _offdiag_argmax(block_correlation_matrix(a, blk))
    return CoherenceReport(mu=mu, mu_block=mu_b, argmax_pair=pair, mu_pair=mu_pair)


def correlation_contribution(a: SensingMatrix, blk: BlockAssignment, symbols, noise=None) -> np.ndarray:
    """Per-user correlation contribution Omega_j of a multiuser symbol matrix.

    Omega_j = (1/L) sum_l [ sum_i x_i^(l) <B_j, B_i> + w_j^(l) ], with
    ``symbols`` of shape (N, L) and optional ``noise`` of the same shape.
    Diagnostic only; the detector never uses it.  Complex-valued whenever
    the symbols are.
    """
    x = np.asarray(symbols)
    if x.ndim != 2 or x.shape[0] != blk.n_users:
        raise DomainError(f"symbols must have shape (N={blk.n_users}, L), got {x.shape}")
    n_cols = x.shape[1]
    if n_cols == 0 or n_cols % blk.d:
        raise DomainError(f"L={n_cols} is not a positive multiple of D={blk.d}")
    w = np.zeros_like(x, dtype=np.complex128) if noise is None else np.asarray(noise)
    if w.shape != x.shape:
        raise DomainError(f"noise shape {w.shape} does not match symbols {x.shape}")
    c = block_correlation_matrix(a, blk)
    return (c @ x + w).sum(axis=1) / n_cols


def write_matrix_csv(a: SensingMatrix, path) -> None:
    """One row per chip with ``re_k,im_k`` column pairs; raw unit-modulus chips."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        fh.write(f"# seed={a.seed} m={a.m} n={a.n} column_norm={a.column_norm!r}\n")
        w = csv.writer(fh)
        w.writerow([f"{p}_{k}" for k in range(a.n) for p in ("re", "im")])
        for row in a.raw:
            w.writerow([repr(float(v)) for z in row for v in (z.real, z.imag)])


def read_matrix_csv(path) -> SensingMatrix:
    path = Path(path)
    with path.open() as fh:
        header = fh.readline()
        if not header.startswith("#"):
            raise DomainError(f"{path}: missing header line")
        meta = dict(kv.split("=", 1) for kv in header[1:].split())
        rows = list(csv.reader(fh))[1:]
    vals = np.array(rows, dtype=float)
    raw = vals[:, 0::2] + 1j * vals[:, 1::2]
    seed = None if meta.get("seed") in (None, "None") else int(meta["seed"])
    return SensingMatrix.from_array(raw, require_overloaded=False, seed=seed)
