"""Hot inner loops, each with a numba and a pure-numpy implementation.

The active backend is chosen once at import time.  Set ``SBCSMUD_NUMBA=0``
to force the numpy path (also used automatically when numba is missing).
Both implementations are always importable as ``<name>_numba`` /
``<name>_numpy`` so tests and benchmarks can compare them directly.
"""

import math
import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is a hard dependency in CI
    numba = None

HAVE_NUMBA = numba is not None
USE_NUMBA = HAVE_NUMBA and os.environ.get("SBCSMUD_NUMBA", "1").lower() not in ("0", "false", "no", "off")
BACKEND = "numba" if USE_NUMBA else "numpy"


def _njit(fn):
    if not HAVE_NUMBA:
        return None
    return numba.njit(cache=True, nogil=True)(fn)


# -- convolutional encoder -------------------------------------------------

def _conv_encode_py(bits, taps):
    n = bits.shape[0]
    n_out, k = taps.shape
    out = np.zeros((n, n_out), dtype=np.uint8)
    for t in range(n):
        for g in range(n_out):
            acc = 0
            for i in range(k):
                if t - i < 0:
                    break
                acc ^= taps[g, i] & bits[t - i]
            out[t, g] = acc
    return out


def conv_encode_numpy(bits, taps):
    """Feed-forward convolutional encoding; ``taps[g, i]`` multiplies input delayed by ``i``."""
    n = bits.shape[0]
    out = np.zeros((n, taps.shape[0]), dtype=np.uint8)
    if n == 0:
        return out
    for g in range(taps.shape[0]):
        out[:, g] = np.convolve(bits.astype(np.int64), taps[g].astype(np.int64))[:n] & 1
    return out


conv_encode_numba = _njit(_conv_encode_py)


# -- hard-decision Viterbi -------------------------------------------------

def _viterbi_py(rx, prev_state, prev_out, shift):
    n = rx.shape[0]
    n_states = prev_state.shape[0]
    mask = n_states - 1
    big = np.int64(1) << 40
    pm = np.full(n_states, big, dtype=np.int64)
    pm[0] = 0
    new = np.empty(n_states, dtype=np.int64)
    decisions = np.zeros((n, n_states), dtype=np.uint8)
    for t in range(n):
        r0 = rx[t, 0]
        r1 = rx[t, 1]
        for ns in range(n_states):
            best = big * 4
            choice = 0
            for b in range(2):
                m = pm[prev_state[ns, b]]
                if prev_out[ns, b, 0] != r0:
                    m += 1
                if prev_out[ns, b, 1] != r1:
                    m += 1
                if m < best:
                    best = m
                    choice = b
            new[ns] = best
            decisions[t, ns] = choice
        for s in range(n_states):
            pm[s] = new[s]
    out = np.empty(n, dtype=np.uint8)
    s = 0
    for t in range(n - 1, -1, -1):
        out[t] = s >> shift
        s = ((s << 1) | decisions[t, s]) & mask
    return out


def viterbi_numpy(rx, prev_state, prev_out, shift):
    """Terminated hard-decision Viterbi; returns the input bit sequence ending in state 0.

    ``prev_state[s, b]`` is predecessor ``b`` of state ``s`` and ``prev_out[s, b]``
    the two code bits emitted on that branch.  Ties go to predecessor 0.
    """
    n = rx.shape[0]
    n_states = prev_state.shape[0]
    mask = n_states - 1
    pm = np.full(n_states, 1 << 40, dtype=np.int64)
    pm[0] = 0
    decisions = np.empty((n, n_states), dtype=np.uint8)
    rows = np.arange(n_states)
    for t in range(n):
        cost = (prev_out != rx[t]).sum(axis=2)
        cand = pm[prev_state] + cost
        choice = np.argmin(cand, axis=1)
        pm = cand[rows, choice]
        decisions[t] = choice
    out = np.empty(n, dtype=np.uint8)
    s = 0
    for t in range(n - 1, -1, -1):
        out[t] = s >> shift
        s = ((s << 1) | int(decisions[t, s])) & mask
    return out


viterbi_numba = _njit(_viterbi_py)


# -- block correlation scores ---------------------------------------------

def _block_scores_py(proj, blocks):
    n_users, d = blocks.shape
    n_cols = proj.shape[1]
    # |z| per distinct (sequence, column) once, then gather per user
    mag = np.empty(proj.shape)
    for i in range(proj.shape[0]):
        for l in range(n_cols):
            z = proj[i, l]
            mag[i, l] = math.sqrt(z.real * z.real + z.imag * z.imag)
    out = np.zeros(n_users)
    for n in range(n_users):
        acc = 0.0
        for pos in range(d):
            row = blocks[n, pos]
            for l in range(pos, n_cols, d):
                acc += mag[row, l]
        out[n] = acc
    return out


def block_scores_numpy(proj, blocks):
    """Sum over symbol columns of |proj[block_n[l mod D], l]| for every user n.

    ``proj`` is the sequence-by-column correlation matrix ``A^H R``.
    """
    n_cols = proj.shape[1]
    cols = np.arange(n_cols)
    rows = blocks[:, cols % blocks.shape[1]]
    return np.abs(proj[rows, cols]).sum(axis=1)


block_scores_numba = _njit(_block_scores_py)


if USE_NUMBA:
    conv_encode = conv_encode_numba
    viterbi = viterbi_numba
    block_scores = block_scores_numba
else:
    conv_encode = conv_encode_numpy
    viterbi = viterbi_numpy
    block_scores = block_scores_numpy
