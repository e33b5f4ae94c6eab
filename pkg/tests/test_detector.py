import itertools
import math

import numpy as np
import pytest

from sbcsmud import (
    ActivityVector,
    ChannelRealization,
    CodecConfig,
    DomainError,
    OverSaturationError,
    SensingMatrix,
    StopRule,
    assemble_observation,
    assign_blocks,
    block_residual_correlation,
    brute_force_support_oracle,
    decode_detected,
    dqpsk_modulate,
    encode_frame,
    generate_sensing_matrix,
    ls_estimate,
    sb_gomp,
    spread_frame,
)
from sbcsmud.errors import ConfigurationError

CODEC = CodecConfig()


def _noiseless(a, blk, users, rng, n_cols=None, qpsk=True):
    """Flat unit channel observation; returns (Y, symbols per user)."""
    if n_cols is None:
        n_cols = 4 * blk.d
    y = np.zeros((a.m, n_cols), dtype=complex)
    syms = {}
    for u in users:
        if qpsk:
            x = np.exp(0.5j * np.pi * rng.integers(0, 4, n_cols))
        else:
            x = np.ones(n_cols, dtype=complex)
        syms[int(u)] = x
        y += spread_frame(x, blk.columns(a, u))
    return y, syms


def _conventional_gomp(y, a, k):
    """Textbook simultaneous OMP over single columns (the D = 1 case)."""
    support = []
    r = y.copy()
    for _ in range(k):
        score = np.abs(a.entries.conj().T @ r).sum(axis=1)
        score[support] = -np.inf
        support.append(int(np.argmax(score)))
        sub = a.entries[:, support]
        x = np.linalg.lstsq(sub, y, rcond=None)[0]
        r = y - sub @ x
    return support


def test_stop_rule_validation():
    with pytest.raises(ConfigurationError):
        StopRule("sometimes")
    with pytest.raises(ConfigurationError):
        StopRule("known_k")
    with pytest.raises(ConfigurationError):
        StopRule("residual_threshold", gamma=0.0)
    with pytest.raises(ConfigurationError):
        StopRule.known_k(2, max_iters=0)
    rule = StopRule.noise_floor(0.1, m=20, n_cols=100, margin=0.25)
    assert rule.gamma == pytest.approx(1.25 * 20 * 100 * 0.1)
    assert StopRule.noise_floor(0.0, 4, 4).gamma > 0


def test_residual_correlation_zero():
    a = generate_sensing_matrix(6, 10, seed=0)
    assert block_residual_correlation(assign_blocks(a, 2).columns(a, 3), np.zeros((6, 8))) == 0.0


def test_residual_correlation_matched_filter_peak():
    a = generate_sensing_matrix(20, 60, seed=3)
    blk = assign_blocks(a, 4)
    y, _ = _noiseless(a, blk, [11], np.random.default_rng(0), n_cols=40, qpsk=False)
    scores = [block_residual_correlation(blk.columns(a, n), y) for n in range(60)]
    assert scores[11] == pytest.approx(40.0, abs=1e-10)
    assert max(s for n, s in enumerate(scores) if n != 11) < scores[11]


def test_residual_correlation_d1_is_column_correlation():
    a = generate_sensing_matrix(8, 12, seed=1)
    rng = np.random.default_rng(1)
    r = rng.standard_normal((8, 5)) + 1j * rng.standard_normal((8, 5))
    for n in range(12):
        direct = np.abs(a.entries[:, n].conj() @ r).sum()
        assert block_residual_correlation(a.entries[:, n], r) == pytest.approx(direct, rel=1e-13)


def test_residual_correlation_custom_position_map():
    a = generate_sensing_matrix(4, 8, seed=2)
    b = assign_blocks(a, 2).columns(a, 0)
    r = np.random.default_rng(0).standard_normal((4, 3)) + 0j
    d_of = [1, 1, 0]
    direct = sum(abs(np.vdot(b[:, d], r[:, l])) for l, d in enumerate(d_of))
    assert block_residual_correlation(b, r, d_of) == pytest.approx(direct)
    with pytest.raises(DomainError):
        block_residual_correlation(b, r)


def test_ls_single_user_exact():
    a = generate_sensing_matrix(20, 60, seed=0)
    blk = assign_blocks(a, 3)
    y, syms = _noiseless(a, blk, [5], np.random.default_rng(2), n_cols=12)
    np.testing.assert_allclose(ls_estimate([5], blk, a, y)[0], syms[5], atol=1e-10)


def test_ls_orthogonal_users():
    a = generate_sensing_matrix(4, 8, seed=0)
    dft = np.fft.fft(np.eye(4))
    raw = np.concatenate([dft, a.raw[:, :4]], axis=1)
    a = SensingMatrix.from_array(raw)
    blk = assign_blocks(a, 1)
    y, syms = _noiseless(a, blk, [0, 2], np.random.default_rng(3))
    est = ls_estimate([0, 2], blk, a, y)
    np.testing.assert_allclose(est[0], syms[0], atol=1e-12)
    np.testing.assert_allclose(est[1], syms[2], atol=1e-12)


def test_ls_matches_pinv_per_column():
    a = generate_sensing_matrix(20, 60, seed=9)
    blk = assign_blocks(a, 4)
    rng = np.random.default_rng(4)
    users = [3, 17, 58]
    y, _ = _noiseless(a, blk, users, rng, n_cols=16)
    y = y + 0.1 * (rng.standard_normal(y.shape) + 1j * rng.standard_normal(y.shape))
    est = ls_estimate(users, blk, a, y)
    for l in range(16):
        cols = np.stack([a.entries[:, (u + l % 4) % 60] for u in users], axis=1)
        np.testing.assert_allclose(est[:, l], np.linalg.pinv(cols) @ y[:, l], atol=1e-12)


def test_ls_errors():
    a = generate_sensing_matrix(4, 8, seed=0)
    blk = assign_blocks(a, 2)
    with pytest.raises(OverSaturationError):
        ls_estimate([0, 1, 2, 3, 4], blk, a, np.zeros((4, 4)))
    with pytest.raises(DomainError):
        ls_estimate([0, 0], blk, a, np.zeros((4, 4)))
    with pytest.raises(DomainError):
        ls_estimate([0], blk, a, np.zeros((4, 3)))
    with pytest.raises(DomainError):
        ls_estimate([0], blk, a, np.zeros((5, 4)))


def test_zero_observation_threshold_mode():
    a = generate_sensing_matrix(20, 60, seed=0)
    res = sb_gomp(np.zeros((20, 8)), assign_blocks(a, 2), a, StopRule.threshold(1e-6))
    assert res.support == () and res.iterations == 0
    assert res.residual_energy_trace == (0.0,)


def test_single_user_known_k():
    a = generate_sensing_matrix(20, 60, seed=1)
    blk = assign_blocks(a, 4)
    y, syms = _noiseless(a, blk, [42], np.random.default_rng(5), n_cols=108)
    res = sb_gomp(y, blk, a, StopRule.known_k(1))
    assert res.support == (42,)
    np.testing.assert_allclose(res.estimate_for(42), syms[42], atol=1e-10)


def test_residual_trace_non_increasing_and_unique_support():
    a = generate_sensing_matrix(20, 60, seed=2)
    blk = assign_blocks(a, 3)
    rng = np.random.default_rng(6)
    for _ in range(30):
        users = rng.choice(60, 5, replace=False)
        y, _ = _noiseless(a, blk, users, rng, n_cols=30)
        y = y + 0.3 * (rng.standard_normal(y.shape) + 1j * rng.standard_normal(y.shape))
        res = sb_gomp(y, blk, a, StopRule.threshold(1e-9, max_iters=12))
        assert len(set(res.support)) == len(res.support)
        assert np.all(np.diff(res.residual_energy_trace) <= 1e-9)
        assert res.estimates.shape == (len(res.support), 30)


def test_truncation_flag():
    a = generate_sensing_matrix(20, 60, seed=3)
    blk = assign_blocks(a, 2)
    y, _ = _noiseless(a, blk, [1, 2, 3], np.random.default_rng(0))
    res = sb_gomp(y + 1.0, blk, a, StopRule.threshold(1e-12, max_iters=2))
    assert res.truncated and res.iterations == 2


def test_over_saturation_carries_partial_result():
    a = generate_sensing_matrix(4, 8, seed=3)
    blk = assign_blocks(a, 1)
    rng = np.random.default_rng(0)
    y = rng.standard_normal((4, 6)) + 1j * rng.standard_normal((4, 6))
    with pytest.raises(OverSaturationError) as info:
        sb_gomp(y, blk, a, StopRule.threshold(1e-30, max_iters=6))
    assert len(info.value.partial.support) == 4


def test_d1_matches_conventional_gomp():
    a = generate_sensing_matrix(20, 60, seed=4)
    blk = assign_blocks(a, 1)
    rng = np.random.default_rng(7)
    for _ in range(100):
        k = int(rng.integers(1, 7))
        users = rng.choice(60, k, replace=False)
        y, _ = _noiseless(a, blk, users, rng, n_cols=20)
        y = y + 0.3 * (rng.standard_normal(y.shape) + 1j * rng.standard_normal(y.shape))
        assert list(sb_gomp(y, blk, a, StopRule.known_k(k)).support) == _conventional_gomp(y, a, k)


def test_oracle_trivial_cases():
    a = generate_sensing_matrix(4, 8, seed=0)
    blk = assign_blocks(a, 2)
    y, _ = _noiseless(a, blk, [6], np.random.default_rng(1))
    sup, e = brute_force_support_oracle(y, blk, a, 0, return_residual=True)
    assert sup == () and e == pytest.approx(np.vdot(y, y).real)
    assert brute_force_support_oracle(y, blk, a, 1) == (6,)


def _subset_residual(y, a, d, subset):
    n = a.n
    total = 0.0
    for l in range(y.shape[1]):
        cols = np.stack([a.entries[:, (u + l % d) % n] for u in subset], axis=1)
        r = y[:, l] - cols @ (np.linalg.pinv(cols) @ y[:, l])
        total += float(np.vdot(r, r).real)
    return total


def test_oracle_true_support_is_unique_minimum():
    rng = np.random.default_rng(8)
    for trial in range(20):
        a = generate_sensing_matrix(4, 8, seed=trial)
        d = 1 + trial % 2
        blk = assign_blocks(a, d)
        users = tuple(sorted(int(u) for u in rng.choice(8, 2, replace=False)))
        y, _ = _noiseless(a, blk, users, rng, n_cols=12)
        sup, e = brute_force_support_oracle(y, blk, a, 2, return_residual=True)
        assert sup == users
        assert e < 1e-20
        others = [_subset_residual(y, a, d, s) for s in itertools.combinations(range(8), 2) if s != users]
        assert min(others) > 1e-6


def test_oracle_guard():
    a = generate_sensing_matrix(20, 60, seed=0)
    with pytest.raises(DomainError):
        brute_force_support_oracle(np.zeros((20, 4)), assign_blocks(a, 1), a, 10)


def test_greedy_equals_oracle_under_exact_recovery_condition():
    # max_j ||B_S^+ b_j||_1 < 1 guarantees greedy recovery of S on noiseless data
    rng = np.random.default_rng(10)
    checked = 0
    for _ in range(200):
        a = generate_sensing_matrix(10, 16, seed=int(rng.integers(2**31)))
        blk = assign_blocks(a, 1)
        users = rng.choice(16, 2, replace=False)
        pinv = np.linalg.pinv(a.entries[:, users])
        erc = max(np.abs(pinv @ a.entries[:, j]).sum() for j in range(16) if j not in users)
        if erc >= 1:
            continue
        checked += 1
        y, _ = _noiseless(a, blk, users, rng, n_cols=12)
        greedy = tuple(sorted(sb_gomp(y, blk, a, StopRule.known_k(2)).support))
        assert greedy == brute_force_support_oracle(y, blk, a, 2) == tuple(sorted(users))
    assert checked > 80


def test_oracle_equivalence_small_geometry():
    # N=8, M=4, D=2, K=2 noiseless with known K on 200 random instances
    rng = np.random.default_rng(12)
    codec_len = CODEC.coded_length
    agree = 0
    for trial in range(200):
        a = generate_sensing_matrix(4, 8, seed=int(rng.integers(2**31)))
        blk = assign_blocks(a, 2)
        users = rng.choice(8, 2, replace=False)
        y = np.zeros((4, 108), dtype=complex)
        for u in users:
            frame = dqpsk_modulate(encode_frame(rng.integers(0, 2, 100), CODEC), 2)
            assert frame.length == 1 + codec_len // 2 + frame.l_pad
            y += spread_frame(frame, blk.columns(a, u))
        greedy = tuple(sorted(sb_gomp(y, blk, a, StopRule.known_k(2)).support))
        agree += greedy == brute_force_support_oracle(y, blk, a, 2)
    assert agree == 200, f"greedy matched the exhaustive search on {agree}/200 instances"


def _single_user_chain(rng, d=2, seed=0):
    a = generate_sensing_matrix(20, 60, seed=seed)
    blk = assign_blocks(a, d)
    bits = rng.integers(0, 2, 100)
    frame = dqpsk_modulate(encode_frame(bits, CODEC), d)
    act = np.zeros(60, bool)
    act[9] = True
    obs = assemble_observation({9: spread_frame(frame, blk.columns(a, 9))}, ActivityVector(act),
                               ChannelRealization.flat(60, 20, frame.length), math.inf, rng)
    return a, blk, bits, obs


def test_decode_noiseless_and_gain_invariant():
    rng = np.random.default_rng(13)
    a, blk, bits, obs = _single_user_chain(rng)
    res = sb_gomp(obs, blk, a, StopRule.known_k(1))
    assert np.array_equal(decode_detected(res, CODEC)[9], bits)
    scaled = type(res)(res.support, res.estimates * (0.2 - 0.7j), res.residual_energy_trace, res.iterations)
    assert np.array_equal(decode_detected(scaled, CODEC)[9], bits)
    assert decode_detected(res, CODEC, users=[3]) == {}


def test_decode_small_noise_is_error_free():
    rng = np.random.default_rng(14)
    errors = 0
    for i in range(100):
        a, blk, bits, obs = _single_user_chain(rng, d=1 + i % 4, seed=i)
        res = sb_gomp(obs, blk, a, StopRule.known_k(1))
        est = res.estimates + 0.01 * (rng.standard_normal(res.estimates.shape)
                                      + 1j * rng.standard_normal(res.estimates.shape))
        noisy = type(res)(res.support, est, res.residual_energy_trace, res.iterations)
        errors += int(np.sum(decode_detected(noisy, CODEC)[9] != bits))
    assert errors == 0
