"""Time the numba and numpy implementations of each hot kernel, plus one full trial.

Usage::

    python benchmarks/bench_kernels.py [--repeat 200]

The end-to-end line uses whichever backend ``SBCSMUD_NUMBA`` selects; run
it once with ``SBCSMUD_NUMBA=0`` to compare whole-trial cost.
"""

import argparse
import timeit

import numpy as np

from sbcsmud import CodecConfig, SimConfig, kernels, run_trial


def _bench(fn, args, repeat):
    fn(*args)  # compile / warm up
    best = min(timeit.repeat(lambda: fn(*args), number=1, repeat=repeat))
    return best * 1e6


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=200)
    args = p.parse_args(argv)

    rng = np.random.default_rng(0)
    codec = CodecConfig()
    bits = rng.integers(0, 2, 106).astype(np.uint8)
    rx = rng.integers(0, 2, (106, 2)).astype(np.uint8)
    prev_state, prev_out, shift = codec.trellis
    proj = rng.standard_normal((60, 108)) + 1j * rng.standard_normal((60, 108))
    blocks = (np.arange(60)[:, None] + np.arange(4)[None, :]) % 60

    cases = [
        ("conv_encode (106 bits)", "conv_encode", (bits, codec.taps)),
        ("viterbi (106 steps, 64 states)", "viterbi", (rx, prev_state, prev_out, shift)),
        ("block_scores (N=60, L=108, D=4)", "block_scores", (proj, blocks)),
    ]
    print(f"backend selected at import: {kernels.BACKEND}")
    print(f"{'kernel':34s} {'numpy us':>10s} {'numba us':>10s} {'speedup':>8s}")
    for label, name, fargs in cases:
        t_np = _bench(getattr(kernels, f"{name}_numpy"), fargs, args.repeat)
        if kernels.HAVE_NUMBA:
            t_nb = _bench(getattr(kernels, f"{name}_numba"), fargs, args.repeat)
            print(f"{label:34s} {t_np:10.1f} {t_nb:10.1f} {t_np / t_nb:7.1f}x")
        else:
            print(f"{label:34s} {t_np:10.1f} {'n/a':>10s}")

    cfg = SimConfig(block_size=4)
    run_trial(cfg, 0)
    n = max(args.repeat // 4, 10)
    t = timeit.timeit(lambda: [run_trial(cfg, i) for i in range(n)], number=1) / n
    print(f"full trial with decoding (M=20, N=60, D=4): {t * 1e3:.2f} ms [{kernels.BACKEND}]")


if __name__ == "__main__":
    main()
