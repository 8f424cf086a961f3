"""Compare the compiled and pure-Python kernel backends.

    python3 benchmarks/bench_kernels.py [--repeat 20]
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from surgant import _kernels


def gru_inputs(rng, b, t, d, h):
    x = rng.normal(size=(b, t, d))
    w = [rng.uniform(-0.2, 0.2, (d, h)) for _ in range(3)]
    u = [rng.uniform(-0.2, 0.2, (h, h)) for _ in range(3)]
    bias = [np.zeros(h) for _ in range(3)]
    return (x, *w, *u, *bias)


def bench_gru(backend, args, repeat):
    fwd = lambda: _kernels.gru_scan_forward(*args, reverse=False, backend=backend)
    hs, z, r, c, p = fwd()
    x, wz, wr, wh, uz, ur, uh = args[:7]
    d_hs = np.ones_like(hs)
    bwd = lambda: _kernels.gru_scan_backward(d_hs, x, wz, wr, wh, uz, ur, uh, z, r, c, p,
                                             reverse=False, backend=backend)
    return (min(timeit.repeat(fwd, number=1, repeat=repeat)),
            min(timeit.repeat(bwd, number=1, repeat=repeat)))


def bench_lcs(backend, a, b, repeat):
    return min(timeit.repeat(lambda: _kernels.lcs_length(a, b, backend=backend),
                             number=1, repeat=repeat))


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--repeat", type=int, default=20)
    args = p.parse_args(argv)
    rng = np.random.default_rng(0)
    backends = _kernels.available_backends()
    print(f"backends: {', '.join(backends)} (default {_kernels.BACKEND})")

    print(f"\n{'gru scan (B,T,D,H)':<24}" + "".join(f"{b + ' fwd':>14}{b + ' bwd':>14}"
                                                  for b in backends))
    for shape in [(8, 8, 32, 32), (8, 32, 32, 32), (64, 16, 32, 32)]:
        inputs = gru_inputs(rng, *shape)
        row = f"{str(shape):<24}"
        for b in backends:
            f, bw = bench_gru(b, inputs, args.repeat)
            row += f"{f * 1e3:12.3f}ms{bw * 1e3:12.3f}ms"
        print(row)

    print(f"\n{'lcs (n, m)':<24}" + "".join(f"{b:>14}" for b in backends))
    for n in (10, 50, 200):
        a = rng.integers(0, 20, n).tolist()
        c = rng.integers(0, 20, n).tolist()
        print(f"{str((n, n)):<24}" + "".join(f"{bench_lcs(b, a, c, args.repeat) * 1e3:12.3f}ms"
                                             for b in backends))


if __name__ == "__main__":
    main()
