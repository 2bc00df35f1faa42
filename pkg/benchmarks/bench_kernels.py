"""Throughput comparison of the numba and numpy convolution kernels.

Times forward, backward-dx and backward-dw on the shapes the training
pipeline actually hits: the toy encoder convolutions over a batch of
patches, and the 3x3 masked convolutions over a 7x7 latent grid.

Run with:  python3 benchmarks/bench_kernels.py [--repeats 30]
"""

import argparse
import time

import numpy as np

from patchcpc.kernels import numpy_backend

try:
    from patchcpc.kernels import numba_backend
except ImportError:
    numba_backend = None

# (name, N, C_in, H, C_out, K, stride, pad)
SHAPES = [
    ("encoder conv1 (49 patches, 8px)", 49, 3, 8, 16, 3, 1, 1),
    ("encoder conv2 (stride 2)", 49, 16, 8, 32, 3, 2, 1),
    ("encoder conv1 (24px patches)", 49, 3, 24, 16, 3, 1, 1),
    ("masked conv (7x7 grid, 64ch)", 1, 64, 7, 64, 3, 1, 1),
    ("fusion 1x1 (7x7 grid, 4x64ch)", 1, 256, 7, 64, 1, 1, 0),
]


def _bench(fn, args, repeats):
    fn(*args)  # warm-up: triggers numba compilation
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=30)
    parser.add_argument("--dtype", choices=["float32", "float64"], default="float32")
    opts = parser.parse_args()
    dtype = np.dtype(opts.dtype)

    backends = [("numpy", numpy_backend)]
    if numba_backend is not None:
        backends.append(("numba", numba_backend))
    else:
        print("numba not importable; timing the numpy backend only")

    rng = np.random.default_rng(0)
    header = f"{'case':38s} {'op':12s}" + "".join(f"{n:>12s}" for n, _ in backends)
    if len(backends) == 2:
        header += f"{'speedup':>10s}"
    print(header)
    print("-" * len(header))

    for name, n, c_in, h, c_out, k, stride, pad in SHAPES:
        x = rng.standard_normal((n, c_in, h, h)).astype(dtype)
        w = rng.standard_normal((c_out, c_in, k, k)).astype(dtype)
        b = np.zeros(c_out, dtype=dtype)
        ho = (h + 2 * pad - k) // stride + 1
        g = rng.standard_normal((n, c_out, ho, ho)).astype(dtype)
        ops = [
            ("forward", lambda be: (be.conv2d_forward, (x, w, b, stride, pad))),
            ("backward_dx", lambda be: (be.conv2d_backward_dx, (g, x.shape, w, stride, pad))),
            ("backward_dw", lambda be: (be.conv2d_backward_dw, (g, x, k, stride, pad))),
        ]
        for op_name, make in ops:
            times = []
            for _, be in backends:
                fn, args = make(be)
                times.append(_bench(fn, args, opts.repeats))
            line = f"{name:38s} {op_name:12s}" + "".join(f"{t * 1e6:10.1f}us" for t in times)
            if len(times) == 2:
                line += f"{times[0] / times[1]:9.2f}x"
            print(line)

    # agreement check on the last case
    fx = numpy_backend.conv2d_forward(x, w, b, stride, pad)
    if numba_backend is not None:
        fn = numba_backend.conv2d_forward(x, w, b, stride, pad)
        rel = np.abs(fx - fn).max() / max(np.abs(fx).max(), 1e-12)
        print(f"\nbackend agreement (forward, relative): {rel:.3e}")


if __name__ == "__main__":
    main()
