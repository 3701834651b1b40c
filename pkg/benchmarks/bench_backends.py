"""Time the compiled kernels against the NumPy fallback.

Runs the three convolution routines on a desk-scale shape and on a larger
feature-extractor shape, printing a table of per-call medians.  Invoke as

    python3 benchmarks/bench_backends.py [--repeats N]

The compiled extension must be built; the script exits with a message if
only the fallback is importable.
"""

import argparse
import statistics
import time

import numpy as np

from gradfilt import _kernels_np

try:
    from gradfilt import _kernels
except ImportError:
    _kernels = None

CASES = [
    # name, batch, c_in, c_out, k, pad, h, w
    ("desk 16x16x8", 16, 8, 16, 3, 1, 16, 16),
    ("mid 32x32x32", 8, 32, 32, 3, 1, 32, 32),
    ("wide 64x64x16", 4, 16, 32, 5, 2, 64, 64),
]


def _median_ms(fn, repeats):
    fn()  # warm-up
    samples = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        samples.append((time.perf_counter() - t0) * 1e3)
    return statistics.median(samples)


def bench_case(name, n, c_in, c_out, k, pad, h, w, repeats):
    rng = np.random.default_rng(0)
    x = rng.standard_normal((n, c_in, h, w))
    kern = rng.standard_normal((c_out, c_in, k, k))
    bias = rng.standard_normal(c_out)
    h_out = h + 2 * pad - k + 1
    w_out = w + 2 * pad - k + 1
    gy = rng.standard_normal((n, c_out, h_out, w_out))

    ops = [
        ("forward", lambda m: m.conv2d_forward(x, kern, bias, pad)),
        ("bwd_input", lambda m: m.conv2d_backward_input(gy, kern, pad, h, w)),
        ("bwd_kernel", lambda m: m.conv2d_backward_kernel(gy, x, pad, k, k)),
    ]
    for op_name, call in ops:
        t_np = _median_ms(lambda: call(_kernels_np), repeats)
        t_c = _median_ms(lambda: call(_kernels), repeats)
        ratio = t_np / t_c if t_c > 0 else float("inf")
        print(
            f"{name:16s} {op_name:11s} compiled {t_c:8.3f} ms"
            f"   numpy {t_np:8.3f} ms   numpy/compiled {ratio:5.2f}x"
        )


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=11, help="timed calls per op")
    args = parser.parse_args()
    if _kernels is None:
        raise SystemExit("compiled extension not built; run pip install -e . first")
    for case in CASES:
        bench_case(*case, repeats=args.repeats)


if __name__ == "__main__":
    main()
