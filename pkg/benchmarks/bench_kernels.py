"""Compare the compiled kernels against the numpy fallback.

Both backend modules are imported directly (the dispatcher in
ibrar.kernels picks one at import time; here we want both side by
side), fed identical inputs, and timed over repeated calls with the
median reported.  Run: python3 benchmarks/bench_kernels.py
"""

import time

import numpy as np

from ibrar import _npkernels

try:
    from ibrar import _cykernels
except ImportError:
    _cykernels = None


def timeit(fn, repeats=7, inner=3):
    fn()  # warm up
    samples = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        for _ in range(inner):
            fn()
        samples.append((time.perf_counter() - t0) / inner)
    return sorted(samples)[len(samples) // 2]


def make_cases(rng):
    cases = []
    for n, c, h, w, k in [(32, 1, 16, 16, 3),
                          (32, 16, 8, 8, 3),
                          (8, 64, 8, 8, 3),
                          (64, 3, 32, 32, 3)]:
        pad = k // 2
        hp, wp = h + 2 * pad, w + 2 * pad
        xp = rng.standard_normal((n, c, hp, wp))
        cols = rng.standard_normal((n * h * w, c * k * k))
        x = rng.standard_normal((n, c, h, w))
        gy = rng.standard_normal((n, c, h // 2, w // 2))
        idx = rng.integers(0, 4, gy.shape).astype(np.uint8)
        shape = f"{n}x{c}x{h}x{w} k{k}"

        def im2col(m, xp=xp, k=k):
            return m.im2col(xp, k)

        def col2im(m, cols=cols, n=n, c=c, hp=hp, wp=wp, k=k):
            return m.col2im_add(cols, n, c, hp, wp, k)

        def pool_fwd(m, x=x):
            return m.maxpool2x2_fwd(x)

        def pool_bwd(m, idx=idx, gy=gy):
            return m.maxpool2x2_bwd(idx, gy)

        cases += [(f"im2col     {shape}", im2col),
                  (f"col2im_add {shape}", col2im),
                  (f"pool fwd   {shape}", pool_fwd),
                  (f"pool bwd   {shape}", pool_bwd)]
    return cases


def main():
    rng = np.random.default_rng(0)
    print(f"{'case':34s} {'numpy ms':>10s} {'cython ms':>10s} {'ratio':>8s}")
    for name, fn in make_cases(rng):
        t_np = timeit(lambda: fn(_npkernels)) * 1e3
        if _cykernels is None:
            print(f"{name:34s} {t_np:10.3f} {'n/a':>10s} {'n/a':>8s}")
            continue
        t_cy = timeit(lambda: fn(_cykernels)) * 1e3
        ratio = t_np / t_cy if t_cy > 0 else float("inf")
        print(f"{name:34s} {t_np:10.3f} {t_cy:10.3f} {ratio:7.2f}x")
    if _cykernels is None:
        print("\ncompiled backend not built; only the numpy fallback was timed")


if __name__ == "__main__":
    main()
