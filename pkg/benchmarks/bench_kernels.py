"""Time the compiled kernels against the numpy fallback on training-sized inputs.

    python benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import timeit

import numpy as np

from rmm._kernels import _pykernels

try:
    from rmm._kernels import _ckernels
except ImportError:  # extension not built
    _ckernels = None


def cases(rng):
    x = rng.normal(size=(8, 16, 34, 34))
    cols = _pykernels.im2col(x, 3, 1, 32, 32)
    img = rng.normal(size=(3, 64, 64))
    bands = _pykernels.haar_analysis(img)
    return {
        "im2col 8x16x32x32 k3": lambda m: m.im2col(x, 3, 1, 32, 32),
        "col2im 8x16x32x32 k3": lambda m: m.col2im(cols, 8, 16, 34, 34, 3, 1, 32, 32),
        "haar_analysis 3x64x64": lambda m: m.haar_analysis(img),
        "haar_synthesis 3x64x64": lambda m: m.haar_synthesis(bands),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=200)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    backends = [("python", _pykernels)] + ([("cython", _ckernels)] if _ckernels else [])
    print(f"{'kernel':<26}" + "".join(f"{name:>14}" for name, _ in backends) + f"{'speedup':>10}")
    for label, fn in cases(rng).items():
        times = []
        for _, mod in backends:
            ref = fn(_pykernels)
            out = fn(mod)
            assert np.allclose(out, ref, rtol=0, atol=1e-12), label
            times.append(min(timeit.repeat(lambda: fn(mod), number=1, repeat=args.repeat)))
        speed = f"{times[0] / times[1]:>9.2f}x" if len(times) > 1 else f"{'n/a':>10}"
        print(f"{label:<26}" + "".join(f"{t * 1e6:>12.1f}us" for t in times) + speed)
    if _ckernels is None:
        print("compiled extension not available; build with `pip install -e . --no-build-isolation`")


if __name__ == "__main__":
    main()
