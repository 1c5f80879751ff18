"""Time the numba kernels against their numpy twins.

    python3 benchmarks/bench_kernels.py [--sizes 20 64 224] [--repeat 5]

Each kernel is called once before timing so JIT compilation is excluded.
Outputs are checked for equality (exact for integer results, 1e-10 for floats).
With ``RELEVANCE_LENS_NUMBA=0`` the ``_nb`` functions run as plain Python,
which is very slow at large sizes.
"""

import argparse
import timeit

import numpy as np

from relevance_lens import kernels


def cases(size, rng):
    c, co = 3, 16
    x = rng.normal(size=(c, size, size))
    w = rng.normal(size=(co, c, 3, 3))
    g = rng.normal(size=(co, size - 2, size - 2))
    feat = rng.normal(size=(co, size, size))
    _, arg = kernels.maxpool_forward_np(feat, 2, 2, 2)
    pg = rng.normal(size=arg.shape)
    vals = np.sort(rng.uniform(size=size * size))
    prefix = np.concatenate(([0.0], np.cumsum(vals)))
    seeds = np.unique(np.round(vals, 4))
    centers = np.sort(rng.uniform(size=10))
    return {
        "conv2d_forward": (x, w, 1),
        "conv2d_backward_input": (g, w, 1, size, size),
        "maxpool_forward": (feat, 2, 2, 2),
        "maxpool_backward": (pg, arg, size, size),
        "meanshift_modes": (vals, prefix, seeds, 0.1, 1e-6, 500),
        "assign_nearest": (vals, centers),
    }


def same(a, b):
    if isinstance(a, tuple):
        return all(same(x, y) for x, y in zip(a, b))
    if a.dtype.kind in "iu":
        return np.array_equal(a, b)
    return np.allclose(a, b, rtol=0, atol=1e-10)


def bench(name, size, call_args, repeat):
    nb = getattr(kernels, f"{name}_nb")
    npf = getattr(kernels, f"{name}_np")
    ok = same(nb(*call_args), npf(*call_args))
    t_nb = min(timeit.repeat(lambda: nb(*call_args), number=1, repeat=repeat)) * 1e3
    t_np = min(timeit.repeat(lambda: npf(*call_args), number=1, repeat=repeat)) * 1e3
    print(f"{name:<24}{size:>6}{t_nb:>12.3f}{t_np:>12.3f}{t_np / t_nb:>9.1f}x  {'yes' if ok else 'NO'}")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[20, 64, 224], help="image side lengths")
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    print(f"active backend: {kernels.backend()}")
    print(f"{'kernel':<24}{'size':>6}{'numba ms':>12}{'numpy ms':>12}{'speedup':>10}  match")
    for size in args.sizes:
        for name, call_args in cases(size, rng).items():
            bench(name, size, call_args, args.repeat)


if __name__ == "__main__":
    main()
