"""Compare the compiled and numpy kernel backends.

    python benchmarks/bench_kernels.py --neurons 1000 --duration 1.0

Times a single-layer simulation for each crossing correction, and the
reverse leaky sum of the backward pass, on both backends.  Each timing is the
best of ``--repeat`` runs.  Results are checked to be identical before the
speed-up is reported.
"""
import argparse
import time

import numpy as np

from spikeinit import LayerTopology, LifParams, PoissonInput, WeightSpec, run_network
from spikeinit import _pykernels
from spikeinit.kernels import HAVE_COMPILED, get_backend


def best_of(fn, repeat):
    times, out = [], None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def bench_forward(args, correction, spec, kern):
    p = LifParams(i_ext=0.8, dt=args.dt)
    layer = [LayerTopology(args.sources, args.neurons, spec, seed=1)]

    def run():
        src = PoissonInput(50.0, args.sources, p.dt, seed=2)
        res = run_network(layer, p, src, args.duration, correction=correction, seed=3, record_spikes=True,
                          kernels=kern)
        return res.rasters[0].spikes
    return best_of(run, args.repeat)


def bench_backward(args, kern):
    rng = np.random.default_rng(0)
    x = rng.standard_normal((int(args.duration / args.dt), args.neurons))
    out = np.empty_like(x)

    def run():
        kern.reverse_leaky_sum(x, 0.9, out)
        return out.copy()
    return best_of(run, args.repeat)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--neurons", type=int, default=1000)
    ap.add_argument("--sources", type=int, default=1000)
    ap.add_argument("--duration", type=float, default=1.0)
    ap.add_argument("--dt", type=float, default=1e-3)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    if not HAVE_COMPILED:
        raise SystemExit("compiled kernels are not built; reinstall with Cython available")
    compiled = get_backend("compiled")
    cases = [
        ("none", None, WeightSpec.two_point(0.01, balanced=True)),
        ("random-walk", "random-walk", WeightSpec.two_point(0.01, balanced=True)),
        ("wiener", "wiener", WeightSpec.gaussian(0.01, balanced=True)),
        ("permutation", "permutation", WeightSpec.gaussian(0.01, balanced=True)),
    ]
    print(f"{args.sources} -> {args.neurons} neurons, {args.duration:g} s at dt={args.dt * 1e3:g} ms, "
          f"best of {args.repeat}")
    print(f"{'kernel':<22}{'compiled (s)':>14}{'python (s)':>14}{'speed-up':>10}")
    for name, corr, spec in cases:
        tc, rc = bench_forward(args, corr, spec, compiled)
        tp, rp = bench_forward(args, corr, spec, _pykernels)
        same = "" if np.array_equal(rc, rp) else "  MISMATCH"
        print(f"{'forward/' + name:<22}{tc:>14.3f}{tp:>14.3f}{tp / tc:>10.1f}{same}")
    tc, rc = bench_backward(args, compiled)
    tp, rp = bench_backward(args, _pykernels)
    same = "" if np.array_equal(rc, rp) else "  MISMATCH"
    print(f"{'reverse_leaky_sum':<22}{tc:>14.4f}{tp:>14.4f}{tp / tc:>10.1f}{same}")


if __name__ == "__main__":
    main()
