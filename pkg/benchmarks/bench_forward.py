"""Single-record forward pass: compiled kernel vs numpy fallback.

    python3 benchmarks/bench_forward.py [--repeat 5000] [--out bench_out/forward.json]
"""

import argparse
import json
import statistics
import sys
import time
from pathlib import Path

import numpy as np

from neuroflow.predictor import _fallback, kernels
from neuroflow.predictor.features import N_MODEL, N_PLATFORM
from neuroflow.predictor.model import init_params


def time_kernel(fn, packed, xm, xp, repeat):
    fn(packed, xm, xp)
    samples = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(packed, xm, xp)
        samples.append(time.perf_counter() - t0)
    samples.sort()
    return {
        "median_us": statistics.median(samples) * 1e6,
        "p95_us": samples[int(0.95 * (len(samples) - 1))] * 1e6,
        "mean_us": statistics.fmean(samples) * 1e6,
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5000)
    ap.add_argument("--platforms", type=int, default=3)
    ap.add_argument("--d", type=int, default=16)
    ap.add_argument("--h", type=int, default=24)
    ap.add_argument("--out", default=None)
    args = ap.parse_args(argv)

    ids = [f"p{i}" for i in range(args.platforms)]
    params = init_params(ids, args.d, args.h, seed=0)
    rng = np.random.default_rng(0)
    xm, xp = rng.random(N_MODEL), rng.random((args.platforms, N_PLATFORM))
    packed = kernels.pack(params)

    ref = _fallback.forward_one(packed, xm, xp)
    got = kernels.forward_one(packed, xm, xp)
    max_diff = max(float(np.max(np.abs(np.asarray(a) - np.asarray(b)))) for a, b in zip(ref, got))

    result = {"backend": kernels.BACKEND, "repeat": args.repeat, "platforms": args.platforms,
              "d": args.d, "h": args.h, "max_abs_diff": max_diff,
              "numpy": time_kernel(_fallback.forward_one, packed, xm, xp, args.repeat)}
    if kernels.BACKEND == "cython":
        result["cython"] = time_kernel(kernels.forward_one, packed, xm, xp, args.repeat)
        result["speedup"] = result["numpy"]["median_us"] / result["cython"]["median_us"]

    print(f"backend {result['backend']}, P={args.platforms} d={args.d} h={args.h}, max |diff| {max_diff:.1e}")
    for name in ("numpy", "cython"):
        if name in result:
            r = result[name]
            print(f"  {name:<7} median {r['median_us']:8.2f} us   p95 {r['p95_us']:8.2f} us")
    if "speedup" in result:
        print(f"  speedup {result['speedup']:.1f}x")
    else:
        print("  compiled kernel not built; only the fallback was timed")
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(json.dumps(result, indent=2) + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
