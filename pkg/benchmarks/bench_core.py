"""Compare the compiled ring core against the pure-Python fallback.

Each backend runs in its own interpreter (the backend is fixed at import),
with ``RJCH_PURE_PYTHON=1`` selecting the fallback.

    python3 benchmarks/bench_core.py --objects 2000 --bins 200
"""
from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import time


def _best(fn, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def worker(args) -> dict:
    from rjch import BACKEND
    from rjch._backend import murmur3_x64_128
    from rjch.ring import build_ring
    from rjch.simulator import object_keys

    keys = object_keys(args.objects)
    out = {"backend": BACKEND}
    out["murmur"] = _best(lambda: [murmur3_x64_128(k, 7) for k in keys], args.repeats)
    for strategy in ("CH_BL", "CH_BL_REHASH", "RJ_CH"):
        def fill():
            ring = build_ring(args.bins, args.epsilon, args.objects, 0, strategy, 1, args.address_bits)
            ring.insert_many(keys)
            return ring
        out[f"fill {strategy}"] = _best(fill, args.repeats)
        ring = fill()
        probes = [b"probe:%d" % i for i in range(args.probes)]
        out[f"probe {strategy}"] = _best(lambda: [ring.probe(p) for p in probes], args.repeats)
    return out


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--objects", type=int, default=2000)
    ap.add_argument("--bins", type=int, default=200)
    ap.add_argument("--epsilon", type=float, default=0.1)
    ap.add_argument("--address-bits", type=int, default=16)
    ap.add_argument("--probes", type=int, default=100)
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--worker", action="store_true", help=argparse.SUPPRESS)
    args = ap.parse_args(argv)
    if args.worker:
        print(json.dumps(worker(args)))
        return 0

    passthrough = list(argv if argv is not None else sys.argv[1:])
    results = {}
    for pure in ("0", "1"):
        env = dict(os.environ, RJCH_PURE_PYTHON=pure)
        proc = subprocess.run([sys.executable, __file__, "--worker", *passthrough], env=env,
                              capture_output=True, text=True, check=True)
        r = json.loads(proc.stdout)
        results[r.pop("backend")] = r
    if "compiled" not in results:
        print("compiled core not built; only the Python fallback was timed")
    print(f"n={args.objects} k={args.bins} eps={args.epsilon} A={args.address_bits} "
          f"probes={args.probes} (best of {args.repeats})")
    print(f"{'workload':22s} {'compiled s':>12s} {'python s':>12s} {'speedup':>9s}")
    py = results["python"]
    cc = results.get("compiled", {})
    for name, t_py in py.items():
        t_cc = cc.get(name)
        if t_cc is None:
            print(f"{name:22s} {'-':>12s} {t_py:12.4f}")
        else:
            print(f"{name:22s} {t_cc:12.4f} {t_py:12.4f} {t_py / t_cc:8.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
