"""Time the numba kernels against their numpy fallbacks and check they agree.

    python3 benchmarks/bench_kernels.py [--repeat 3] [--json out.json]

The numba column includes no compilation time (one warm-up call first).
"""
from __future__ import annotations

import argparse
import json
import time

import numpy as np

from pinlab import _kernels
from pinlab._accel import HAVE_NUMBA, backend
from pinlab.renewal import make_tables
from pinlab.rng import stream


def _best(fn, repeat: int) -> float:
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def cases(T, rng):
    K = np.ascontiguousarray(T.K)
    tail = np.ascontiguousarray(T.tail)
    N = 512
    lw = np.ascontiguousarray(0.5 * rng.standard_normal((200, N)) - 0.125)
    blocks = np.ascontiguousarray(rng.standard_normal((2000, 1024)))
    w = np.ascontiguousarray(T.u[:17])
    return {
        "renewal_conv n=4096": ("renewal_conv", (K,)),
        "partition_batch 200x512": ("partition_batch", (lw, K[: N + 1], tail[: N + 1])),
        "contacts_batch 200x512": ("contacts_batch", (lw, K[: N + 1], tail[: N + 1])),
        "count_tail_batch 200x512": ("count_tail_batch", (lw, K[: N + 1], tail[: N + 1], 12)),
        "layered_sum 2000x1024 t=16 q=2": ("layered_sum", (blocks, blocks, w, 16, 2)),
    }


def _close(a, b) -> float:
    a = np.asarray(a if not isinstance(a, tuple) else np.concatenate([np.ravel(x) for x in a]))
    b = np.asarray(b if not isinstance(b, tuple) else np.concatenate([np.ravel(x) for x in b]))
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(b), 1e-300)))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--json", help="write timings to this file")
    args = ap.parse_args(argv)

    T = make_tables("pinning", 4096)
    rng = stream(7, 0)
    print(f"dispatch backend: {backend()}")
    print(f"{'kernel':<34s}{'numpy [s]':>12s}{'numba [s]':>12s}{'speedup':>10s}{'max rel diff':>14s}")
    out = {}
    for label, (name, a) in cases(T, rng).items():
        f_np = getattr(_kernels, name + "_np")
        t_np = _best(lambda: f_np(*a), args.repeat)
        row = {"numpy_s": t_np}
        if HAVE_NUMBA:
            f_nb = getattr(_kernels, name + "_nb")
            ref = f_nb(*a)
            t_nb = _best(lambda: f_nb(*a), args.repeat)
            row.update(numba_s=t_nb, max_rel_diff=_close(f_np(*a), ref))
            print(f"{label:<34s}{t_np:12.4f}{t_nb:12.4f}{t_np / t_nb:10.1f}{row['max_rel_diff']:14.2e}")
        else:
            print(f"{label:<34s}{t_np:12.4f}{'n/a':>12s}")
        out[label] = row
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(out, fh, indent=2, sort_keys=True)


if __name__ == "__main__":
    main()
