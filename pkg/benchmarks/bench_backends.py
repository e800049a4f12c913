"""Compare the numba and pure-NumPy kernel backends on realistic shapes.

Each lane runs in a subprocess (the backend is fixed at import time by
``NOISECOV_BACKEND``), times the four hot kernels, and writes its raw
outputs; the parent prints a timing table and checks that the two lanes
agree to 1e-12 relative error.

Usage:
    python benchmarks/bench_backends.py [--quick]
"""

import argparse
import json
import os
import subprocess
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

SIZES = {
    "full": {
        "zeta_n": 23400, "zeta_calls": 50,
        "xi_n": 7800, "xi_calls": 50,
        "heston_p": 50, "heston_n": 23400, "heston_calls": 5,
        "intersect_n": 6600, "intersect_calls": 500,
    },
    "quick": {
        "zeta_n": 4000, "zeta_calls": 20,
        "xi_n": 2000, "xi_calls": 20,
        "heston_p": 10, "heston_n": 4000, "heston_calls": 3,
        "intersect_n": 1500, "intersect_calls": 100,
    },
}

TICK_DURATION = 1.0 / (252 * 23400)


def _workloads(sizes):
    rng = np.random.default_rng(13)
    n = sizes["zeta_n"]
    vi, vj = rng.standard_normal(n), rng.standard_normal(n)

    m = sizes["xi_n"]
    ticks = np.sort(rng.choice(np.arange(1, 4 * m), size=m, replace=False)).astype(np.int64)
    wi, wj = rng.standard_normal(m), rng.standard_normal(m)

    p, h_n = sizes["heston_p"], sizes["heston_n"]
    dt = (1.0 / 252) / h_n
    v0 = np.full(p, 0.045)
    dB = rng.standard_normal((p, h_n)) * np.sqrt(dt)
    dW = rng.standard_normal((p, h_n)) * np.sqrt(dt)

    k = sizes["intersect_n"]
    a = np.sort(rng.choice(np.arange(1, 4 * k), size=k, replace=False)).astype(np.int64)
    b = np.sort(rng.choice(np.arange(1, 4 * k), size=k, replace=False)).astype(np.int64)

    return {
        "zeta_k": (vi, vj, 6),
        "zeta_xi": (ticks, wi, wj, 6 * 3 * TICK_DURATION, 3 * TICK_DURATION),
        "heston_evolve": (v0, dB, dW, 4.0, 0.09, 0.3, dt),
        "intersect_sorted": (a, b),
    }


def run_lane(out_path: str, sizes: dict) -> None:
    """Child process: time every kernel on the active backend."""
    from noisecov import kernels

    work = _workloads(sizes)
    calls = {
        "zeta_k": sizes["zeta_calls"],
        "zeta_xi": sizes["xi_calls"],
        "heston_evolve": sizes["heston_calls"],
        "intersect_sorted": sizes["intersect_calls"],
    }
    timings, outputs = {}, {}
    for name, args in work.items():
        fn = getattr(kernels, name)
        result = fn(*args)  # warm-up (jit compile on the numba lane)
        start = time.perf_counter()
        for _ in range(calls[name]):
            fn(*args)
        elapsed = time.perf_counter() - start
        timings[name] = 1e3 * elapsed / calls[name]
        parts = result if isinstance(result, tuple) else (result,)
        for idx, part in enumerate(parts):
            outputs[f"{name}_{idx}"] = np.asarray(part)

    np.savez(out_path, **outputs)
    print(json.dumps({"backend": kernels.BACKEND, "timings_ms": timings}))


def compare(full: bool) -> int:
    sizes = SIZES["full" if full else "quick"]
    lanes = {}
    with tempfile.TemporaryDirectory() as tmp:
        for lane in ("numba", "numpy"):
            out = Path(tmp) / f"{lane}.npz"
            env = {**os.environ, "NOISECOV_BACKEND": lane}
            proc = subprocess.run(
                [sys.executable, __file__, "--lane", str(out),
                 "--sizes", json.dumps(sizes)],
                capture_output=True, text=True, env=env,
            )
            if proc.returncode != 0:
                print(f"{lane} lane failed:\n{proc.stderr}", file=sys.stderr)
                return 1
            report = json.loads(proc.stdout.strip().splitlines()[-1])
            assert report["backend"] == lane
            lanes[lane] = (report["timings_ms"], dict(np.load(out)))

    timings_nb, out_nb = lanes["numba"]
    timings_np, out_np = lanes["numpy"]

    print(f"{'kernel':<18} {'numba ms':>10} {'numpy ms':>10} {'speedup':>9} {'max rel dev':>13}")
    worst = 0.0
    for name in ("zeta_k", "zeta_xi", "heston_evolve", "intersect_sorted"):
        devs = []
        for key in sorted(k for k in out_nb if k.startswith(name)):
            a, b = out_nb[key], out_np[key]
            if a.shape != b.shape:
                devs.append(np.inf)
                continue
            if np.issubdtype(a.dtype, np.integer):
                devs.append(0.0 if np.array_equal(a, b) else np.inf)
            else:
                scale = max(float(np.max(np.abs(b))), 1e-300)
                devs.append(float(np.max(np.abs(a - b))) / scale)
        dev = max(devs)
        worst = max(worst, dev)
        t_nb, t_np = timings_nb[name], timings_np[name]
        print(f"{name:<18} {t_nb:>10.3f} {t_np:>10.3f} {t_np / t_nb:>8.1f}x {dev:>13.2e}")

    if worst > 1e-12:
        print(f"\nFAIL: lanes disagree (max rel dev {worst:.2e} > 1e-12)")
        return 1
    print(f"\nlanes agree to {worst:.2e} (<= 1e-12)")
    return 0


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--quick", action="store_true", help="small shapes, fast run")
    parser.add_argument("--lane", help=argparse.SUPPRESS)
    parser.add_argument("--sizes", help=argparse.SUPPRESS)
    args = parser.parse_args()
    if args.lane:
        run_lane(args.lane, json.loads(args.sizes))
        return 0
    return compare(full=not args.quick)


if __name__ == "__main__":
    sys.exit(main())
