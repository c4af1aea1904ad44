"""Rendering throughput benchmark.

``python -m cxrforge.bench --threads N`` renders the nine default views of a
synthetic 128^3 chest at 512^2 and prints one JSON line with the timing.
:func:`measure_speedup` runs it in fresh processes so each run gets its own
thread pool.
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import time


def run_once(size: int = 128, detector: int = 512, threads: int = 1) -> dict:
    from .phantom import make_chest_phantom
    from .projector import ProjectionGeometry, default_view_angles, render_sample, set_threads

    used = set_threads(threads)
    ct, labels = make_chest_phantom((size,) * 3)
    g = ProjectionGeometry(nx=detector, ny=detector)
    render_sample(ct, labels, ProjectionGeometry(nx=8, ny=8), angle=0.0)  # compile outside the clock
    t0 = time.perf_counter()
    for angle in default_view_angles():
        render_sample(ct, labels, g, angle=angle)
    return {"size": size, "detector": detector, "threads_requested": threads, "threads_used": used,
            "views": 9, "seconds": time.perf_counter() - t0, "cpus": os.cpu_count()}


def run_subprocess(threads: int, size: int = 128, detector: int = 512) -> dict:
    env = dict(os.environ, NUMBA_NUM_THREADS=str(threads))
    cmd = [sys.executable, "-m", "cxrforge.bench", "--threads", str(threads), "--size", str(size),
           "--detector", str(detector)]
    out = subprocess.run(cmd, env=env, capture_output=True, text=True, check=True)
    return json.loads(out.stdout.strip().splitlines()[-1])


def measure_speedup(workers: int = 4, size: int = 128, detector: int = 512) -> dict:
    single = run_subprocess(1, size, detector)
    multi = run_subprocess(workers, size, detector)
    return {"single": single, "multi": multi, "speedup": single["seconds"] / multi["seconds"]}


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="cxrforge-bench", description=__doc__.splitlines()[0])
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--size", type=int, default=128)
    ap.add_argument("--detector", type=int, default=512)
    ap.add_argument("--speedup", type=int, metavar="N", help="compare 1 thread against N threads")
    args = ap.parse_args(argv)
    if args.speedup:
        res = measure_speedup(args.speedup, args.size, args.detector)
    else:
        res = run_once(args.size, args.detector, args.threads)
    print(json.dumps(res))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
