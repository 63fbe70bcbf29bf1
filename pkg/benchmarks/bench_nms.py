"""Compare the compiled and numpy kernel backends.

    python benchmarks/bench_nms.py [--sizes 1000 10000 100000] [--repeat 3]

Prints one row per (kernel, size, backend) with the best wall time and
checks that both backends return the same result.
"""
import argparse
import time

import numpy as np

from boxforge import kernels


def boxes_for(n, seed=0):
    rng = np.random.default_rng(seed)
    # keep density roughly constant: the image grows with n
    side = 200.0 * np.sqrt(n / 100.0)
    xy = rng.uniform(0, side, (n, 2))
    boxes = np.hstack([xy, xy + rng.uniform(5, 150, (n, 2))])
    return boxes, rng.random(n)


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t)
    return min(times), out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[1000, 10_000, 100_000])
    ap.add_argument("--soft-sizes", type=int, nargs="+", default=[500, 2000])
    ap.add_argument("--thresh", type=float, default=0.7)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    backends = kernels.available_backends()
    if "c" not in backends:
        print("compiled backend not built; timing the numpy fallback only")
    print(f"{'kernel':<10}{'n':>9}{'backend':>9}{'seconds':>11}{'speedup':>9}")
    for n in args.sizes:
        boxes, scores = boxes_for(n)
        order = np.argsort(-scores, kind="stable")
        res = {}
        for name, mod in sorted(backends.items()):
            res[name] = best_of(lambda: mod.nms_keep(boxes, order, args.thresh), args.repeat)
        _report("nms", n, res)
        kept = res["python"][1]
        vres = {}
        for name, mod in sorted(backends.items()):
            vres[name] = best_of(lambda: mod.box_vote(boxes[kept[:2000]], boxes, scores, args.thresh), 1)
        _report("vote", n, vres)
    for n in args.soft_sizes:
        boxes, scores = boxes_for(n, seed=1)
        res = {}
        for name, mod in sorted(backends.items()):
            res[name] = best_of(lambda: mod.soft_nms(boxes, scores, args.thresh, 0, 0.5, 0.03), args.repeat)
        _report("soft-nms", n, res)


def _report(kernel, n, res):
    if "c" in res:
        a, b = res["python"][1], res["c"][1]
        same = all(np.array_equal(x, y) for x, y in zip(a, b)) if isinstance(a, tuple) else np.array_equal(a, b)
        if not same:
            raise SystemExit(f"{kernel} n={n}: backends disagree")
    base = res["python"][0]
    for name, (secs, _) in sorted(res.items()):
        print(f"{kernel:<10}{n:>9}{name:>9}{secs:>11.4f}{base / secs:>8.1f}x")


if __name__ == "__main__":
    main()
