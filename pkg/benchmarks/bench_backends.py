"""Timing comparison of the pure-python and compiled kernel backends.

Runs each hot kernel on identical inputs through every available backend,
checks that the outputs agree, and prints a small table with the speedup.

    python3 benchmarks/bench_backends.py
    python3 benchmarks/bench_backends.py --labels 20000 --repeats 7
"""

import argparse
import time

import numpy as np

from ferkd._kernels import backend_name, backends


def best_of(fn, repeats):
    times = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return min(times)


def make_cases(args):
    rng = np.random.default_rng(args.seed)
    probs = rng.dirichlet(np.full(args.classes, 0.3), size=args.labels)
    logits = rng.normal(scale=2.0, size=(args.batch, args.classes))
    targets = rng.dirichlet(np.full(args.classes, 0.5), size=args.batch)

    def quantize(mod):
        out = []
        for row in probs:
            out.append(mod.quantize_topk(row, args.top_k, 255))
        return out

    def recover(mod):
        packed = [(np.asarray(sel), np.asarray(q)) for sel, q in quantize_ref]
        out = []
        for sel, q in packed:
            out.append(mod.recover_dense(sel, q, args.classes, 255))
        return out

    def sce(mod):
        per, grad = mod.sce_batch(logits, targets)
        return per.sum() + grad.sum()

    def crops(mod):
        state = args.seed & 0xFFFFFFFFFFFFFFFF
        acc = 0
        for _ in range(args.crops):
            state, x, y, w, h = mod.sample_crop_px(
                224, 224, 0.08, 1.0, 0.75, 4.0 / 3.0, 10, state
            )
            acc += x + y + w + h
        return acc

    # recover() replays quantize()'s output, so run the pure backend once
    # up front to build that input.
    quantize_ref = quantize(backends()["pure"])
    return [
        (f"quantize_topk  ({args.labels} x {args.classes})", quantize),
        (f"recover_dense  ({args.labels} x {args.classes})", recover),
        (f"sce_batch      ({args.batch} x {args.classes})", sce),
        (f"sample_crop_px ({args.crops} draws)", crops),
    ]


def check_agreement(case_fn):
    outs = {name: case_fn(mod) for name, mod in backends().items()}
    if len(outs) < 2:
        return True
    a, b = outs["pure"], outs["cython"]
    if isinstance(a, (int, float, np.floating)):
        return bool(np.isclose(a, b, rtol=1e-9, atol=1e-12))
    flat_a = [np.asarray(x) for pair in a for x in (pair if isinstance(pair, tuple) else (pair,))]
    flat_b = [np.asarray(x) for pair in b for x in (pair if isinstance(pair, tuple) else (pair,))]
    return all(np.allclose(x, y, rtol=1e-12, atol=0) for x, y in zip(flat_a, flat_b))


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--labels", type=int, default=2000, help="labels to quantize/recover")
    parser.add_argument("--classes", type=int, default=1000)
    parser.add_argument("--top-k", type=int, default=10)
    parser.add_argument("--batch", type=int, default=4096, help="rows for the loss kernel")
    parser.add_argument("--crops", type=int, default=50000, help="crop boxes to draw")
    parser.add_argument("--repeats", type=int, default=5, help="best-of-N timing")
    parser.add_argument("--seed", type=int, default=7)
    args = parser.parse_args(argv)

    mods = backends()
    print(f"backends: {', '.join(mods)} (default: {backend_name()})")
    header = f"{'kernel':<34}" + "".join(f"{name:>12}" for name in mods) + f"{'speedup':>10}"
    print(header)
    print("-" * len(header))
    for label, case_fn in make_cases(args):
        if not check_agreement(case_fn):
            print(f"{label:<34}  OUTPUT MISMATCH")
            continue
        timings = {name: best_of(lambda m=mod: case_fn(m), args.repeats) for name, mod in mods.items()}
        row = f"{label:<34}" + "".join(f"{timings[name] * 1000:>10.1f}ms" for name in mods)
        if "pure" in timings and "cython" in timings:
            row += f"{timings['pure'] / timings['cython']:>9.1f}x"
        print(row)


if __name__ == "__main__":
    main()
