"""Time the compiled kernels against the pure Python fallback.

    python benchmarks/bench_kernels.py [--repeat 3] [--json out.json]

Each kernel runs on the same inputs under both backends; the script also
checks that the outputs agree before reporting timings.
"""

import argparse
import json
import sys
import time

import numpy as np

from dizikit.kernels import available_backends


def _inputs(seed=0):
    rng = np.random.default_rng(seed)
    seqs = [(rng.normal(size=(int(rng.integers(8, 40)), 8)), rng.normal(size=(8, 8))) for _ in range(300)]
    V, d, n, k = 60, 32, 20000, 5
    W_in = (rng.random((V, d)) - 0.5) / d
    W_out = np.zeros((V, d))
    centers = rng.integers(0, V, size=n)
    contexts = rng.integers(0, V, size=n)
    negatives = rng.integers(0, V, size=(n, k))
    lrs = np.linspace(0.025, 1e-4, n)
    ctx_flat = rng.integers(0, V, size=n * 4)
    offsets = np.arange(0, n * 4 + 1, 4, dtype=np.int64)
    return seqs, (W_in, W_out, centers, contexts, negatives, lrs, ctx_flat, offsets)


def _cases(impl, seqs, emb):
    W_in, W_out, centers, contexts, negatives, lrs, ctx_flat, offsets = emb
    return {
        "viterbi x300": lambda: [impl.viterbi(e, t)[1] for e, t in seqs],
        "forward_backward x300": lambda: [impl.forward_backward(e, t)[0] for e, t in seqs],
        "sgns_epoch 20k": lambda: impl.sgns_epoch(W_in.copy(), W_out.copy(), centers, contexts, negatives, lrs),
        "cbow_epoch 20k": lambda: impl.cbow_epoch(W_in.copy(), W_out.copy(), centers, ctx_flat, offsets,
                                                  negatives, lrs),
    }


def _best_of(fn, repeat):
    best, out = float("inf"), None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--json")
    args = ap.parse_args(argv)

    backends = available_backends()
    seqs, emb = _inputs()
    results = {}
    for name, impl in sorted(backends.items()):
        for case, fn in _cases(impl, seqs, emb).items():
            results.setdefault(case, {})[name] = _best_of(fn, args.repeat)

    print(f"{'kernel':<24}" + "".join(f"{b:>12}" for b in sorted(backends)) + (f"{'speedup':>10}" if len(backends) > 1 else ""))
    rows = {}
    for case, by_backend in results.items():
        outs = [np.asarray(v[1], dtype=float) for v in by_backend.values()]
        if not all(np.allclose(o, outs[0], rtol=1e-9, atol=1e-9) for o in outs):
            print(f"backends disagree on {case}", file=sys.stderr)
            return 1
        times = {b: t for b, (t, _) in by_backend.items()}
        line = f"{case:<24}" + "".join(f"{times[b] * 1e3:>10.1f}ms" for b in sorted(times))
        if "cython" in times and "python" in times:
            line += f"{times['python'] / times['cython']:>9.1f}x"
        print(line)
        rows[case] = {b: round(t, 6) for b, t in times.items()}
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2, sort_keys=True)
    return 0


if __name__ == "__main__":
    sys.exit(main())
