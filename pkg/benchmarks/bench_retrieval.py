"""Throughput comparison: compiled scoring kernel vs pure-Python fallback.

Builds synthetic memory banks of growing size, runs identical top-k retrieval
queries through both backends, verifies they return exactly the same results,
and reports entries scored per second.

Usage: python benchmarks/bench_retrieval.py [--sizes 1000,5000,20000] [--queries 50]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from memsteer import scoring
from memsteer.memory import MemoryStore, StateKey

VOCAB = [f"tok{i}" for i in range(400)]


def build_store(n: int, rng: np.random.Generator, backend: str) -> MemoryStore:
    store = MemoryStore(backend=backend)
    for i in range(n):
        state = " ".join(rng.choice(VOCAB, size=rng.integers(4, 10)))
        history = " ".join(rng.choice(VOCAB, size=rng.integers(0, 4)))
        store.add(StateKey(state, history), f"act{i % 17}", float(rng.normal()))
    return store


def queries(m: int, rng: np.random.Generator) -> list[StateKey]:
    return [StateKey(" ".join(rng.choice(VOCAB, size=rng.integers(4, 10))),
                     " ".join(rng.choice(VOCAB, size=rng.integers(0, 4))))
            for _ in range(m)]


def bench(store: MemoryStore, keys: list[StateKey], k: int = 10,
          threshold: float = 0.1) -> tuple[float, list]:
    results = []
    started = time.perf_counter()
    for key in keys:
        neighborhood = store.retrieve(key, k=k, threshold=threshold)
        results.append([(e.time_index, sim) for e, sim in neighborhood.entries])
    return time.perf_counter() - started, results


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--sizes", default="1000,5000,20000")
    parser.add_argument("--queries", type=int, default=50)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    backends = ["python"]
    if scoring.compiled_available():
        backends.append("compiled")
    else:
        print("note: compiled kernel unavailable, benchmarking the fallback only")

    print(f"{'entries':>9} {'backend':>9} {'total s':>9} {'entries/s':>12} {'speedup':>8}")
    for n in [int(s) for s in args.sizes.split(",")]:
        keys = queries(args.queries, np.random.default_rng(args.seed + 1))
        timings: dict[str, float] = {}
        outputs: dict[str, list] = {}
        for backend in backends:
            store = build_store(n, np.random.default_rng(args.seed), backend)
            elapsed, results = bench(store, keys)
            timings[backend] = elapsed
            outputs[backend] = results
            rate = n * args.queries / elapsed
            speedup = (f"{timings['python'] / elapsed:>7.1f}x"
                       if backend == "compiled" else f"{'-':>8}")
            print(f"{n:>9} {backend:>9} {elapsed:>9.3f} {rate:>12.0f} {speedup}")
        if len(backends) == 2 and outputs["compiled"] != outputs["python"]:
            print("ERROR: backends disagree on retrieval results")
            return 1
    if len(backends) == 2:
        print("backends returned identical neighborhoods for every query")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
