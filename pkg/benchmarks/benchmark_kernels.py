#!/usr/bin/env python3
"""
Performance benchmarks for causaltransfer
Times the transport, Fisher and training kernels and the seed-level worker pool
"""

import sys
import time

import numpy as np

try:
    from causaltransfer import (
        MlpSpec,
        PointCloud,
        TrainConfig,
        build_model,
        cita,
        empirical_fisher_diag,
        exact_w1,
        gen_heat,
        gen_rkhs,
        sinkhorn_w1,
        train,
    )
    from causaltransfer.pipeline import run_jobs
except ImportError:
    print("Error: causaltransfer not installed. Run 'pip install -e .' first.")
    sys.exit(1)


class Benchmark:
    def __init__(self, name):
        self.name = name
        self.results = {}

    def run(self, label, func, *args, iterations=1, **kwargs):
        """Run benchmark and return average time"""
        times = []
        for _ in range(iterations):
            start = time.perf_counter()
            func(*args, **kwargs)
            times.append(time.perf_counter() - start)
        avg_time = sum(times) / len(times)
        self.results[label] = avg_time
        return avg_time

    def print_results(self):
        print(f"\n{'='*70}")
        print(f"Benchmark: {self.name}")
        print(f"{'='*70}")
        if not self.results:
            print("No results to display")
            return
        baseline_name = list(self.results.keys())[0]
        baseline_time = self.results[baseline_name]
        for name, time_taken in self.results.items():
            ratio = time_taken / baseline_time if baseline_time > 0 else 0
            print(f"{name:40} {time_taken:8.4f}s  ({ratio:6.2f}x)")
        print(f"{'='*70}\n")


def benchmark_transport():
    """Sinkhorn with and without gradients against the exact solvers"""
    bench = Benchmark("1-Wasserstein, two 3-d clouds")
    rng = np.random.default_rng(0)
    for m in (64, 128, 256):
        p = PointCloud(rng.normal(size=(m, 3)))
        q = PointCloud(rng.normal(size=(m, 3)) + 1.0)
        bench.run(f"exact (assignment) m={m}", exact_w1, p, q, iterations=3)
        bench.run(f"sinkhorn cost m={m}", sinkhorn_w1, p, q, with_grad=False, iterations=3)
        bench.run(f"sinkhorn cost+grad m={m}", sinkhorn_w1, p, q, iterations=3)
    q_odd = PointCloud(rng.normal(size=(97, 3)))
    bench.run("exact (LP) 128 x 97", exact_w1, PointCloud(rng.normal(size=(128, 3))), q_odd)
    bench.print_results()


def benchmark_fisher():
    """Fisher signatures and the symmetrized distance on RKHS tasks"""
    bench = Benchmark("Fisher signatures (d=4, default network)")
    source, target = gen_rkhs(0, n=2000), gen_rkhs(1, n=2000)
    model = build_model(source.d)
    bench.run("signature n=2000", empirical_fisher_diag, model, source, iterations=3)
    bench.run("cita (2 permutations)", cita, model, source, target, iterations=3)
    bench.print_results()


def benchmark_training():
    """One training run on Heat for a few balancing weights"""
    bench = Benchmark("Training on Heat (n=1000, 5 epochs)")
    ds = gen_heat(1.0, n=1000, seed=0)
    for alpha in (0.0, 1.0):
        config = TrainConfig(alpha=alpha, epochs=5)
        bench.run(f"alpha={alpha:g}", train, ds, MlpSpec((1, 64, 32)), (16,), config)
    bench.print_results()


def benchmark_workers():
    """Independent seed jobs inline and through the worker pool"""
    bench = Benchmark("Seed jobs (4 training runs)")
    ds = gen_heat(1.0, n=400, seed=0)

    def job(seed):
        return train(ds, MlpSpec((1, 32, 16), seed=seed), (8,), TrainConfig(epochs=3, seed=seed))[0].model_id

    bench.run("inline", run_jobs, job, list(range(4)), 1)
    bench.run("makeparallel workers=4", run_jobs, job, list(range(4)), 4)
    bench.print_results()


def main():
    print("causaltransfer kernel benchmarks")
    benchmark_transport()
    benchmark_fisher()
    benchmark_training()
    benchmark_workers()


if __name__ == "__main__":
    main()
