"""Compare the compiled and NumPy sample-loop backends.

Usage::

    python benchmarks/bench_kernels.py [--samples 20000] [--repeat 3]

Prints the best-of-``repeat`` wall time per algorithm and problem for each
available backend, the speedup, and the largest difference between the
final iterates of the two backends.
"""
import argparse
import time

import numpy as np

from rotd import _backend
from rotd import environments as envs
from rotd.harness import mountain_car_batch
from rotd.solvers import Algorithm, SolverConfig, run_solver


def problems(n_samples: int, seed: int = 0):
    model, feats = envs.star_mdp()
    yield "star (d=8)", envs.collect_iid_samples(model, feats, n_samples, seed)
    model, feats = envs.random_mdp(seed, n_states=50, d=20)
    yield "random MDP (d=20)", envs.collect_iid_samples(model, feats, n_samples, seed)
    episodes = max(1, n_samples // 4000)
    yield f"mountain car (d=1365, N={episodes * 200})", mountain_car_batch(episodes, 200, seed)


def best_time(fn, repeat: int):
    best, out = float("inf"), None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--samples", type=int, default=20000)
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args(argv)

    backends = _backend.available()
    print(f"backends: {', '.join(backends)}")
    header = f"{'problem':<34} {'algorithm':<10}" + "".join(f" {b:>11}" for b in backends)
    if len(backends) > 1:
        header += f" {'speedup':>8} {'max |diff|':>11}"
    print(header)
    for name, batch in problems(args.samples):
        for algo in (Algorithm.TD, Algorithm.TDC, Algorithm.ROTD, Algorithm.GQ, Algorithm.ROGQ, Algorithm.ROTD_EXT):
            cfg = SolverConfig(alpha=0.001, gamma=0.9, eta=1.0, rho1=0.01, rho2=0.01, algorithm=algo, lam=0.5)
            times, finals = [], []
            for b in backends:
                t, run = best_time(lambda: run_solver(batch, cfg, record_every=len(batch), backend=b), args.repeat)
                times.append(t)
                finals.append(run.xbar[-1])
            line = f"{name:<34} {algo.value:<10}" + "".join(f" {t:>10.4f}s" for t in times)
            if len(backends) > 1:
                line += f" {times[-1] / times[0]:>7.1f}x {np.abs(finals[0] - finals[-1]).max():>11.2e}"
            print(line)


if __name__ == "__main__":
    main()
