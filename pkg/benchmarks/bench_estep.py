"""Time the E-step under both kernel backends on representative workloads.

Usage: python3 benchmarks/bench_estep.py [--reps 5] [--full-fit]

The E-step dominates total fitting cost (it runs one smoothing pass per
mixture assignment per block pattern), so this is the number that decides
whether the compiled extension is worth building on a given machine.
"""
import argparse
import sys
import time

import numpy as np

from svarss._backend import available_backends
from svarss.em import EmConfig, Theta, e_step, em_fit
from svarss.model import MixtureSpec, SvarModel, simulate
from svarss.sampling import apply_scheme, mixed_scheme, uniform_scheme

MIX = MixtureSpec(weights=[0.7, 0.3], means=[0.36, -0.84], variances=[0.04, 1.0])


def _case(name, p, T, scheme, m=2, seed=0):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((p, p))
    A *= 0.7 / np.max(np.abs(np.linalg.eigvals(A)))
    C = np.eye(p) + 0.2 * rng.standard_normal((p, p))
    if m == 2:
        shocks = (MIX,) * p
    else:
        shocks = tuple(
            MixtureSpec(
                weights=np.full(m, 1.0 / m),
                means=np.linspace(-0.5, 0.5, m),
                variances=np.linspace(0.2, 1.0, m),
            )
            for _ in range(p)
        )
    model = SvarModel(A=A, C=C, shocks=shocks)
    traj = simulate(model, T, seed=seed)
    return name, Theta.from_model(model), apply_scheme(scheme, traj)


def bench_estep(reps):
    cases = [
        _case("p2 k2 m2 T=800", 2, 800, uniform_scheme(2, 2)),
        _case("p2 k3 m2 T=600", 2, 601, uniform_scheme(2, 3)),
        _case("p2 k4 m2 T=800", 2, 801, uniform_scheme(2, 4)),
        _case("p3 k2 m2 T=500", 3, 501, uniform_scheme(3, 2)),
        _case("p2 rates 1,3 T=600", 2, 601, mixed_scheme([1, 3])),
        _case("p2 k2 m3 T=400", 2, 400, uniform_scheme(2, 2), m=3),
    ]
    backends = available_backends()
    header = f"{'case':<22}" + "".join(f"{b:>12}" for b in backends)
    if len(backends) == 2:
        header += f"{'speedup':>10}"
    print(header)
    print("-" * len(header))
    for name, theta, obs in cases:
        times = {}
        for backend in backends:
            e_step(theta, obs, EmConfig(), backend=backend)  # warm up
            best = np.inf
            for _ in range(reps):
                t0 = time.perf_counter()
                stats, ll = e_step(theta, obs, EmConfig(), backend=backend)
                best = min(best, time.perf_counter() - t0)
            times[backend] = best
        row = f"{name:<22}" + "".join(f"{times[b] * 1e3:>10.2f}ms" for b in backends)
        if len(backends) == 2:
            row += f"{times['python'] / times['compiled']:>9.1f}x"
        print(row)


def bench_full_fit():
    name, theta, obs = _case("p2 k2 m2 T=800", 2, 800, uniform_scheme(2, 2))
    print(f"\nfull EM fit, {name}, single start:")
    for backend in available_backends():
        config = EmConfig(max_iter=200, tol=1e-7, backend=backend)
        t0 = time.perf_counter()
        res = em_fit(theta, obs, config)
        dt = time.perf_counter() - t0
        print(
            f"  {backend:>8}: {dt:6.2f}s  ({res.n_iter} iters, "
            f"loglik {res.loglik:.4f}, converged={res.converged})"
        )


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--reps", type=int, default=5, help="timing repetitions")
    parser.add_argument(
        "--full-fit", action="store_true", help="also time one complete EM fit"
    )
    args = parser.parse_args(argv)
    print(f"backends available: {', '.join(available_backends())}")
    bench_estep(args.reps)
    if args.full_fit:
        bench_full_fit()
    return 0


if __name__ == "__main__":
    sys.exit(main())
