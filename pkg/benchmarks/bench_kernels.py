"""Time the compiled kernels against the pure-Python fallback.

    python benchmarks/bench_kernels.py [--repeat N]

Both implementations are run on identical inputs; outputs are checked for
agreement before timings are reported.
"""
import argparse
import timeit

import numpy as np

from riskagent import _kernels_py

try:
    from riskagent import _kernels as compiled
except ImportError:
    compiled = None


def cases(rng):
    n = 20_000
    rewards, values = rng.normal(size=n), rng.normal(size=n)
    dones = rng.random(n) < 0.01
    x = rng.normal(100, 5, 5_000)
    holdings = rng.integers(0, 200, 30).astype(float)
    prices = rng.uniform(10, 300, 30)
    actions = rng.uniform(-1, 1, 30)
    return {
        "gae (20k steps)": (lambda m: m.gae(rewards, values, dones, 0.3, 0.99, 0.95), 20),
        "ewm (5k points)": (lambda m: m.ewm(x, 2 / 27, 0), 50),
        "execute_trades (30 assets)": (lambda m: m.execute_trades(1e6, holdings, prices, actions, 100.0, 0.001), 2000),
    }


def same(a, b) -> bool:
    if isinstance(a, tuple):
        return all(same(x, y) for x, y in zip(a, b))
    return np.allclose(a, b, rtol=0, atol=1e-9)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if compiled is None:
        print("compiled kernels are not built; only the fallback is available")
    rng = np.random.default_rng(0)
    print(f"{'kernel':28s} {'python (ms)':>12s} {'cython (ms)':>12s} {'speedup':>8s}")
    for name, (call, number) in cases(rng).items():
        t_py = min(timeit.repeat(lambda: call(_kernels_py), number=number, repeat=args.repeat)) / number
        if compiled is None:
            print(f"{name:28s} {t_py * 1e3:12.4f} {'-':>12s} {'-':>8s}")
            continue
        if not same(call(_kernels_py), call(compiled)):
            raise SystemExit(f"{name}: implementations disagree")
        t_c = min(timeit.repeat(lambda: call(compiled), number=number, repeat=args.repeat)) / number
        print(f"{name:28s} {t_py * 1e3:12.4f} {t_c * 1e3:12.4f} {t_py / t_c:7.1f}x")


if __name__ == "__main__":
    main()
