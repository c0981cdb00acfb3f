"""Time the compiled per-path kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--paths N] [--atoms M] [--repeat R]

Atoms are a realistic gamma-sheet batch (sorted, CSR packed); every timing
is the best of ``repeat`` runs, and both backends are checked to agree.
"""

import argparse
import importlib
import timeit

import numpy as np

from levyfield import _kernels_py
from levyfield.levy_measure import GammaDensity
from levyfield.random_fields import ConstantKappa, simulate_batch


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--paths", type=int, default=10_000)
    ap.add_argument("--eps", type=float, default=0.01, help="gamma truncation level (sets atoms per path)")
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args(argv)

    try:
        compiled = importlib.import_module("levyfield._kernels")
    except ImportError:
        compiled = None
        print("compiled kernels not built; timing the numpy fallback only")

    b = simulate_batch(GammaDensity(1.0), ConstantKappa(1.0), (2.0, 2.0), args.eps,
                       np.random.default_rng(args.seed), args.paths)
    w = b.weights
    s_grid = np.linspace(0.0, 2.0, 50)
    t_grid = np.linspace(0.0, 2.0, 50)
    print(f"{b.n_paths} paths, {b.x.size} atoms ({b.x.size / b.n_paths:.1f} per path)")

    cases = {
        "rect_sums indicator": lambda k: k.rect_sums(b.offsets, b.x, b.y, w, -1.0, 1.0, 1.5, 0, 0.0, 0.0),
        "rect_sums forward": lambda k: k.rect_sums(b.offsets, b.x, b.y, w, -1.0, 1.0, 2.0, 1, 2.0, 1.0),
        "rect_sums diagonal": lambda k: k.rect_sums(b.offsets, b.x, b.y, w, -1.0, 1.5, 1.5, 2, 1.5, 0.0),
        "grid_sums 50x50": lambda k: k.grid_sums(b.offsets, b.x, b.y, w, s_grid, t_grid),
    }
    print(f"{'kernel':<22}{'numpy [ms]':>12}{'compiled [ms]':>15}{'speedup':>10}")
    for name, call in cases.items():
        t_py = min(timeit.repeat(lambda: call(_kernels_py), number=1, repeat=args.repeat)) * 1e3
        if compiled is None:
            print(f"{name:<22}{t_py:>12.2f}{'-':>15}{'-':>10}")
            continue
        if not np.allclose(call(compiled), call(_kernels_py), rtol=1e-12, atol=1e-12):
            raise SystemExit(f"{name}: backends disagree")
        t_c = min(timeit.repeat(lambda: call(compiled), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:<22}{t_py:>12.2f}{t_c:>15.2f}{t_py / t_c:>9.1f}x")


if __name__ == "__main__":
    main()
