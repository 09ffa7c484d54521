#!/usr/bin/env python3
"""Race the subgradient solver against the exhaustive grid oracle.

The oracle is exact on its grid and the solver optimizes over the full box,
so the solver should match or beat it everywhere; the shortfall column is
oracle minus solver (negative means the solver found a better point off the
grid).
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "tests"))

import rcl
from conftest import make_instance


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--instances", type=int, default=20)
    parser.add_argument("--levels", type=int, default=4)
    parser.add_argument("--max-iters", type=int, default=1500)
    parser.add_argument("--seed", type=int, default=42)
    args = parser.parse_args()

    rng = np.random.default_rng(args.seed)
    print(f"{'#':>3} {'solver':>12} {'oracle':>12} {'shortfall':>11} "
          f"{'range':>9} {'secs':>6}")
    worst_ratio = -np.inf
    for i in range(args.instances):
        inst = make_instance(rng, m=2, n=2)
        uu = rcl.to_utility_units(inst)
        t0 = time.time()
        res = rcl.solve_mechanism(uu, rcl.SolveOptions(max_iters=args.max_iters))
        oracle = rcl.grid_oracle(uu, args.levels)
        values = rcl.contract_values(uu, rcl.grid_contracts(uu, args.levels))
        value_range = float(values.max() - values.min())
        shortfall = oracle.value - res.value
        worst_ratio = max(worst_ratio, shortfall / max(value_range, 1e-12))
        flag = "" if res.converged else "  NOT CONVERGED"
        print(f"{i:>3} {res.value:>12.8f} {oracle.value:>12.8f} "
              f"{shortfall:>11.2e} {value_range:>9.4f} "
              f"{time.time() - t0:>6.2f}{flag}")
    print(f"\nworst shortfall / range: {worst_ratio:.2e} (bound 5e-3)")
    return 0 if worst_ratio <= 5e-3 else 1


if __name__ == "__main__":
    raise SystemExit(main())
