#!/usr/bin/env python3
"""Run the default convex suite and print gap, bound and their ratio per run.

Also reports the grid estimates of (R, L, rho) next to the closed-form values
used for the bound.
"""

import argparse

from mirrorquant.convex_bench import (
    DEFAULT_B,
    DEFAULT_SUITE,
    DEFAULT_T,
    PROBLEMS,
    estimate_constants,
    exact_constants,
    make_map,
    run_case,
)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--t", type=int, nargs="+", default=list(DEFAULT_T))
    ap.add_argument("--B", type=float, nargs="+", default=list(DEFAULT_B))
    args = ap.parse_args()

    for problem_id, map_id in DEFAULT_SUITE:
        problem = PROBLEMS[problem_id]()
        m = make_map(map_id, problem)
        R, L, rho = exact_constants(problem, m)
        est = estimate_constants(problem, m)
        print(f"\n{problem_id} / {map_id}: R={R:.4f} L={L:.4f} rho={rho:.4f}  "
              f"(grid: R={est.R:.4f} L={est.L:.4f} rho={est.rho:.4f}, {est.grid_points} points)")
        for B in args.B:
            for r in run_case(problem_id, map_id, B, args.t):
                print(f"  B={B:<6g} t={r.params.t:<6d} gap={r.gap:.3e} bound={r.bound:.3e} "
                      f"ratio={r.gap / r.bound:.3f}")


if __name__ == "__main__":
    main()
