"""Grid-refinement study of the MFG solution on one config.

Solves on successively doubled grids (dt scaled with dx^2) and prints the
relaxed cost, terminal moments of every leaf and the solver effort.

    python scripts/refinement_study.py configs/congestion.toml --levels 3
"""

import argparse
import time

from disclosure_mfg.config import load_run_config, run_config_from_dict
from disclosure_mfg.grid import MeasureOnGrid
from disclosure_mfg.relaxed import evaluate
from disclosure_mfg.solver import solve_mfg


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("config")
    ap.add_argument("--levels", type=int, default=3)
    ap.add_argument("--n-x", type=int, default=101, help="coarsest number of space nodes")
    a = ap.parse_args()

    base = load_run_config(a.config)
    n_x = a.n_x
    n_t = max(int(base.model.horizon / (2 * base.grid.x_max / (n_x - 1)) ** 2) + 1, 16)
    print("  n_x    n_t  iters   relaxed   leaf (mean, variance) at T   seconds")
    for _ in range(a.levels):
        raw = dict(base.raw, grid=dict(base.raw["grid"], n_x=n_x, n_t=n_t))
        cfg = run_config_from_dict(raw, base.source)
        t0 = time.perf_counter()
        sol = solve_mfg(cfg.model, cfg.tree(), cfg.grid, cfg.solver)
        moments = []
        for leaf in sol.tree.leaves():
            m = MeasureOnGrid(cfg.grid, sol.nodes[leaf.id].m[-1])
            moments.append(f"({m.mean():+.4f}, {m.variance():.4f})")
        print(f"{n_x:5d} {n_t:6d} {sol.iterations:6d} {evaluate(sol):9.5f}   {' '.join(moments)}   {time.perf_counter() - t0:7.1f}")
        n_x, n_t = 2 * n_x - 1, 4 * n_t


if __name__ == "__main__":
    main()
