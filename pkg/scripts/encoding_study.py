"""Encoded-control cost against the relaxed cost for increasing refinement.

    python scripts/encoding_study.py configs/quadratic.toml --n 2 4 6 8
"""

import argparse

from disclosure_mfg.config import load_run_config
from disclosure_mfg.costs import major_depends_on_m
from disclosure_mfg.encoder import encode, encoding_gap_bound, evaluate_J0, max_refinement
from disclosure_mfg.relaxed import evaluate, relaxed_cost
from disclosure_mfg.solver import solve_mfg


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("config")
    ap.add_argument("--n", type=int, nargs="+", default=None)
    a = ap.parse_args()

    cfg = load_run_config(a.config)
    tree = cfg.tree()
    sol = solve_mfg(cfg.model, tree, cfg.grid, cfg.solver) if major_depends_on_m(cfg.model) else None
    jbar = evaluate(sol) if sol is not None else relaxed_cost(cfg.model, tree, cfg.grid, None)
    ns = a.n or list(cfg.encoder.n)
    print(f"relaxed cost {jbar:.6f}; finest admissible n on this grid: {max_refinement(cfg.model.horizon, cfg.grid)}")
    print("   n     window     encoded        gap      bound")
    for n in ns:
        enc = encode(cfg.model, tree, n, cfg.grid, sol)
        j0 = evaluate_J0(cfg.model, enc, cfg.grid, sol)
        print(f"{n:4d} {enc.window:10.6f} {j0:11.6f} {j0 - jbar:10.6f} {encoding_gap_bound(cfg.model, enc):10.6f}")


if __name__ == "__main__":
    main()
