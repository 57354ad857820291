"""Command-line front end: ``disclosure-mfg {solve,optimize,encode,simulate,verify}``.

Every subcommand reads one TOML config, validates it before computing
anything, writes its artifacts under ``--out`` and finishes with a manifest
``manifest_<command>.json`` listing the files it wrote.

Exit codes: 0 success, 2 configuration or usage error, 3 fixed point not
converged, 4 a built-in acceptance check failed, 5 simulation aborted.
"""

from __future__ import annotations

import argparse
import logging
import platform
import sys
import time
from importlib import metadata
from pathlib import Path

import numpy as np
import scipy

from . import io
from .config import RunConfig, describe, load_run_config, run_config_from_dict
from .costs import major_depends_on_m
from .encoder import EncodingError, decode, encode, encoding_gap_bound, evaluate_J0
from .model import ConfigError
from .nplayer import SimConfig, SimulationError, chaos_distance, major_cost_N, simulate
from .relaxed import evaluate, optimize, relaxed_cost
from .solver import MFGSolution, SolverError, solve_mfg, verify_value
from .tree import RevelationTree, TreeError

log = logging.getLogger("disclosure_mfg")

EXIT_OK, EXIT_CONFIG, EXIT_NONCONVERGED, EXIT_CHECK, EXIT_SIM = 0, 2, 3, 4, 5


class CommandError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


class Run:
    """Shared state of one invocation: config, output directory, file index, timings."""

    def __init__(self, command: str, cfg: RunConfig, out: Path, workers: int, dump: bool):
        self.command, self.cfg, self.out, self.workers, self.dump = command, cfg, out, workers, dump
        self.files: list[Path] = []
        self.timings: dict[str, float] = {}
        self.results: dict = {}
        self._t0 = time.perf_counter()

    @property
    def hash(self) -> str:
        return self.cfg.hash

    def csv(self, name: str, header, rows) -> Path:
        p = io.write_csv(self.out / name, list(header), rows, self.hash)
        self.files.append(p)
        return p

    def json(self, name: str, obj: dict) -> Path:
        p = io.write_json(self.out / name, obj, self.hash)
        self.files.append(p)
        return p

    def timed(self, label: str):
        run = self

        class _Timer:
            def __enter__(self):
                self.t = time.perf_counter()

            def __exit__(self, *exc):
                run.timings[label] = time.perf_counter() - self.t

        return _Timer()

    def manifest(self) -> Path:
        self.timings["total"] = time.perf_counter() - self._t0
        doc = {
            "command": self.command,
            "config": self.cfg.source,
            "settings": describe(self.cfg),
            "versions": _versions(),
            "seeds": {"root": self.cfg.seed},
            "tolerances": {
                "tol_fp": self.cfg.solver.tol_fp,
                "tol_opt": self.cfg.optimizer.tol_opt,
                "w_min": self.cfg.optimizer.w_min,
            },
            "files": [
                {"path": str(p.relative_to(self.out)), "sha256": io.file_hash(p)} for p in self.files
            ],
            "results": self.results,
            "timings_seconds": self.timings,
        }
        return io.write_json(self.out / f"manifest_{self.command}.json", doc, self.hash)


def _versions() -> dict:
    try:
        pkg = metadata.version("artifact")
    except metadata.PackageNotFoundError:  # running from a source checkout
        pkg = "unknown"
    return {"disclosure_mfg": pkg, "numpy": np.__version__, "scipy": scipy.__version__, "python": platform.python_version()}


def _tree(run: Run, override: str | None) -> RevelationTree:
    if override is None:
        return run.cfg.tree(Path(run.cfg.source).parent)
    try:
        return RevelationTree.from_json(Path(override).read_text(encoding="utf-8"))
    except (OSError, TreeError) as exc:
        raise CommandError(EXIT_CONFIG, f"cannot read tree {override}: {exc}") from None


def _solve(run: Run, tree: RevelationTree) -> MFGSolution:
    cfg = run.cfg
    with run.timed("solve"):
        sol = solve_mfg(cfg.model, tree, cfg.grid, cfg.solver, strict=False)
    run.results["solve"] = {
        "converged": sol.converged,
        "iterations": sol.iterations,
        "final_residual": sol.residuals[-1],
        "mass_drift": sol.mass_drift,
    }
    return sol


def _load_or_solve(run: Run) -> MFGSolution:
    sol_dir = run.out / "solution"
    if (sol_dir / "solution.json").exists():
        try:
            sol = io.load_solution(sol_dir, run.cfg.model, run.cfg.grid, expect_hash=run.hash)
        except ValueError as exc:
            raise CommandError(EXIT_CONFIG, f"{exc}; rerun `solve` with this config") from None
        log.info("loaded solution from %s", sol_dir)
        return sol
    raise CommandError(EXIT_CONFIG, f"no solution in {sol_dir}; run `solve` first")


# ---------------------------------------------------------------------------
# Subcommands


def cmd_solve(run: Run, args) -> int:
    sol = _solve(run, _tree(run, args.tree))
    files = io.save_solution(sol, run.out / "solution", run.hash)
    run.files.extend(files)
    run.results["relaxed_cost"] = evaluate(sol)
    if not sol.converged:
        log.error("fixed point not converged after %d iterations (residual %.3g)", sol.iterations, sol.residuals[-1])
        return EXIT_NONCONVERGED
    return EXIT_OK


def cmd_optimize(run: Run, args) -> int:
    cfg, oc = run.cfg, run.cfg.optimizer
    with run.timed("optimize"):
        res = optimize(cfg.model, cfg.grid, oc.times, oc.branching, oc.starts, oc.max_evals, oc.w_min,
                       oc.tol_opt, cfg.solver, cfg.seed, run.workers)
    run.json("optimized_tree.json", res.tree.to_dict())
    dim = max((len(r.params) for r in res.trace), default=0)
    run.csv(
        "optimization_trace.csv",
        ["evaluation", "start", "cost", "feasible", "slack"] + [f"theta_{k}" for k in range(dim)],
        ([r.evaluation, r.start, r.cost, r.feasible, r.slack, *r.params] for r in res.trace),
    )
    best_baseline = min(res.baselines.values())
    run.results["optimize"] = {
        "cost": res.cost,
        "search_cost": res.search_cost,
        "baselines": res.baselines,
        "source": res.source,
        "budget_exhausted": res.budget_exhausted,
        "is_upper_bound": res.is_upper_bound,
        "dominates_baselines": res.cost <= best_baseline,
    }
    if res.cost > best_baseline:
        log.error("optimized cost %.6g exceeds best baseline %.6g", res.cost, best_baseline)
        return EXIT_CHECK
    return EXIT_OK


def cmd_encode(run: Run, args) -> int:
    cfg = run.cfg
    tree = _tree(run, args.tree)
    sol = _solve(run, tree) if major_depends_on_m(cfg.model) else None
    if sol is not None and not sol.converged:
        return EXIT_NONCONVERGED
    jbar = evaluate(sol) if sol is not None else relaxed_cost(cfg.model, tree, cfg.grid, None)
    rows, ok = [], True
    for n in cfg.encoder.n:
        with run.timed(f"encode_n{n}"):
            try:
                enc = encode(cfg.model, tree, n, cfg.grid, sol)
            except EncodingError as exc:
                raise CommandError(EXIT_CONFIG, str(exc)) from None
            j0 = evaluate_J0(cfg.model, enc, cfg.grid, sol)
        for k, ep in enumerate(enc.paths):
            run.csv(f"encode/control_n{n}_path{k}.csv", ["t", "u0"],
                    zip(ep.control.breaks[:-1], ep.control.values))
            filt = decode(ep.control, n, enc.actions, cfg.model.horizon, tol=1e-9 * cfg.model.horizon,
                          prior=cfg.model.prior)
            exact = all(np.allclose(filt.beliefs[i], np.asarray(ep.path.belief_at(t)), atol=1e-9)
                        for i, t in enumerate(filt.times))
            ok &= exact and not filt.malformed
            run.csv(f"encode/filter_n{n}_path{k}.csv",
                    ["t"] + [f"p_{i}" for i in range(cfg.model.n_types)] + ["malformed"],
                    ([t, *b, i in filt.malformed] for i, (t, b) in enumerate(zip(filt.times, filt.beliefs))))
        rows.append((n, enc.window, j0, jbar, j0 - jbar, encoding_gap_bound(cfg.model, enc)))
    run.csv("encoding_gaps.csv", ["n", "window", "encoded_cost", "relaxed_cost", "gap", "gap_bound"], rows)
    gaps = [r[4] for r in rows]
    run.results["encode"] = {
        "relaxed_cost": jbar,
        "gaps": dict(zip(map(str, cfg.encoder.n), gaps)),
        "decode_exact": ok,
        "gaps_nonnegative": all(g >= -1e-12 for g in gaps),
        "gaps_decreasing": all(a > b for a, b in zip(gaps, gaps[1:])),
    }
    return EXIT_OK if ok else EXIT_CHECK


def cmd_simulate(run: Run, args) -> int:
    cfg, sc = run.cfg, run.cfg.sim
    sol = _load_or_solve(run)
    try:
        enc = encode(cfg.model, sol.tree, sc.encode_n, cfg.grid, sol)
    except EncodingError as exc:
        raise CommandError(EXIT_CONFIG, str(exc)) from None
    jbar, j0 = evaluate(sol), evaluate_J0(cfg.model, enc, cfg.grid, sol)
    reports = []
    for N in sc.n_list:
        sim_cfg = SimConfig(N, sc.n_mc, cfg.seed, sc.substeps, sc.track_players, sc.shifts, sc.scales,
                            keep_trajectory=run.dump)
        with run.timed(f"simulate_N{N}"):
            try:
                rep = simulate(sol, sim_cfg, enc, workers=run.workers)
            except SimulationError as exc:
                raise CommandError(EXIT_SIM, str(exc)) from None
        reports.append(rep)
        run.json(f"simulate/report_N{N}.json", rep.to_dict())
        if run.dump and rep.trajectory is not None:
            run.csv(f"simulate/trajectory_N{N}.csv", ["t"] + [f"x_{j}" for j in range(N)],
                    ([t, *row] for t, row in zip(cfg.grid.t, rep.trajectory)))
    table = chaos_distance(reports)
    run.csv("chaos_table.csv", ["n_players", "distance", "std_error", "time"],
            ([r.n_players, r.distance, r.std_error, r.time] for r in table.rows))
    run.csv("nash_gaps.csv", ["n_players", "player", "gap", "std_error", "negative_part", "feedback_cost"],
            ([r.n_players, g.player, g.gap, g.std_error, g.negative_part, g.feedback_cost]
             for r in reports for g in r.nash))
    checks = [major_cost_N(r, jbar, j0, cfg.model) for r in reports]
    run.csv("major_cost.csv", ["n_players", "major_cost", "std_error", "relaxed", "encoded", "difference", "budget"],
            ([c.n_players, c.major_cost, c.std_error, c.relaxed, c.encoded, c.difference, c.budget] for c in checks))
    run.results["simulate"] = {
        "chaos_slope": table.slope,
        "chaos_strictly_decreasing": table.strictly_decreasing(),
        "major_cost_within_budget": checks[-1].within_budget,
    }
    return EXIT_OK


def cmd_verify(run: Run, args) -> int:
    sol_dir = run.out / "solution"
    if (sol_dir / "solution.json").exists():
        sol = _load_or_solve(run)
    else:
        sol = _solve(run, _tree(run, args.tree))
        if not sol.converged:
            return EXIT_NONCONVERGED
    with run.timed("verify"):
        chk = verify_value(sol, n_mc=run.cfg.sim.n_verify, seed=run.cfg.seed)
    doc = {k: getattr(chk, k) for k in chk.__dataclass_fields__}
    doc["passed"] = chk.passed
    run.json("verify.json", doc)
    run.results["verify"] = doc
    return EXIT_OK if chk.passed else EXIT_CHECK


COMMANDS = {
    "solve": (cmd_solve, "solve the MFG system on the configured tree"),
    "optimize": (cmd_optimize, "search for the revelation tree minimising the relaxed cost"),
    "encode": (cmd_encode, "build signalling controls and their decoded beliefs"),
    "simulate": (cmd_simulate, "simulate the N-player game (needs `solve` output)"),
    "verify": (cmd_verify, "check the value function against simulated costs"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="disclosure-mfg", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="TOML run configuration")
        p.add_argument("--out", default="out", help="output directory (default: out)")
        p.add_argument("--workers", type=int, default=1, help="worker processes")
        p.add_argument("--seed", type=int, default=None, help="override the config's root seed")
        p.add_argument("--dump-trajectories", action="store_true", help="write particle paths (large)")
        p.add_argument("--tree", default=None, help="tree JSON replacing the config's [tree]")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def _load(args) -> RunConfig:
    cfg = load_run_config(args.config)
    if args.seed is not None:
        if not 0 <= args.seed < 2**64:
            raise ConfigError("--seed", "must be an unsigned 64-bit integer")
        raw = dict(cfg.raw, seed=args.seed)
        cfg = run_config_from_dict(raw, cfg.source)
    return cfg


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.workers < 1:
        print("error: --workers must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = _load(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    run = Run(args.command, cfg, out, args.workers, args.dump_trajectories)
    try:
        code = COMMANDS[args.command][0](run, args)
    except CommandError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED
    run.manifest()
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
