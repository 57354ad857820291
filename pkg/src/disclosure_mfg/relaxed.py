"""Major player's relaxed cost of a disclosure tree and a search over trees.

The relaxed cost of a tree is the expected time integral of the belief-mixed
major cost, minimised pointwise over the control, along the equilibrium
density flow.  The search runs Nelder-Mead over an unconstrained
parameterisation of complete trees with fixed revelation times; the returned
value is an upper bound on the optimum over all belief martingales.
"""

from __future__ import annotations

import hashlib
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .costs import bar_major_cost, major_cost_bounds, major_depends_on_m
from .grid import Grid1D, MeasureOnGrid
from .model import Belief, ModelSpec
from .solver import MFGSolution, SolverConfig, build_fields, initial_density, solve_mfg
from .tree import MARTINGALE_TOL, Node, RevelationTree, check, full_reveal, no_reveal

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Objective


def relaxed_cost(model: ModelSpec, tree: RevelationTree, grid: Grid1D, densities: dict[int, np.ndarray] | None) -> float:
    """Expected integral of ``min_u L0(t, u, m_t, p_t)`` (left-point rule in time).

    ``densities`` maps node ids to density rows; it may be ``None`` when the
    major cost ignores the crowd.
    """
    fields = build_fields(tree, grid)
    crowd = major_depends_on_m(model)
    if densities is None and crowd:
        raise ValueError("this major cost depends on the crowd; pass the equilibrium densities")
    m0 = MeasureOnGrid(grid, initial_density(model, grid))
    total = 0.0
    for node in tree.nodes:
        nf = fields[node.id]
        if nf.rows == 1:
            continue
        prob = tree.path_probability(node.id)
        if crowd or any(ts.major.depends_on_t for ts in model.types):
            acc = [
                bar_major_cost(model, grid.t[nf.start + r], _row_measure(grid, densities, node.id, r, m0), node.belief)[0]
                for r in range(nf.rows - 1)
            ]
            total += prob * grid.dt * math.fsum(acc)
        else:
            val, _ = bar_major_cost(model, grid.t[nf.start], m0, node.belief)
            total += prob * grid.dt * (nf.rows - 1) * val
    return total


def _row_measure(grid, densities, node_id, r, fallback):
    return fallback if densities is None else MeasureOnGrid(grid, densities[node_id][r])


def evaluate(sol: MFGSolution) -> float:
    """Relaxed cost of the tree a solution was computed on."""
    return relaxed_cost(sol.model, sol.tree, sol.grid, {k: v.m for k, v in sol.nodes.items()})


def evaluate_tree(model: ModelSpec, tree: RevelationTree, grid: Grid1D, solver: SolverConfig = SolverConfig()) -> float:
    """Relaxed cost, solving the MFG only when the major cost needs the crowd."""
    if not major_depends_on_m(model):
        return relaxed_cost(model, tree, grid, None)
    return evaluate(solve_mfg(model, tree, grid, solver))


def baseline_trees(model: ModelSpec, times=(0.0,)) -> dict[str, RevelationTree]:
    return {
        "no_reveal": no_reveal(model.prior, (), model.horizon),
        "full_reveal": full_reveal(model.prior, float(times[0]) if times else 0.0, model.horizon),
    }


def baselines(model: ModelSpec, grid: Grid1D, solver: SolverConfig = SolverConfig(), times=(0.0,)) -> dict[str, float]:
    return {name: evaluate_tree(model, t, grid, solver) for name, t in baseline_trees(model, times).items()}


def cost_lower_bound(model: ModelSpec) -> float:
    return major_cost_bounds(model)[0] * model.horizon


# ---------------------------------------------------------------------------
# Parameterisation of complete trees


def softmax_last_zero(theta: np.ndarray) -> np.ndarray:
    """Bijection from ``R^{k-1}`` onto the open simplex in ``R^k``."""
    z = np.append(theta, 0.0)
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def logits_of(p: np.ndarray) -> np.ndarray:
    p = np.clip(np.asarray(p, dtype=float), 1e-300, None)
    return np.log(p[:-1] / p[-1])


@dataclass(frozen=True)
class TreeParameterization:
    """Complete ``branching``-ary trees with revelations at ``times``.

    Each internal node carries ``branching - 1`` free posteriors (softmax
    coordinates) and ``branching - 1`` weight logits.  The last posterior is
    recovered from the martingale constraint.
    """

    prior: Belief
    horizon: float
    times: tuple[float, ...]
    branching: int = 2
    w_min: float = 1e-3

    @property
    def n_types(self) -> int:
        return len(self.prior)

    @property
    def n_internal(self) -> int:
        return sum(self.branching**k for k in range(len(self.times)))

    @property
    def per_node(self) -> int:
        return (self.branching - 1) * (self.n_types - 1) + (self.branching - 1)

    @property
    def dim(self) -> int:
        return self.n_internal * self.per_node

    def decode(self, theta: np.ndarray) -> tuple[RevelationTree | None, float]:
        """Tree for ``theta`` and the infeasibility slack (0 when feasible)."""
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.dim,):
            raise ValueError(f"expected {self.dim} parameters, got {theta.shape}")
        B, I = self.branching, self.n_types
        blocks = iter(theta.reshape(self.n_internal, self.per_node))
        nodes: list[Node] = [Node(0, 0, self.prior, None, 1.0)]
        frontier = [0]
        slack = 0.0
        children: dict[int, list[int]] = {}
        for level in range(len(self.times)):
            nxt = []
            for nid in frontier:
                blk = next(blocks)
                parent = np.asarray(nodes[nid].belief)
                posts = [softmax_last_zero(blk[c * (I - 1):(c + 1) * (I - 1)]) for c in range(B - 1)]
                q = softmax_last_zero(blk[(B - 1) * (I - 1):])
                last = (parent - sum(qc * pc for qc, pc in zip(q[:-1], posts))) / q[-1]
                slack += float(np.sum(np.maximum(-last, 0.0))) + float(np.sum(np.maximum(self.w_min - q, 0.0)))
                last = np.clip(last, 0.0, None)
                last = last / last.sum() if last.sum() > 0 else parent
                posts.append(last)
                kids = []
                for pc, qc in zip(posts, q):
                    cid = len(nodes)
                    nodes.append(Node(cid, level + 1, Belief.of(pc), nid, float(qc)))
                    kids.append(cid)
                children[nid] = kids
                nxt.extend(kids)
            frontier = nxt
        if slack > 0.0:
            return None, slack
        nodes = [Node(n.id, n.level, n.belief, n.parent, n.weight, tuple(children.get(n.id, ()))) for n in nodes]
        tree = RevelationTree(self.horizon, self.times, tuple(nodes))
        try:
            return check(tree), 0.0
        except ValueError:
            return None, MARTINGALE_TOL

    def no_reveal_point(self) -> np.ndarray:
        B, I = self.branching, self.n_types
        blk = np.concatenate([np.tile(logits_of(self.prior), B - 1), np.zeros(B - 1)])
        return np.tile(blk, self.n_internal)

    def near_full_reveal_point(self, strength: float = 8.0) -> np.ndarray:
        """Root splits towards vertices; deeper nodes start as identity splits."""
        B, I = self.branching, self.n_types
        theta = self.no_reveal_point().reshape(self.n_internal, self.per_node).copy()
        posts = []
        for c in range(B - 1):
            target = c % I
            logit = np.full(I - 1, -strength)
            if target < I - 1:
                logit[target] = strength
            posts.append(softmax_last_zero(logit))
            theta[0, c * (I - 1):(c + 1) * (I - 1)] = logit
        p = np.asarray(self.prior)
        q = np.array([p[c % I] for c in range(B - 1)] + [max(1.0 - sum(p[c % I] for c in range(B - 1)), self.w_min)])
        q = q / q.sum()
        theta[0, (B - 1) * (I - 1):] = np.log(q[:-1] / q[-1])
        return theta.ravel()


# ---------------------------------------------------------------------------
# Search


@dataclass
class TraceRow:
    evaluation: int
    start: int
    params: tuple[float, ...]
    cost: float
    feasible: bool
    slack: float


@dataclass
class OptimizationResult:
    tree: RevelationTree
    cost: float
    search_cost: float
    baselines: dict[str, float]
    trace: list[TraceRow] = field(default_factory=list)
    budget_exhausted: bool = False
    source: str = "search"
    is_upper_bound: bool = True


class _Objective:
    def __init__(self, model, grid, solver, param: TreeParameterization, penalty: float):
        self.model, self.grid, self.solver, self.param = model, grid, solver, param
        self.penalty = penalty
        self.cache: dict[str, tuple[float, bool, float]] = {}
        self.trace: list[TraceRow] = []
        self.start = 0

    def key(self, theta) -> str:
        return hashlib.sha1(np.asarray(theta, dtype=float).tobytes()).hexdigest()

    def __call__(self, theta) -> float:
        k = self.key(theta)
        if k not in self.cache:
            tree, slack = self.param.decode(theta)
            if tree is None:
                self.cache[k] = (self.penalty + 100.0 * slack, False, slack)
            else:
                self.cache[k] = (evaluate_tree(self.model, tree, self.grid, self.solver), True, 0.0)
        cost, feasible, slack = self.cache[k]
        self.trace.append(TraceRow(len(self.trace), self.start, tuple(float(v) for v in theta), cost, feasible, slack))
        return cost


def _run_start(args):
    model, grid, solver, param, penalty, x0, max_evals, start, tol_opt = args
    obj = _Objective(model, grid, solver, param, penalty)
    obj.start = start
    res = minimize(obj, x0, method="Nelder-Mead",
                   options={"maxfev": max_evals, "xatol": 1e-6, "fatol": 1e-2 * tol_opt, "adaptive": True})
    return res.x, float(res.fun), obj.trace, res.nfev >= max_evals


def optimize(
    model: ModelSpec,
    grid: Grid1D,
    times=(0.0,),
    branching: int = 2,
    starts: int = 4,
    max_evals: int = 400,
    w_min: float = 1e-3,
    tol_opt: float = 1e-4,
    solver: SolverConfig = SolverConfig(),
    seed: int = 0,
    workers: int = 1,
) -> OptimizationResult:
    """Multi-start Nelder-Mead over complete trees, seeded with both baselines.

    Starts are the no-revelation point, a near-full-revelation point and random
    points.  ``max_evals`` is the evaluation budget per start.  The baseline
    trees themselves are kept as candidates, so the result never exceeds the
    better baseline.
    """
    base_trees = baseline_trees(model, times)
    base = {name: evaluate_tree(model, t, grid, solver) for name, t in base_trees.items()}
    param = TreeParameterization(model.prior, model.horizon, tuple(times), branching, w_min)
    penalty = max(base.values()) + 1.0
    rng = np.random.default_rng(np.random.SeedSequence([seed, 11]))
    x0s = [param.no_reveal_point(), param.near_full_reveal_point()]
    while len(x0s) < starts:
        x0s.append(param.no_reveal_point() + rng.normal(scale=2.0, size=param.dim))
    jobs = [(model, grid, solver, param, penalty, x0, max_evals, s, tol_opt) for s, x0 in enumerate(x0s)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_run_start, jobs))
    else:
        outcomes = [_run_start(j) for j in jobs]

    trace: list[TraceRow] = []
    best_x, best_cost, exhausted = None, math.inf, False
    for x, cost, tr, ex in outcomes:
        for row in tr:
            trace.append(TraceRow(len(trace), row.start, row.params, row.cost, row.feasible, row.slack))
        exhausted = exhausted or ex
        tree, _ = param.decode(x)
        if tree is not None and cost < best_cost:
            best_x, best_cost = x, cost
    if best_x is None:
        raise RuntimeError("every optimizer start ended infeasible")
    best_tree, _ = param.decode(best_x)
    result = OptimizationResult(best_tree, best_cost, best_cost, base, trace, exhausted)
    name, val = min(base.items(), key=lambda kv: kv[1])
    if val < best_cost:
        result.tree, result.cost, result.source = base_trees[name], val, name
    log.info("optimizer: search %.6g, baselines %s, reported %.6g", best_cost, base, result.cost)
    return result
