"""Finite-difference solver for the belief-conditioned MFG system on a tree.

Within each node the belief is constant and the system is a classical MFG:
a backward HJB equation (implicit diffusion, explicit upwinded Hamiltonian) and
a forward Fokker-Planck equation discretised as the exact adjoint of the
linearised HJB step.  At a revelation time the value before the revelation is
the weighted average of the children's values and the density is continuous.
The two equations are coupled by fictitious play.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import factorized

from .costs import Coupling, lagrangian, mixed_coefficient
from .grid import Grid1D, MeasureOnGrid
from .model import ModelSpec
from .tree import RevelationTree, conditional_expectation, enumerate_paths

log = logging.getLogger(__name__)

NEGATIVE_DENSITY_TOL = 1e-10


class SolverError(RuntimeError):
    pass


class CFLError(SolverError):
    pass


class ConvergenceError(SolverError):
    def __init__(self, message, solution=None):
        super().__init__(message)
        self.solution = solution


@dataclass(frozen=True)
class SolverConfig:
    tol_fp: float = 1e-5
    k_max: int = 2000
    phi_ceiling: float = 1e6
    grad_ceiling: float = 1e3
    init: str = "heat"  # or "frozen"


@dataclass
class NodeField:
    """Fields of one tree node on grid rows ``start..stop`` (inclusive)."""

    start: int
    stop: int
    belief: np.ndarray
    phi: np.ndarray | None = None
    m: np.ndarray | None = None

    @property
    def rows(self) -> int:
        return self.stop - self.start + 1


@dataclass
class MFGSolution:
    model: ModelSpec
    grid: Grid1D
    tree: RevelationTree
    nodes: dict[int, NodeField]
    residuals: list[float] = field(default_factory=list)
    exploitability: list[float] = field(default_factory=list)
    converged: bool = False
    jump_residuals: dict[int, np.ndarray] = field(default_factory=dict)
    mass_drift: float = 0.0

    @property
    def iterations(self) -> int:
        return len(self.residuals)

    def drift(self, node_id: int) -> np.ndarray:
        """Upwind drift ``-H_xi(x, D phi, p)`` on every row of a node."""
        nf = self.nodes[node_id]
        b = mixed_coefficient(self.model, self.grid.x, nf.belief)
        ap, am = upwind_speeds(nf.phi, b, self.grid.dx)
        return ap - am

    def phi0(self) -> np.ndarray:
        return self.nodes[0].phi[0]

    def active_node(self, path_nodes: tuple[int, ...], n: int) -> int:
        """Node of a path that is active on step ``n -> n + 1``."""
        for nid in path_nodes:
            nf = self.nodes[nid]
            if nf.start <= n < nf.stop:
                return nid
        raise IndexError(n)


# ---------------------------------------------------------------------------
# Discrete operators


def neumann_laplacian(grid: Grid1D) -> sp.csc_matrix:
    """Second difference with ghost-node reflection at both ends."""
    n, h2 = grid.n_x, grid.dx**2
    main = np.full(n, -2.0)
    upper = np.ones(n - 1)
    lower = np.ones(n - 1)
    upper[0] = 2.0
    lower[-1] = 2.0
    return sp.diags([lower, main, upper], [-1, 0, 1], format="csc") / h2


def one_sided_differences(phi: np.ndarray, dx: float) -> tuple[np.ndarray, np.ndarray]:
    """Forward and backward differences (zero across the boundary)."""
    d = np.diff(phi, axis=-1) / dx
    fwd = np.zeros_like(phi)
    bwd = np.zeros_like(phi)
    fwd[..., :-1] = d
    bwd[..., 1:] = d
    return fwd, bwd


def numerical_hamiltonian(phi: np.ndarray, b: np.ndarray, dx: float) -> np.ndarray:
    """Monotone upwind splitting of ``b |D phi|^2``."""
    fwd, bwd = one_sided_differences(phi, dx)
    return b * (np.minimum(fwd, 0.0) ** 2 + np.maximum(bwd, 0.0) ** 2)


def upwind_speeds(phi: np.ndarray, b: np.ndarray, dx: float) -> tuple[np.ndarray, np.ndarray]:
    """Rightward and leftward speeds of the optimal drift ``-2 b D phi``."""
    fwd, bwd = one_sided_differences(phi, dx)
    return -2.0 * b * np.minimum(fwd, 0.0), 2.0 * b * np.maximum(bwd, 0.0)


class Stepper:
    """Time-stepping kernels shared by all nodes of one solve."""

    def __init__(self, model: ModelSpec, grid: Grid1D, config: SolverConfig):
        self.model, self.grid, self.config = model, grid, config
        self.coupling = Coupling(model, grid)
        ident = sp.identity(grid.n_x, format="csc")
        self.solve_diffusion = factorized((ident - grid.dt * neumann_laplacian(grid)).tocsc())
        self.w = grid.weights
        self._b_cache: dict[tuple, np.ndarray] = {}

    def coeff(self, belief: np.ndarray) -> np.ndarray:
        key = tuple(belief)
        if key not in self._b_cache:
            self._b_cache[key] = mixed_coefficient(self.model, self.grid.x, belief)
        return self._b_cache[key]

    def hjb_step(self, phi_next: np.ndarray, f_next: np.ndarray, b: np.ndarray) -> np.ndarray:
        g = self.grid
        rhs = phi_next - g.dt * numerical_hamiltonian(phi_next, b, g.dx) + g.dt * f_next
        return self.solve_diffusion(rhs)

    def speeds(self, phi_next: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        g = self.grid
        ap, am = upwind_speeds(phi_next, b, g.dx)
        courant = g.dt * (ap + am) / g.dx
        if courant.max() > 1.0:
            raise CFLError(
                f"advective Courant number {courant.max():.3f} exceeds 1; refine the time grid"
            )
        return ap, am

    def fp_step(self, m: np.ndarray, ap: np.ndarray, am: np.ndarray) -> tuple[np.ndarray, float]:
        """Adjoint of ``phi -> D^{-1} B phi``; returns the new density and its mass drift."""
        g = self.grid
        v = self.solve_diffusion(m)
        y = self.w * v
        cp = g.dt * ap / g.dx
        cm = g.dt * am / g.dx
        out = y * (1.0 - cp - cm)
        out[1:] += cp[:-1] * y[:-1]
        out[:-1] += cm[1:] * y[1:]
        new = out / self.w
        mass = float(g.integrate(new))
        if new.min() < -NEGATIVE_DENSITY_TOL:
            raise SolverError(f"negative density {new.min():.3g} after a Fokker-Planck step; reduce dt")
        return new / mass, abs(mass - 1.0)


# ---------------------------------------------------------------------------
# Sweeps over a tree


def build_fields(tree: RevelationTree, grid: Grid1D) -> dict[int, NodeField]:
    fields = {}
    for node in tree.nodes:
        a, b = tree.interval(node.id)
        fields[node.id] = NodeField(grid.time_index(a), grid.time_index(b), np.asarray(node.belief))
    return fields


def _sorted_children(tree: RevelationTree, node_id: int) -> list[int]:
    kids = list(tree.nodes[node_id].children)
    return sorted(kids, key=lambda c: (tree.nodes[c].belief.weights, tree.nodes[c].weight))


def _levels_desc(tree: RevelationTree) -> list[int]:
    return [n.id for n in sorted(tree.nodes, key=lambda n: (-n.level, n.id))]


def _levels_asc(tree: RevelationTree) -> list[int]:
    return [n.id for n in sorted(tree.nodes, key=lambda n: (n.level, n.id))]


def solve_hjb_backward(
    stepper: Stepper, tree: RevelationTree, m_fields: dict[int, np.ndarray]
) -> tuple[dict[int, np.ndarray], dict[int, np.ndarray]]:
    """Value fields for given densities; also returns the jump residuals per child."""
    g, cfg = stepper.grid, stepper.config
    fields = build_fields(tree, g)
    phis: dict[int, np.ndarray] = {}
    jumps: dict[int, np.ndarray] = {}
    coupling = stepper.coupling
    for nid in _levels_desc(tree):
        nf = fields[nid]
        m = m_fields[nid]
        phi = np.empty((nf.rows, g.n_x))
        kids = _sorted_children(tree, nid)
        if kids:
            phi[-1] = conditional_expectation([phis[c][0] for c in kids], [tree.nodes[c].weight for c in kids])
            for c in kids:
                jumps[c] = phis[c][0] - phi[-1]
        else:
            phi[-1] = coupling.terminal(m[-1], nf.belief)
        if nf.rows > 1:
            f_rows = coupling.running(m[1:], nf.belief)
            b = stepper.coeff(nf.belief)
            for r in range(nf.rows - 2, -1, -1):
                phi[r] = stepper.hjb_step(phi[r + 1], f_rows[r], b)
            _check_ceilings(phi, g.dx, cfg)
        phis[nid] = phi
    return phis, jumps


def _check_ceilings(phi: np.ndarray, dx: float, cfg: SolverConfig):
    top = np.max(np.abs(phi))
    if not np.isfinite(top) or top > cfg.phi_ceiling:
        raise SolverError(f"value function reached {top:.3g}, above the ceiling {cfg.phi_ceiling:.3g}")
    grad = np.max(np.abs(np.diff(phi, axis=-1))) / dx
    if grad > cfg.grad_ceiling:
        raise SolverError(f"value gradient reached {grad:.3g}, above the ceiling {cfg.grad_ceiling:.3g}")


def solve_fp_forward(
    stepper: Stepper, tree: RevelationTree, phi_fields: dict[int, np.ndarray] | None, m0: np.ndarray
) -> tuple[dict[int, np.ndarray], float]:
    """Density flows for given value fields (``None`` means zero drift)."""
    g = stepper.grid
    fields = build_fields(tree, g)
    ms: dict[int, np.ndarray] = {}
    drift = 0.0
    zero = np.zeros(g.n_x)
    for nid in _levels_asc(tree):
        nf = fields[nid]
        node = tree.nodes[nid]
        m = np.empty((nf.rows, g.n_x))
        m[0] = m0 if node.parent is None else ms[node.parent][-1]
        b = stepper.coeff(nf.belief)
        for r in range(nf.rows - 1):
            if phi_fields is None:
                ap = am = zero
            else:
                ap, am = stepper.speeds(phi_fields[nid][r + 1], b)
            m[r + 1], d = stepper.fp_step(m[r], ap, am)
            drift = max(drift, d)
        ms[nid] = m
    return ms, drift


def initial_density(model: ModelSpec, grid: Grid1D) -> np.ndarray:
    return MeasureOnGrid.from_pdf(grid, model.initial.pdf).density


def sup_w1(grid: Grid1D, a: dict[int, np.ndarray], b: dict[int, np.ndarray]) -> float:
    return max(float(np.max(grid.w1(a[k], b[k]))) for k in a)


def solve_mfg(
    model: ModelSpec,
    tree: RevelationTree,
    grid: Grid1D,
    config: SolverConfig = SolverConfig(),
    strict: bool = True,
) -> MFGSolution:
    """Fictitious play ``m <- (1 - d_k) m + d_k FP(HJB(m))`` with ``d_k = 2 / (k + 2)``."""
    if tree.n_types != model.n_types:
        raise SolverError(f"tree has {tree.n_types} types, model has {model.n_types}")
    if abs(tree.horizon - model.horizon) > 1e-12 or abs(grid.horizon - model.horizon) > 1e-12:
        raise SolverError("tree, grid and model horizons differ")
    stepper = Stepper(model, grid, config)
    m0 = initial_density(model, grid)
    if config.init == "heat":
        m, _ = solve_fp_forward(stepper, tree, None, m0)
    elif config.init == "frozen":
        m = {nid: np.tile(m0, (nf.rows, 1)) for nid, nf in build_fields(tree, grid).items()}
    else:
        raise SolverError(f"unknown initialisation {config.init!r}")

    residuals, exploit = [], []
    converged = False
    for k in range(config.k_max):
        phi, _ = solve_hjb_backward(stepper, tree, m)
        br, _ = solve_fp_forward(stepper, tree, phi, m0)
        gap = sup_w1(grid, br, m)
        delta = 2.0 / (k + 2.0)
        m = {nid: (1.0 - delta) * m[nid] + delta * br[nid] for nid in m}
        exploit.append(gap)
        residuals.append(delta * gap)
        if residuals[-1] < config.tol_fp:
            converged = True
            break
    phi, jumps = solve_hjb_backward(stepper, tree, m)
    _, drift = solve_fp_forward(stepper, tree, phi, m0)
    nodes = build_fields(tree, grid)
    for nid, nf in nodes.items():
        nf.phi, nf.m = phi[nid], m[nid]
    sol = MFGSolution(model, grid, tree, nodes, residuals, exploit, converged, jumps, drift)
    log.info("fixed point: %d iterations, last residual %.3g", len(residuals), residuals[-1])
    if strict and not converged:
        raise ConvergenceError(
            f"fictitious play did not reach tol_fp={config.tol_fp:g} in {config.k_max} iterations "
            f"(last residual {residuals[-1]:.3g})",
            sol,
        )
    return sol


def density_flow_distance(a: MFGSolution, b: MFGSolution) -> float:
    """Sup over nodes and times of W1 between two solutions' densities."""
    return sup_w1(a.grid, {k: v.m for k, v in a.nodes.items()}, {k: v.m for k, v in b.nodes.items()})


# ---------------------------------------------------------------------------
# Value verification by Monte Carlo


@dataclass(frozen=True)
class ValueCheck:
    lhs: float
    rhs: float
    gap: float
    std_error: float
    budget: float
    perturbed_increase: float
    perturbed_std_error: float
    predicted_increase: float
    epsilon: float

    @property
    def passed(self) -> bool:
        return self.gap <= self.budget and self.perturbed_increase > 3.0 * self.perturbed_std_error


def reflect(x: np.ndarray, x_max: float) -> np.ndarray:
    x = np.where(x > x_max, 2 * x_max - x, x)
    return np.where(x < -x_max, -2 * x_max - x, x)


def verify_value(sol: MFGSolution, n_mc: int = 20_000, seed: int = 0, epsilon: float = 0.2) -> ValueCheck:
    """Compare ``int phi_0 dm0`` with simulated costs of the feedback control.

    The same paths are re-run with the drift shifted by ``epsilon`` (common
    random numbers); that must cost strictly more.
    """
    model, g, tree = sol.model, sol.grid, sol.tree
    rng = np.random.default_rng(np.random.SeedSequence([seed, 7]))
    lhs = float(g.integrate(sol.phi0() * initial_density(model, g)))
    paths = enumerate_paths(tree)
    probs = np.array([p.probability for p in paths])
    which = rng.choice(len(paths), size=n_mc, p=probs / probs.sum())
    x0 = model.initial.sample(rng, n_mc)
    noise = rng.standard_normal((g.n_t, n_mc))
    coupling = Coupling(model, g)
    drifts = {nid: sol.drift(nid) for nid in sol.nodes}
    f_fields = {nid: coupling.running(nf.m, nf.belief) for nid, nf in sol.nodes.items()}
    costs = {}
    extra_pred = np.zeros(n_mc)
    for shift in (0.0, epsilon):
        total = np.zeros(n_mc)
        for pi, path in enumerate(paths):
            idx = np.flatnonzero(which == pi)
            if idx.size == 0:
                continue
            x = reflect(x0[idx], g.x_max)
            acc = np.zeros(idx.size)
            for n in range(g.n_t):
                nid = sol.active_node(path.nodes, n)
                nf = sol.nodes[nid]
                r = n + 1 - nf.start
                alpha = np.interp(x, g.x, drifts[nid][r]) + shift
                acc += g.dt * (lagrangian(model, x, alpha, nf.belief) + np.interp(x, g.x, f_fields[nid][r]))
                if shift:
                    b = mixed_coefficient(model, x, nf.belief)
                    extra_pred[idx] += g.dt * shift**2 / (4.0 * b)
                x = reflect(x + alpha * g.dt + np.sqrt(2.0 * g.dt) * noise[n, idx], g.x_max)
            leaf = sol.nodes[path.nodes[-1]]
            acc += np.interp(x, g.x, coupling.terminal(leaf.m[-1], leaf.belief))
            total[idx] = acc
        costs[shift] = total
    base = costs[0.0]
    diff = costs[epsilon] - base
    rhs = float(base.mean())
    se = float(base.std(ddof=1) / np.sqrt(n_mc))
    return ValueCheck(
        lhs=lhs,
        rhs=rhs,
        gap=abs(lhs - rhs),
        std_error=se,
        budget=3.0 * (se + g.dx + g.dt),
        perturbed_increase=float(diff.mean()),
        perturbed_std_error=float(diff.std(ddof=1) / np.sqrt(n_mc)),
        predicted_increase=float(extra_pred.mean()),
        epsilon=epsilon,
    )
