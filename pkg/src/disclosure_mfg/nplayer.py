"""N-player open-loop game under the mean-field feedback.

Each scenario draws a belief path of the tree (systematic sampling by path
probability), a type from the path's final belief, ``N`` initial positions and
``N`` Brownian paths.  Players follow the feedback drift of the node that is
active for their scenario; the major player follows the encoded signalling
control.  Random streams are keyed by ``(seed, scenario, stream)`` and particle
``j`` always receives the same draws whatever ``N`` is, so results for
different ``N`` share common random numbers.

Given the belief path, the dynamics do not depend on the type, so type-averaged
costs are computed with the path's final belief instead of the sampled type.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .costs import Coupling, major_cost, major_lipschitz_m
from .encoder import EncodedControl
from .grid import Grid1D, MeasureOnGrid, w1_empirical_grid
from .model import ModelSpec
from .solver import MFGSolution, reflect
from .tree import enumerate_paths

EXIT_LIMIT = 1e-3
BATCH_BYTES = 64 * 2**20


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class SimConfig:
    n_players: int
    n_mc: int = 200
    seed: int = 0
    substeps: int = 1
    track_players: tuple[int, ...] = (0,)
    shifts: tuple[float, ...] = (-0.2, -0.1, 0.1, 0.2)
    scales: tuple[float, ...] = (0.9, 1.1)
    keep_trajectory: bool = False

    def __post_init__(self):
        if self.n_players < 2:
            raise ValueError("need at least two small players")
        if self.substeps < 1:
            raise ValueError("substeps must be positive")
        if any(not 0 <= j < self.n_players for j in self.track_players):
            raise ValueError("tracked player index out of range")

    @property
    def deviations(self) -> list[tuple[float, float]]:
        """(scale, shift) pairs; the first one is the feedback itself."""
        return [(1.0, 0.0)] + [(1.0, s) for s in self.shifts] + [(k, 0.0) for k in self.scales]


@dataclass
class DeviationStat:
    scale: float
    shift: float
    mean_increase: float
    std_error: float


@dataclass
class NashGap:
    player: int
    feedback_cost: float
    feedback_std_error: float
    gap: float
    std_error: float
    deviations: list[DeviationStat]

    @property
    def negative_part(self) -> float:
        return max(0.0, -self.gap)


@dataclass
class SimReport:
    n_players: int
    n_mc: int
    chaos: float
    chaos_std_error: float
    chaos_time: float
    w1_mean: list[float]
    major_cost: float
    major_cost_std_error: float
    nash: list[NashGap]
    exit_fraction: float
    terminal_mean_error: float
    terminal_mean_std_error: float
    terminal_var_error: float
    terminal_var_std_error: float
    path_counts: list[int]
    type_counts: list[int]
    trajectory: np.ndarray | None = field(default=None, repr=False)
    player_costs: np.ndarray | None = field(default=None, repr=False)  # (scenario, player, deviation)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("trajectory")
        d.pop("player_costs")
        return d


def wasserstein1_1d(sample, measure: MeasureOnGrid) -> float:
    """Exact W1 between the empirical measure of ``sample`` and a grid density."""
    return float(w1_empirical_grid(np.asarray(sample, dtype=float), measure.grid, measure.grid.cdf(measure.density)))


class EmpiricalBatch:
    """Empirical measures of several scenarios; ``expect`` returns one value per row."""

    def __init__(self, x: np.ndarray):
        self.x = x

    def expect(self, func) -> np.ndarray:
        return func(self.x).mean(axis=-1)


class _Kahan:
    def __init__(self, shape):
        self.s = np.zeros(shape)
        self.c = np.zeros(shape)

    def add(self, v):
        y = v - self.c
        t = self.s + y
        self.c = (t - self.s) - y
        self.s = t


def _lerp_rows(values: np.ndarray, grid: Grid1D, q: np.ndarray) -> np.ndarray:
    """Row-wise linear interpolation of nodal ``values`` (rows, n_x) at ``q`` (rows, k)."""
    u = (np.clip(q, -grid.x_max, grid.x_max) + grid.x_max) / grid.dx
    k = np.clip(np.floor(u).astype(np.int64), 0, grid.n_x - 2)
    lam = u - k
    v0 = np.take_along_axis(values, k, axis=1)
    v1 = np.take_along_axis(values, k + 1, axis=1)
    return (1.0 - lam) * v0 + lam * v1


def deposit(x: np.ndarray, grid: Grid1D) -> np.ndarray:
    """Cloud-in-cell particle counts on grid nodes, per row of ``x``."""
    rows, n = x.shape
    u = (np.clip(x, -grid.x_max, grid.x_max) + grid.x_max) / grid.dx
    k = np.clip(np.floor(u).astype(np.int64), 0, grid.n_x - 2)
    lam = u - k
    base = (np.arange(rows) * grid.n_x)[:, None] + k
    size = rows * grid.n_x
    counts = np.bincount(base.ravel(), (1.0 - lam).ravel(), minlength=size)
    counts += np.bincount((base + 1).ravel(), lam.ravel(), minlength=size)
    return counts.reshape(rows, grid.n_x)


class _Scenarios:
    """Random inputs of every scenario, reproducible from the seed alone."""

    def __init__(self, sol: MFGSolution, cfg: SimConfig):
        self.paths = enumerate_paths(sol.tree)
        probs = np.array([p.probability for p in self.paths])
        cum = np.cumsum(probs / probs.sum())
        cum[-1] = 1.0
        u0 = np.random.default_rng(np.random.SeedSequence([cfg.seed, 2**32 - 1])).random()
        strata = (np.arange(cfg.n_mc) + u0) / cfg.n_mc
        self.path_index = np.searchsorted(cum, strata, side="right")
        self.types = np.empty(cfg.n_mc, dtype=np.int64)
        for s in range(cfg.n_mc):
            rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, s, 0]))
            leaf = np.asarray(self.paths[self.path_index[s]].leaf_belief)
            self.types[s] = rng.choice(leaf.size, p=leaf)


def _draws(model: ModelSpec, seed: int, s: int, n: int, steps: int) -> tuple[np.ndarray, np.ndarray]:
    z = model.initial.sample(np.random.default_rng(np.random.SeedSequence([seed, s, 1])), n)
    noise = np.random.default_rng(np.random.SeedSequence([seed, s, 2])).standard_normal((n, steps))
    return z, noise


@dataclass
class _BatchOut:
    scen: np.ndarray
    w1: np.ndarray  # (n_t + 1, b)
    major: np.ndarray  # (b,)
    player_costs: np.ndarray  # (b, tracked, deviations)
    exits: int
    mean_err: np.ndarray
    var_err: np.ndarray
    trajectory: np.ndarray | None


def _run_batch(args) -> _BatchOut:
    sol, enc, cfg, scen_idx, path_index = args
    model, g = sol.model, sol.grid
    paths = enumerate_paths(sol.tree)
    b, N = len(scen_idx), cfg.n_players
    steps = g.n_t * cfg.substeps
    dts = g.dt / cfg.substeps
    coupling = Coupling(model, g)
    drifts = {nid: sol.drift(nid) for nid in sol.nodes}
    cdfs = {nid: g.cdf(nf.m) for nid, nf in sol.nodes.items()}
    leaf = np.array([np.asarray(paths[k].leaf_belief) for k in path_index])  # (b, I)

    x = np.empty((b, N))
    noise = np.empty((b, N, steps))
    for r, s in enumerate(scen_idx):
        x[r], noise[r] = _draws(model, cfg.seed, int(s), N, steps)
    x = reflect(x, g.x_max)
    devs = cfg.deviations
    tracked = list(cfg.track_players)
    y = np.repeat(x[:, tracked][:, :, None], len(devs), axis=2)  # deviating copies (b, P, D)
    dev_scale = np.array([d[0] for d in devs])
    dev_shift = np.array([d[1] for d in devs])

    # active node of every scenario on every step
    groups = {}
    for k in np.unique(path_index):
        rows = np.flatnonzero(path_index == k)
        groups[int(k)] = rows
    active = {k: [sol.active_node(paths[k].nodes, n) for n in range(g.n_t)] for k in groups}
    occupations = None
    if enc is not None:
        by_path = {ep.path.nodes: ep.control for ep in enc.paths}
        occupations = {k: [by_path[paths[k].nodes].occupation(g.t[n], g.t[n + 1]) for n in range(g.n_t)] for k in groups}

    w1 = np.zeros((g.n_t + 1, b))
    major = _Kahan(b)
    pcost = _Kahan(y.shape)
    exits = 0
    traj = np.empty((g.n_t + 1, N)) if cfg.keep_trajectory else None

    def empirical_fields(xs, which):
        """Type-averaged coupling at every node for each player's exclusive measure."""
        counts = deposit(xs, g)
        out = np.empty((len(tracked), b, g.n_x))
        for pi, j in enumerate(tracked):
            own = deposit(xs[:, j:j + 1], g)
            h = (counts - own) / ((N - 1) * g.weights)
            per_type = coupling.per_type(h, which)  # (I, b, n_x)
            out[pi] = np.einsum("bi,ibx->bx", leaf, per_type)
        return out

    def leaf_lagrangian(pos, alpha):
        a = model.hamiltonian_coeffs(pos)  # (I, b, ...)
        inv = np.einsum("bi,ib...->b...", leaf, 1.0 / a)
        return alpha * alpha * inv / 4.0

    for n in range(g.n_t + 1):
        # statistics at grid time t_n
        for k, rows in groups.items():
            nid = active[k][min(n, g.n_t - 1)]
            nf = sol.nodes[nid]
            r_loc = n - nf.start
            w1[n, rows] = w1_empirical_grid(x[rows], g, cdfs[nid][r_loc])
        if traj is not None:
            traj[n] = x[0]
        if n == g.n_t:
            break
        t = g.t[n]
        if tracked:
            fvals = empirical_fields(x, "running")
            pcost.add(g.dt * np.stack([_lerp_rows(fvals[pi], g, y[:, pi, :]) for pi in range(len(tracked))], axis=1))
        if enc is not None:
            for k, rows in groups.items():
                occ = occupations[k][n]
                us = np.fromiter(occ.keys(), float)[:, None]
                durs = np.fromiter(occ.values(), float)
                vals = np.broadcast_to(major_cost(model, t, us, EmpiricalBatch(x[rows]), leaf[rows[0]]), (us.shape[0], rows.size))
                inc = np.zeros(b)
                inc[rows] = durs @ vals
                major.add(inc)
        # Euler-Maruyama sub-steps with the drift of the grid step
        for sub in range(cfg.substeps):
            col = n * cfg.substeps + sub
            alpha = np.empty_like(x)
            alpha_y = np.empty_like(y)
            for k, rows in groups.items():
                nid = active[k][n]
                row = drifts[nid][n + 1 - sol.nodes[nid].start]
                alpha[rows] = np.interp(x[rows], g.x, row)
                alpha_y[rows] = dev_scale * np.interp(y[rows], g.x, row) + dev_shift
            pcost.add(dts * leaf_lagrangian(y, alpha_y))
            dw = math.sqrt(2.0 * dts) * noise[:, :, col]
            x_new = x + alpha * dts + dw
            y_new = y + alpha_y * dts + dw[:, tracked][:, :, None]
            exits += int(np.count_nonzero(np.abs(x_new) > g.x_max))
            x = reflect(x_new, g.x_max)
            y = reflect(y_new, g.x_max)

    if tracked:
        gvals = empirical_fields(x, "terminal")
        pcost.add(np.stack([_lerp_rows(gvals[pi], g, y[:, pi, :]) for pi in range(len(tracked))], axis=1))

    mean_err = np.empty(b)
    var_err = np.empty(b)
    for k, rows in groups.items():
        leaf_node = sol.nodes[paths[k].nodes[-1]]
        mt = leaf_node.m[-1]
        mu = g.integrate(g.x * mt)
        var = g.integrate((g.x - mu) ** 2 * mt)
        mean_err[rows] = x[rows].mean(axis=1) - mu
        var_err[rows] = x[rows].var(axis=1, ddof=1) - var
    assert pcost.s.shape == y.shape
    return _BatchOut(np.asarray(scen_idx), w1, major.s, pcost.s, exits, mean_err, var_err, traj)


def simulate(sol: MFGSolution, cfg: SimConfig, enc: EncodedControl | None = None, workers: int = 1) -> SimReport:
    """Simulate ``cfg.n_mc`` independent scenarios of the ``N``-player game."""
    g = sol.grid
    scen = _Scenarios(sol, cfg)
    per_scenario = cfg.n_players * g.n_t * cfg.substeps * 8 * 2
    bsize = max(1, min(cfg.n_mc, BATCH_BYTES // per_scenario))
    jobs = []
    for lo in range(0, cfg.n_mc, bsize):
        idx = np.arange(lo, min(lo + bsize, cfg.n_mc))
        jobs.append((sol, enc, cfg, idx, scen.path_index[idx]))
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outs = list(pool.map(_run_batch, jobs))
    else:
        outs = [_run_batch(j) for j in jobs]

    S = cfg.n_mc
    w1 = np.concatenate([o.w1 for o in outs], axis=1)
    major = np.concatenate([o.major for o in outs])
    pc = np.concatenate([o.player_costs for o in outs], axis=0)  # (S, P, D)
    mean_err = np.concatenate([o.mean_err for o in outs])
    var_err = np.concatenate([o.var_err for o in outs])
    exits = sum(o.exits for o in outs)
    frac = exits / (S * cfg.n_players * g.n_t * cfg.substeps)
    if frac > EXIT_LIMIT:
        raise SimulationError(f"{frac:.2%} of particle steps left the domain (limit {EXIT_LIMIT:.1%})")

    w1_mean = w1.mean(axis=1)
    t_star = int(np.argmax(w1_mean))
    se = lambda a: float(a.std(ddof=1) / math.sqrt(a.size)) if a.size > 1 else 0.0  # noqa: E731

    nash = []
    for pi, j in enumerate(cfg.track_players):
        fb = pc[:, pi, 0]
        stats = []
        for d, (scale, shift) in enumerate(cfg.deviations[1:], start=1):
            diff = pc[:, pi, d] - fb
            stats.append(DeviationStat(scale, shift, float(diff.mean()), se(diff)))
        proper = [st for st in stats if (st.scale, st.shift) != (1.0, 0.0)]
        if proper:
            best = min(proper, key=lambda s: s.mean_increase)
            gap, gap_se = best.mean_increase, best.std_error
        else:
            gap, gap_se = 0.0, 0.0
        nash.append(NashGap(j, float(fb.mean()), se(fb), gap, gap_se, stats))

    return SimReport(
        n_players=cfg.n_players,
        n_mc=S,
        chaos=float(w1_mean[t_star]),
        chaos_std_error=se(w1[t_star]),
        chaos_time=float(g.t[t_star]),
        w1_mean=w1_mean.tolist(),
        major_cost=float(major.mean()) if enc is not None else math.nan,
        major_cost_std_error=se(major) if enc is not None else math.nan,
        nash=nash,
        exit_fraction=frac,
        terminal_mean_error=float(mean_err.mean()),
        terminal_mean_std_error=se(mean_err),
        terminal_var_error=float(var_err.mean()),
        terminal_var_std_error=se(var_err),
        path_counts=np.bincount(scen.path_index, minlength=len(scen.paths)).tolist(),
        type_counts=np.bincount(scen.types, minlength=sol.model.n_types).tolist(),
        trajectory=outs[0].trajectory,
        player_costs=pc,
    )


# ---------------------------------------------------------------------------
# Studies across N


@dataclass
class ChaosRow:
    n_players: int
    distance: float
    std_error: float
    time: float


@dataclass
class ChaosTable:
    rows: list[ChaosRow]
    slope: float

    def strictly_decreasing(self, z: float = 2.0) -> bool:
        return all(
            a.distance - b.distance > z * math.hypot(a.std_error, b.std_error)
            for a, b in zip(self.rows, self.rows[1:])
        )

    def ratios(self) -> list[float]:
        return [a.distance / b.distance for a, b in zip(self.rows, self.rows[1:])]


def loglog_slope(ns, values) -> float:
    return float(np.polyfit(np.log(ns), np.log(values), 1)[0])


def chaos_distance(reports: list[SimReport]) -> ChaosTable:
    rows = [ChaosRow(r.n_players, r.chaos, r.chaos_std_error, r.chaos_time) for r in reports]
    return ChaosTable(rows, loglog_slope([r.n_players for r in rows], [r.distance for r in rows]))


def nash_gap(report: SimReport, player: int = 0) -> NashGap:
    return next(g for g in report.nash if g.player == player)


@dataclass
class MajorCostCheck:
    n_players: int
    major_cost: float
    std_error: float
    relaxed: float
    encoded: float
    difference: float
    budget: float

    @property
    def within_budget(self) -> bool:
        return self.difference <= self.budget


def major_cost_N(report: SimReport, relaxed: float, encoded: float, model: ModelSpec) -> MajorCostCheck:
    """Compare the N-player major cost with the relaxed value.

    The budget adds the Monte Carlo error, the propagation-of-chaos distance
    times the major cost's Lipschitz constant in the crowd, and the encoding
    gap, and triples the sum.
    """
    enc_gap = max(encoded - relaxed, 0.0)
    budget = 3.0 * (report.major_cost_std_error + report.chaos * major_lipschitz_m(model) * model.horizon + enc_gap)
    return MajorCostCheck(
        report.n_players, report.major_cost, report.major_cost_std_error, relaxed, encoded,
        abs(report.major_cost - relaxed), budget,
    )
