"""Signalling controls that reproduce a revelation tree, and their decoding.

At every subdivision time ``t_k = k T / n`` the major player spends a short
window of length ``eps_n = T / 2^n`` playing designated actions ``a_1..a_I``
for durations proportional to the current public belief, then plays the
myopically optimal action until ``t_{k+1}``.  Observers recover the belief from
the durations.  Breakpoints are kept as exact floating-point times rather than
snapped to the simulation grid; costs are integrated exactly against the grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .costs import bar_major_cost, major_cost, major_cost_bounds
from .grid import Grid1D, MeasureOnGrid
from .model import ModelSpec
from .solver import MFGSolution, initial_density
from .tree import BeliefPath, RevelationTree, enumerate_paths

MIN_WINDOW_STEPS = 4


class EncodingError(ValueError):
    pass


@dataclass(frozen=True)
class StepControl:
    """Right-continuous step function: ``values[j]`` on ``[breaks[j], breaks[j+1])``."""

    breaks: np.ndarray
    values: np.ndarray

    def __call__(self, t) -> np.ndarray:
        idx = np.searchsorted(self.breaks, np.asarray(t, dtype=float), side="right") - 1
        return self.values[np.clip(idx, 0, len(self.values) - 1)]

    def occupation(self, a: float, b: float) -> dict[float, float]:
        """Time spent at each value inside ``[a, b)``."""
        out: dict[float, float] = {}
        lo = np.searchsorted(self.breaks, a, side="right") - 1
        hi = np.searchsorted(self.breaks, b, side="left")
        for j in range(max(lo, 0), min(hi, len(self.values))):
            s, e = max(self.breaks[j], a), min(self.breaks[j + 1], b)
            if e > s:
                v = float(self.values[j])
                out[v] = out.get(v, 0.0) + (e - s)
        return out


@dataclass(frozen=True)
class EncodedPath:
    path: BeliefPath
    control: StepControl


@dataclass(frozen=True)
class EncodedControl:
    n: int
    horizon: float
    actions: tuple[float, ...]
    paths: tuple[EncodedPath, ...]

    @property
    def window(self) -> float:
        return self.horizon / 2**self.n

    @property
    def subdivision(self) -> np.ndarray:
        return np.arange(self.n) * (self.horizon / self.n)

    @property
    def signalling_time(self) -> float:
        return self.n * self.window

    def metadata(self, grid: Grid1D) -> dict:
        return {
            "n": self.n,
            "window": self.window,
            "window_steps": self.window / grid.dt,
            "belief_resolution_if_snapped": grid.dt / self.window,
            "actions": list(self.actions),
            "breakpoints": "exact (not snapped to the time grid)",
        }


@dataclass
class BeliefFilter:
    """Beliefs read from each window, with flags for malformed windows."""

    times: np.ndarray  # subdivision times t_k
    beliefs: np.ndarray  # (n, I): belief in force from t_k on
    malformed: list[int] = field(default_factory=list)

    def reveal_time(self, k: int, window: float) -> float:
        """Time at which window ``k`` has been fully observed."""
        return float(self.times[k] + window)


def designated_actions(control_set: tuple[float, float], n_types: int) -> tuple[float, ...]:
    """Interior points of a uniform lattice of the control set."""
    lo, hi = control_set
    return tuple(lo + (j + 1) * (hi - lo) / (n_types + 1) for j in range(n_types))


def check_refinement(n: int, horizon: float, grid: Grid1D):
    eps = horizon / 2**n
    if eps < MIN_WINDOW_STEPS * grid.dt * (1 - 1e-12):
        raise EncodingError(
            f"refinement n={n} gives window eps_n={eps:.4g} < {MIN_WINDOW_STEPS}*dt={MIN_WINDOW_STEPS * grid.dt:.4g}; "
            f"the rule eps_n >= {MIN_WINDOW_STEPS} dt requires n <= {max_refinement(horizon, grid)}"
        )


def max_refinement(horizon: float, grid: Grid1D) -> int:
    return int(math.floor(math.log2(horizon / (MIN_WINDOW_STEPS * grid.dt)) + 1e-12))


def _density_row(sol: MFGSolution | None, path: BeliefPath, t: float, fallback: MeasureOnGrid) -> MeasureOnGrid:
    if sol is None:
        return fallback
    g = sol.grid
    n = min(int(math.floor(t / g.dt + 1e-9)), g.n_t - 1)
    nid = sol.active_node(path.nodes, n)
    nf = sol.nodes[nid]
    return MeasureOnGrid(g, nf.m[n - nf.start])


def encode(model: ModelSpec, tree: RevelationTree, n: int, grid: Grid1D, sol: MFGSolution | None = None) -> EncodedControl:
    """Signalling control for every belief path of ``tree``.

    ``sol`` supplies the crowd densities for the myopic action; it may be
    omitted when the major cost ignores the crowd.
    """
    check_refinement(n, tree.horizon, grid)
    T = tree.horizon
    step = T / n
    for t in tree.times:
        if abs(t / step - round(t / step)) > 1e-9:
            raise EncodingError(f"revelation time {t} is not a multiple of T/n = {step:.6g}")
    actions = designated_actions(model.control_set, model.n_types)
    eps = T / 2**n
    m0 = MeasureOnGrid(grid, initial_density(model, grid))
    out = []
    for path in enumerate_paths(tree):
        breaks, values = [], []
        for k in range(n):
            tk = k * step
            p = np.asarray(path.belief_at(tk))
            cum = np.concatenate([[0.0], np.cumsum(p)])
            for j, a in enumerate(actions):
                if p[j] > 0:
                    breaks.append(tk + eps * cum[j])
                    values.append(a)
            _, u_star = bar_major_cost(model, tk, _density_row(sol, path, tk, m0), p)
            breaks.append(tk + eps)
            values.append(u_star)
        breaks.append(T)
        out.append(EncodedPath(path, StepControl(np.asarray(breaks), np.asarray(values))))
    return EncodedControl(n, T, actions, tuple(out))


def decode(control: StepControl, n: int, actions, horizon: float, tol: float, prior=None) -> BeliefFilter:
    """Read beliefs from the signalling windows of an observed control path.

    A window whose designated-action durations do not add up to the window
    length within ``tol`` is flagged and the previous belief is kept.
    """
    actions = tuple(float(a) for a in actions)
    eps = horizon / 2**n
    times = np.arange(n) * (horizon / n)
    prev = np.full(len(actions), 1.0 / len(actions)) if prior is None else np.asarray(prior, dtype=float)
    beliefs, bad = [], []
    for k, tk in enumerate(times):
        occ = control.occupation(tk, tk + eps)
        lengths = np.array([sum(d for v, d in occ.items() if abs(v - a) <= 1e-12) for a in actions])
        if abs(lengths.sum() - eps) > tol:
            bad.append(k)
            beliefs.append(prev)
            continue
        prev = lengths / eps
        beliefs.append(prev)
    return BeliefFilter(times, np.asarray(beliefs), bad)


def evaluate_J0(model: ModelSpec, enc: EncodedControl, grid: Grid1D, sol: MFGSolution | None = None) -> float:
    """Expected cost of the encoded controls.

    The control is integrated exactly over each grid cell; the crowd density
    and the belief used to mix the type costs are those of the path's node
    active on the cell.
    """
    m0 = MeasureOnGrid(grid, initial_density(model, grid))
    total = 0.0
    for ep in enc.paths:
        acc = []
        for n in range(grid.n_t):
            a, b = grid.t[n], grid.t[n + 1]
            occ = ep.control.occupation(a, b)
            p = np.asarray(ep.path.belief_at(a))
            m = _density_row(sol, ep.path, a, m0)
            us = np.fromiter(occ.keys(), float)
            durs = np.fromiter(occ.values(), float)
            acc.append(float(np.dot(durs, major_cost(model, a, us, m, p))))
        total += ep.path.probability * math.fsum(acc)
    return total


def encoding_gap_bound(model: ModelSpec, enc: EncodedControl) -> float:
    """Oscillation of the major cost times the total signalling time."""
    lo, hi = major_cost_bounds(model)
    return (hi - lo) * enc.signalling_time


def transcript(enc: EncodedControl) -> list[list[tuple[float, float]]]:
    """(breakpoint, value) pairs of each path, for inspection and tests."""
    return [list(zip(ep.control.breaks[:-1].tolist(), ep.control.values.tolist())) for ep in enc.paths]
