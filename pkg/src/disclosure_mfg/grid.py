"""Space-time grid, grid densities and one-dimensional Wasserstein distances."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

TAU_MASS = 1e-6


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class Grid1D:
    """Uniform grid on ``[-x_max, x_max] x [0, horizon]``.

    ``n_x`` is the number of nodes, ``n_t`` the number of time steps.
    """

    x_max: float
    n_x: int
    horizon: float
    n_t: int
    c_cfl: float = 1.0

    def __post_init__(self):
        if self.x_max <= 0 or self.n_x < 5 or self.n_t < 1 or self.horizon <= 0:
            raise GridError(f"degenerate grid {self}")
        if self.dt > self.c_cfl * self.dx**2 * (1 + 1e-12):
            raise GridError(
                f"time step {self.dt:.3g} exceeds c_cfl*dx^2 = {self.c_cfl * self.dx**2:.3g}; "
                "raise n_t or c_cfl"
            )

    @property
    def dx(self) -> float:
        return 2.0 * self.x_max / (self.n_x - 1)

    @property
    def dt(self) -> float:
        return self.horizon / self.n_t

    @cached_property
    def x(self) -> np.ndarray:
        return np.linspace(-self.x_max, self.x_max, self.n_x)

    @cached_property
    def t(self) -> np.ndarray:
        return np.linspace(0.0, self.horizon, self.n_t + 1)

    @cached_property
    def weights(self) -> np.ndarray:
        """Trapezoid quadrature weights."""
        w = np.full(self.n_x, self.dx)
        w[0] = w[-1] = 0.5 * self.dx
        return w

    def time_index(self, t: float, tol: float = 1e-9) -> int:
        """Index of the grid time equal to ``t``; raises if ``t`` is off-grid."""
        k = round(t / self.dt)
        if abs(k * self.dt - t) > tol * max(1.0, self.horizon) or not 0 <= k <= self.n_t:
            raise GridError(f"time {t!r} is not on the time grid (dt = {self.dt!r})")
        return int(k)

    def integrate(self, values: np.ndarray) -> np.ndarray:
        """Trapezoid integral over the last axis."""
        return np.asarray(values) @ self.weights

    def cdf(self, density: np.ndarray) -> np.ndarray:
        """Cumulative trapezoid of a density (last axis), starting at 0."""
        d = np.asarray(density, dtype=float)
        inc = 0.5 * self.dx * (d[..., 1:] + d[..., :-1])
        out = np.zeros_like(d)
        out[..., 1:] = np.cumsum(inc, axis=-1)
        return out

    def interp(self, values: np.ndarray, xq: np.ndarray) -> np.ndarray:
        """Linear interpolation of nodal values at ``xq`` (clamped to the domain)."""
        return np.interp(xq, self.x, values)

    def w1(self, d1: np.ndarray, d2: np.ndarray) -> np.ndarray:
        """W1 between grid densities (last axis), via the L1 distance of CDFs."""
        diff = np.abs(self.cdf(d1) - self.cdf(d2))
        return self.integrate(diff)

    def to_dict(self) -> dict:
        return {"x_max": self.x_max, "n_x": self.n_x, "horizon": self.horizon, "n_t": self.n_t, "c_cfl": self.c_cfl}


@dataclass(eq=False)
class MeasureOnGrid:
    """Probability density sampled on the grid nodes."""

    grid: Grid1D
    density: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.density = np.asarray(self.density, dtype=float)
        if self.density.shape != (self.grid.n_x,):
            raise GridError(f"density has shape {self.density.shape}, expected ({self.grid.n_x},)")
        if self.density.min() < -TAU_MASS:
            raise GridError(f"density has negative values down to {self.density.min():.3g}")
        mass = self.mass
        if abs(mass - 1.0) > TAU_MASS:
            raise GridError(f"density integrates to {mass!r}, not 1")

    @classmethod
    def from_pdf(cls, grid: Grid1D, pdf) -> "MeasureOnGrid":
        d = np.asarray(pdf(grid.x), dtype=float)
        return cls(grid, d / grid.integrate(d))

    @property
    def mass(self) -> float:
        return float(self.grid.integrate(self.density))

    def expect(self, func) -> float:
        """``int func dm``, memoised per (hashable) function."""
        try:
            return self._cache[func]
        except (KeyError, TypeError):
            pass
        val = float(self.grid.integrate(func(self.grid.x) * self.density))
        try:
            self._cache[func] = val
        except TypeError:
            pass
        return val

    def mean(self) -> float:
        return float(self.grid.integrate(self.grid.x * self.density))

    def variance(self) -> float:
        mu = self.mean()
        return float(self.grid.integrate((self.grid.x - mu) ** 2 * self.density))


def w1_empirical_grid(samples: np.ndarray, grid: Grid1D, cdf_nodes: np.ndarray) -> np.ndarray:
    """Exact W1 between empirical measures and a grid CDF.

    ``samples`` has shape ``(..., N)``; ``cdf_nodes`` has shape ``(n_x,)`` or
    broadcasts against ``samples[..., :1]`` with a trailing ``n_x`` axis.  The
    reference CDF is the linear interpolant of ``cdf_nodes`` (0 left of the
    grid, 1 right of it).  The empirical CDF is a step function; the integral
    of ``|F_emp - F_ref|`` is computed exactly on the union of the grid nodes
    and the sample points.
    """
    s = np.asarray(samples, dtype=float)
    lead = s.shape[:-1]
    n = s.shape[-1]
    cdf_nodes = np.broadcast_to(np.asarray(cdf_nodes, dtype=float), lead + (grid.n_x,))
    if np.any(np.abs(cdf_nodes[..., -1] - 1.0) > TAU_MASS):
        raise GridError("reference density is not normalised")
    s2 = s.reshape(-1, n)
    c2 = cdf_nodes.reshape(-1, grid.n_x)
    rows = s2.shape[0]
    xs = np.broadcast_to(grid.x, (rows, grid.n_x))
    pts = np.concatenate([s2, xs], axis=1)
    is_sample = np.concatenate([np.ones((rows, n)), np.zeros((rows, grid.n_x))], axis=1)
    order = np.argsort(pts, axis=1, kind="stable")
    pts = np.take_along_axis(pts, order, axis=1)
    # empirical CDF on [pts[k], pts[k+1]) counts samples at positions <= k;
    # ties only create zero-length intervals
    fe = np.cumsum(np.take_along_axis(is_sample, order, axis=1), axis=1)[:, :-1] / n
    fref = _interp_rows(pts, grid, c2)
    h = np.diff(pts, axis=1)
    total = _abs_linear_integral(fref[:, :-1] - fe, fref[:, 1:] - fe, h).sum(axis=1)
    return total.reshape(lead)


def _interp_rows(q: np.ndarray, grid: Grid1D, vals: np.ndarray) -> np.ndarray:
    """Row-wise linear interpolation of nodal CDF values, 0 left and 1 right."""
    u = (q + grid.x_max) / grid.dx
    k = np.clip(np.floor(u).astype(np.int64), 0, grid.n_x - 2)
    lam = u - k
    v0 = np.take_along_axis(vals, k, axis=1)
    v1 = np.take_along_axis(vals, k + 1, axis=1)
    out = (1.0 - lam) * v0 + lam * v1
    out = np.where(q < -grid.x_max, 0.0, out)
    return np.where(q > grid.x_max, 1.0, out)


def _abs_linear_integral(ya, yb, h):
    """Integral of |y| over intervals where y is linear from ya to yb."""
    same = ya * yb >= 0
    denom = np.where(same, 1.0, np.abs(ya) + np.abs(yb))
    return np.where(same, 0.5 * h * np.abs(ya + yb), 0.5 * h * (ya * ya + yb * yb) / denom)


def w1_empirical(a: np.ndarray, b: np.ndarray) -> float:
    """Exact W1 between two empirical measures with uniform atom weights."""
    a = np.sort(np.asarray(a, dtype=float))
    b = np.sort(np.asarray(b, dtype=float))
    pts = np.union1d(a, b)
    fa = np.searchsorted(a, pts[:-1], side="right") / a.size
    fb = np.searchsorted(b, pts[:-1], side="right") / b.size
    return float(np.sum(np.abs(fa - fb) * np.diff(pts)))
