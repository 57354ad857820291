"""Belief mixtures of the per-type costs, the smoothed coupling and major costs.

With ``H_i(x, xi) = a_i(x) xi^2`` the Lagrangians are ``L_i(x, u) = u^2 / (4 a_i(x))``.
Mixing the Lagrangians linearly in the belief and taking the Legendre transform
gives ``H(x, xi, p) = b_p(x) xi^2`` where ``b_p = 1 / sum_i (p_i / a_i)`` is the
belief-weighted harmonic mean of the coefficients.  It reduces to the common
coefficient when all types share it.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.optimize import minimize_scalar

from .grid import TAU_MASS, Grid1D, GridError, MeasureOnGrid
from .model import ModelSpec, ZeroProfile, as_belief_array

KERNEL_TRUNCATION = 6.0  # kernel support in bandwidths
N_U0_SCAN = 201


# ---------------------------------------------------------------------------
# Small-player running cost and Hamiltonian


def mixed_coefficient(model: ModelSpec, x, p) -> np.ndarray:
    """``b_p(x) = 1 / sum_i p_i / a_i(x)``."""
    p = as_belief_array(p)
    a = model.hamiltonian_coeffs(np.asarray(x, dtype=float))
    return 1.0 / np.tensordot(p, 1.0 / a, axes=1)


def lagrangian(model: ModelSpec, x, u, p):
    p = as_belief_array(p)
    a = model.hamiltonian_coeffs(np.asarray(x, dtype=float))
    u = np.asarray(u, dtype=float)
    return np.tensordot(p, u * u / (4.0 * a), axes=1)


def hamiltonian(model: ModelSpec, x, xi, p):
    xi = np.asarray(xi, dtype=float)
    return mixed_coefficient(model, x, p) * xi * xi


def hamiltonian_grad(model: ModelSpec, x, xi, p):
    return 2.0 * mixed_coefficient(model, x, p) * np.asarray(xi, dtype=float)


# ---------------------------------------------------------------------------
# Smoothed coupling K(x, m) = f(., m * rho) * rho


@dataclass(frozen=True)
class Coupling:
    """Quadrature form of the smoothed coupling on a fixed grid.

    The Gaussian mollifier is truncated at ``KERNEL_TRUNCATION`` bandwidths and
    rescaled so its lattice sum is one; this makes the discrete smoothing
    operator a contraction in the trapezoid inner product, so the discrete
    coupling keeps the strong monotonicity of the continuous one.
    """

    model: ModelSpec
    grid: Grid1D

    @cached_property
    def kernel(self) -> np.ndarray:
        """``R[j, k] = rho(x_j - x_k)``."""
        sigma = self.model.bandwidth
        g = self.grid
        reach = int(np.floor(KERNEL_TRUNCATION * sigma / g.dx))
        lattice = np.arange(-reach, reach + 1) * g.dx
        raw = np.exp(-0.5 * (lattice / sigma) ** 2)
        scale = 1.0 / (g.dx * raw.sum())
        diff = g.x[:, None] - g.x[None, :]
        r = scale * np.exp(-0.5 * (diff / sigma) ** 2)
        r[np.abs(diff) > reach * g.dx + 1e-9 * g.dx] = 0.0
        return r

    @cached_property
    def smoother(self) -> np.ndarray:
        """Matrix of ``m -> m * rho`` (trapezoid quadrature)."""
        return self.kernel * self.grid.weights[None, :]

    def smooth(self, density: np.ndarray) -> np.ndarray:
        return np.asarray(density) @ self.smoother.T

    def _check(self, density):
        density = np.asarray(density, dtype=float)
        if density.min() < -TAU_MASS:
            raise GridError(f"density has negative values down to {density.min():.3g}")
        return density

    def per_type(self, density: np.ndarray, which: str = "running") -> np.ndarray:
        """Array ``(I, ..., n_x)`` of ``F_i`` (or ``G_i``) for densities ``(..., n_x)``."""
        density = self._check(density)
        s = np.maximum(self.smooth(density), 0.0)
        x = self.grid.x
        out = []
        for ts in self.model.types:
            prof = ts.running if which == "running" else ts.terminal
            out.append(self.smooth(prof(x, s)))
        return np.stack(out)

    def running(self, density, p) -> np.ndarray:
        """``F(., m, p)`` on the grid."""
        return np.tensordot(as_belief_array(p), self.per_type(density, "running"), axes=1)

    def terminal(self, density, p) -> np.ndarray:
        """``G(., m, p)`` on the grid."""
        return np.tensordot(as_belief_array(p), self.per_type(density, "terminal"), axes=1)

    def is_zero(self) -> bool:
        return all(isinstance(ts.running, ZeroProfile) and isinstance(ts.terminal, ZeroProfile) for ts in self.model.types)


def coupling_F(coupling: Coupling, m: MeasureOnGrid, p) -> np.ndarray:
    return coupling.running(m.density, p)


def terminal_G(coupling: Coupling, m: MeasureOnGrid, p) -> np.ndarray:
    return coupling.terminal(m.density, p)


def monotonicity_pairing(coupling: Coupling, d1, d2, p, which: str = "running") -> tuple[float, float]:
    """Return ``(int (K1 - K2)(m1 - m2), int (K1 - K2)^2)``."""
    k = coupling.running if which == "running" else coupling.terminal
    dk = k(d1, p) - k(d2, p)
    g = coupling.grid
    return float(g.integrate(dk * (np.asarray(d1) - np.asarray(d2)))), float(g.integrate(dk * dk))


# ---------------------------------------------------------------------------
# Major player


def major_cost(model: ModelSpec, t: float, u, m, p):
    p = as_belief_array(p)
    u = np.asarray(u, dtype=float)
    total = np.zeros_like(u)
    for pi, ts in zip(p, model.types):
        if pi != 0.0:
            total = total + pi * ts.major(t, u, m)
    return total


def major_depends_on_m(model: ModelSpec) -> bool:
    return any(ts.major.depends_on_m for ts in model.types)


def bar_major_cost(model: ModelSpec, t: float, m, p, n_scan: int = N_U0_SCAN) -> tuple[float, float]:
    """``min_u sum_i p_i L0_i(t, u, m)`` over the control set, with its argmin.

    A uniform scan of the control set is refined by a bounded scalar search
    between the neighbours of the best scan point.
    """
    lo, hi = model.control_set
    us = np.linspace(lo, hi, n_scan)
    vals = major_cost(model, t, us, m, p)
    k = int(np.argmin(vals))
    best_u, best_v = float(us[k]), float(vals[k])
    a, b = us[max(k - 1, 0)], us[min(k + 1, n_scan - 1)]
    res = minimize_scalar(
        lambda u: float(major_cost(model, t, u, m, p)),
        bounds=(a, b),
        method="bounded",
        options={"xatol": 1e-10},
    )
    if res.fun < best_v:
        best_u, best_v = float(res.x), float(res.fun)
    return best_v, best_u


def major_cost_bounds(model: ModelSpec) -> tuple[float, float]:
    lows, highs = zip(*(ts.major.bounds(model.control_set) for ts in model.types))
    return min(lows), max(highs)


def major_lipschitz_m(model: ModelSpec) -> float:
    return max(ts.major.lipschitz_m() for ts in model.types)
