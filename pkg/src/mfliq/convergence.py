"""Penalization-convergence experiments.

Runs the constrained solve once and the penalized solves along a schedule
of levels, then measures the distances (in the weak exponent nu between 1
and 2), the terminal residuals, the uniform norm triples, and the same
quantities for running arithmetic averages of the penalized solutions.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import (CoefficientSet, PicardOptions, SolutionBundle, l2_time_norm,
                   solve_constrained, solve_penalized, weighted_norm)
from .errors import ShapeError
from .paths import ParticleEnsemble, TimeGrid


def cesaro(trajs: Sequence[np.ndarray]) -> np.ndarray:
    """Arithmetic mean of a list of same-shape trajectories (full-sequence
    averaging; no subsequence selection)."""
    if len(trajs) == 0:
        raise ValueError("need at least one trajectory")
    first = np.asarray(trajs[0], dtype=float)
    out = first.copy()
    for t in trajs[1:]:
        t = np.asarray(t, dtype=float)
        if t.shape != first.shape:
            raise ShapeError("trajectories must share a common shape")
        out += t
    return out / len(trajs)


def lnu_distance(a: np.ndarray, b: np.ndarray, nu: float, grid: TimeGrid) -> float:
    """Particle-mean of the time integral of |a - b|^nu."""
    if not 1.0 < nu < 2.0:
        raise ValueError("nu must lie in (1, 2)")
    diff = np.abs(np.asarray(a, dtype=float) - np.asarray(b, dtype=float)) ** nu
    val = np.trapezoid(diff, grid.nodes, axis=-1)
    return float(np.mean(val))


def sup_nu_distance(a: np.ndarray, b: np.ndarray, nu: float) -> float:
    """Particle-mean of sup_t |a - b|^nu (pathwise-uniform sense)."""
    diff = np.abs(np.asarray(a, dtype=float) - np.asarray(b, dtype=float)) ** nu
    return float(np.mean(diff.max(axis=-1)))


def l1_time_distance(a: np.ndarray, b: np.ndarray, grid: TimeGrid,
                     upto: Optional[int] = None) -> float:
    """Particle-mean of the time-L1 distance, optionally truncated before T."""
    sl = slice(None, upto)
    diff = np.abs(np.asarray(a, dtype=float) - np.asarray(b, dtype=float))
    val = np.trapezoid(diff[..., sl], grid.nodes[sl], axis=-1)
    return float(np.mean(val))


@dataclass
class ConvergenceReport:
    """Distances and norms along the penalty schedule."""

    n_schedule: list
    nu: float
    dist_q: list
    dist_h: list
    dist_r: list
    cesaro_dist_q: list
    cesaro_dist_h: list
    cesaro_dist_r: list
    terminal_residual_mean: list
    terminal_residual_max: list
    norm_q_weighted: list
    norm_h_sup: list
    norm_r_l2: list
    riccati_gap: list
    input_scale: float

    def rows(self) -> list:
        out = []
        for i, n in enumerate(self.n_schedule):
            out.append({
                "n": n,
                "dist_q": self.dist_q[i], "dist_h": self.dist_h[i],
                "dist_r": self.dist_r[i],
                "cesaro_dist_q": self.cesaro_dist_q[i],
                "cesaro_dist_h": self.cesaro_dist_h[i],
                "cesaro_dist_r": self.cesaro_dist_r[i],
                "terminal_residual_mean": self.terminal_residual_mean[i],
                "terminal_residual_max": self.terminal_residual_max[i],
                "norm_q_weighted": self.norm_q_weighted[i],
                "norm_h_sup": self.norm_h_sup[i],
                "norm_r_l2": self.norm_r_l2[i],
                "riccati_gap": self.riccati_gap[i],
            })
        return out


def penalization_study(coeffs: CoefficientSet, n_schedule: Sequence[float],
                       ensemble: ParticleEnsemble,
                       opts: Optional[PicardOptions] = None,
                       h_cut: Optional[float] = None) -> ConvergenceReport:
    """Compare penalized solutions against the constrained one along an
    increasing schedule of penalty levels.

    Distances: pathwise-uniform on Q, time-L1 on H up to T minus the final
    gap (H is only defined before T in the constrained limit), and
    time-L-nu on R.  The same distances are reported for running averages
    of the penalized solutions, together with the terminal residual |Q_T|
    and the norm triple entering the uniform-boundedness estimate.
    """
    opts = opts or PicardOptions()
    schedule = [float(n) for n in n_schedule]
    if any(b <= a for a, b in zip(schedule, schedule[1:])):
        raise ValueError("n_schedule must be strictly increasing")
    grid = ensemble.grid
    nu = opts.nu
    limit = solve_constrained(coeffs, ensemble, opts)

    eps = h_cut if h_cut is not None else grid.epsilon_final
    upto = int(np.searchsorted(grid.nodes, grid.T - eps, side="right"))

    sols: list[SolutionBundle] = []
    rep = ConvergenceReport(n_schedule=schedule, nu=nu, dist_q=[], dist_h=[],
                            dist_r=[], cesaro_dist_q=[], cesaro_dist_h=[],
                            cesaro_dist_r=[], terminal_residual_mean=[],
                            terminal_residual_max=[], norm_q_weighted=[],
                            norm_h_sup=[], norm_r_l2=[], riccati_gap=[],
                            input_scale=0.0)
    a_limit = limit.riccati.a
    for n in schedule:
        sol = solve_penalized(coeffs, n, ensemble, opts)
        sols.append(sol)
        rep.dist_q.append(sup_nu_distance(sol.Q, limit.Q, nu))
        rep.dist_h.append(l1_time_distance(sol.H, limit.H, grid, upto))
        rep.dist_r.append(lnu_distance(sol.R, limit.R, nu, grid))
        cq = cesaro([np.broadcast_to(s.Q, sol.Q.shape) for s in sols])
        ch = cesaro([np.broadcast_to(s.H, sol.H.shape) for s in sols])
        cr = cesaro([np.broadcast_to(s.R, sol.R.shape) for s in sols])
        rep.cesaro_dist_q.append(sup_nu_distance(cq, limit.Q, nu))
        rep.cesaro_dist_h.append(l1_time_distance(ch, limit.H, grid, upto))
        rep.cesaro_dist_r.append(lnu_distance(cr, limit.R, nu, grid))
        qt = np.abs(np.atleast_1d(sol.terminal_value()))
        rep.terminal_residual_mean.append(float(qt.mean()))
        rep.terminal_residual_max.append(float(qt.max()))
        rep.norm_q_weighted.append(weighted_norm(sol.Q, sol.alpha, grid,
                                                 shift=1.0 / n, exclude_last=False))
        h_sq = np.asarray(sol.H, dtype=float)[..., :-1] ** 2
        rep.norm_h_sup.append(float(np.sqrt(np.mean(h_sq.max(axis=-1)))))
        rep.norm_r_l2.append(l2_time_norm(sol.R, grid))
        rep.riccati_gap.append(float(np.abs(sol.riccati.a[:-1] - a_limit[:-1]).max()))

    from .core import _chi_values, _values_of  # local: avoid cycle at import
    f_arr = _values_of(coeffs.f_bar, grid, ensemble, "f_bar")
    g_arr = _values_of(coeffs.g_bar, grid, ensemble, "g_bar")
    chi = np.atleast_1d(_chi_values(coeffs.chi, ensemble))
    f_norm = float(np.sqrt(np.mean(np.max(np.atleast_1d(f_arr) ** 2, axis=-1))))
    g_norm = l2_time_norm(g_arr, grid)
    chi_norm = float(np.sqrt(np.mean(chi ** 2)))
    rep.input_scale = f_norm + g_norm + chi_norm
    return rep
