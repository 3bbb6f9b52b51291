"""Leader-follower liquidation game with asymmetric information.

The leader announces a common-measurable trading rate; the follower's best
response solves the single-player problem with drift pressure
``kappatilde0 * xi0``.  The leader's optimal rate is characterized through
three auxiliary objects: an adjoint pair (q, r) solving the same
constrained system as the follower (with zero initial state and inputs
assembled from the follower's response), a leader-side Riccati field, and
a discounted backward integral p_bar.  The representation

    xi0 = (Abar*X0 + p_bar + E[kappatilde0 * q | common] - kappa0*X0) / (2 eta0)

closes a fixed point on the leader's control, solved here by damped
iteration; substituting the representation into the state equation and
integrating by variation of constants keeps the leader's terminal
inventory at exactly zero at every iterate.

The penalized variant replaces both players' terminal constraints by
quadratic penalties and reproduces the convergence of its values to the
constrained one.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import (PicardOptions, SolutionBundle, SweepKernels,
                   backward_discounted_integral, forward_variation_of_constants,
                   l2_time_norm, solve_constrained, solve_penalized)
from .errors import AdmissibilityError, ConvergenceError, ModelError
from .liquidation import (FollowerModel, StrategyBundle, admissibility_residual,
                          map_to_core, optimal_strategy, perturbation_shapes,
                          recentre_normalize, state_from_rate)
from .paths import (AdaptedField, ConditionalRegression, ParticleEnsemble,
                    project_values)
from .riccati import (PENALIZED, SINGULAR, RiccatiInput, RiccatiSolution,
                      check_riccati_bounds, solve_riccati)
from .timefuncs import TimeFunction, as_callable, eval_time


@dataclass
class LeaderModel:
    """Leader-side cost/impact processes on top of a follower model.

    ``eta0``, ``kappa0``, ``lambda0`` must be deterministic (they feed the
    leader's Riccati field); ``kappabar0``, ``lambdabar``, ``kappatilde0``
    may be common-measurable fields.
    """

    eta0: TimeFunction
    kappa0: TimeFunction
    kappabar0: object
    lambda0: TimeFunction
    lambdabar: object
    kappatilde0: object
    x0: float
    follower: FollowerModel

    @property
    def T(self) -> float:
        return self.follower.T

    def validate(self, n_check: int = 257) -> None:
        self.follower.validate()
        t = np.linspace(0.0, self.T, n_check)
        if eval_time(self.eta0, t).min() <= 0:
            raise ModelError("eta0 must be strictly positive")
        for name in ("kappa0", "lambda0"):
            if eval_time(getattr(self, name), t).min() < 0:
                raise ModelError(f"{name} must be nonnegative")
        for name in ("kappabar0", "lambdabar", "kappatilde0"):
            val = getattr(self, name)
            arr = val.values if isinstance(val, AdaptedField) else (
                val if isinstance(val, np.ndarray) else eval_time(val, t))
            if np.min(arr) < 0:
                raise ModelError(f"{name} must be nonnegative")

    def _vals(self, name: str, grid) -> np.ndarray:
        val = getattr(self, name)
        if isinstance(val, AdaptedField):
            return val.values
        if isinstance(val, np.ndarray):
            return val
        return eval_time(val, grid.nodes)

    def riccati_input(self) -> RiccatiInput:
        inv2e0 = lambda t, _e=as_callable(self.eta0): 1.0 / (2.0 * np.asarray(_e(t), dtype=float))
        lam4 = lambda t, _l=as_callable(self.lambda0): 2.0 * np.asarray(_l(t), dtype=float)
        drift = lambda t, _k=as_callable(self.kappa0), _e=as_callable(self.eta0): (
            np.asarray(_k(t), dtype=float) / (2.0 * np.asarray(_e(t), dtype=float)))
        return RiccatiInput(lambda1=inv2e0, lambda4=lam4, T=self.T, drift_linear=drift)


@dataclass
class GameFeasibilityReport:
    feasible: bool
    follower: dict
    theta: Optional[tuple]
    margins: Optional[tuple]
    beta: float
    exp1_c_singular: float
    exp1_c_penalized: dict

    def as_dict(self) -> dict:
        return {"feasible": self.feasible, "follower": dict(self.follower),
                "theta": list(self.theta) if self.theta else None,
                "margins": list(self.margins) if self.margins else None,
                "beta": self.beta, "exp1_c_singular": self.exp1_c_singular,
                "exp1_c_penalized": {str(k): v for k, v in self.exp1_c_penalized.items()}}


def check_game_assumptions(model: LeaderModel, theta_grid=None,
                           grid=None, bound_levels: Sequence[float] = (8.0,)) -> GameFeasibilityReport:
    """Grid-search the three positivity conditions of the game and fit the
    exponent-1 discount constants on the follower's Riccati fields."""
    model.validate()
    t = np.linspace(0.0, model.T, 513)
    eta0_low = float(eval_time(model.eta0, t).min())
    lam0_low = float(eval_time(model.lambda0, t).min())
    k0_sup = float(np.abs(eval_time(model.kappa0, t)).max())

    def sup_of(name):
        val = getattr(model, name)
        arr = val.values if isinstance(val, AdaptedField) else (
            val if isinstance(val, np.ndarray) else eval_time(val, t))
        return float(np.abs(arr).max())

    def low_of(name):
        val = getattr(model, name)
        arr = val.values if isinstance(val, AdaptedField) else (
            val if isinstance(val, np.ndarray) else eval_time(val, t))
        return float(np.min(arr))

    kb_sup = sup_of("kappabar0")
    lb_low = low_of("lambdabar")

    if theta_grid is None:
        vals = np.geomspace(0.05, 20.0, 21)
        theta_grid = [(float(a), float(b)) for a in vals for b in vals]
    # margins whose coupling terms vanish carry no bilinear cross term and
    # need not be strictly positive (the degenerate decoupled game)
    strict2 = k0_sup > 0 or kb_sup > 0
    strict3 = kb_sup > 0
    chosen = None
    for th, thb in theta_grid:
        m1 = eta0_low - k0_sup / (2 * th)
        m2 = lam0_low - k0_sup * th / 2 - kb_sup * thb / 2
        m3 = lb_low - kb_sup / (2 * thb)
        ok2 = m2 > 0 if strict2 else m2 >= 0
        ok3 = m3 > 0 if strict3 else m3 >= 0
        if m1 > 0 and ok2 and ok3:
            chosen = ((th, thb), (m1, m2, m3))
            break
    follower_rep = model.follower.feasibility()

    if grid is None:
        from .paths import default_grid
        grid = default_grid(model.T, n_uniform=100, n_refined=60)
    fol_coeffs = map_to_core(model.follower)
    ric_in = RiccatiInput(lambda1=fol_coeffs.lambda1, lambda4=fol_coeffs.lambda4, T=model.T)
    sol = solve_riccati(ric_in, SINGULAR, grid)
    rep = check_riccati_bounds(sol, ric_in, grid)
    exp1_pen = {}
    for n in bound_levels:
        sol_n = solve_riccati(ric_in, PENALIZED, grid, n=n)
        exp1_pen[n] = check_riccati_bounds(sol_n, ric_in, grid).exp1_c_fitted

    feasible = follower_rep["feasible"] and chosen is not None
    return GameFeasibilityReport(feasible=feasible, follower=follower_rep,
                                 theta=chosen[0] if chosen else None,
                                 margins=chosen[1] if chosen else None,
                                 beta=rep.beta, exp1_c_singular=rep.exp1_c_fitted,
                                 exp1_c_penalized=exp1_pen)


# ---------------------------------------------------------------------------
# building blocks of the fixed point
# ---------------------------------------------------------------------------

def follower_response(model: LeaderModel, xi0: np.ndarray, ensemble: ParticleEnsemble,
                      opts: Optional[PicardOptions] = None) -> StrategyBundle:
    """Best response of the follower to a leader rate: the single-player
    problem with drift pressure kappatilde0 * xi0."""
    g_vals = model._vals("kappatilde0", ensemble.grid) * np.asarray(xi0, dtype=float)
    fol = dataclasses.replace(model.follower, g_tilde=g_vals)
    return optimal_strategy(fol, ensemble, opts)


@dataclass
class AdjointSolution:
    """The pair adjoint to the follower's state/adjoint, with the bounded
    remainder of the decomposition r = -A*q + remainder."""

    q: np.ndarray
    r: np.ndarray
    Aq: np.ndarray
    remainder: np.ndarray
    bundle: SolutionBundle


def solve_adjoint_qr(model: LeaderModel, f_bar, g_bar, ensemble: ParticleEnsemble,
                     opts: Optional[PicardOptions] = None,
                     penalty: Optional[float] = None) -> AdjointSolution:
    """Solve the leader's adjoint pair: the follower-mapped system with
    zero initial state and the given inputs; q is the negated forward
    component, r the backward one."""
    coeffs = dataclasses.replace(map_to_core(model.follower, ensemble),
                                 chi=0.0, f_bar=f_bar, g_bar=g_bar)
    if penalty is None:
        bundle = solve_constrained(coeffs, ensemble, opts)
    else:
        bundle = solve_penalized(coeffs, penalty, ensemble, opts)
    return AdjointSolution(q=-bundle.Q, r=bundle.R, Aq=-bundle.AQ,
                           remainder=bundle.H, bundle=bundle)


def solve_pbar(model: LeaderModel, a_bar: RiccatiSolution, q: np.ndarray,
               xi0: np.ndarray, xi_star: np.ndarray, ensemble: ParticleEnsemble,
               basis_degree: int = 3) -> np.ndarray:
    """Discounted backward integral defining the leader's bounded adjoint
    part: rate Abar/(2 eta0), driver
    -Abar * E[kappatilde0 q | common]/(2 eta0) + kappa0*xi0 + kappabar0*E[xi*|common].
    """
    grid = ensemble.grid
    eta0_vals = eval_time(model.eta0, grid.nodes)
    ref = eval_time(a_bar.input.lambda1, grid.nodes)
    if np.max(np.abs(ref - 1.0 / (2.0 * eta0_vals))) > 1e-10 * np.max(np.abs(ref)):
        raise ModelError("a_bar was built with a rate different from 1/(2*eta0)")
    kernels = SweepKernels(a_bar, include_drift=True)
    e_ktq = _common_product(model._vals("kappatilde0", grid), q)
    c = -e_ktq / (2.0 * eta0_vals)
    e_xis = project_values(np.asarray(xi_star, dtype=float)) \
        if np.ndim(xi_star) == 3 else np.asarray(xi_star, dtype=float)
    reg = (eval_time(model.kappa0, grid.nodes) * np.asarray(xi0, dtype=float)
           + model._vals("kappabar0", grid) * e_xis)
    stochastic = max(np.ndim(c), np.ndim(reg)) == 3
    ce = ConditionalRegression(ensemble, basis_degree) if stochastic else None
    return backward_discounted_integral(kernels, np.asarray(c, dtype=float),
                                        np.asarray(reg, dtype=float), ce)


def _common_product(coeff_vals: np.ndarray, q: np.ndarray) -> np.ndarray:
    prod = coeff_vals * np.asarray(q, dtype=float)
    return project_values(prod) if prod.ndim == 3 else prod


def integrate_leader_state(a_bar: RiccatiSolution, model: LeaderModel,
                           u: np.ndarray, x0: float):
    """Leader inventory under the closed-loop representation: variation of
    constants with rate (Abar - kappa0)/(2 eta0) and source -u; returns the
    trajectory and the stable product Abar * X0 (finite at T)."""
    kernels = SweepKernels(a_bar, include_drift=False)
    X0, AX0 = forward_variation_of_constants(kernels, float(x0),
                                             -np.asarray(u, dtype=float))
    return X0, AX0


# ---------------------------------------------------------------------------
# the fixed point
# ---------------------------------------------------------------------------

@dataclass
class StackelbergSolution:
    """Leader control with all states, adjoints, and diagnostics."""

    xi0: np.ndarray
    X0: np.ndarray
    AX0: np.ndarray
    p_bar: np.ndarray
    q: np.ndarray
    r: np.ndarray
    adjoint: AdjointSolution
    follower: StrategyBundle
    a_bar: RiccatiSolution
    J0: float
    outer_iterations: int
    outer_residual_history: list
    fixed_point_residual: float
    representation_residual: float
    converged: bool
    penalty_level: Optional[float] = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def p(self) -> np.ndarray:
        return self.AX0 + self.p_bar

    def terminal_inventory_leader(self) -> float:
        return float(np.abs(self.X0[..., -2]).max())

    def terminal_inventory_follower(self) -> float:
        return self.follower.terminal_inventory()


def _one_leader_pass(model: LeaderModel, xi0, X0, a_bar, ensemble, opts,
                     penalty: Optional[float]):
    """One evaluation of the leader map: response, adjoints, p_bar, state."""
    grid = ensemble.grid
    if penalty is None:
        fb = follower_response(model, xi0, ensemble, opts)
    else:
        fb = penalized_follower_response(model, xi0, penalty, ensemble, opts)
    e_xis = project_values(fb.xi) if np.ndim(fb.xi) == 3 else fb.xi
    eta_vals = eval_time(model.follower.eta, grid.nodes)
    kap_vals = model.follower.kappa_values(grid)
    kb_vals = model._vals("kappabar0", grid)
    lb_vals = model._vals("lambdabar", grid)
    f_qr = kb_vals * X0 / (2.0 * eta_vals) + (lb_vals / eta_vals) * e_xis
    # eta is deterministic, so E[1/(2 eta) | common] is 1/(2 eta) itself
    inv2e = 1.0 / (2.0 * eta_vals)
    g_qr = -kap_vals * inv2e * (kb_vals * X0 + 2.0 * lb_vals * e_xis)
    adj = solve_adjoint_qr(model, np.asarray(f_qr, dtype=float),
                           np.asarray(g_qr, dtype=float), ensemble, opts,
                           penalty=penalty)
    p_bar = solve_pbar(model, a_bar, adj.q, xi0, fb.xi, ensemble,
                       basis_degree=(opts.basis_degree if opts else 3))
    e_ktq = _common_product(model._vals("kappatilde0", grid), adj.q)
    eta0_vals = eval_time(model.eta0, grid.nodes)
    u = (p_bar + e_ktq) / (2.0 * eta0_vals)
    X0_new, AX0_new = integrate_leader_state(a_bar, model, u, model.x0)
    kappa0_vals = eval_time(model.kappa0, grid.nodes)
    xi0_new = (AX0_new + p_bar + e_ktq - kappa0_vals * X0_new) / (2.0 * eta0_vals)
    return fb, adj, p_bar, e_ktq, X0_new, AX0_new, xi0_new


def _solve_leader(model: LeaderModel, ensemble: ParticleEnsemble,
                  opts: Optional[PicardOptions], penalty: Optional[float],
                  outer_tol: float, outer_max_iter: int, outer_damping: float,
                  xi0_init=None) -> StackelbergSolution:
    model.validate()
    opts = opts or PicardOptions()
    grid = ensemble.grid
    if penalty is None:
        a_bar = solve_riccati(model.riccati_input(), SINGULAR, grid,
                              n_substeps=opts.n_substeps)
    else:
        a_bar = solve_riccati(model.riccati_input(), PENALIZED, grid, n=penalty,
                              n_substeps=opts.n_substeps)

    if xi0_init is None:
        xi0 = np.full(grid.n_nodes, model.x0 / grid.T)
        X0 = model.x0 * (1.0 - grid.nodes / grid.T)
    else:
        xi0 = np.asarray(xi0_init, dtype=float)
        X0 = state_from_rate(model.x0, xi0, grid)

    history = []
    converged = False
    iterations = 0
    omega = outer_damping
    last = None
    for it in range(1, outer_max_iter + 1):
        iterations = it
        last = _one_leader_pass(model, xi0, X0, a_bar, ensemble, opts, penalty)
        xi0_new, X0_new = last[6], last[4]
        res = l2_time_norm(xi0_new - xi0, grid)
        if not np.isfinite(res):
            raise ConvergenceError("leader fixed point diverged", residual_history=history)
        history.append(res)
        xi0 = omega * xi0_new + (1 - omega) * xi0
        X0 = omega * X0_new + (1 - omega) * X0
        if res < outer_tol:
            converged = True
            break
    if not converged:
        raise ConvergenceError(
            f"leader fixed point did not reach tol={outer_tol:g} in "
            f"{outer_max_iter} iterations (last residual {history[-1]:.3e})",
            residual_history=history)

    # one final clean evaluation at the converged control; the reported
    # solution is the evaluated image, so the representation holds exactly
    fb, adj, p_bar, e_ktq, X0_fin, AX0_fin, xi0_fin = _one_leader_pass(
        model, xi0, X0, a_bar, ensemble, opts, penalty)
    fixed_residual = l2_time_norm(xi0_fin - xi0, grid)
    eta0_vals = eval_time(model.eta0, grid.nodes)
    kappa0_vals = eval_time(model.kappa0, grid.nodes)
    rep = (AX0_fin + p_bar + e_ktq - kappa0_vals * X0_fin) / (2.0 * eta0_vals)
    rep_residual = float(np.abs(xi0_fin - rep).max())

    if penalty is None:
        fb_fin = follower_response(model, xi0_fin, ensemble, opts)
    else:
        fb_fin = penalized_follower_response(model, xi0_fin, penalty, ensemble, opts)
    j0 = leader_cost(model, xi0_fin, ensemble,
                     penalization=(None if penalty is None else penalty / 2.0),
                     response=fb_fin, opts=opts, X0=X0_fin)
    return StackelbergSolution(
        xi0=xi0_fin, X0=X0_fin, AX0=AX0_fin, p_bar=p_bar, q=adj.q, r=adj.r,
        adjoint=adj, follower=fb_fin, a_bar=a_bar, J0=j0,
        outer_iterations=iterations, outer_residual_history=history,
        fixed_point_residual=fixed_residual, representation_residual=rep_residual,
        converged=converged,
        penalty_level=(None if penalty is None else penalty / 2.0))


def solve_stackelberg(model: LeaderModel, ensemble: ParticleEnsemble,
                      opts: Optional[PicardOptions] = None,
                      outer_tol: float = 1e-8, outer_max_iter: int = 200,
                      outer_damping: float = 0.3,
                      xi0_init=None) -> StackelbergSolution:
    """Solve the constrained leader problem by damped fixed-point iteration
    on the control; both terminal inventories are pinned to zero through
    the singular discounts."""
    return _solve_leader(model, ensemble, opts, None, outer_tol, outer_max_iter,
                         outer_damping, xi0_init)


def solve_leader_penalized(model: LeaderModel, n: float, ensemble: ParticleEnsemble,
                           opts: Optional[PicardOptions] = None,
                           outer_tol: float = 1e-8, outer_max_iter: int = 200,
                           outer_damping: float = 0.3,
                           xi0_init=None) -> StackelbergSolution:
    """Penalized leader problem at level n.

    All terminal constraints are replaced by penalties: the leader pays
    2n * X0_T^2, and the whole state/adjoint chain uses the matching
    terminal data (Riccati value 4n, adjoint terminal slope 4n), so the
    decoupled closed forms 2n x0/(1+2nT) for the rate and 2n x0^2/(1+2nT)
    for the value hold exactly.
    """
    if n is None or n <= 0:
        raise ValueError("penalty level n must be positive")
    return _solve_leader(model, ensemble, opts, 2.0 * float(n), outer_tol,
                         outer_max_iter, outer_damping, xi0_init)


# ---------------------------------------------------------------------------
# costs and value convergence
# ---------------------------------------------------------------------------

def penalized_follower_response(model: LeaderModel, xi0: np.ndarray, n: float,
                                ensemble: ParticleEnsemble,
                                opts: Optional[PicardOptions] = None) -> StrategyBundle:
    """Follower response when his own constraint is penalized at level n
    (terminal adjoint slope 2n)."""
    grid = ensemble.grid
    g_vals = model._vals("kappatilde0", grid) * np.asarray(xi0, dtype=float)
    fol = dataclasses.replace(model.follower, g_tilde=g_vals)
    coeffs = map_to_core(fol, ensemble)
    bundle = solve_penalized(coeffs, n, ensemble, opts)
    eta_vals = eval_time(fol.eta, grid.nodes)
    kap_vals = fol.kappa_values(grid)
    e_kx = project_values(kap_vals * bundle.Q) if np.ndim(kap_vals * bundle.Q) == 3 \
        else kap_vals * bundle.Q
    xi = (bundle.R - e_kx) / (2.0 * eta_vals)
    from .liquidation import _expected_cost
    running = _expected_cost(fol, xi, bundle.Q, grid)
    j = running + float(n) * float(np.mean(np.asarray(bundle.Q)[..., -1] ** 2))
    return StrategyBundle(xi=xi, X=bundle.Q, Y=bundle.R, cost=j,
                          bundle=bundle, model=fol, ensemble=ensemble)


def leader_cost(model: LeaderModel, xi0: np.ndarray, ensemble: ParticleEnsemble,
                penalization: Optional[float] = None,
                response: Optional[StrategyBundle] = None,
                opts: Optional[PicardOptions] = None,
                admissibility_tol: Optional[float] = None,
                X0: Optional[np.ndarray] = None) -> float:
    """Leader's expected cost at a given rate.

    Constrained mode requires an admissible rate; penalized mode adds the
    terminal penalty 2n * X0_T^2 and evaluates against the follower's
    penalized response at the matching level.  When the caller already
    holds the accurate inventory trajectory (the solver does), it can be
    passed through instead of being reconstructed by quadrature.
    """
    grid = ensemble.grid
    xi0 = np.asarray(xi0, dtype=float)
    if penalization is None and X0 is None:
        tol = admissibility_tol if admissibility_tol is not None \
            else 1e-6 * (1.0 + abs(model.x0))
        res = admissibility_residual(model.x0, xi0, grid)
        if res > tol:
            raise AdmissibilityError(
                f"leader rate misses the liquidation target by {res:.3e}",
                residual=res)
    if response is None:
        if penalization is None:
            response = follower_response(model, xi0, ensemble, opts)
        else:
            response = penalized_follower_response(model, xi0, 2.0 * penalization,
                                                   ensemble, opts)
    if X0 is None:
        X0 = state_from_rate(model.x0, xi0, grid)
    mu = project_values(response.xi) if np.ndim(response.xi) == 3 else response.xi
    eta0_vals = eval_time(model.eta0, grid.nodes)
    kappa0_vals = eval_time(model.kappa0, grid.nodes)
    lambda0_vals = eval_time(model.lambda0, grid.nodes)
    kb_vals = model._vals("kappabar0", grid)
    lb_vals = model._vals("lambdabar", grid)
    integrand = (kb_vals * mu * X0 + kappa0_vals * X0 * xi0
                 + eta0_vals * xi0 ** 2 + lambda0_vals * X0 ** 2
                 + lb_vals * mu ** 2)
    j = float(np.mean(np.trapezoid(integrand, grid.nodes, axis=-1)))
    if penalization is not None:
        j += 2.0 * penalization * float(np.mean(X0[..., -1] ** 2))
    return j


@dataclass
class ValueReport:
    """Penalized leader values against the constrained one."""

    n_schedule: list
    values: list
    cesaro_values: list
    j0_constrained: float
    sandwich_ok: list
    sandwich_tol: float
    terminal_x0: list

    def rows(self) -> list:
        return [{"n": n, "value": v, "cesaro_value": c,
                 "sandwich_ok": bool(ok), "terminal_x0": tx}
                for n, v, c, ok, tx in zip(self.n_schedule, self.values,
                                           self.cesaro_values, self.sandwich_ok,
                                           self.terminal_x0)]


def value_convergence(model: LeaderModel, n_schedule: Sequence[float],
                      ensemble: ParticleEnsemble,
                      opts: Optional[PicardOptions] = None,
                      sandwich_tol: float = 1e-8,
                      outer_tol: float = 1e-8, outer_max_iter: int = 200,
                      outer_damping: float = 0.3) -> ValueReport:
    """Penalized optimal values along the schedule, their running averages,
    and the sandwich check against the constrained optimum."""
    schedule = [float(n) for n in n_schedule]
    star = solve_stackelberg(model, ensemble, opts, outer_tol=outer_tol,
                             outer_max_iter=outer_max_iter,
                             outer_damping=outer_damping)
    values = []
    terminal = []
    for n in schedule:
        sol = solve_leader_penalized(model, n, ensemble, opts, outer_tol=outer_tol,
                                     outer_max_iter=outer_max_iter,
                                     outer_damping=outer_damping)
        values.append(sol.J0)
        terminal.append(float(np.abs(sol.X0[..., -1]).max()))
    cesaro_vals = list(np.cumsum(values) / np.arange(1, len(values) + 1))
    ok = [v <= star.J0 + sandwich_tol for v in values]
    return ValueReport(n_schedule=schedule, values=values, cesaro_values=cesaro_vals,
                       j0_constrained=star.J0, sandwich_ok=ok,
                       sandwich_tol=sandwich_tol, terminal_x0=terminal)


def verify_leader_optimality(model: LeaderModel, solution: StackelbergSolution,
                             ensemble: ParticleEnsemble, trials: int, delta: float,
                             seed: int = 0, opts: Optional[PicardOptions] = None) -> float:
    """Cost increase of the leader at admissible perturbed rates; the
    smallest observed difference should not be markedly negative."""
    grid = ensemble.grid
    shapes = perturbation_shapes(grid)
    rng = np.random.default_rng(seed)
    worst = np.inf
    for i in range(trials):
        if i < shapes.shape[0]:
            phi = shapes[i]
        else:
            phi = recentre_normalize(rng.normal(size=shapes.shape[0]) @ shapes, grid)
        j_pert = leader_cost(model, solution.xi0 + delta * phi, ensemble, opts=opts)
        worst = min(worst, j_pert - solution.J0)
    return float(worst)
