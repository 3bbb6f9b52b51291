import numpy as np
import pytest
from scipy.integrate import quad

from mfliq import (NumericalError, RiccatiInput, build_grid,
                   check_riccati_bounds, discount, solve_riccati)


def interior(grid, upto=1e-3):
    t = grid.nodes[:-1]
    return t, t <= grid.T - upto


class TestClosedForms:
    def test_reciprocal_field(self, fine_grid):
        inp = RiccatiInput(lambda1=1.0, lambda4=0.0, T=1.0)
        sol = solve_riccati(inp, "singular", fine_grid)
        t, mask = interior(fine_grid)
        ref = 1.0 / (1.0 - t[mask])
        rel = np.abs(sol.a[:-1][mask] - ref) / ref
        assert rel.max() < 1e-8

    def test_coth_field(self, fine_grid):
        inp = RiccatiInput(lambda1=1.0, lambda4=1.0, T=1.0)
        sol = solve_riccati(inp, "singular", fine_grid)
        t, mask = interior(fine_grid)
        ref = 1.0 / np.tanh(1.0 - t[mask])
        rel = np.abs(sol.a[:-1][mask] - ref) / ref
        assert rel.max() < 1e-8

    @pytest.mark.parametrize("n", [1, 2, 16, 256])
    def test_penalized_field(self, fine_grid, n):
        inp = RiccatiInput(lambda1=1.0, lambda4=0.0, T=1.0)
        sol = solve_riccati(inp, "penalized", fine_grid, n=n)
        ref = 2 * n / (1 + 2 * n * (1 - fine_grid.nodes))
        rel = np.abs(sol.a - ref) / ref
        assert rel.max() < 1e-8
        assert abs(sol.a[-1] - 2 * n) < 1e-10 * n

    def test_pointwise_gap_exact(self, fine_grid):
        inp = RiccatiInput(lambda1=1.0, lambda4=0.0, T=1.0)
        sol = solve_riccati(inp, "singular", fine_grid)
        t = fine_grid.nodes[:-1]
        for n in (2, 8, 64):
            soln = solve_riccati(inp, "penalized", fine_grid, n=n)
            gap = sol.a[:-1] - soln.a[:-1]
            ref = 1.0 / ((1 - t) * (1 + 2 * n * (1 - t)))
            assert np.max(np.abs(gap - ref) / ref) < 1e-8

    def test_monotone_penalization(self, fine_grid):
        inp = RiccatiInput(lambda1=1.0, lambda4=1.0, T=1.0)
        sol = solve_riccati(inp, "singular", fine_grid)
        prev = None
        for n in (1, 2, 4, 8):
            a = solve_riccati(inp, "penalized", fine_grid, n=n).a
            assert np.all(a[:-1] <= sol.a[:-1] + 1e-10)
            if prev is not None:
                assert np.all(prev <= a + 1e-10)
            prev = a

    def test_leader_drift_variant(self, fine_grid):
        # psi' = psi - 1 with psi(T) = 0 has psi = 1 - exp(t - T)
        inp = RiccatiInput(lambda1=1.0, lambda4=0.0, T=1.0, drift_linear=1.0)
        sol = solve_riccati(inp, "singular", fine_grid)
        ref = 1.0 - np.exp(fine_grid.nodes[:-1] - 1.0)
        assert np.max(np.abs(sol.psi[:-1] - ref)) < 1e-12

    def test_leader_quadratic_variant(self, fine_grid):
        # lam1 = 1/2, lam4 = 2: A = 2*coth(T - t)
        inp = RiccatiInput(lambda1=0.5, lambda4=2.0, T=1.0)
        sol = solve_riccati(inp, "singular", fine_grid)
        t, mask = interior(fine_grid)
        ref = 2.0 / np.tanh(1.0 - t[mask])
        assert np.max(np.abs(sol.a[:-1][mask] - ref) / ref) < 1e-8


class TestDiscount:
    def test_empty_interval(self, fine_grid):
        inp = RiccatiInput(lambda1=1.0, lambda4=0.0, T=1.0)
        sol = solve_riccati(inp, "singular", fine_grid)
        assert discount(0.3, 0.3, sol, inp) == 1.0

    def test_closed_form_singular(self, fine_grid):
        inp = RiccatiInput(lambda1=1.0, lambda4=0.0, T=1.0)
        sol = solve_riccati(inp, "singular", fine_grid)
        for t1, t2 in [(0.0, 0.5), (0.2, 0.9), (0.1, 0.999)]:
            assert abs(sol.discount(t1, t2) - (1 - t2) / (1 - t1)) < 1e-8
        assert sol.discount(0.4, 1.0) == 0.0

    def test_closed_form_penalized(self, fine_grid):
        inp = RiccatiInput(lambda1=1.0, lambda4=0.0, T=1.0)
        for n in (2, 32):
            sol = solve_riccati(inp, "penalized", fine_grid, n=n)
            s = 1.0 / (2 * n)
            for t1, t2 in [(0.0, 0.5), (0.2, 1.0)]:
                ref = (1 - t2 + s) / (1 - t1 + s)
                assert abs(sol.discount(t1, t2) - ref) < 1e-8

    def test_coth_discount(self, fine_grid):
        inp = RiccatiInput(lambda1=1.0, lambda4=1.0, T=1.0)
        sol = solve_riccati(inp, "singular", fine_grid)
        ref = np.sinh(1 - 0.7) / np.sinh(1 - 0.2)
        assert abs(sol.discount(0.2, 0.7) - ref) < 1e-8

    def test_monotone_in_t2(self, fine_grid):
        inp = RiccatiInput(lambda1=lambda t: 1.0 + 0.5 * np.sin(3 * t),
                           lambda4=lambda t: 0.5 * (1 + t), T=1.0)
        sol = solve_riccati(inp, "singular", fine_grid)
        vals = [sol.discount(0.1, t2) for t2 in np.linspace(0.1, 1.0, 40)]
        assert np.all(np.diff(vals) <= 1e-14)

    def test_against_quadrature(self, fine_grid):
        # independent oracle: integrate lam1 * A numerically from solver A
        inp = RiccatiInput(lambda1=lambda t: 1.0 + 0.5 * np.sin(3 * t),
                           lambda4=lambda t: 0.5 * (1 + t), T=1.0)
        sol = solve_riccati(inp, "singular", fine_grid)
        t = fine_grid.nodes
        i1, i2 = 50, 250

        def integrand(s):
            psi = np.interp(s, t[:-1], sol.psi[:-1])
            return (1.0 + 0.5 * np.sin(3 * s)) / psi

        val, _ = quad(integrand, t[i1], t[i2], limit=200)
        assert abs(sol.discount_nodes(i1, i2) - np.exp(-val)) < 1e-6


class TestBounds:
    def test_tight_sandwich(self, fine_grid):
        inp = RiccatiInput(lambda1=1.0, lambda4=0.0, T=1.0)
        sol = solve_riccati(inp, "singular", fine_grid)
        rep = check_riccati_bounds(sol, inp, fine_grid)
        assert rep.sandwich_max_violation < 1e-12
        assert np.allclose(rep.lower, rep.upper, rtol=1e-10)
        assert rep.ok

    def test_coth_sandwich_and_power(self, fine_grid):
        inp = RiccatiInput(lambda1=1.0, lambda4=1.0, T=1.0)
        sol = solve_riccati(inp, "singular", fine_grid)
        rep = check_riccati_bounds(sol, inp, fine_grid)
        assert rep.ok
        assert rep.beta == 1.0
        assert rep.discount_max_violation <= 1e-8

    def test_constant_lambda1_beta(self, fine_grid):
        inp = RiccatiInput(lambda1=2.5, lambda4=0.3, T=1.0)
        sol = solve_riccati(inp, "singular", fine_grid)
        assert sol.beta == 1.0

    def test_varying_lambda1(self, fine_grid):
        inp = RiccatiInput(lambda1=lambda t: 1.0 + 0.5 * np.sin(3 * t),
                           lambda4=lambda t: 0.5 * (1 + t), T=1.0)
        sol = solve_riccati(inp, "singular", fine_grid)
        rep = check_riccati_bounds(sol, inp, fine_grid)
        assert 0 < rep.beta < 1
        assert rep.sandwich_max_violation <= 1e-8
        assert rep.discount_max_violation <= 1e-8
        assert rep.discount_c_fitted <= 1.0 + 1e-10

    def test_penalized_exp1(self, fine_grid):
        inp = RiccatiInput(lambda1=1.0, lambda4=0.0, T=1.0)
        sol = solve_riccati(inp, "penalized", fine_grid, n=8)
        rep = check_riccati_bounds(sol, inp, fine_grid)
        assert rep.sandwich_max_violation is None
        assert rep.exp1_c_fitted <= 1.0 + 1e-8


class TestSolver:
    def test_positivity_validation(self, fine_grid):
        with pytest.raises(NumericalError):
            solve_riccati(RiccatiInput(lambda1=-1.0, lambda4=0.0, T=1.0),
                          "singular", fine_grid)
        with pytest.raises(NumericalError):
            solve_riccati(RiccatiInput(lambda1=1.0, lambda4=-0.5, T=1.0),
                          "singular", fine_grid)

    def test_fourth_order_refinement(self):
        # on a coarse grid with one substep the truncation error dominates;
        # halving the step must shrink it by at least 8x (4th-order method)
        inp = RiccatiInput(lambda1=1.0, lambda4=1.0, T=1.0)
        errs = []
        for n in (8, 16):
            g = build_grid(1.0, n, 0, 0.5, 1e-3)
            sol = solve_riccati(inp, "penalized", g, n=1, n_substeps=1)
            ref = solve_riccati(inp, "penalized", g, n=1, n_substeps=64)
            errs.append(np.abs(sol.psi - ref.psi).max())
        assert errs[0] / errs[1] >= 8.0

    def test_requires_level_for_penalized(self, fine_grid):
        inp = RiccatiInput(lambda1=1.0, lambda4=0.0, T=1.0)
        with pytest.raises(ValueError):
            solve_riccati(inp, "penalized", fine_grid)
