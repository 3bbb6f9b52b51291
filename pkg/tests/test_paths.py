import numpy as np
import pytest

from mfliq import (AdaptedField, GridError, ShapeError, build_grid,
                   default_grid, project_common, regress_conditional,
                   simulate_ensemble)
from mfliq.paths import ensemble_from_csv, ensemble_to_csv


class TestBuildGrid:
    def test_uniform(self):
        g = build_grid(1.0, 10, 0, 0.5, 1e-3)
        assert np.allclose(g.nodes, np.linspace(0, 1, 11))
        assert g.n_nodes == 11

    def test_geometric(self):
        g = build_grid(1.0, 0, 3, 0.5, 0.125)
        assert np.allclose(g.nodes, [0.0, 0.5, 0.75, 0.875, 1.0])

    @pytest.mark.parametrize("params", [
        (1.0, 10, 0, 0.5, 1e-3),
        (1.0, 0, 3, 0.5, 0.125),
        (2.0, 50, 30, 0.8, 2e-4),
        (1.0, 300, 120, (1e-6 / 0.08) ** (1 / 120), 1e-6),
    ])
    def test_last_gap_is_epsilon_final(self, params):
        g = build_grid(*params)
        assert abs((g.nodes[-1] - g.nodes[-2]) - g.epsilon_final) < 1e-12

    def test_invariants(self):
        g = build_grid(1.0, 50, 40, 0.85, 1e-4 * 0.85 ** -0 * 0.85 ** 40 * 0.5)
        assert g.nodes[0] == 0.0 and g.nodes[-1] == g.T
        assert np.all(np.diff(g.nodes) > 0)
        tau = g.T - g.nodes
        refined = tau[g.switch_index:-1]
        assert np.allclose(refined[1:], g.ratio * refined[:-1], rtol=1e-10)
        assert g.epsilon_final > 0

    def test_node_count(self):
        # uniform block, refined block, terminal node (matches the
        # five-node geometric example above)
        g = build_grid(1.0, 40, 25, 0.8, 1.0 * 0.8 ** 25 * 0.3)
        assert g.n_nodes == 40 + 25 + 2
        assert build_grid(1.0, 10, 0, 0.5, 1e-3).n_nodes == 11

    def test_rejects_span_conflict(self):
        # epsilon_final / ratio^n exceeds the horizon
        with pytest.raises(GridError):
            build_grid(1.0, 200, 100, 0.85, 1e-4)

    @pytest.mark.parametrize("bad", [
        dict(T=-1.0, n_uniform=10, n_refined=0, ratio=0.5, epsilon_final=1e-3),
        dict(T=1.0, n_uniform=10, n_refined=0, ratio=1.5, epsilon_final=1e-3),
        dict(T=1.0, n_uniform=10, n_refined=0, ratio=0.5, epsilon_final=2.0),
        dict(T=1.0, n_uniform=0, n_refined=0, ratio=0.5, epsilon_final=0.1),
    ])
    def test_rejects_bad_parameters(self, bad):
        with pytest.raises(GridError):
            build_grid(**bad)

    def test_default_grid(self):
        g = default_grid(2.0)
        assert g.n_nodes == 302
        assert abs(g.epsilon_final - 2e-4) < 1e-12
        assert np.all(np.diff(g.nodes) > 0)

    def test_index_of(self):
        g = build_grid(1.0, 10, 0, 0.5, 1e-3)
        assert g.index_of(0.3) == 3
        with pytest.raises(GridError):
            g.index_of(0.35)


class TestEnsemble:
    def test_seed_determinism(self):
        g = build_grid(1.0, 20, 0, 0.5, 1e-3)
        a = simulate_ensemble(g, 5, 7, 123)
        b = simulate_ensemble(g, 5, 7, 123)
        assert np.array_equal(a.dw_common, b.dw_common)
        assert np.array_equal(a.dw_idio, b.dw_idio)
        c = simulate_ensemble(g, 5, 7, 124)
        assert not np.array_equal(a.dw_common, c.dw_common)

    def test_increment_variance(self):
        # pooled over 10^4 idiosyncratic draws per step, dt = 0.1
        g = build_grid(1.0, 10, 0, 0.5, 1e-3)
        ens = simulate_ensemble(g, 100, 100, 11)
        var = ens.dw_idio.reshape(-1, 10).var(axis=0)
        band = 0.1 * 3 * np.sqrt(2.0 / 1e4)
        assert np.all(np.abs(var - 0.1) <= band)

    def test_single_idio_shape(self):
        g = build_grid(1.0, 10, 0, 0.5, 1e-3)
        ens = simulate_ensemble(g, 4, 1, 0)
        assert ens.dw_idio.shape == (4, 1, 10)

    def test_streams_independent(self):
        g = build_grid(1.0, 50, 0, 0.5, 1e-3)
        ens = simulate_ensemble(g, 200, 1, 3)
        a = ens.dw_common.ravel()
        b = ens.dw_idio.ravel()
        corr = np.corrcoef(a, b)[0, 1]
        assert abs(corr) < 3.0 / np.sqrt(a.size)

    def test_paths_cumulative(self):
        g = build_grid(1.0, 10, 0, 0.5, 1e-3)
        ens = simulate_ensemble(g, 3, 2, 0)
        w = ens.common_paths()
        assert np.allclose(w[:, 0], 0.0)
        assert np.allclose(np.diff(w, axis=-1), ens.dw_common)

    def test_csv_roundtrip(self, tmp_path):
        g = build_grid(1.0, 6, 0, 0.5, 1e-3)
        ens = simulate_ensemble(g, 3, 2, 5)
        path = tmp_path / "ens.csv"
        ensemble_to_csv(ens, path)
        back = ensemble_from_csv(g, path)
        assert np.array_equal(back.dw_common, ens.dw_common)
        assert np.array_equal(back.dw_idio, ens.dw_idio)


class TestProjection:
    def setup_method(self):
        self.grid = build_grid(1.0, 20, 0, 0.5, 1e-3)
        self.ens = simulate_ensemble(self.grid, 50, 40, 9)

    def test_constant_field(self):
        f = AdaptedField.full(np.full((50, 40, 21), 3.25))
        out = project_common(self.ens, f)
        assert np.allclose(out.values, 3.25)
        assert out.kind == "common"

    def test_idempotence_exact(self):
        rng = np.random.default_rng(0)
        f = AdaptedField.full(rng.standard_normal((50, 40, 21)))
        once = project_common(self.ens, f)
        twice = project_common(self.ens, once)
        assert twice is once

    def test_linearity_exact(self):
        rng = np.random.default_rng(1)
        fv = rng.standard_normal((50, 40, 21))
        gv = rng.standard_normal((50, 40, 21))
        a, b = 1.37, -0.52
        left = project_common(self.ens, AdaptedField.full(a * fv + b * gv)).values
        right = (a * project_common(self.ens, AdaptedField.full(fv)).values
                 + b * project_common(self.ens, AdaptedField.full(gv)).values)
        # linear as an operator; bitwise equality is limited only by float
        # summation order
        assert np.allclose(left, right, rtol=0, atol=1e-13)

    def test_clt_bound(self):
        g = build_grid(1.0, 40, 0, 0.5, 1e-3)
        ens = simulate_ensemble(g, 30, 10_000, 2)
        rng = np.random.default_rng(7)
        f = AdaptedField.full(rng.standard_normal((30, 10_000, 41)))
        out = project_common(ens, f).values
        frac = np.mean(np.abs(out) <= 3.0 / np.sqrt(10_000))
        assert frac >= 0.99

    def test_shape_mismatch(self):
        f = AdaptedField.full(np.zeros((50, 40, 5)))
        with pytest.raises(ShapeError):
            project_common(self.ens, f)


class TestRegression:
    def test_constant_reproduced(self):
        g = build_grid(1.0, 20, 0, 0.5, 1e-3)
        ens = simulate_ensemble(g, 64, 1, 0)
        out = regress_conditional(ens, 10, np.full(64, 2.5), basis_degree=3)
        assert np.allclose(out, 2.5, atol=1e-12)

    def test_in_span_reproduced(self):
        g = build_grid(1.0, 20, 0, 0.5, 1e-3)
        ens = simulate_ensemble(g, 64, 1, 0)
        w = ens.common_paths()[:, 10]
        out = regress_conditional(ens, 10, w, basis_degree=1)
        assert np.abs(out - w).max() < 1e-10

    def test_martingale_projection(self):
        g = build_grid(1.0, 20, 0, 0.5, 1e-3)
        ens = simulate_ensemble(g, 10_000, 1, 4)
        w = ens.common_paths()
        k = 12
        fit = regress_conditional(ens, k, w[:, -1], basis_degree=1)
        l2 = np.sqrt(np.mean((fit - w[:, k]) ** 2))
        assert l2 <= 3.0 * np.sqrt((g.T - g.nodes[k]) / 10_000) * np.sqrt(2)

    def test_single_path_identity(self):
        g = build_grid(1.0, 20, 0, 0.5, 1e-3)
        ens = simulate_ensemble(g, 1, 1, 0)
        out = regress_conditional(ens, 5, np.array([1.7]), basis_degree=3)
        assert np.allclose(out, 1.7)

    def test_rank_fallback_at_origin(self):
        # all paths share W = 0 at t = 0: the design collapses to degree 0
        g = build_grid(1.0, 20, 0, 0.5, 1e-3)
        ens = simulate_ensemble(g, 32, 1, 0)
        vals = np.arange(32, dtype=float)
        out, info = regress_conditional(ens, 0, vals, basis_degree=3, return_info=True)
        assert info["fallback"]
        assert np.allclose(out, vals.mean())
