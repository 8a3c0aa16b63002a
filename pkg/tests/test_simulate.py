"""Tests for the data generator and the recovery study."""

import json
import math

import numpy as np
import pytest
from pydantic import ValidationError

from poiar.config import ModelConfig, NutsConfig, Variant
from poiar.errors import DataValidationError, NumericDomainError
from poiar.model import DesignMatrices, ModelData, rate_components, rate_matrix
from poiar.parameters import Layout, ParameterSet
from poiar.simulate import (
    IndicatorWindow,
    SimSpec,
    draw_true_params,
    gen_panel,
    holdout_mask,
    run_recovery,
    simulate_replicate,
    synthetic_design,
    write_manifest,
)

TINY_NUTS = NutsConfig(n_chains=2, n_warmup=40, n_iter=40, max_treedepth=6)


def truth_layout(spec, n_areas, x_names):
    return Layout(len(x_names), 1, spec.tau, n_areas, spec.n_weeks, True, True)


class TestSimSpec:
    """Test generator settings."""

    def test_defaults(self):
        """Test the default study layout."""
        spec = SimSpec()
        assert spec.graph().n_areas == 25
        assert spec.weights == (0.7, 0.2, 0.1)
        assert spec.sigma_psi_scale == 0.5
        assert spec.pre_weeks == 3

    def test_weights_match_tau(self):
        """Test that weights need tau entries."""
        with pytest.raises(ValidationError, match="tau"):
            SimSpec(tau=2)

    def test_weights_from_string(self):
        """Test comma-separated weights."""
        assert SimSpec(tau=2, weights="0.6, 0.4").weights == (0.6, 0.4)

    def test_weights_simplex(self):
        """Test that weights must sum to one."""
        with pytest.raises(ValidationError, match="simplex"):
            SimSpec(weights=(0.5, 0.3, 0.1))

    def test_window_inside_panel(self):
        """Test that windows must end within the panel."""
        window = IndicatorWindow(name="holiday", start=5, end=12)
        with pytest.raises(ValidationError, match="holiday"):
            SimSpec(n_weeks=10, windows=(window,))

    def test_default_windows(self):
        """Test the summer and christmas windows of a 30-week panel."""
        summer, christmas = SimSpec(n_weeks=30).indicator_windows()
        assert (summer.start, summer.end) == (3, 9)
        assert (christmas.start, christmas.end) == (20, 23)

    def test_spec_hash(self):
        """Test that the hash follows the settings."""
        assert SimSpec(seed=1).spec_hash() == SimSpec(seed=1).spec_hash()
        assert SimSpec(seed=1).spec_hash() != SimSpec(seed=2).spec_hash()

    def test_edge_list_graph(self, tmp_path):
        """Test a graph read from an edge-list file."""
        path = tmp_path / "edges.txt"
        path.write_text("area_count=3\n0,1\n1,2\n")
        assert SimSpec(edges_path=str(path)).graph().n_edges == 2


class TestSyntheticDesign:
    """Test the drawn covariates."""

    def setup_method(self):
        """Set up test fixtures."""
        self.spec = SimSpec(n_weeks=20)
        self.designs = synthetic_design(self.spec, 6, np.random.default_rng(0))

    def test_names(self):
        """Test the column order."""
        assert self.designs.x_names == (
            "intercept", "socio_1", "socio_2", "socio_3",
            "tier_2", "tier_3", "tier_4", "summer", "christmas",
        )  # fmt: skip
        assert self.designs.v.shape == (6, 20, 1)

    def test_socio_standardized(self):
        """Test that area covariates are constant in time and standardized."""
        socio = self.designs.x[:, :, 1]
        assert np.allclose(socio, socio[:, :1])
        assert socio.mean() == pytest.approx(0.0, abs=1e-12)
        assert socio.std() == pytest.approx(1.0)

    def test_tiers_exclusive(self):
        """Test that at most one tier indicator is on per cell."""
        tiers = self.designs.x[:, :, 4:7]
        assert set(np.unique(tiers)) <= {0.0, 1.0}
        assert tiers.sum(axis=2).max() <= 1.0

    def test_window_indicators(self):
        """Test the summer window of a 20-week panel."""
        summer = self.designs.x[0, :, 7]
        assert summer.tolist() == [0.0] * 2 + [1.0] * 4 + [0.0] * 14


class TestDrawTrueParams:
    """Test draws of the true parameters."""

    def setup_method(self):
        """Set up test fixtures."""
        self.spec = SimSpec(lattice_rows=2, lattice_cols=3, n_weeks=8)
        self.graph = self.spec.graph()
        self.names = synthetic_design(
            self.spec, 6, np.random.default_rng(0)
        ).x_names

    def draw(self, seed):
        return draw_true_params(
            self.spec, self.graph, np.random.default_rng(seed), self.names
        )

    def test_fixed_values(self):
        """Test the lag weights and the fixed covariate effects."""
        params = self.draw(1)
        assert params.w.tolist() == [0.7, 0.2, 0.1]
        beta = dict(zip(self.names, params.beta))
        assert beta["tier_3"] == pytest.approx(math.log(2 / 3))
        assert beta["summer"] == pytest.approx(math.log(2 / 5))
        assert beta["christmas"] == pytest.approx(math.log(5 / 2))

    def test_field_shapes(self):
        """Test that both fields are drawn over the whole panel."""
        params = self.draw(2)
        assert params.phi_star.shape == (6, 8)
        assert 0.0 <= params.theta_psi.alpha <= 1.0
        assert params.theta_phi.sigma > 0

    def test_deterministic(self):
        """Test that the same seed gives the same parameters."""
        layout = truth_layout(self.spec, 6, self.names)
        a = self.draw(3).flatten_constrained(layout)
        b = self.draw(3).flatten_constrained(layout)
        assert np.array_equal(a, b)


class TestGenPanel:
    """Test forward simulation of counts."""

    def test_first_week_without_history(self):
        """Test that zero pre-counts leave only the baseline in week one."""
        spec = SimSpec(lattice_rows=2, lattice_cols=2, n_weeks=4)
        graph = spec.graph()
        rng = np.random.default_rng(0)
        designs = synthetic_design(spec, 4, rng)
        truth = draw_true_params(spec, graph, rng, designs.x_names)
        panel, _ = gen_panel(
            spec, truth, graph, rng, designs, pre_counts=np.zeros((4, 3))
        )
        data = ModelData(graph, panel, designs, ModelConfig(variant=Variant.D))
        comps = rate_components(data, truth)
        assert np.all(comps.lag[:, 0] == 0.0)
        assert np.allclose(comps.rate[:, 0], comps.baseline[:, 0])

    def test_mean_matches_rate(self):
        """Test the simulated mean against the closed-form conditional mean."""
        spec = SimSpec(lattice_rows=10, lattice_cols=10, n_weeks=100)
        graph = spec.graph()
        designs = DesignMatrices.intercept_only(100, 100)
        truth = ParameterSet(
            beta=np.array([math.log(0.9)]),
            eta=np.zeros(1),
            w=np.array([0.7, 0.2, 0.1]),
        )
        panel, _ = gen_panel(spec, truth, graph, np.random.default_rng(1), designs)
        data = ModelData(graph, panel, designs, ModelConfig(variant=Variant.A))
        expected = rate_matrix(data, truth).sum()
        assert panel.counts.sum() == pytest.approx(expected, rel=0.02)

    def test_rate_overflow(self):
        """Test that an exploding rate is reported."""
        spec = SimSpec(lattice_rows=2, lattice_cols=2, n_weeks=5, max_rate=1000.0)
        truth = ParameterSet(beta=np.array([5.0]), eta=np.zeros(1), w=np.full(3, 1 / 3))
        with pytest.raises(NumericDomainError, match="overflow"):
            gen_panel(
                spec,
                truth,
                spec.graph(),
                np.random.default_rng(0),
                DesignMatrices.intercept_only(4, 5),
            )

    def test_designs_must_match(self):
        """Test that designs must cover the simulated panel."""
        spec = SimSpec(lattice_rows=2, lattice_cols=2, n_weeks=5)
        truth = ParameterSet(beta=np.zeros(1), eta=np.zeros(1), w=np.full(3, 1 / 3))
        with pytest.raises(DataValidationError):
            gen_panel(
                spec,
                truth,
                spec.graph(),
                np.random.default_rng(0),
                DesignMatrices.intercept_only(4, 6),
            )


class TestHoldoutMask:
    """Test random holdout masks."""

    def test_exact_count(self):
        """Test that round(f * L * T) cells are held out."""
        mask = holdout_mask(5, 7, 0.2, np.random.default_rng(0))
        assert mask.shape == (5, 7)
        assert np.sum(~mask) == 7

    def test_no_holdout(self):
        """Test a zero fraction."""
        assert holdout_mask(3, 3, 0.0, np.random.default_rng(0)).all()

    def test_fraction_bounds(self):
        """Test that a full holdout is rejected."""
        with pytest.raises(DataValidationError):
            holdout_mask(3, 3, 1.0, np.random.default_rng(0))


class TestSimulateReplicate:
    """Test replicate generation."""

    def test_deterministic(self):
        """Test that a replicate depends only on the seed and index."""
        spec = SimSpec(lattice_rows=2, lattice_cols=2, n_weeks=6, seed=4)
        graph = spec.graph()
        a = simulate_replicate(spec, graph, 1)
        b = simulate_replicate(spec, graph, 1)
        c = simulate_replicate(spec, graph, 2)
        assert np.array_equal(a.panel.counts, b.panel.counts)
        assert np.array_equal(a.panel.in_sample, b.panel.in_sample)
        assert not np.array_equal(a.panel.counts, c.panel.counts)

    def test_holdout_applied(self):
        """Test the replicate mask."""
        spec = SimSpec(lattice_rows=2, lattice_cols=2, n_weeks=10, holdout=0.25)
        replicate = simulate_replicate(spec, spec.graph(), 0)
        assert np.sum(~replicate.panel.in_sample) == 10

    def test_redraws_exhausted(self, caplog):
        """Test that persistent overflows are fatal after the retries."""
        spec = SimSpec(
            lattice_rows=2, lattice_cols=2, n_weeks=4, max_rate=1e-9, max_redraws=2
        )
        with pytest.raises(NumericDomainError, match="all 3 attempts"):
            simulate_replicate(spec, spec.graph(), 0)
        assert "redrawn" in caplog.text


class TestRecovery:
    """Test the recovery study."""

    def test_smoke(self, tmp_path):
        """Test a tiny study end to end."""
        spec = SimSpec(
            lattice_rows=2, lattice_cols=2, n_weeks=6, replicates=2, n_socio=1, seed=5
        )
        report = run_recovery(spec, TINY_NUTS)
        assert report.n_replicates == 2
        kept = 2 - report.n_excluded
        frame = report.to_frame()
        assert frame.columns.tolist() == ["kind", "name", "rmse", "coverage"]
        if kept:
            assert set(report.fields["field"]) == {"phi", "psi"}
            assert 0.0 <= report.pooled_coverage <= 1.0
            assert (report.parameters["n"] == kept).all()
            assert "beta[0]" in report.parameters["parameter"].tolist()

        path = tmp_path / "manifest.json"
        write_manifest(report, spec, path)
        manifest = json.loads(path.read_text())
        assert manifest["spec_hash"] == spec.spec_hash()
        assert manifest["replicates"] == 2
        assert manifest["n_excluded"] == report.n_excluded

    def test_tau_mismatch(self):
        """Test that the fitting model must use the simulated lag depth."""
        with pytest.raises(DataValidationError, match="tau"):
            run_recovery(SimSpec(), TINY_NUTS, ModelConfig(tau=2))

    @pytest.mark.slow
    def test_coverage_calibrated(self):
        """Test pooled interval coverage of a well-specified study."""
        spec = SimSpec(
            lattice_rows=3, lattice_cols=3, n_weeks=20, replicates=8, n_socio=1, seed=11
        )
        nuts = NutsConfig(n_chains=4, n_warmup=500, n_iter=500)
        report = run_recovery(spec, nuts)
        assert report.n_excluded < spec.replicates
        assert 0.85 <= report.pooled_coverage <= 1.0

    @pytest.mark.slow
    def test_beta_rmse_shrinks_with_more_weeks(self):
        """Test that doubling T lowers the median RMSE of the beta coefficients."""
        nuts = NutsConfig(n_chains=2, n_warmup=300, n_iter=300)
        medians = []
        for n_weeks in (15, 30):
            spec = SimSpec(
                lattice_rows=3,
                lattice_cols=3,
                n_weeks=n_weeks,
                replicates=10,
                n_socio=1,
                seed=21,
            )
            report = run_recovery(spec, nuts)
            assert report.n_excluded < spec.replicates
            table = report.parameters
            beta = table[table["parameter"].str.startswith("beta[")]
            medians.append(beta["rmse"].median())
        assert medians[1] < medians[0]
