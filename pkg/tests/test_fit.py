"""Tests for fitting the model to a panel."""

import json

import numpy as np
import pytest

from poiar.car import CarParams, noncentered
from poiar.config import ModelConfig, NutsConfig, Variant
from poiar.diagnostics import FitSummary
from poiar.errors import ConvergenceWarning
from poiar.fit import constrained_draws, field_draws, fit_model
from poiar.graph import lattice_graph
from poiar.model import CountPanel, DesignMatrices, ModelData
from poiar.parameters import Layout, ParameterSet, transform


def small_data(variant=Variant.A, seed=0):
    rng = np.random.default_rng(seed)
    mask = np.ones((4, 6), dtype=bool)
    mask[0, -1] = False
    panel = CountPanel(
        counts=rng.poisson(15, size=(4, 6)),
        population=np.full(4, 30_000.0),
        pre_counts=rng.poisson(15, size=(4, 3)),
        in_sample=mask,
    )
    return ModelData(
        lattice_graph(2, 2),
        panel,
        DesignMatrices.intercept_only(4, 6),
        ModelConfig(variant=variant),
    )


class TestConstrainedDraws:
    """Test the map of draws to constrained space."""

    def test_matches_transform(self):
        """Test every draw against the parameter transform."""
        layout = Layout(2, 1, 3, 2, 2, True, False)
        samples = np.random.default_rng(0).normal(size=(2, 3, layout.dim))
        values = constrained_draws(samples, layout)
        assert values.shape == (2, 3, len(layout.constrained_names))
        expected = transform(samples[1, 2], layout)[0].flatten_constrained(layout)
        assert np.allclose(values[1, 2], expected)

    def test_field_draws(self):
        """Test transformed fields rebuilt from constrained values."""
        layout = Layout(1, 1, 1, 3, 4, True, False)
        star = np.random.default_rng(1).normal(size=(3, 4))
        theta = CarParams(0.3, 0.6, 0.5)
        params = ParameterSet(
            beta=np.zeros(1),
            eta=np.zeros(1),
            w=np.ones(1),
            theta_phi=theta,
            phi_star=star,
        )
        values = np.stack([params.flatten_constrained(layout)] * 2)
        fields = field_draws(values, layout, "phi")
        assert fields.shape == (2, 3, 4)
        assert np.allclose(fields[0], noncentered(star, theta))


class TestFitModel:
    """Test a complete small fit."""

    @pytest.fixture(scope="class")
    def result(self):
        nuts = NutsConfig(n_chains=2, n_warmup=150, n_iter=100, seed=3)
        return fit_model(small_data(), nuts)

    def test_shapes(self, result):
        """Test draws and constrained values."""
        layout = result.layout
        assert result.draws.samples.shape == (2, 100, layout.dim)
        assert result.constrained.shape == (2, 100, len(layout.constrained_names))
        assert len(result.summary.table) == len(layout.constrained_names)
        assert result.draws.pointwise.shape == (2, 100, 23)

    def test_scores(self, result):
        """Test that held-out cells are scored separately."""
        assert result.scores.in_sample.n_cells == 23
        assert result.scores.out_of_sample.n_cells == 1
        assert np.isfinite(result.scores.elpd_loo)

    def test_parameter_sets(self, result):
        """Test that every kept draw is a valid parameter set."""
        sets = list(result.parameter_sets())
        assert len(sets) == 200
        assert all(p.w.sum() == pytest.approx(1.0) for p in sets)

    def test_manifest_is_serializable(self, result):
        """Test the run metadata."""
        manifest = json.loads(json.dumps(result.manifest()))
        assert manifest["variant"] == "a"
        assert manifest["layout"]["dim"] == result.layout.dim
        assert manifest["nuts_config"]["seed"] == 3
        assert len(manifest["chains"]) == 2
        assert manifest["mask_digest"] == result.scores.mask_digest

    def test_deterministic(self, result):
        """Test that refitting with the same seed gives the same draws."""
        nuts = NutsConfig(n_chains=2, n_warmup=150, n_iter=100, seed=3)
        again = fit_model(small_data(), nuts)
        assert np.array_equal(again.draws.samples, result.draws.samples)


class TestConvergenceWarning:
    """Test the warning on non-converged fits."""

    def test_warns(self, monkeypatch):
        """Test that a failed R-hat check issues a ConvergenceWarning."""
        monkeypatch.setattr(FitSummary, "converged", lambda self, threshold=1.05: False)
        nuts = NutsConfig(n_chains=2, n_warmup=20, n_iter=20, seed=0)
        with pytest.warns(ConvergenceWarning, match="R-hat"):
            result = fit_model(small_data(), nuts)
        assert not result.converged
