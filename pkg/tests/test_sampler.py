"""Tests for the No-U-Turn sampler."""

import numpy as np
import pytest
from scipy import stats

from poiar.config import NutsConfig
from poiar.diagnostics import split_rhat
from poiar.errors import InitializationError
from poiar.sampler import (
    DualAveraging,
    State,
    WindowedAdapter,
    hamiltonian,
    leapfrog,
    nuts_sample,
    nuts_transition,
)
from poiar.target import GaussianTarget, Target


class FlatTarget(Target):
    """Zero-gradient target."""

    def __init__(self, dim):
        self._dim = dim

    @property
    def name(self):
        return "flat"

    @property
    def dim(self):
        return self._dim

    def log_density_grad(self, z):
        return 0.0, np.zeros(self._dim)


class NowhereTarget(FlatTarget):
    """Target without a finite point."""

    def log_density_grad(self, z):
        return -np.inf, np.zeros(self._dim)


class TestLeapfrog:
    """Test the integrator."""

    def test_free_particle(self):
        """Test linear motion under a zero gradient."""
        z, momentum, _, _ = leapfrog(
            np.zeros(2),
            np.array([1.0, -2.0]),
            0.5,
            FlatTarget(2),
            inv_metric=np.array([1.0, 3.0]),
        )
        assert np.allclose(z, [0.5, -3.0])
        assert np.allclose(momentum, [1.0, -2.0])

    def test_reversible(self):
        """Test that a negative step returns to the start."""
        target = GaussianTarget([1.0, -1.0], [[2.0, 0.9], [0.9, 1.0]])
        z0 = np.array([0.3, 0.4])
        p0 = np.array([-0.7, 1.1])
        inv_metric = np.array([1.5, 0.5])
        z1, p1, _, g1 = leapfrog(z0, p0, 0.1, target, inv_metric=inv_metric)
        z2, p2, _, _ = leapfrog(z1, p1, -0.1, target, g1, inv_metric)
        assert np.allclose(z2, z0, atol=1e-10)
        assert np.allclose(p2, p0, atol=1e-10)

    def test_non_finite_energy(self):
        """Test that a NaN density gives infinite energy."""
        state = State(np.zeros(1), np.ones(1), np.nan, np.zeros(1))
        assert hamiltonian(state, np.ones(1)) == np.inf


class TestTransition:
    """Test single NUTS iterations."""

    def test_divergence_flagged(self):
        """Test that a huge step on a narrow target diverges."""
        target = GaussianTarget([0.0], [1e-4])
        _, grad = target.log_density_grad(np.zeros(1))
        state = State(np.zeros(1), np.zeros(1), 0.0, grad)
        result = nuts_transition(
            state, 50.0, np.ones(1), target, np.random.default_rng(0)
        )
        assert result.divergent

    def test_tree_depth_bounded(self):
        """Test that a flat target stops at the maximum depth."""
        target = FlatTarget(1)
        state = State(np.zeros(1), np.zeros(1), 0.0, np.zeros(1))
        result = nuts_transition(
            state, 0.01, np.ones(1), target, np.random.default_rng(1), max_treedepth=3
        )
        assert result.tree_depth <= 3
        assert result.n_leapfrog <= 2**3


class TestDualAveraging:
    """Test step-size adaptation."""

    def test_high_acceptance_grows_step(self):
        """Test that perfect acceptance increases the step size."""
        dual = DualAveraging(0.1, target_accept=0.8)
        for _ in range(50):
            step = dual.update(1.0)
        assert step > 0.1
        assert dual.final_step > 0.1

    def test_low_acceptance_shrinks_step(self):
        """Test that zero acceptance decreases the step size."""
        dual = DualAveraging(0.1, target_accept=0.8)
        for _ in range(50):
            step = dual.update(0.0)
        assert step < 0.1


class TestWindowedAdapter:
    """Test the metric adaptation schedule."""

    def closing_iterations(self, n_warmup):
        adapter = WindowedAdapter(n_warmup, 1)
        rng = np.random.default_rng(0)
        return [
            i for i in range(n_warmup) if adapter.learn(rng.normal(size=1)) is not None
        ]

    def test_default_windows(self):
        """Test doubling windows for 1000 warmup iterations."""
        assert self.closing_iterations(1000) == [99, 149, 249, 449, 949]

    def test_short_warmup(self):
        """Test the proportional split below 150 iterations."""
        assert self.closing_iterations(100) == [89]

    def test_disabled(self):
        """Test that very short warmups keep the unit metric."""
        assert self.closing_iterations(10) == []

    def test_variance_estimate(self):
        """Test the regularized variance of one window."""
        adapter = WindowedAdapter(100, 2)
        rng = np.random.default_rng(1)
        for _ in range(89):
            adapter.learn(rng.normal(0.0, [10.0, 1.0]))
        inv_metric = adapter.learn(rng.normal(0.0, [10.0, 1.0]))
        assert 25.0 < inv_metric[0] < 200.0
        assert 0.3 < inv_metric[1] < 2.0


class TestNutsSample:
    """Test full sampler runs."""

    def test_standard_normal(self):
        """Test moments of a standard normal from 4 x 2000 draws."""
        config = NutsConfig(n_chains=4, n_warmup=500, n_iter=2000, seed=11)
        draws = nuts_sample(GaussianTarget([0.0], [1.0]), config)
        assert draws.samples.shape == (4, 2000, 1)
        values = draws.flat()[:, 0]
        assert abs(values.mean()) < 0.05
        assert 0.93 < values.std() < 1.07
        assert split_rhat(draws.samples[:, :, 0]).value < 1.01
        assert draws.treedepth_saturations == 0

    def test_detailed_balance_ks(self):
        """Test the shape of 10,000 thinned standard normal draws."""
        config = NutsConfig(n_chains=4, n_warmup=500, n_iter=5000, thin=2, seed=17)
        draws = nuts_sample(GaussianTarget([0.0], [1.0]), config)
        values = draws.flat()[:, 0]
        assert len(values) == 10_000
        assert stats.kstest(values, "norm").statistic < 0.02

    def test_correlated_gaussian(self):
        """Test the sample covariance of a correlated target."""
        cov = np.array([[2.0, 0.9], [0.9, 1.0]])
        config = NutsConfig(n_chains=4, n_warmup=500, n_iter=2000, seed=3)
        draws = nuts_sample(GaussianTarget([1.0, -1.0], cov), config)
        sample_cov = np.cov(draws.flat(), rowvar=False)
        assert np.allclose(sample_cov, cov, rtol=0.1)
        assert np.allclose(draws.flat().mean(axis=0), [1.0, -1.0], atol=0.1)

    def test_metric_adapts_to_scales(self):
        """Test the adapted metric of N(0, diag(100, 1))."""
        config = NutsConfig(n_chains=1, n_warmup=1000, n_iter=10, seed=2)
        draws = nuts_sample(GaussianTarget([0.0, 0.0], [100.0, 1.0]), config)
        inv_metric = draws.telemetry[0].inv_metric
        assert 50.0 < inv_metric[0] / inv_metric[1] < 200.0

    def test_metric_isotropic(self):
        """Test that an isotropic target gets a near-constant metric."""
        config = NutsConfig(n_chains=1, n_warmup=2000, n_iter=10, seed=4)
        draws = nuts_sample(GaussianTarget(np.zeros(3), np.ones(3)), config)
        inv_metric = draws.telemetry[0].inv_metric
        assert inv_metric.max() / inv_metric.min() < 1.2

    def test_deterministic(self):
        """Test that the same seed gives bit-identical draws."""
        config = NutsConfig(n_chains=2, n_warmup=50, n_iter=50, seed=7)
        target = GaussianTarget([0.0, 1.0], [1.0, 2.0])
        a = nuts_sample(target, config)
        b = nuts_sample(target, config.model_copy(update={"n_workers": 1}))
        assert np.array_equal(a.samples, b.samples)
        assert np.array_equal(a.lp, b.lp)

    def test_chains_differ(self):
        """Test that chains use separate streams."""
        config = NutsConfig(n_chains=2, n_warmup=20, n_iter=20, seed=7)
        draws = nuts_sample(GaussianTarget([0.0], [1.0]), config)
        assert not np.array_equal(draws.samples[0], draws.samples[1])

    def test_thinning_and_pointwise(self):
        """Test kept draws and pointwise values per draw."""
        config = NutsConfig(n_chains=2, n_warmup=20, n_iter=10, thin=3, seed=1)
        draws = nuts_sample(
            GaussianTarget([0.0], [1.0]),
            config,
            pointwise=lambda z: np.array([z[0], 1.0]),
        )
        assert draws.samples.shape == (2, 3, 1)
        assert draws.pointwise.shape == (2, 3, 2)
        assert np.array_equal(draws.pointwise[:, :, 0], draws.samples[:, :, 0])
        assert draws.flat_pointwise().shape == (6, 2)
        assert len(draws.telemetry) == 2

    def test_initialization_failure(self):
        """Test that a target without finite points is fatal."""
        config = NutsConfig(n_chains=1, n_warmup=5, n_iter=5, max_init_tries=3)
        with pytest.raises(InitializationError, match="3 attempts"):
            nuts_sample(NowhereTarget(2), config)
