"""Tests for the Poisson autoregressive model."""

import numpy as np
import pytest
from scipy.special import gammaln
from scipy.stats import norm, poisson

from poiar.car import CarParams, car_ar_logpdf, noncentered
from poiar.config import DepletionMode, ModelConfig, Variant
from poiar.errors import DataValidationError
from poiar.graph import lattice_graph
from poiar.model import (
    CountPanel,
    DesignMatrices,
    ModelData,
    depletion,
    depletion_matrix,
    epidemic_proportion,
    log_likelihood,
    log_posterior,
    log_posterior_grad,
    log_prior,
    pointwise_log_likelihood,
    rate,
    rate_components,
    rate_matrix,
    standardize_covariates,
    weighted_lag,
)
from poiar.parameters import ParameterSet, transform, untransform


def make_data(variant="d", rows=2, cols=2, n_weeks=3, tau=3, seed=0, n_x=2, n_v=2):
    rng = np.random.default_rng(seed)
    graph = lattice_graph(rows, cols)
    n_areas = graph.n_areas
    panel = CountPanel(
        counts=rng.poisson(20, size=(n_areas, n_weeks)),
        population=np.full(n_areas, 50_000.0),
        pre_counts=rng.poisson(20, size=(n_areas, tau)),
    )
    ones = np.ones((n_areas, n_weeks, 1))
    designs = DesignMatrices(
        x=np.concatenate([ones, rng.normal(size=(n_areas, n_weeks, n_x - 1))], 2),
        v=np.concatenate([ones, rng.normal(size=(n_areas, n_weeks, n_v - 1))], 2),
    )
    return ModelData(graph, panel, designs, ModelConfig(variant=variant, tau=tau))


def single_cell_panel(pre_counts, population=1e12, count=0):
    return CountPanel(
        counts=np.array([[count]]),
        population=np.array([population]),
        pre_counts=np.array([pre_counts]),
        offset=np.array([1.0]),
    )


def plain_params(tau, beta0=0.0):
    return ParameterSet(
        beta=np.array([beta0]), eta=np.zeros(1), w=np.full(tau, 1.0 / tau)
    )


class TestCountPanel:
    """Test panel validation."""

    def test_negative_count(self):
        """Test that a negative count is located."""
        with pytest.raises(DataValidationError, match=r"Negative count.*\(0, 1\)"):
            CountPanel(counts=np.array([[1, -1]]), population=np.array([10.0]))

    def test_population_positive(self):
        """Test that populations must be positive."""
        with pytest.raises(DataValidationError, match="population"):
            CountPanel(counts=np.zeros((1, 2)), population=np.array([0.0]))

    def test_default_offset(self):
        """Test the baseline offset of population / 10000."""
        panel = CountPanel(counts=np.zeros((1, 2)), population=np.array([20_000.0]))
        assert panel.offset.tolist() == [2.0]
        assert panel.in_sample.all()

    def test_history(self):
        """Test pre-period and panel counts side by side."""
        panel = CountPanel(
            counts=np.array([[4, 5]]),
            population=np.array([10.0]),
            pre_counts=np.array([[1, 2]]),
        )
        assert panel.history.tolist() == [[1, 2, 4, 5]]

    def test_too_little_history(self):
        """Test that tau needs as many pre-period weeks."""
        data = make_data()
        with pytest.raises(DataValidationError, match="pre-period"):
            ModelData(data.graph, data.panel, data.designs, ModelConfig(tau=4))


class TestDepletion:
    """Test the depletion factor."""

    def test_no_history(self):
        """Test d = 1 without prior cases."""
        panel = single_cell_panel([0, 0], population=100)
        assert depletion(panel, ModelConfig(), 0, 0) == 1.0

    def test_floor(self):
        """Test the clamp when cumulative cases reach the population."""
        panel = single_cell_panel([60, 40], population=100)
        assert depletion(panel, ModelConfig(), 0, 0) == pytest.approx(1e-6)

    def test_arithmetic(self):
        """Test pop = 10000 with a window sum of 500."""
        panel = single_cell_panel([200, 300], population=10_000)
        assert depletion(panel, ModelConfig(), 0, 0) == pytest.approx(0.95)

    def test_immunity_window(self):
        """Test that only the last weeks of the window count."""
        panel = single_cell_panel([5000, 200, 300], population=10_000)
        config = ModelConfig(immunity_window=2)
        assert depletion(panel, config, 0, 0) == pytest.approx(0.95)

    def test_literal(self):
        """Test the literal mode without history."""
        panel = single_cell_panel([0, 0], population=100)
        config = ModelConfig(depletion_mode=DepletionMode.LITERAL)
        assert depletion(panel, config, 0, 0) == 0.0

    def test_matrix_matches_cells(self):
        """Test the vectorized matrix against the scalar function."""
        data = make_data(n_weeks=5)
        config = ModelConfig(immunity_window=3)
        matrix = depletion_matrix(data.panel, config)
        for area in range(4):
            for week in range(5):
                expected = depletion(data.panel, config, area, week)
                assert matrix[area, week] == pytest.approx(expected, rel=1e-12)


class TestWeightedLag:
    """Test the convex combination of past counts."""

    def test_single_lag(self):
        """Test tau = 1."""
        panel = single_cell_panel([3, 7])
        assert weighted_lag(panel, np.array([1.0]), 0, 0) == 7.0

    def test_three_lags(self):
        """Test w = (0.7, 0.2, 0.1) on lags (10, 20, 30)."""
        panel = single_cell_panel([30, 20, 10])
        assert weighted_lag(panel, np.array([0.7, 0.2, 0.1]), 0, 0) == pytest.approx(14)

    def test_zero_lags(self):
        """Test that zero history gives zero."""
        panel = single_cell_panel([0, 0, 0])
        assert weighted_lag(panel, np.array([0.7, 0.2, 0.1]), 0, 0) == 0.0

    def test_weights_must_be_simplex(self):
        """Test that weights are validated."""
        panel = single_cell_panel([1, 2])
        with pytest.raises(DataValidationError, match="simplex"):
            weighted_lag(panel, np.array([0.5, 0.6]), 0, 0)


class TestRate:
    """Test the Poisson rate."""

    def setup_method(self):
        """Set up test fixtures."""
        self.panel = single_cell_panel([30, 20, 10])
        self.designs = DesignMatrices.intercept_only(1, 1)
        self.config = ModelConfig(variant=Variant.A, tau=3)

    def test_unit_links(self):
        """Test lag 14 plus a unit baseline."""
        params = ParameterSet(
            beta=np.zeros(1), eta=np.zeros(1), w=np.array([0.7, 0.2, 0.1])
        )
        value = rate(self.panel, self.designs, params, self.config, 0, 0)
        assert value == pytest.approx(15.0, rel=1e-9)

    def test_growth_rate(self):
        """Test the growth rate of an intercept of -0.55."""
        data = ModelData(lattice_graph(1, 1), self.panel, self.designs, self.config)
        comps = rate_components(data, plain_params(3, beta0=-0.55))
        assert comps.growth[0, 0] == pytest.approx(0.577, abs=1e-3)

    def test_literal_zero_rate(self):
        """Test a zero rate without history in literal mode."""
        panel = single_cell_panel([0, 0, 0], population=100)
        config = ModelConfig(
            variant=Variant.A, tau=3, depletion_mode=DepletionMode.LITERAL
        )
        data = ModelData(lattice_graph(1, 1), panel, self.designs, config)
        params = plain_params(3)
        assert rate_matrix(data, params)[0, 0] == 0.0
        assert log_likelihood(data, params)[0] == 0.0
        positive = ModelData(
            data.graph, single_cell_panel([0, 0, 0], 100, count=2), self.designs, config
        )
        assert log_likelihood(positive, params)[0] == -np.inf

    def test_scalar_and_matrix_agree(self):
        """Test the scalar rate against the vectorized rate."""
        data = make_data()
        z = np.random.default_rng(1).normal(scale=0.3, size=data.layout.dim)
        params, _ = transform(z, data.layout)
        matrix = rate_matrix(data, params)
        for area in range(4):
            for week in range(3):
                value = rate(data.panel, data.designs, params, data.config, area, week)
                assert matrix[area, week] == pytest.approx(value, rel=1e-12)

    def test_positive_in_susceptible_mode(self):
        """Test that rates stay positive over random parameter draws."""
        data = make_data(n_weeks=6)
        rng = np.random.default_rng(2)
        for _ in range(20):
            params, _ = transform(rng.normal(size=data.layout.dim), data.layout)
            assert np.all(rate_matrix(data, params) > 0)

    def test_single_lag_model(self):
        """Test variant a with tau = 1 against a direct evaluation."""
        data = make_data(variant="a", rows=1, cols=3, n_weeks=5, tau=1)
        params = ParameterSet(
            beta=np.array([0.2, -0.1]), eta=np.array([-0.3, 0.4]), w=np.ones(1)
        )
        panel = data.panel
        previous = panel.history[:, :-1]
        d = depletion_matrix(panel, data.config)
        expected = (
            previous * np.exp(data.designs.x @ params.beta)
            + panel.offset[:, None] * np.exp(data.designs.v @ params.eta)
        ) * d
        assert np.allclose(rate_matrix(data, params), expected, rtol=1e-12, atol=0)


class TestLikelihood:
    """Test the Poisson likelihood."""

    def test_zero_count(self):
        """Test y = 0 at lambda = 15."""
        data = ModelData(
            lattice_graph(1, 1),
            single_cell_panel([30, 20, 10]),
            DesignMatrices.intercept_only(1, 1),
            ModelConfig(variant=Variant.A, tau=3),
        )
        params = ParameterSet(
            beta=np.zeros(1), eta=np.zeros(1), w=np.array([0.7, 0.2, 0.1])
        )
        assert pointwise_log_likelihood(data, params)[0] == pytest.approx(-15.0)

    def test_closed_form(self):
        """Test y = 3 at lambda = 3."""
        data = ModelData(
            lattice_graph(1, 1),
            single_cell_panel([2], count=3),
            DesignMatrices.intercept_only(1, 1),
            ModelConfig(variant=Variant.A, tau=1),
        )
        value = pointwise_log_likelihood(data, plain_params(1))[0]
        assert value == pytest.approx(3 * np.log(3) - 3 - np.log(6), abs=1e-9)

    def test_scalar_oracle(self):
        """Test against scipy's Poisson log-pmf cell by cell."""
        data = make_data(rows=2, cols=3, n_weeks=4)
        params, _ = transform(
            np.random.default_rng(4).normal(size=data.layout.dim), data.layout
        )
        lam = rate_matrix(data, params)
        expected = sum(
            poisson.logpmf(data.panel.counts[area, week], lam[area, week])
            for area in range(6)
            for week in range(4)
        )
        total, pointwise = log_likelihood(data, params)
        assert total == pytest.approx(expected, rel=1e-12, abs=1e-10)
        assert np.sum(pointwise) == pytest.approx(total, abs=1e-12)

    def test_mask_selects_cells(self):
        """Test that masked-out cells are left out."""
        data = make_data()
        mask = np.zeros((4, 3), bool)
        mask[1, 2] = True
        params, _ = transform(np.zeros(data.layout.dim), data.layout)
        pointwise = pointwise_log_likelihood(data, params, mask)
        assert pointwise.shape == (1,)
        full = pointwise_log_likelihood(data, params, np.ones((4, 3), bool))
        assert pointwise[0] == pytest.approx(full[5])


class TestPrior:
    """Test the log prior."""

    def test_origin_variant_a(self):
        """Test the normalizers at the transform midpoints."""
        data = make_data(variant="a")
        params, _ = transform(np.zeros(data.layout.dim), data.layout)
        expected = (
            norm.logpdf(0.0, -0.5, 1.0) + 3 * norm.logpdf(0.0) + np.log(2.0)
        )
        assert log_prior(params, data.config) == pytest.approx(expected)

    def test_flat_dirichlet(self):
        """Test that Dir(1) over three weights is constant."""
        config = ModelConfig(variant=Variant.A)
        values = [
            log_prior(
                ParameterSet(beta=np.zeros(1), eta=np.zeros(1), w=np.array(w)), config
            )
            for w in ([0.2, 0.3, 0.5], [0.9, 0.05, 0.05])
        ]
        assert values[0] == pytest.approx(values[1])
        normals = norm.logpdf(0.0, -0.5, 1.0) + norm.logpdf(0.0)
        assert values[0] - normals == pytest.approx(gammaln(3.0))

    def test_field_terms(self):
        """Test every term of a growth-rate field."""
        data = make_data(variant="b")
        star = np.random.default_rng(5).normal(size=(4, 3))
        theta = CarParams(0.4, 0.6, 0.1)
        params = ParameterSet(
            beta=np.zeros(2),
            eta=np.zeros(2),
            w=np.full(3, 1.0 / 3.0),
            theta_phi=theta,
            phi_star=star,
        )
        graph = data.graph
        sd = data.sum_to_zero_sd
        expected = (
            norm.logpdf(0.0, -0.5, 1.0)
            + 3 * norm.logpdf(0.0)
            + np.log(2.0)
            + np.log(2.0)
            + norm.logpdf(0.1, 0.0, 0.1)
            + car_ar_logpdf(graph, graph.spectrum, star, CarParams(0.4, 0.0, 1.0))
            + norm.logpdf(np.sum(noncentered(star, theta)), 0.0, sd)
        )
        value = log_prior(params, data.config, graph, sd)
        assert value == pytest.approx(expected, abs=1e-10)

    def test_field_needs_graph(self):
        """Test that a random effect needs the adjacency."""
        data = make_data(variant="c")
        params, _ = transform(np.zeros(data.layout.dim), data.layout)
        with pytest.raises(DataValidationError, match="graph"):
            log_prior(params, data.config)


class TestLogPosterior:
    """Test the sampler target."""

    @pytest.mark.parametrize("seed", range(5))
    def test_gradient_matches_finite_differences(self, seed):
        """Test the analytic gradient on a 2 x 2 lattice with T = 3."""
        data = make_data(variant="d", seed=seed)
        z = np.random.default_rng(seed).normal(scale=0.5, size=data.layout.dim)
        _, grad = log_posterior_grad(z, data)
        h = 1e-5
        numeric = np.empty(data.layout.dim)
        for k in range(data.layout.dim):
            step = np.zeros(data.layout.dim)
            step[k] = h
            upper = log_posterior(z + step, data)
            lower = log_posterior(z - step, data)
            numeric[k] = (upper - lower) / (2 * h)
        assert np.allclose(grad, numeric, rtol=1e-5, atol=1e-6)

    def test_sum_of_terms(self):
        """Test lp = loglik + log prior + log Jacobian."""
        data = make_data(variant="d", n_weeks=4)
        z = np.random.default_rng(6).normal(scale=0.5, size=data.layout.dim)
        params, log_jac = transform(z, data.layout)
        expected = (
            log_likelihood(data, params)[0]
            + log_prior(params, data.config, data.graph, data.sum_to_zero_sd)
            + log_jac
        )
        assert log_posterior(z, data) == pytest.approx(expected, abs=1e-9)

    def test_only_in_sample_cells(self):
        """Test that held-out counts do not enter the likelihood."""
        data = make_data()
        mask = np.ones((4, 3), bool)
        mask[0, -1] = False
        masked = data.with_panel(data.panel.with_mask(mask))
        counts = data.panel.counts.copy()
        counts[0, -1] += 7
        changed = masked.with_panel(
            CountPanel(
                counts=counts,
                population=data.panel.population,
                pre_counts=data.panel.pre_counts,
                in_sample=mask,
            )
        )
        z = np.random.default_rng(0).normal(scale=0.3, size=data.layout.dim)
        assert log_posterior(z, masked) == pytest.approx(log_posterior(z, changed))

    def test_permutation_invariance(self):
        """Test relabelling areas in the graph, panel, designs and fields."""
        data = make_data(rows=2, cols=3, n_weeks=4)
        perm = np.random.default_rng(7).permutation(6)
        moved = ModelData(
            data.graph.permute(perm),
            data.panel.permute(perm),
            data.designs.permute(perm),
            data.config,
        )
        z = np.random.default_rng(8).normal(scale=0.5, size=data.layout.dim)
        params, _ = transform(z, data.layout)
        stars = {}
        for name in ("phi", "psi"):
            star = np.empty_like(params.star(name))
            star[perm] = params.star(name)
            stars[f"{name}_star"] = star
        moved_params = ParameterSet(
            beta=params.beta,
            eta=params.eta,
            w=params.w,
            theta_phi=params.theta_phi,
            theta_psi=params.theta_psi,
            **stars,
        )
        z_moved = untransform(moved_params, moved.layout)
        assert log_posterior(z_moved, moved) == pytest.approx(
            log_posterior(z, data), abs=1e-9
        )

    def test_variant_e_ignores_covariates(self):
        """Test that non-intercept columns do not matter without covariates."""
        data = make_data(variant="e", n_x=3, n_v=2)
        rng = np.random.default_rng(9)
        x = np.array(data.designs.x)
        x[:, :, 1:] = rng.normal(size=x[:, :, 1:].shape)
        other = ModelData(
            data.graph, data.panel, DesignMatrices(x=x, v=data.designs.v), data.config
        )
        assert data.layout.n_beta == 1
        z = rng.normal(scale=0.5, size=data.layout.dim)
        assert log_posterior(z, other) == log_posterior(z, data)

    def test_sentinel(self):
        """Test the rejection sentinel for a non-finite point."""
        data = make_data()
        z = np.zeros(data.layout.dim)
        z[0] = np.inf
        lp, grad = log_posterior_grad(z, data)
        assert lp == -np.inf
        assert not grad.any()

    def test_overflow_is_rejected(self):
        """Test that an overflowing rate gives the sentinel."""
        data = make_data()
        z = np.zeros(data.layout.dim)
        z[data.layout["beta"]] = 1000.0
        assert log_posterior(z, data) == -np.inf

    def test_wrong_length(self):
        """Test that the vector length is checked."""
        with pytest.raises(DataValidationError):
            log_posterior_grad(np.zeros(2), make_data())


class TestEpidemicProportion:
    """Test the share of expected cases from the autoregressive term."""

    def setup_method(self):
        """Set up test fixtures."""
        self.designs = DesignMatrices.intercept_only(1, 1)
        self.config = ModelConfig(variant=Variant.A, tau=1)

    def test_balanced(self):
        """Test a lag term equal to the baseline."""
        data = ModelData(
            lattice_graph(1, 1), single_cell_panel([1]), self.designs, self.config
        )
        assert epidemic_proportion(data, plain_params(1))[0, 0] == pytest.approx(0.5)

    def test_no_history(self):
        """Test a zero lag."""
        data = ModelData(
            lattice_graph(1, 1), single_cell_panel([0]), self.designs, self.config
        )
        assert epidemic_proportion(data, plain_params(1))[0, 0] == 0.0

    def test_vanishing_baseline(self):
        """Test that the share tends to one as the baseline vanishes."""
        data = ModelData(
            lattice_graph(1, 1), single_cell_panel([5]), self.designs, self.config
        )
        params = ParameterSet(beta=np.zeros(1), eta=np.array([-30.0]), w=np.ones(1))
        assert epidemic_proportion(data, params)[0, 0] == pytest.approx(1.0)


class TestStandardizeCovariates:
    """Test covariate standardization."""

    def test_constant_in_time(self):
        """Test that a per-area constant column is rejected."""
        design = np.ones((2, 4, 2))
        design[1, :, 1] = 3.0
        with pytest.raises(DataValidationError, match="density"):
            standardize_covariates(
                design, per_area=True, names=["intercept", "density"]
            )

    def test_idempotent(self):
        """Test that a standardized column is unchanged."""
        design = np.ones((2, 2, 2))
        design[:, :, 1] = [[-1.0, 1.0], [1.0, -1.0]]
        out = standardize_covariates(design, per_area=False, names=["intercept", "x"])
        assert np.allclose(out, design, atol=1e-12)

    def test_per_area_moments(self):
        """Test that each area's series has mean zero and unit sd."""
        rng = np.random.default_rng(0)
        design = np.ones((2, 10, 2))
        design[:, :, 1] = rng.normal(5.0, 3.0, size=(2, 10)) + [[0.0], [10.0]]
        out = standardize_covariates(design, per_area=True, names=["intercept", "x"])
        assert np.allclose(out[:, :, 1].mean(axis=1), 0.0, atol=1e-12)
        assert np.allclose(out[:, :, 1].std(axis=1), 1.0)
        assert np.array_equal(out[:, :, 0], design[:, :, 0])

    def test_selected_columns(self):
        """Test that only the named columns change."""
        rng = np.random.default_rng(1)
        design = np.ones((3, 4, 3))
        design[:, :, 1:] = rng.normal(size=(3, 4, 2))
        out = standardize_covariates(
            design, per_area=False, names=["intercept", "a", "b"], columns=["b"]
        )
        assert np.array_equal(out[:, :, 1], design[:, :, 1])
        assert out[:, :, 2].mean() == pytest.approx(0.0, abs=1e-12)
