"""
Poisson autoregressive space-time model.

For area ``l`` and week ``t`` the count is Poisson with rate

    lambda = (sum_i w_i * y[l, t - i] * r + b) * d

where ``r = exp(x' beta + phi)`` is the growth rate of detected cases,
``b = off * exp(v' eta + psi)`` the baseline and ``d`` the depletion factor.
``phi`` and ``psi`` are CAR-AR fields built from standardized slices.

:class:`ModelData` binds a graph, a panel, the design matrices and a
:class:`~poiar.config.ModelConfig`; everything that does not depend on the
parameters (lag tensor, depletion matrix, active design columns, layout) is
computed once there. :func:`log_posterior_grad` is the sampler target.
"""

import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple, Optional, Sequence

import numpy as np
from scipy.signal import lfilter
from scipy.special import gammaln, xlogy
from scipy.stats import norm

from poiar.car import (
    CarParams,
    car_ar_logpdf,
    log_det_q,
    log_det_q_grad,
    noncentered,
    precision_matvec,
    quad_form,
)
from poiar.config import DepletionMode, ModelConfig
from poiar.errors import DataValidationError, PoiarError
from poiar.graph import AreaGraph
from poiar.parameters import Layout, ParameterSet, stick_breaking_vjp, transform

logger = logging.getLogger(__name__)

OFFSET_PER = 10_000.0


@dataclass(frozen=True, eq=False)
class CountPanel:
    """
    Observed weekly counts.

    Attributes:
        counts: ``(L, T)`` nonnegative integer counts
        population: Population of each area, positive
        pre_counts: ``(L, P)`` counts of the P weeks preceding the panel, in
            chronological order (last column is the week just before t = 0)
        offset: Baseline offset per area; defaults to ``population / 10000``
        in_sample: ``(L, T)`` mask of cells used for fitting; defaults to all
        area_ids: External area identifiers in index order
    """

    counts: np.ndarray
    population: np.ndarray
    pre_counts: Optional[np.ndarray] = None
    offset: Optional[np.ndarray] = None
    in_sample: Optional[np.ndarray] = None
    area_ids: Optional[tuple] = field(default=None, repr=False)

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.ndim != 2:
            raise DataValidationError(f"counts must be L x T, got shape {counts.shape}")
        if not np.all(np.isfinite(counts)) or np.any(counts != np.round(counts)):
            raise DataValidationError("counts must be integers")
        if np.any(counts < 0):
            cell = tuple(int(v) for v in np.argwhere(counts < 0)[0])
            raise DataValidationError("Negative count", location=cell)
        n_areas, n_weeks = counts.shape

        population = np.array(self.population, dtype=float)
        if population.shape != (n_areas,) or np.any(~(population > 0)):
            raise DataValidationError("population must be positive, one per area")

        pre = self.pre_counts
        pre = np.zeros((n_areas, 0)) if pre is None else np.asarray(pre)
        if pre.ndim != 2 or pre.shape[0] != n_areas:
            raise DataValidationError(f"pre_counts must be L x P, got {pre.shape}")
        if np.any(pre < 0) or np.any(pre != np.round(pre)):
            raise DataValidationError("pre_counts must be nonnegative integers")

        offset = self.offset
        offset = population / OFFSET_PER if offset is None else np.array(offset, float)
        if offset.shape != (n_areas,) or np.any(~(offset > 0)):
            raise DataValidationError("offset must be positive, one per area")

        mask = self.in_sample
        mask = np.ones((n_areas, n_weeks), bool) if mask is None else np.asarray(mask)
        if mask.shape != counts.shape:
            raise DataValidationError(
                f"in_sample shape {mask.shape} does not match counts {counts.shape}"
            )

        if self.area_ids is not None and len(self.area_ids) != n_areas:
            raise DataValidationError("area_ids must name every area")

        for name, value in (
            ("counts", counts.astype(np.int64)),
            ("population", population),
            ("pre_counts", pre.astype(np.int64)),
            ("offset", offset),
            ("in_sample", mask.astype(bool)),
        ):
            value.setflags(write=False)
            object.__setattr__(self, name, value)

    @property
    def n_areas(self) -> int:
        return self.counts.shape[0]

    @property
    def n_weeks(self) -> int:
        return self.counts.shape[1]

    @property
    def n_pre(self) -> int:
        return self.pre_counts.shape[1]

    @property
    def n_cells(self) -> int:
        return self.counts.size

    @cached_property
    def history(self) -> np.ndarray:
        """Pre-period and observed counts side by side, ``(L, P + T)``."""
        return np.concatenate([self.pre_counts, self.counts], axis=1)

    def with_mask(self, in_sample: np.ndarray) -> "CountPanel":
        """Copy of the panel with another in-sample mask."""
        return CountPanel(
            counts=self.counts,
            population=self.population,
            pre_counts=self.pre_counts,
            offset=self.offset,
            in_sample=in_sample,
            area_ids=self.area_ids,
        )

    def permute(self, perm: Sequence[int]) -> "CountPanel":
        """Relabel areas so that old area ``i`` becomes ``perm[i]``."""
        order = np.argsort(np.asarray(perm))
        return CountPanel(
            counts=self.counts[order],
            population=self.population[order],
            pre_counts=self.pre_counts[order],
            offset=self.offset[order],
            in_sample=self.in_sample[order],
            area_ids=None if self.area_ids is None else tuple(
                self.area_ids[i] for i in order
            ),
        )


@dataclass(frozen=True, eq=False)
class DesignMatrices:
    """
    Covariates of the growth rate (X) and of the baseline (V).

    Both are ``(L, T, p)`` arrays whose first column is the intercept.
    """

    x: np.ndarray
    v: np.ndarray
    x_names: tuple[str, ...] = ()
    v_names: tuple[str, ...] = ()

    def __post_init__(self):
        for label in ("x", "v"):
            design = np.array(getattr(self, label), dtype=float)
            if design.ndim != 3 or design.shape[2] < 1:
                raise DataValidationError(f"{label} must be L x T x p")
            if not np.all(np.isfinite(design)):
                raise DataValidationError(f"{label} has non-finite entries")
            if not np.all(design[:, :, 0] == 1.0):
                raise DataValidationError(f"First column of {label} must be all ones")
            names = getattr(self, f"{label}_names")
            if not names:
                names = ("intercept",) + tuple(
                    f"{label}{i}" for i in range(1, design.shape[2])
                )
            elif len(names) != design.shape[2]:
                raise DataValidationError(f"{label}_names does not match its columns")
            design.setflags(write=False)
            object.__setattr__(self, label, design)
            object.__setattr__(self, f"{label}_names", tuple(names))
        if self.x.shape[:2] != self.v.shape[:2]:
            raise DataValidationError("x and v cover different panels")

    @classmethod
    def intercept_only(cls, n_areas: int, n_weeks: int) -> "DesignMatrices":
        ones = np.ones((n_areas, n_weeks, 1))
        return cls(x=ones, v=ones.copy())

    def permute(self, perm: Sequence[int]) -> "DesignMatrices":
        order = np.argsort(np.asarray(perm))
        return DesignMatrices(
            x=self.x[order], v=self.v[order], x_names=self.x_names, v_names=self.v_names
        )


class RateComponents(NamedTuple):
    """Per-cell pieces of the Poisson rate, each ``(L, T)``."""

    lag: np.ndarray
    growth: np.ndarray
    baseline: np.ndarray
    depletion: np.ndarray
    rate: np.ndarray


def _window_sums(panel: CountPanel, window: Optional[int]) -> np.ndarray:
    cumulative = np.concatenate(
        [np.zeros((panel.n_areas, 1)), np.cumsum(panel.history, axis=1)], axis=1
    )
    ends = panel.n_pre + np.arange(panel.n_weeks)
    if window is None:
        starts = np.zeros_like(ends)
    else:
        starts = np.maximum(ends - window, 0)
    return cumulative[:, ends] - cumulative[:, starts]


def depletion_matrix(panel: CountPanel, config: ModelConfig) -> np.ndarray:
    """Depletion factor of every cell, ``(L, T)``."""
    share = _window_sums(panel, config.immunity_window) / panel.population[:, None]
    if config.depletion_mode is DepletionMode.LITERAL:
        return share
    return np.clip(1.0 - share, config.depletion_floor, 1.0)


def depletion(panel: CountPanel, config: ModelConfig, area: int, week: int) -> float:
    """
    Depletion factor at one cell.

    The window covers the ``immunity_window`` weeks before ``week`` (all
    available history when unset), reaching into ``pre_counts`` as needed.

    Returns:
        ``clamp(1 - sum/pop, floor, 1)`` in susceptible mode, ``sum/pop`` in
        literal mode
    """
    position = panel.n_pre + week
    start = 0 if config.immunity_window is None else position - config.immunity_window
    total = float(np.sum(panel.history[area, max(start, 0) : position]))
    share = total / panel.population[area]
    if config.depletion_mode is DepletionMode.LITERAL:
        return share
    return min(max(1.0 - share, config.depletion_floor), 1.0)


def _check_simplex(w: np.ndarray) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if abs(w.sum() - 1.0) > 1e-9 or np.any(w < 0):
        raise DataValidationError("Lag weights must form a simplex", location=w)
    return w


def weighted_lag(panel: CountPanel, w: np.ndarray, area: int, week: int) -> float:
    """Convex combination ``sum_i w_i * y[area, week - i]`` of past counts."""
    w = _check_simplex(w)
    position = panel.n_pre + week
    if position - len(w) < 0:
        raise DataValidationError(
            f"Not enough history for {len(w)} lags", location=(area, week)
        )
    lags = panel.history[area, position - len(w) : position][::-1]
    return float(np.dot(w, lags))


def _field_value(params: ParameterSet, name: str, area: int, week: int) -> float:
    theta = params.theta(name)
    if theta is None:
        return 0.0
    return float(noncentered(params.star(name), theta)[area, week])


def rate(
    panel: CountPanel,
    designs: DesignMatrices,
    params: ParameterSet,
    config: ModelConfig,
    area: int,
    week: int,
) -> float:
    """
    Poisson rate at one cell.

    Only the leading design columns matching the coefficient lengths are
    used, so intercept-only parameters work with full designs.
    """
    x = designs.x[area, week, : len(params.beta)]
    v = designs.v[area, week, : len(params.eta)]
    growth = np.exp(x @ params.beta + _field_value(params, "phi", area, week))
    baseline = panel.offset[area] * np.exp(
        v @ params.eta + _field_value(params, "psi", area, week)
    )
    lag = weighted_lag(panel, params.w, area, week)
    return float((lag * growth + baseline) * depletion(panel, config, area, week))


@dataclass(frozen=True, eq=False)
class ModelData:
    """
    Immutable bundle of everything the log posterior needs besides parameters.

    Attributes:
        graph: Adjacency of the areas
        panel: Observed counts
        designs: Covariates; variant e keeps only their intercept columns
        config: Model settings
    """

    graph: AreaGraph
    panel: CountPanel
    designs: DesignMatrices
    config: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        panel = self.panel
        if self.graph.n_areas != panel.n_areas:
            raise DataValidationError(
                f"Graph has {self.graph.n_areas} areas, panel has {panel.n_areas}"
            )
        if self.designs.x.shape[:2] != panel.counts.shape:
            raise DataValidationError("Design matrices do not match the panel")
        if panel.n_pre < self.config.tau:
            raise DataValidationError(
                f"tau={self.config.tau} needs {self.config.tau} pre-period weeks, "
                f"panel has {panel.n_pre}"
            )

    @cached_property
    def x(self) -> np.ndarray:
        if self.config.variant.uses_covariates:
            return self.designs.x
        return self.designs.x[:, :, :1]

    @cached_property
    def v(self) -> np.ndarray:
        if self.config.variant.uses_covariates:
            return self.designs.v
        return self.designs.v[:, :, :1]

    @cached_property
    def lags(self) -> np.ndarray:
        """``(tau, L, T)`` lagged counts; ``lags[i - 1]`` is lag i."""
        panel = self.panel
        positions = panel.n_pre + np.arange(panel.n_weeks)
        history = panel.history.astype(float)
        return np.stack(
            [history[:, positions - i] for i in range(1, self.config.tau + 1)]
        )

    @cached_property
    def depletion(self) -> np.ndarray:
        return depletion_matrix(self.panel, self.config)

    @cached_property
    def log_factorial(self) -> np.ndarray:
        return gammaln(self.panel.counts + 1.0)

    @cached_property
    def layout(self) -> Layout:
        variant = self.config.variant
        return Layout(
            n_beta=self.x.shape[2],
            n_eta=self.v.shape[2],
            tau=self.config.tau,
            n_areas=self.panel.n_areas,
            n_weeks=self.panel.n_weeks,
            has_phi=variant.has_phi,
            has_psi=variant.has_psi,
        )

    @property
    def sum_to_zero_sd(self) -> float:
        """Standard deviation of the penalty on the sum of a field."""
        return float(np.sqrt(self.config.sum_to_zero_scale) * self.panel.n_cells)

    def with_panel(self, panel: CountPanel) -> "ModelData":
        return ModelData(self.graph, panel, self.designs, self.config)


def _field(params: ParameterSet, name: str) -> Optional[np.ndarray]:
    theta = params.theta(name)
    return None if theta is None else noncentered(params.star(name), theta)


def rate_components(data: ModelData, params: ParameterSet) -> RateComponents:
    """Vectorized rate pieces for every cell."""
    lag = np.tensordot(params.w, data.lags, axes=1)
    log_growth = data.x @ params.beta
    log_baseline = data.v @ params.eta + np.log(data.panel.offset)[:, None]
    phi = _field(params, "phi")
    psi = _field(params, "psi")
    if phi is not None:
        log_growth = log_growth + phi
    if psi is not None:
        log_baseline = log_baseline + psi
    growth = np.exp(log_growth)
    baseline = np.exp(log_baseline)
    return RateComponents(
        lag=lag,
        growth=growth,
        baseline=baseline,
        depletion=data.depletion,
        rate=(lag * growth + baseline) * data.depletion,
    )


def rate_matrix(data: ModelData, params: ParameterSet) -> np.ndarray:
    """``(L, T)`` Poisson rates."""
    return rate_components(data, params).rate


def _resolve_mask(data: ModelData, mask: Optional[np.ndarray]) -> np.ndarray:
    if mask is None:
        return data.panel.in_sample
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != data.panel.counts.shape:
        raise DataValidationError(f"Mask shape {mask.shape} does not match the panel")
    return mask


def pointwise_log_likelihood(
    data: ModelData, params: ParameterSet, mask: Optional[np.ndarray] = None
) -> np.ndarray:
    """
    Poisson log-pmf of the selected cells.

    Args:
        data: Model bundle
        params: Constrained parameters
        mask: ``(L, T)`` selector; defaults to the panel's in-sample mask

    Returns:
        One value per selected cell, in row-major cell order
    """
    mask = _resolve_mask(data, mask)
    lam = rate_matrix(data, params)[mask]
    y = data.panel.counts[mask]
    with np.errstate(divide="ignore", invalid="ignore"):
        return xlogy(y, lam) - lam - data.log_factorial[mask]


def log_likelihood(
    data: ModelData, params: ParameterSet, mask: Optional[np.ndarray] = None
) -> tuple[float, np.ndarray]:
    """
    Poisson log-likelihood of the selected cells.

    Returns:
        The total and the pointwise values it sums; a zero rate at a positive
        count gives a total of ``-inf``
    """
    pointwise = pointwise_log_likelihood(data, params, mask)
    return float(np.sum(pointwise)), pointwise


def _half_normal_logpdf(x: float, scale: float) -> float:
    return float(np.log(2.0) + norm.logpdf(x, 0.0, scale))


def _coefficient_prior_means(size: int, first: float) -> np.ndarray:
    means = np.zeros(size)
    means[0] = first
    return means


def _coefficient_prior_sds(size: int, first: float, rest: float) -> np.ndarray:
    sds = np.full(size, rest)
    sds[0] = first
    return sds


def _scale_prior(config: ModelConfig, name: str) -> float:
    priors = config.priors
    return priors.sigma_phi_scale if name == "phi" else priors.sigma_psi_scale


def log_prior(
    params: ParameterSet,
    config: ModelConfig,
    graph: Optional[AreaGraph] = None,
    sum_to_zero_sd: Optional[float] = None,
) -> float:
    """
    Log prior density in constrained space.

    Terms: normal coefficients, a Dirichlet on ``w``, and for every active
    field uniform ``alpha`` and ``rho``, a half-normal ``sigma``, independent
    ``N(0, Q(alpha)^-1)`` standardized slices and the soft sum-to-zero
    penalty on the transformed field.

    Args:
        params: Constrained parameters
        config: Model settings with the prior hyperparameters
        graph: Adjacency; required when a random effect is active
        sum_to_zero_sd: Standard deviation of the sum penalty; defaults to
            ``sqrt(sum_to_zero_scale) * L * T``

    Returns:
        The log prior
    """
    priors = config.priors
    beta = np.asarray(params.beta, dtype=float)
    eta = np.asarray(params.eta, dtype=float)
    lp = float(np.sum(norm.logpdf(
        beta,
        _coefficient_prior_means(len(beta), priors.beta0_mean),
        _coefficient_prior_sds(len(beta), priors.beta0_sd, priors.beta_sd),
    )))
    lp += float(np.sum(norm.logpdf(
        eta, _coefficient_prior_means(len(eta), priors.eta_mean), priors.eta_sd
    )))

    conc = priors.dirichlet_concentration
    w = np.asarray(params.w, dtype=float)
    k = len(w)
    lp += float(
        gammaln(conc * k) - k * gammaln(conc) + (conc - 1.0) * np.sum(np.log(w))
    )

    for name in ("phi", "psi"):
        theta = params.theta(name)
        if theta is None:
            continue
        if graph is None:
            raise DataValidationError(f"A graph is needed for the {name} prior")
        star = params.star(name)
        lp += _half_normal_logpdf(theta.sigma, _scale_prior(config, name))
        lp += car_ar_logpdf(
            graph, graph.spectrum, star, CarParams(theta.alpha, 0.0, 1.0)
        )
        sd = sum_to_zero_sd
        if sd is None:
            sd = float(np.sqrt(config.sum_to_zero_scale) * star.size)
        lp += float(norm.logpdf(np.sum(noncentered(star, theta)), 0.0, sd))
    return lp


def _log_posterior_grad(data: ModelData, z: np.ndarray) -> tuple[float, np.ndarray]:
    layout = data.layout
    config = data.config
    priors = config.priors
    params, log_jac = transform(z, layout)
    panel = data.panel
    grad = np.zeros(layout.dim)

    comps = rate_components(data, params)
    mask = panel.in_sample
    y = panel.counts
    lam = comps.rate
    loglik = np.sum((xlogy(y, lam) - lam - data.log_factorial)[mask])
    # d loglik / d lambda, zero outside the mask
    ratio = np.divide(y, lam, out=np.zeros_like(lam), where=y > 0)
    g = np.where(mask, ratio - 1.0, 0.0)
    g_growth = g * comps.lag * comps.growth * comps.depletion
    g_baseline = g * comps.baseline * comps.depletion

    beta, eta = params.beta, params.eta
    beta_means = _coefficient_prior_means(len(beta), priors.beta0_mean)
    beta_sds = _coefficient_prior_sds(len(beta), priors.beta0_sd, priors.beta_sd)
    eta_means = _coefficient_prior_means(len(eta), priors.eta_mean)
    lp = loglik + log_jac
    lp += np.sum(norm.logpdf(beta, beta_means, beta_sds))
    lp += np.sum(norm.logpdf(eta, eta_means, priors.eta_sd))
    grad[layout["beta"]] = (
        np.einsum("lt,ltk->k", g_growth, data.x) - (beta - beta_means) / beta_sds**2
    )
    grad[layout["eta"]] = np.einsum("lt,ltk->k", g_baseline, data.v) - (
        eta - eta_means
    ) / priors.eta_sd**2

    conc = priors.dirichlet_concentration
    w = params.w
    lp += gammaln(conc * len(w)) - len(w) * gammaln(conc)
    lp += (conc - 1.0) * np.sum(np.log(w))
    grad_w = np.einsum("lt,ilt->i", g * comps.growth * comps.depletion, data.lags)
    grad_w += (conc - 1.0) / w
    grad[layout["w_raw"]] = stick_breaking_vjp(z[layout["w_raw"]], grad_w)

    sum_sd = data.sum_to_zero_sd
    spectrum = data.graph.spectrum
    n_weeks = panel.n_weeks
    for name, g_field in (("phi", g_growth), ("psi", g_baseline)):
        theta = params.theta(name)
        if theta is None:
            continue
        star = params.star(name)
        values = noncentered(star, theta)
        scale = _scale_prior(config, name)
        alpha, rho, sigma = theta.alpha, theta.rho, theta.sigma

        total = np.sum(values)
        lp += norm.logpdf(total, 0.0, sum_sd)
        lp += _half_normal_logpdf(sigma, scale)
        quads = quad_form(data.graph, alpha, star)
        log_norm = 0.5 * log_det_q(spectrum, alpha)
        log_norm -= 0.5 * panel.n_areas * np.log(2.0 * np.pi)
        lp += n_weeks * log_norm - 0.5 * np.sum(quads)

        # adjoint of phi_t = rho * phi_{t-1} + sigma * star_t
        d_values = g_field - total / sum_sd**2
        adjoint = lfilter([1.0], [1.0, -rho], d_values[:, ::-1], axis=1)[:, ::-1]
        d_star = sigma * adjoint - precision_matvec(data.graph, alpha, star)
        d_sigma = np.sum(adjoint * star) - sigma / scale**2
        d_rho = np.sum(adjoint[:, 1:] * values[:, :-1])
        edges = data.graph.edges
        diff = star[edges[:, 0]] - star[edges[:, 1]]
        d_alpha = 0.5 * n_weeks * log_det_q_grad(spectrum, alpha) - 0.5 * (
            np.sum(diff**2) - np.sum(star**2)
        )

        grad[layout[f"alpha_{name}"]] = (
            d_alpha * alpha * (1.0 - alpha) + 1.0 - 2.0 * alpha
        )
        grad[layout[f"rho_{name}"]] = d_rho * rho * (1.0 - rho) + 1.0 - 2.0 * rho
        grad[layout[f"sigma_{name}"]] = d_sigma * sigma + 1.0
        grad[layout[f"{name}_star"]] = d_star.ravel()

    return float(lp), grad


def log_posterior_grad(z: np.ndarray, data: ModelData) -> tuple[float, np.ndarray]:
    """
    Unnormalized log posterior in unconstrained space and its gradient.

    ``lp = loglik(in-sample) + log_prior + log_jacobian``. The gradient is
    analytic; it backpropagates through the rate, the AR(1) recursion of the
    non-centered fields and the constraint transforms.

    Args:
        z: Flat unconstrained vector of length ``data.layout.dim``
        data: Model bundle

    Returns:
        ``(lp, grad)``; ``(-inf, zeros)`` whenever the value or the gradient
        is not finite
    """
    z = np.asarray(z, dtype=float)
    if z.shape != (data.layout.dim,):
        raise DataValidationError(
            f"Expected a vector of length {data.layout.dim}, got shape {z.shape}"
        )
    sentinel = (-np.inf, np.zeros(data.layout.dim))
    if not np.all(np.isfinite(z)):
        return sentinel
    try:
        with np.errstate(all="ignore"):
            lp, grad = _log_posterior_grad(data, z)
    except PoiarError as e:
        logger.debug("Rejected point: %s", e)
        return sentinel
    if not np.isfinite(lp) or not np.all(np.isfinite(grad)):
        return sentinel
    return lp, grad


def log_posterior(z: np.ndarray, data: ModelData) -> float:
    """Value of :func:`log_posterior_grad` alone."""
    return log_posterior_grad(z, data)[0]


def epidemic_proportion(data: ModelData, params: ParameterSet) -> np.ndarray:
    """
    Share of each cell's expected cases explained by the autoregressive term.

    Returns:
        ``(L, T)`` values ``lag * r / (lag * r + b)`` in ``[0, 1)``
    """
    comps = rate_components(data, params)
    epidemic = comps.lag * comps.growth
    return epidemic / (epidemic + comps.baseline)


def standardize_covariates(
    design: np.ndarray,
    per_area: bool,
    names: Optional[Sequence[str]] = None,
    columns: Optional[Sequence[str]] = None,
) -> np.ndarray:
    """
    Center and scale covariate columns.

    Args:
        design: ``(L, T, p)`` covariates
        per_area: Standardize within each area's time series instead of over
            all cells
        names: Column names; a column named ``intercept`` is never touched
        columns: Names of the columns to standardize; defaults to every
            column except the intercept

    Returns:
        A standardized copy (population standard deviation)

    Raises:
        DataValidationError: If a targeted column has zero variance
    """
    design = np.array(design, dtype=float)
    if design.ndim != 3:
        raise DataValidationError(f"design must be L x T x p, got {design.shape}")
    if names is None:
        names = [f"column{i}" for i in range(design.shape[2])]
    names = list(names)
    if len(names) != design.shape[2]:
        raise DataValidationError("names do not match the design columns")
    targets = [n for n in names if n != "intercept"] if columns is None else columns

    axis = 1 if per_area else (0, 1)
    for name in targets:
        if name not in names:
            raise DataValidationError("Unknown covariate", location=name)
        if name == "intercept":
            continue
        k = names.index(name)
        values = design[:, :, k]
        mean = values.mean(axis=axis, keepdims=True)
        sd = values.std(axis=axis, keepdims=True)
        if np.any(sd <= 1e-12 * (1.0 + np.abs(mean))):
            raise DataValidationError("Zero-variance covariate", location=name)
        design[:, :, k] = (values - mean) / sd
    return design
