"""
Synthetic panels and the parameter recovery study.

Panels are generated from the full model (growth-rate and baseline fields,
covariates) by running the Poisson recursion forward week by week. The
recovery study repeats generate / hold out / fit over replicates and reports
how well the posterior recovers the truth.

Every replicate draws from its own streams:

* generation attempt ``a`` of replicate ``b``: ``(SIMULATION, b, a)``
* holdout mask: ``(HOLDOUT, b)``
* sampler seed: ``(REPLICATE, b)``
"""

import hashlib
import json
import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from poiar.car import CarParams, noncentered, sample_standardized_slices
from poiar.config import ModelConfig, NutsConfig, PriorConfig, Variant
from poiar.errors import ConvergenceWarning, DataValidationError, NumericDomainError
from poiar.fit import FitResult, field_draws, fit_model
from poiar.graph import AreaGraph, lattice_graph, read_edge_list
from poiar.model import (
    CountPanel,
    DesignMatrices,
    ModelData,
    depletion_matrix,
    standardize_covariates,
)
from poiar.parameters import ParameterSet
from poiar.streams import HOLDOUT, REPLICATE, RNG_ALGORITHM, SIMULATION, make_rng

logger = logging.getLogger(__name__)

EXCLUDE_RHAT = 1.1
WEIGHT_TOLERANCE = 0.05
N_TIERS = 4

DEFAULT_FIXED_EFFECTS = {
    "tier_2": math.log(5 / 6),
    "tier_3": math.log(2 / 3),
    "tier_4": math.log(1 / 2),
    "summer": math.log(2 / 5),
    "christmas": math.log(5 / 2),
}


class IndicatorWindow(BaseModel):
    """A 0/1 covariate switched on for weeks ``start <= t < end``."""

    model_config = ConfigDict(frozen=True)

    name: str
    start: int = Field(ge=0)
    end: int = Field(ge=1)

    @model_validator(mode="after")
    def _check_order(self) -> "IndicatorWindow":
        if self.end <= self.start:
            raise ValueError(f"Window {self.name} ends before it starts")
        return self


class SimSpec(BaseModel):
    """
    Settings of the data generator and of the recovery study.

    The graph is a ``lattice_rows x lattice_cols`` lattice unless
    ``edges_path`` names an edge-list file. True coefficients are drawn from
    the ``*_mean``/``*_sd`` normals, except the covariates named in
    ``fixed_effects``, which are set exactly. ``sigma_*_scale`` are the
    half-normal scales the true field scales are drawn from; the fitting
    priors live in :class:`~poiar.config.PriorConfig`.
    """

    model_config = ConfigDict(frozen=True)

    lattice_rows: int = Field(5, ge=1)
    lattice_cols: int = Field(5, ge=1)
    edges_path: Optional[str] = None

    n_weeks: int = Field(30, ge=1)
    tau: int = Field(3, ge=1)
    n_pre: Optional[int] = Field(None, ge=1)
    pre_intensity: float = Field(20.0, ge=0)
    population_median: float = Field(200_000.0, gt=0)
    population_sdlog: float = Field(0.5, ge=0)

    n_socio: int = Field(3, ge=0)
    tier_switch_prob: float = Field(0.1, ge=0, le=1)
    windows: Optional[tuple[IndicatorWindow, ...]] = None
    fixed_effects: dict[str, float] = Field(
        default_factory=lambda: dict(DEFAULT_FIXED_EFFECTS)
    )

    beta0_mean: float = -0.5
    beta0_sd: float = Field(1.0, gt=0)
    socio_sd: float = Field(0.1, gt=0)
    eta0_mean: float = 0.0
    eta0_sd: float = Field(1.0, gt=0)
    sigma_phi_scale: float = Field(0.1, gt=0)
    sigma_psi_scale: float = Field(0.5, gt=0)
    weights: tuple[float, ...] = (0.7, 0.2, 0.1)

    replicates: int = Field(1, ge=1)
    holdout: float = Field(0.2, ge=0, lt=1)
    seed: int = Field(0, ge=0)
    max_rate: float = Field(1e6, gt=0)
    max_redraws: int = Field(20, ge=0)
    n_workers: int = Field(1, ge=1)

    @field_validator("weights", mode="before")
    @classmethod
    def _split_weights(cls, value):
        if isinstance(value, str):
            return tuple(float(v) for v in value.split(",") if v.strip())
        return value

    @model_validator(mode="after")
    def _check_consistency(self) -> "SimSpec":
        if len(self.weights) != self.tau:
            raise ValueError(f"weights must have tau={self.tau} entries")
        if any(w <= 0 for w in self.weights) or abs(sum(self.weights) - 1.0) > 1e-9:
            raise ValueError("weights must be a positive simplex")
        if self.n_pre is not None and self.n_pre < self.tau:
            raise ValueError("n_pre must cover the tau lags")
        for window in self.windows or ():
            if window.end > self.n_weeks:
                raise ValueError(f"Window {window.name} runs past week {self.n_weeks}")
        return self

    @property
    def pre_weeks(self) -> int:
        return self.tau if self.n_pre is None else self.n_pre

    def indicator_windows(self) -> tuple[IndicatorWindow, ...]:
        """Configured windows, or a summer and a christmas window inside T."""
        if self.windows is not None:
            return self.windows
        t = self.n_weeks
        summer = t // 10
        christmas = (2 * t) // 3
        return (
            IndicatorWindow(name="summer", start=summer, end=summer + max(1, t // 5)),
            IndicatorWindow(
                name="christmas",
                start=christmas,
                end=min(t, christmas + max(1, t // 10)),
            ),
        )

    def graph(self) -> AreaGraph:
        if self.edges_path is not None:
            return read_edge_list(self.edges_path)
        return lattice_graph(self.lattice_rows, self.lattice_cols)

    def spec_hash(self) -> str:
        """SHA-256 of the canonical JSON form."""
        canonical = json.dumps(
            self.model_dump(mode="json"), sort_keys=True, separators=(",", ":")
        )
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _tier_paths(n_areas: int, n_weeks: int, switch_prob: float, rng) -> np.ndarray:
    tiers = np.empty((n_areas, n_weeks), dtype=int)
    current = rng.integers(1, 3, size=n_areas)
    for t in range(n_weeks):
        moves = rng.random(n_areas) < switch_prob
        steps = np.where(rng.random(n_areas) < 0.5, -1, 1)
        current = np.clip(current + moves * steps, 1, N_TIERS)
        tiers[:, t] = current
    return tiers


def synthetic_design(
    spec: SimSpec, n_areas: int, rng: np.random.Generator
) -> DesignMatrices:
    """
    Draw a growth-rate design.

    Columns: intercept, ``socio_1..n`` area-level covariates (standardized
    over all cells), ``tier_2..tier_4`` indicators of a per-area Markov
    chain over four restriction tiers, then one indicator per window. The
    baseline design holds the intercept only.
    """
    n_weeks = spec.n_weeks
    socio_names = [f"socio_{k}" for k in range(1, spec.n_socio + 1)]
    tier_names = [f"tier_{k}" for k in range(2, N_TIERS + 1)]
    windows = spec.indicator_windows()
    names = ["intercept"] + socio_names + tier_names + [w.name for w in windows]

    columns = [np.ones((n_areas, n_weeks))]
    socio = rng.standard_normal((n_areas, spec.n_socio))
    columns += [np.repeat(socio[:, [k]], n_weeks, axis=1) for k in range(spec.n_socio)]
    tiers = _tier_paths(n_areas, n_weeks, spec.tier_switch_prob, rng)
    columns += [(tiers == k).astype(float) for k in range(2, N_TIERS + 1)]
    for window in windows:
        indicator = np.zeros((n_areas, n_weeks))
        indicator[:, window.start : window.end] = 1.0
        columns.append(indicator)

    x = np.stack(columns, axis=2)
    if socio_names:
        x = standardize_covariates(x, per_area=False, names=names, columns=socio_names)
    v = np.ones((n_areas, n_weeks, 1))
    return DesignMatrices(x=x, v=v, x_names=tuple(names), v_names=("intercept",))


def _draw_field(scale: float, graph: AreaGraph, n_weeks: int, rng):
    theta = CarParams(
        alpha=float(rng.uniform()),
        rho=float(rng.uniform()),
        sigma=float(abs(rng.normal(0.0, scale))),
    )
    return theta, sample_standardized_slices(graph, theta.alpha, n_weeks, rng)


def draw_true_params(
    spec: SimSpec,
    graph: AreaGraph,
    rng: np.random.Generator,
    x_names: tuple[str, ...],
) -> ParameterSet:
    """
    Draw one set of true parameters of the full model.

    Args:
        spec: Generator settings
        graph: Area adjacency
        rng: Stream owned by the caller
        x_names: Growth-rate covariate names; the intercept and unnamed
            covariates are drawn, names in ``spec.fixed_effects`` are fixed

    Returns:
        Parameters with both fields; the baseline has an intercept only
    """
    beta = np.empty(len(x_names))
    for k, name in enumerate(x_names):
        if name == "intercept":
            beta[k] = rng.normal(spec.beta0_mean, spec.beta0_sd)
        elif name in spec.fixed_effects:
            beta[k] = spec.fixed_effects[name]
        else:
            beta[k] = rng.normal(0.0, spec.socio_sd)
    eta = np.array([rng.normal(spec.eta0_mean, spec.eta0_sd)])
    theta_phi, phi_star = _draw_field(spec.sigma_phi_scale, graph, spec.n_weeks, rng)
    theta_psi, psi_star = _draw_field(spec.sigma_psi_scale, graph, spec.n_weeks, rng)
    return ParameterSet(
        beta=beta,
        eta=eta,
        w=np.array(spec.weights, dtype=float),
        theta_phi=theta_phi,
        theta_psi=theta_psi,
        phi_star=phi_star,
        psi_star=psi_star,
    )


def _field_or_zero(params: ParameterSet, name: str, shape) -> np.ndarray:
    theta = params.theta(name)
    if theta is None:
        return np.zeros(shape)
    return noncentered(params.star(name), theta)


def gen_panel(
    spec: SimSpec,
    params: ParameterSet,
    graph: AreaGraph,
    rng: np.random.Generator,
    designs: Optional[DesignMatrices] = None,
    config: Optional[ModelConfig] = None,
    pre_counts: Optional[np.ndarray] = None,
) -> tuple[CountPanel, DesignMatrices]:
    """
    Generate counts by running the model forward in time.

    Week ``t`` draws ``y[:, t] ~ Poisson(lambda[:, t])`` where the lag and
    depletion terms use the counts generated so far.

    Args:
        spec: Generator settings
        params: True parameters; only the leading design columns matching
            ``beta`` and ``eta`` enter the rate
        graph: Area adjacency
        rng: Stream owned by the caller
        designs: Fixed designs; drawn with :func:`synthetic_design` when None
        config: Depletion settings; defaults to the susceptible mode with
            ``tau = spec.tau``
        pre_counts: ``(L, P)`` pre-period counts; drawn from
            ``Poisson(spec.pre_intensity)`` when None

    Returns:
        The panel (all cells in-sample) and the designs used

    Raises:
        NumericDomainError: If a rate is not finite or exceeds
            ``spec.max_rate``
    """
    n_areas, n_weeks = graph.n_areas, spec.n_weeks
    config = config or ModelConfig(variant=Variant.D, tau=spec.tau)
    if len(params.w) != config.tau:
        raise DataValidationError(
            f"Expected {config.tau} lag weights, got {len(params.w)}"
        )
    if designs is None:
        designs = synthetic_design(spec, n_areas, rng)
    if designs.x.shape[:2] != (n_areas, n_weeks):
        raise DataValidationError("Designs do not match the graph and n_weeks")

    log_spread = spec.population_sdlog * rng.standard_normal(n_areas)
    population = np.round(spec.population_median * np.exp(log_spread))
    population = np.maximum(population, 1.0)
    if pre_counts is None:
        pre_counts = rng.poisson(spec.pre_intensity, size=(n_areas, spec.pre_weeks))
    pre_counts = np.asarray(pre_counts, dtype=np.int64)
    n_pre = pre_counts.shape[1]
    if n_pre < config.tau:
        raise DataValidationError(
            f"tau={config.tau} needs {config.tau} pre-period weeks"
        )

    shape = (n_areas, n_weeks)
    log_growth = designs.x[:, :, : len(params.beta)] @ params.beta
    log_growth = log_growth + _field_or_zero(params, "phi", shape)
    log_baseline = designs.v[:, :, : len(params.eta)] @ params.eta
    log_baseline = log_baseline + _field_or_zero(params, "psi", shape)
    growth = np.exp(log_growth)

    counts = np.zeros(shape, dtype=np.int64)
    w = np.asarray(params.w, dtype=float)
    for t in range(n_weeks):
        panel = CountPanel(counts=counts, population=population, pre_counts=pre_counts)
        history = panel.history
        lag = history[:, n_pre + t - len(w) : n_pre + t][:, ::-1] @ w
        baseline = panel.offset * np.exp(log_baseline[:, t])
        lam = (lag * growth[:, t] + baseline) * depletion_matrix(panel, config)[:, t]
        if not np.all(np.isfinite(lam)) or np.any(lam > spec.max_rate):
            raise NumericDomainError(
                f"Rate overflow at week {t}: max {np.max(lam):.3g}"
            )
        counts[:, t] = rng.poisson(lam)

    panel = CountPanel(counts=counts, population=population, pre_counts=pre_counts)
    return panel, designs


def holdout_mask(
    n_areas: int, n_weeks: int, fraction: float, rng: np.random.Generator
) -> np.ndarray:
    """
    Random in-sample mask with exactly ``round(fraction * L * T)`` held-out cells.

    Returns:
        ``(L, T)`` boolean mask, True for in-sample cells
    """
    if not 0.0 <= fraction < 1.0:
        raise DataValidationError(
            "Holdout fraction must be in [0, 1)", location=fraction
        )
    n_cells = n_areas * n_weeks
    mask = np.ones(n_cells, dtype=bool)
    n_out = int(round(fraction * n_cells))
    mask[rng.choice(n_cells, size=n_out, replace=False)] = False
    return mask.reshape(n_areas, n_weeks)


@dataclass
class Replicate:
    """One simulated data set and the parameters that generated it."""

    index: int
    graph: AreaGraph
    panel: CountPanel
    designs: DesignMatrices
    truth: ParameterSet
    redraws: int = 0


def simulate_replicate(
    spec: SimSpec, graph: AreaGraph, index: int, config: Optional[ModelConfig] = None
) -> Replicate:
    """
    Generate replicate ``index`` with its holdout mask.

    Parameters and counts are redrawn on a rate overflow, up to
    ``spec.max_redraws`` times.

    Raises:
        NumericDomainError: If every attempt overflowed
    """
    for attempt in range(spec.max_redraws + 1):
        rng = make_rng(spec.seed, SIMULATION, index, attempt)
        designs = synthetic_design(spec, graph.n_areas, rng)
        truth = draw_true_params(spec, graph, rng, designs.x_names)
        try:
            panel, designs = gen_panel(spec, truth, graph, rng, designs, config)
        except NumericDomainError as e:
            logger.warning("Replicate %d, attempt %d redrawn: %s", index, attempt, e)
            continue
        holdout_rng = make_rng(spec.seed, HOLDOUT, index)
        mask = holdout_mask(graph.n_areas, spec.n_weeks, spec.holdout, holdout_rng)
        return Replicate(index, graph, panel.with_mask(mask), designs, truth, attempt)
    raise NumericDomainError(
        f"Replicate {index} overflowed in all {spec.max_redraws + 1} attempts"
    )


def recovery_model_config(
    spec: SimSpec, priors: Optional[PriorConfig] = None
) -> ModelConfig:
    """Full-model settings used to refit simulated panels."""
    return ModelConfig(variant=Variant.D, tau=spec.tau, priors=priors or PriorConfig())


@dataclass
class _ReplicateOutcome:
    index: int
    max_rhat: float
    excluded: bool
    redraws: int
    squared_errors: dict[str, float] = field(default_factory=dict)
    hits: dict[str, bool] = field(default_factory=dict)
    field_squared_errors: dict[str, float] = field(default_factory=dict)
    field_coverage: dict[str, float] = field(default_factory=dict)
    predictive: dict[str, float] = field(default_factory=dict)
    weights_recovered: bool = False


def _score_replicate(fit: FitResult, replicate: Replicate) -> _ReplicateOutcome:
    layout = fit.layout
    table = fit.summary.table.set_index("parameter")
    true_values = replicate.truth.flatten_constrained(layout)
    truth = dict(zip(layout.constrained_names, true_values))
    outcome = _ReplicateOutcome(
        replicate.index, fit.summary.max_rhat, False, replicate.redraws
    )

    for name, true in truth.items():
        if "_star[" in name:
            continue
        row = table.loc[name]
        outcome.squared_errors[name] = float((row["mean"] - true) ** 2)
        outcome.hits[name] = bool(row["q2.5"] <= true <= row["q97.5"])

    values = fit.constrained.reshape(-1, fit.constrained.shape[-1])
    for name in layout.fields:
        draws = field_draws(values, layout, name)
        true = noncentered(replicate.truth.star(name), replicate.truth.theta(name))
        lower, upper = np.quantile(draws, [0.025, 0.975], axis=0)
        error = draws.mean(axis=0) - true
        outcome.field_squared_errors[name] = float(np.mean(error**2))
        outcome.field_coverage[name] = float(np.mean((true >= lower) & (true <= upper)))

    scores = fit.scores
    for prefix, metrics in (("in", scores.in_sample), ("out", scores.out_of_sample)):
        if metrics is None:
            continue
        outcome.predictive[f"{prefix}_rmse_rate"] = metrics.rmse_rate
        outcome.predictive[f"{prefix}_rel_mse"] = metrics.rel_mse
        outcome.predictive[f"{prefix}_coverage"] = metrics.coverage

    w_names = [f"w[{i}]" for i in range(layout.tau)]
    w_error = np.abs(table.loc[w_names, "mean"].to_numpy() - replicate.truth.w)
    outcome.weights_recovered = bool(np.all(w_error <= WEIGHT_TOLERANCE))
    return outcome


@dataclass
class RecoveryReport:
    """
    Aggregated results of the recovery study over the kept replicates.

    Attributes:
        parameters: One row per scalar parameter with ``rmse``, ``coverage``
            (share of 95% intervals containing the truth) and ``n``
        fields: Rows ``phi`` and ``psi`` with cell-level ``rmse`` and
            ``coverage`` of the transformed fields
        predictive: Mean in- and out-of-sample predictive metrics
        weight_recovery: Share of replicates whose posterior mean weights are
            all within 0.05 of the truth
        n_replicates: Replicates run
        excluded: Indices of replicates dropped for R-hat above 1.1
        redraws: Total generation attempts discarded on rate overflow
    """

    parameters: pd.DataFrame
    fields: pd.DataFrame
    predictive: dict[str, float]
    weight_recovery: float
    n_replicates: int
    excluded: list[int]
    redraws: int = 0

    @property
    def n_excluded(self) -> int:
        return len(self.excluded)

    @property
    def pooled_coverage(self) -> float:
        """Coverage over all scalar parameters and replicates."""
        p = self.parameters
        if not len(p):
            return float("nan")
        return float(np.sum(p["coverage"] * p["n"]) / np.sum(p["n"]))

    @property
    def field_coverage(self) -> float:
        if not len(self.fields):
            return float("nan")
        return float(self.fields["coverage"].mean())

    def to_frame(self) -> pd.DataFrame:
        """Long table with columns ``kind``, ``name``, ``rmse``, ``coverage``."""
        rows = [
            {
                "kind": "parameter",
                "name": r.parameter,
                "rmse": r.rmse,
                "coverage": r.coverage,
            }
            for r in self.parameters.itertuples()
        ]
        rows += [
            {"kind": "field", "name": r.field, "rmse": r.rmse, "coverage": r.coverage}
            for r in self.fields.itertuples()
        ]
        for prefix in ("in", "out"):
            rmse = self.predictive.get(f"{prefix}_rmse_rate", float("nan"))
            coverage = self.predictive.get(f"{prefix}_coverage", float("nan"))
            rows.append(
                {
                    "kind": "predictive",
                    "name": prefix,
                    "rmse": rmse,
                    "coverage": coverage,
                }
            )
        rows.append({
            "kind": "weights", "name": "within_0.05", "rmse": float("nan"),
            "coverage": self.weight_recovery,
        })
        return pd.DataFrame(rows, columns=["kind", "name", "rmse", "coverage"])

    def to_csv(self, path) -> None:
        self.to_frame().to_csv(path, index=False, float_format="%.10g")


def _aggregate(outcomes: list[_ReplicateOutcome], n_replicates: int) -> RecoveryReport:
    kept = [o for o in outcomes if not o.excluded]
    excluded = sorted(o.index for o in outcomes if o.excluded)
    redraws = sum(o.redraws for o in outcomes)
    if not kept:
        empty = pd.DataFrame(columns=["parameter", "rmse", "coverage", "n"])
        return RecoveryReport(
            empty, pd.DataFrame(columns=["field", "rmse", "coverage"]), {},
            float("nan"), n_replicates, excluded, redraws,
        )
    names = list(kept[0].squared_errors)
    parameters = pd.DataFrame([
        {
            "parameter": name,
            "rmse": math.sqrt(np.mean([o.squared_errors[name] for o in kept])),
            "coverage": float(np.mean([o.hits[name] for o in kept])),
            "n": len(kept),
        }
        for name in names
    ])
    fields = pd.DataFrame([
        {
            "field": name,
            "rmse": math.sqrt(np.mean([o.field_squared_errors[name] for o in kept])),
            "coverage": float(np.mean([o.field_coverage[name] for o in kept])),
        }
        for name in kept[0].field_squared_errors
    ], columns=["field", "rmse", "coverage"])
    predictive = {
        key: float(np.nanmean([o.predictive[key] for o in kept if key in o.predictive]))
        for key in kept[0].predictive
    }
    return RecoveryReport(
        parameters=parameters,
        fields=fields,
        predictive=predictive,
        weight_recovery=float(np.mean([o.weights_recovered for o in kept])),
        n_replicates=n_replicates,
        excluded=excluded,
        redraws=redraws,
    )


def _run_replicate(
    spec: SimSpec, graph: AreaGraph, index: int, nuts: NutsConfig, config: ModelConfig
) -> _ReplicateOutcome:
    replicate = simulate_replicate(spec, graph, index, config)
    data = ModelData(graph, replicate.panel, replicate.designs, config)
    seed = int(make_rng(spec.seed, REPLICATE, index).integers(2**31))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        fit = fit_model(data, nuts.model_copy(update={"seed": seed}))
    if not fit.summary.max_rhat <= EXCLUDE_RHAT:
        logger.warning(
            "Replicate %d excluded: R-hat %.3f > %.1f",
            index, fit.summary.max_rhat, EXCLUDE_RHAT,
        )
        return _ReplicateOutcome(index, fit.summary.max_rhat, True, replicate.redraws)
    outcome = _score_replicate(fit, replicate)
    logger.info("Replicate %d done (max R-hat %.3f)", index, outcome.max_rhat)
    return outcome


def run_recovery(
    spec: SimSpec,
    nuts: NutsConfig,
    config: Optional[ModelConfig] = None,
) -> RecoveryReport:
    """
    Simulate ``spec.replicates`` panels and refit the full model on each.

    Each replicate holds out ``spec.holdout`` of its cells, is fitted on the
    rest and compared with its truth. Replicates with any split R-hat above
    1.1 are excluded and counted.

    Args:
        spec: Generator and study settings
        nuts: Sampler settings; the seed is replaced per replicate
        config: Fitting model; defaults to :func:`recovery_model_config`

    Returns:
        The aggregated report
    """
    graph = spec.graph()
    config = config or recovery_model_config(spec)
    if config.tau != spec.tau:
        raise DataValidationError(
            f"Fitting tau={config.tau} differs from spec tau={spec.tau}"
        )
    logger.info(
        "Recovery study: %d replicates on %d areas x %d weeks",
        spec.replicates, graph.n_areas, spec.n_weeks,
    )
    with ThreadPoolExecutor(max_workers=spec.n_workers) as executor:
        futures = [
            executor.submit(_run_replicate, spec, graph, b, nuts, config)
            for b in range(spec.replicates)
        ]
        outcomes = [future.result() for future in futures]
    report = _aggregate(outcomes, spec.replicates)
    if report.n_excluded:
        logger.warning(
            "%d of %d replicates excluded for non-convergence",
            report.n_excluded, spec.replicates,
        )
    return report


def write_manifest(report: RecoveryReport, spec: SimSpec, path) -> None:
    """Write the run manifest of a recovery study as JSON."""
    manifest = {
        "seed": spec.seed,
        "spec_hash": spec.spec_hash(),
        "spec": spec.model_dump(mode="json"),
        "rng_algorithm": RNG_ALGORITHM,
        "replicates": report.n_replicates,
        "excluded": report.excluded,
        "n_excluded": report.n_excluded,
        "redraws": report.redraws,
        "pooled_coverage": report.pooled_coverage,
        "field_coverage": report.field_coverage,
        "weight_recovery": report.weight_recovery,
    }
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(manifest, handle, indent=2, allow_nan=True)
