"""
Convergence diagnostics, information criteria and predictive scores.

R-hat, ESS, WAIC, PSIS-LOO, the summary table and model comparison are
computed by ArviZ; this module adapts poiar draws and score reports to it.

Conventions:

* ``split_rhat`` and ``ess_bulk`` are the rank-normalized split-chain
  versions; the pass line for fits is ``R-hat <= 1.05``.
* ``waic = -2 * (lppd - p_waic)`` (lower is better).
* ``elpd_loo`` is reported on the log scale (higher is better).
"""

import hashlib
import logging
import warnings
from dataclasses import dataclass, field
from functools import partial
from typing import NamedTuple, Optional, Sequence

import arviz as az
import numpy as np
import pandas as pd
import xarray as xr
from arviz.stats.stats_utils import ELPDData
from scipy.special import logsumexp

from poiar.errors import DataValidationError
from poiar.model import ModelData, pointwise_log_likelihood, rate_matrix
from poiar.parameters import transform
from poiar.sampler import Draws
from poiar.streams import PREDICTIVE, make_rng

logger = logging.getLogger(__name__)

RHAT_PASS = 1.05
HIGH_PARETO_K = 0.7
MIN_PSIS_DRAWS = 50
SUMMARY_COLUMNS = ["parameter", "mean", "sd", "q2.5", "q97.5", "rhat", "ess_bulk"]
QUANTILES = {
    "q2.5": partial(np.quantile, q=0.025),
    "q97.5": partial(np.quantile, q=0.975),
}


class RhatResult(NamedTuple):
    value: float
    degenerate: bool


def _chains_2d(chains, min_chains: int = 2, min_draws: int = 4) -> np.ndarray:
    ary = np.asarray(chains, dtype=float)
    if ary.ndim == 1:
        ary = ary[None, :]
    if ary.ndim != 2 or ary.shape[0] < min_chains or ary.shape[1] < min_draws:
        raise DataValidationError(
            f"Need at least {min_chains} chains of {min_draws} draws, got {ary.shape}"
        )
    return ary


def _is_constant(ary: np.ndarray) -> bool:
    return bool(np.max(ary) - np.min(ary) < np.finfo(float).resolution)


def split_rhat(chains) -> RhatResult:
    """
    Rank-normalized split R-hat of one scalar.

    The maximum of the bulk and folded (tail) versions, as computed by
    ``arviz.rhat(method="rank")``.

    Args:
        chains: ``(chains, draws)`` values, at least 2 chains of 4 draws

    Returns:
        The R-hat and whether the chains were constant (then R-hat is 1)
    """
    ary = _chains_2d(chains)
    if _is_constant(ary):
        return RhatResult(1.0, True)
    return RhatResult(float(az.rhat(ary, method="rank")), False)


def ess_bulk(chains) -> float:
    """Rank-normalized split-chain bulk effective sample size."""
    ary = _chains_2d(chains, min_chains=1)
    if _is_constant(ary):
        return float(ary.size)
    return float(az.ess(ary, method="bulk"))


@dataclass
class WaicResult:
    waic: float
    se: float
    p_waic: float
    lppd: float
    pointwise: np.ndarray = field(repr=False)


def _pointwise_2d(loglik, min_draws: int = 2) -> np.ndarray:
    ll = np.asarray(loglik, dtype=float)
    if ll.ndim == 1:
        ll = ll[:, None]
    if ll.ndim != 2 or ll.shape[0] < min_draws:
        raise DataValidationError(
            f"Need a draws x cells matrix with at least {min_draws} draws, "
            f"got {ll.shape}"
        )
    return ll


def loglik_data(loglik) -> az.InferenceData:
    """Wrap ``(draws, cells)`` pointwise log-likelihoods as one chain."""
    ll = _pointwise_2d(loglik)
    return az.from_dict(log_likelihood={"y": ll[None, :, :]})


def lppd_pointwise(loglik) -> np.ndarray:
    """Log pointwise predictive density of every cell (log-mean-exp over draws)."""
    ll = _pointwise_2d(loglik, min_draws=1)
    return logsumexp(ll, axis=0) - np.log(ll.shape[0])


def waic(loglik) -> WaicResult:
    """
    Widely applicable information criterion.

    Args:
        loglik: ``(draws, cells)`` pointwise log-likelihoods

    Returns:
        ``waic = -2 * (lppd - p_waic)`` with ``p_waic`` the sum of the
        per-cell variances over draws, and its standard error
    """
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        result = az.waic(loglik_data(loglik), pointwise=True, scale="log")
    if result["warning"]:
        logger.warning(
            "Posterior variance of some log predictive densities exceeds 0.4; "
            "WAIC may be unreliable, prefer PSIS-LOO"
        )
    elpd = float(result["elpd_waic"])
    p_waic = float(result["p_waic"])
    return WaicResult(
        waic=-2.0 * elpd,
        se=2.0 * float(result["se"]),
        p_waic=p_waic,
        lppd=elpd + p_waic,
        pointwise=-2.0 * np.asarray(result["waic_i"], dtype=float).ravel(),
    )


@dataclass
class LooResult:
    """
    PSIS leave-one-out estimate.

    Attributes:
        elpd_loo: Sum of the leave-one-out log predictive densities
        se: Standard error of ``elpd_loo``
        p_loo: ``lppd - elpd_loo``
        pareto_k: Tail shape of every cell (NaN for degenerate cells)
        degenerate: Cells whose log-likelihood is constant over draws
        pointwise: Per-cell leave-one-out log predictive densities
        smoothed: Whether Pareto smoothing was applied
    """

    elpd_loo: float
    se: float
    p_loo: float
    pareto_k: np.ndarray = field(repr=False)
    degenerate: np.ndarray = field(repr=False)
    pointwise: np.ndarray = field(repr=False)
    smoothed: bool = True

    @property
    def max_k(self) -> float:
        finite = self.pareto_k[np.isfinite(self.pareto_k)]
        return float(finite.max()) if len(finite) else float("nan")

    @property
    def n_high_k(self) -> int:
        with np.errstate(invalid="ignore"):
            return int(np.sum(self.pareto_k > HIGH_PARETO_K))


def psis_loo(loglik) -> LooResult:
    """
    Pareto-smoothed importance-sampling leave-one-out cross-validation.

    ``arviz.loo`` smooths the raw log ratios ``-loglik`` of every cell with a
    generalized Pareto fit on the largest ``ceil(min(0.2 S, 3 sqrt(S)))`` of
    the S draws (relative efficiency fixed at 1). With fewer than 50 draws
    plain importance sampling is used instead.

    Args:
        loglik: ``(draws, cells)`` pointwise log-likelihoods

    Returns:
        The estimate with its per-cell Pareto k
    """
    ll = _pointwise_2d(loglik)
    n_draws, n_cells = ll.shape
    degenerate = np.array([_is_constant(ll[:, i]) for i in range(n_cells)])
    smoothed = n_draws >= MIN_PSIS_DRAWS
    if smoothed:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UserWarning)
            result = az.loo(loglik_data(ll), pointwise=True, reff=1.0, scale="log")
        loo_i = np.array(result["loo_i"], dtype=float).ravel()
        pareto_k = np.array(result["pareto_k"], dtype=float).ravel()
    else:
        logger.warning(
            "Only %d draws: using raw importance sampling without Pareto smoothing",
            n_draws,
        )
        loo_i = np.log(n_draws) - logsumexp(-ll, axis=0)
        pareto_k = np.full(n_cells, np.nan)

    # constant columns reproduce lppd exactly
    loo_i[degenerate] = ll[0, degenerate]
    pareto_k[degenerate] = np.nan
    result = LooResult(
        elpd_loo=float(np.sum(loo_i)),
        se=float(np.sqrt(n_cells * np.var(loo_i))),
        p_loo=float(np.sum(lppd_pointwise(ll)) - np.sum(loo_i)),
        pareto_k=pareto_k,
        degenerate=degenerate,
        pointwise=loo_i,
        smoothed=smoothed,
    )
    if result.n_high_k:
        logger.warning(
            "%d of %d cells have Pareto k > %.1f; the LOO estimate is unreliable there",
            result.n_high_k, n_cells, HIGH_PARETO_K,
        )
    return result


@dataclass
class PredictiveMetrics:
    """
    Point and interval accuracy of posterior predictive draws.

    Attributes:
        rmse_rate: Root mean squared error of predicted weekly cases per
            10,000 inhabitants
        rel_mse: Squared error of the per-10,000 rates relative to their total
            variability around the mean
        coverage: Share of cells whose count lies in the central 95% interval
        width: Mean width of the central 95% intervals (cases)
        n_cells: Number of scored cells
    """

    rmse_rate: float
    rel_mse: float
    coverage: float
    width: float
    n_cells: int


def predictive_metrics(
    predictions: np.ndarray, observed: np.ndarray, population: np.ndarray
) -> PredictiveMetrics:
    """
    Score predictive draws against observed counts.

    Args:
        predictions: ``(draws, cells)`` predictive count draws
        observed: Observed counts of the cells
        population: Population of the area of each cell

    Returns:
        The metrics; NaN everywhere when no cell is given
    """
    predictions = np.asarray(predictions, dtype=float)
    observed = np.asarray(observed, dtype=float)
    n_cells = len(observed)
    if n_cells == 0:
        nan = float("nan")
        return PredictiveMetrics(nan, nan, nan, nan, 0)
    lower, upper = np.quantile(predictions, [0.025, 0.975], axis=0)
    per = 1e4 / np.asarray(population, dtype=float)
    predicted_rate = predictions.mean(axis=0) * per
    observed_rate = observed * per
    sq_error = np.sum((predicted_rate - observed_rate) ** 2)
    spread = np.sum((observed_rate - observed_rate.mean()) ** 2)
    return PredictiveMetrics(
        rmse_rate=float(np.sqrt(sq_error / n_cells)),
        rel_mse=float(sq_error / spread) if spread > 0 else float("nan"),
        coverage=float(np.mean((observed >= lower) & (observed <= upper))),
        width=float(np.mean(upper - lower)),
        n_cells=n_cells,
    )


def mask_digest(mask: np.ndarray) -> str:
    """Short fingerprint of an in-sample mask, used to check comparability."""
    mask = np.asarray(mask, dtype=bool)
    payload = repr(mask.shape).encode() + np.packbits(mask).tobytes()
    return hashlib.sha256(payload).hexdigest()[:16]


@dataclass
class ScoreReport:
    """
    Information criteria and predictive accuracy of one fit.

    ``in_sample`` scores the fitted cells and ``out_of_sample`` the held-out
    ones (None without a holdout).
    """

    waic: float
    waic_se: float
    p_waic: float
    lppd: float
    elpd_loo: float
    loo_se: float
    p_loo: float
    max_pareto_k: float
    n_high_k: int
    in_sample: PredictiveMetrics
    out_of_sample: Optional[PredictiveMetrics]
    mask_digest: str = ""
    loo_pointwise: Optional[np.ndarray] = field(default=None, repr=False)

    def to_frame(self) -> pd.DataFrame:
        """One-row table; predictive metrics are prefixed ``in_`` and ``out_``."""
        row = {
            "waic": self.waic,
            "waic_se": self.waic_se,
            "p_waic": self.p_waic,
            "lppd": self.lppd,
            "elpd_loo": self.elpd_loo,
            "loo_se": self.loo_se,
            "p_loo": self.p_loo,
            "max_pareto_k": self.max_pareto_k,
            "n_high_k": self.n_high_k,
            "mask_digest": self.mask_digest,
        }
        for prefix, metrics in (("in", self.in_sample), ("out", self.out_of_sample)):
            for name in ("rmse_rate", "rel_mse", "coverage", "width", "n_cells"):
                value = float("nan") if metrics is None else getattr(metrics, name)
                row[f"{prefix}_{name}"] = value
        return pd.DataFrame([row])

    @classmethod
    def from_frame(cls, frame: pd.DataFrame) -> "ScoreReport":
        row = frame.iloc[0]

        def metrics(prefix):
            n_cells = row[f"{prefix}_n_cells"]
            if pd.isna(n_cells):
                return None
            return PredictiveMetrics(
                rmse_rate=float(row[f"{prefix}_rmse_rate"]),
                rel_mse=float(row[f"{prefix}_rel_mse"]),
                coverage=float(row[f"{prefix}_coverage"]),
                width=float(row[f"{prefix}_width"]),
                n_cells=int(n_cells),
            )

        return cls(
            waic=float(row["waic"]),
            waic_se=float(row["waic_se"]),
            p_waic=float(row["p_waic"]),
            lppd=float(row["lppd"]),
            elpd_loo=float(row["elpd_loo"]),
            loo_se=float(row["loo_se"]),
            p_loo=float(row["p_loo"]),
            max_pareto_k=float(row["max_pareto_k"]),
            n_high_k=int(row["n_high_k"]),
            in_sample=metrics("in"),
            out_of_sample=metrics("out"),
            mask_digest=str(row["mask_digest"]),
        )


def predictive_draws(
    samples: np.ndarray, data: ModelData, rng: np.random.Generator
) -> np.ndarray:
    """
    Posterior predictive counts of every cell.

    Args:
        samples: ``(draws, dim)`` unconstrained draws
        data: Model bundle
        rng: Stream for the Poisson draws

    Returns:
        ``(draws, L, T)`` integer predictive draws
    """
    out = np.empty((len(samples),) + data.panel.counts.shape, dtype=np.int64)
    for s, z in enumerate(samples):
        params, _ = transform(z, data.layout)
        out[s] = rng.poisson(rate_matrix(data, params))
    return out


def predictive_score(
    draws: Draws,
    data: ModelData,
    mask: Optional[np.ndarray] = None,
    seed: int = 0,
) -> ScoreReport:
    """
    Score a fit.

    WAIC and PSIS-LOO use the pointwise log-likelihoods of the in-sample
    cells; predictive metrics use Poisson draws at every posterior rate and
    are split between in-sample and held-out cells.

    Args:
        draws: Posterior draws, with pointwise log-likelihoods when available
        data: Model bundle the draws were sampled from
        mask: In-sample mask for the split; defaults to the panel's mask
        seed: Run seed of the predictive stream

    Returns:
        The report
    """
    if draws.n_draws == 0:
        raise DataValidationError("No draws to score")
    in_mask = data.panel.in_sample if mask is None else np.asarray(mask, dtype=bool)
    samples = draws.flat()
    if draws.pointwise is not None:
        loglik = draws.flat_pointwise()
    else:
        loglik = np.stack([
            pointwise_log_likelihood(data, transform(z, data.layout)[0], in_mask)
            for z in samples
        ])
    waic_result = waic(loglik)
    loo_result = psis_loo(loglik)

    predictions = predictive_draws(samples, data, make_rng(seed, PREDICTIVE))
    counts = data.panel.counts
    population = np.broadcast_to(data.panel.population[:, None], counts.shape)

    def score(cells):
        return predictive_metrics(
            predictions[:, cells], counts[cells], population[cells]
        )

    out_mask = ~in_mask
    return ScoreReport(
        waic=waic_result.waic,
        waic_se=waic_result.se,
        p_waic=waic_result.p_waic,
        lppd=waic_result.lppd,
        elpd_loo=loo_result.elpd_loo,
        loo_se=loo_result.se,
        p_loo=loo_result.p_loo,
        max_pareto_k=loo_result.max_k,
        n_high_k=loo_result.n_high_k,
        in_sample=score(in_mask),
        out_of_sample=score(out_mask) if out_mask.any() else None,
        mask_digest=mask_digest(in_mask),
        loo_pointwise=loo_result.pointwise,
    )


@dataclass
class FitSummary:
    """Posterior summary table with one row per parameter."""

    table: pd.DataFrame
    degenerate: np.ndarray = field(repr=False)

    @property
    def max_rhat(self) -> float:
        return float(self.table["rhat"].max())

    def converged(self, threshold: float = RHAT_PASS) -> bool:
        return bool((self.table["rhat"] <= threshold).all())

    def to_csv(self, path) -> None:
        self.table.to_csv(path, index=False, float_format="%.10g")


def posterior_data(names: Sequence[str], chains: np.ndarray) -> az.InferenceData:
    """
    Wrap ``(chains, draws, parameters)`` values as one posterior variable.

    The variable ``value`` has a ``parameter`` dimension labelled by ``names``.
    """
    return az.from_dict(
        posterior={"value": chains},
        coords={"parameter": list(names)},
        dims={"value": ["parameter"]},
    )


def summarize(names: Sequence[str], chains: np.ndarray) -> FitSummary:
    """
    Summarize draws of named scalars.

    Args:
        names: Parameter names
        chains: ``(chains, draws, parameters)`` values

    Returns:
        Mean, sd, central 95% interval, split R-hat and bulk ESS per parameter
    """
    chains = np.asarray(chains, dtype=float)
    if chains.ndim != 3 or chains.shape[2] != len(names):
        raise DataValidationError(
            f"Expected (chains, draws, {len(names)}) values, got {chains.shape}"
        )
    if chains.shape[0] == 1:
        # a single chain is judged on its two halves
        half = chains.shape[1] // 2
        chains = chains[0, : 2 * half].reshape(2, half, chains.shape[2])
    degenerate = np.array([_is_constant(chains[:, :, j]) for j in range(len(names))])

    n_draws = chains.shape[0] * chains.shape[1]
    idata = posterior_data(names, chains)
    with warnings.catch_warnings(), np.errstate(divide="ignore", invalid="ignore"):
        warnings.simplefilter("ignore", RuntimeWarning)
        stats = az.summary(
            idata, kind="stats", round_to="none", stat_funcs=QUANTILES, extend=True
        )
        rhat = az.rhat(idata, method="rank")["value"].to_numpy()
        ess = az.ess(idata, method="bulk")["value"].to_numpy()

    table = pd.DataFrame({
        "parameter": list(names),
        "mean": stats["mean"].to_numpy(),
        "sd": stats["sd"].to_numpy(),
        "q2.5": stats["q2.5"].to_numpy(),
        "q97.5": stats["q97.5"].to_numpy(),
        "rhat": np.where(degenerate, 1.0, rhat),
        "ess_bulk": np.where(degenerate, float(n_draws), ess),
    })
    return FitSummary(table[SUMMARY_COLUMNS], degenerate)


def _elpd_data(report: ScoreReport) -> ELPDData:
    return ELPDData(
        data=[
            report.elpd_loo,
            report.loo_se,
            report.p_loo,
            report.n_high_k > 0,
            xr.DataArray(report.loo_pointwise, dims=["cell"]),
            "log",
        ],
        index=["elpd_loo", "se", "p_loo", "warning", "loo_i", "scale"],
    )


def compare_scores(reports: dict[str, ScoreReport]) -> pd.DataFrame:
    """
    Rank fits of the same data with ``arviz.compare``.

    Args:
        reports: Score reports by model label, with pointwise LOO values

    Returns:
        One row per model sorted by ``elpd_loo`` descending, with differences
        to the best model and their standard errors, stacking weights and a
        ``best`` flag

    Raises:
        DataValidationError: If fewer than two reports are given, one lacks
            pointwise values or their in-sample masks differ
    """
    if len(reports) < 2:
        raise DataValidationError("Need at least two fits to compare")
    digests = {report.mask_digest for report in reports.values()}
    if len(digests) > 1:
        raise DataValidationError(
            "Fits were scored on different in-sample masks", location=sorted(digests)
        )
    missing = [label for label, r in reports.items() if r.loo_pointwise is None]
    if missing:
        raise DataValidationError(
            "Comparison needs the pointwise LOO values of every fit", location=missing
        )
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        ranked = az.compare(
            {label: _elpd_data(report) for label, report in reports.items()},
            ic="loo",
            scale="log",
        )
    labels = list(ranked.index)
    return pd.DataFrame({
        "model": labels,
        "rank": np.arange(1, len(labels) + 1),
        "elpd_loo": [reports[label].elpd_loo for label in labels],
        "loo_se": [reports[label].loo_se for label in labels],
        "elpd_diff": ranked["elpd_diff"].to_numpy(dtype=float),
        "diff_se": ranked["dse"].to_numpy(dtype=float),
        "weight": ranked["weight"].to_numpy(dtype=float),
        "waic": [reports[label].waic for label in labels],
        "waic_se": [reports[label].waic_se for label in labels],
        "best": [i == 0 for i in range(len(labels))],
    })
