"""
Fitting the model to a panel.

:func:`fit_model` samples the posterior, summarizes it in constrained space
and scores it.
"""

import logging
import warnings
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from poiar.car import noncentered
from poiar.config import NutsConfig
from poiar.diagnostics import FitSummary, ScoreReport, predictive_score, summarize
from poiar.errors import ConvergenceWarning
from poiar.model import ModelData, pointwise_log_likelihood
from poiar.parameters import Layout, ParameterSet, transform
from poiar.sampler import Draws, nuts_sample
from poiar.streams import RNG_ALGORITHM
from poiar.target import PosteriorTarget

logger = logging.getLogger(__name__)


def constrained_draws(samples: np.ndarray, layout: Layout) -> np.ndarray:
    """
    Map unconstrained draws to constrained values.

    Args:
        samples: ``(..., dim)`` unconstrained draws
        layout: Parameter layout

    Returns:
        ``(..., len(layout.constrained_names))`` values
    """
    samples = np.asarray(samples, dtype=float)
    flat = samples.reshape(-1, layout.dim)
    out = np.stack([transform(z, layout)[0].flatten_constrained(layout) for z in flat])
    return out.reshape(samples.shape[:-1] + (len(layout.constrained_names),))


def field_draws(values: np.ndarray, layout: Layout, name: str) -> np.ndarray:
    """
    Transformed random-effect draws.

    Args:
        values: ``(draws, n_constrained)`` constrained values
        layout: Parameter layout
        name: ``"phi"`` or ``"psi"``

    Returns:
        ``(draws, L, T)`` field draws
    """
    return np.stack([
        noncentered(params.star(name), params.theta(name))
        for params in (ParameterSet.from_constrained(v, layout) for v in values)
    ])


@dataclass
class FitResult:
    """
    Posterior draws of one fit with their summary and scores.

    Attributes:
        data: Model bundle that was fitted
        draws: Unconstrained draws and sampler telemetry
        constrained: ``(chains, draws, n_constrained)`` constrained values
        summary: Per-parameter posterior summary
        scores: Information criteria and predictive accuracy
        nuts: Sampler settings used
    """

    data: ModelData
    draws: Draws
    constrained: np.ndarray
    summary: FitSummary
    scores: ScoreReport
    nuts: NutsConfig

    @property
    def layout(self) -> Layout:
        return self.data.layout

    @property
    def converged(self) -> bool:
        return self.summary.converged()

    def parameter_sets(self) -> Iterator[ParameterSet]:
        for values in self.constrained.reshape(-1, self.constrained.shape[-1]):
            yield ParameterSet.from_constrained(values, self.layout)

    def manifest(self) -> dict:
        """Run metadata written next to the draws."""
        config = self.data.config
        return {
            "variant": config.variant.value,
            "model_config": config.model_dump(mode="json"),
            "nuts_config": self.nuts.model_dump(mode="json"),
            "layout": self.layout.to_dict(),
            "rng_algorithm": RNG_ALGORITHM,
            "mask_digest": self.scores.mask_digest,
            "max_rhat": self.summary.max_rhat,
            "converged": self.converged,
            "divergences": self.draws.divergences,
            "treedepth_saturations": self.draws.treedepth_saturations,
            "chains": [t.to_dict() for t in self.draws.telemetry],
        }


def fit_model(data: ModelData, nuts: NutsConfig) -> FitResult:
    """
    Sample, summarize and score the posterior of ``data``.

    Args:
        data: Model bundle; its panel mask selects the in-sample cells
        nuts: Sampler settings

    Returns:
        The fit; a :class:`~poiar.errors.ConvergenceWarning` is issued when a
        split R-hat exceeds 1.05
    """
    layout = data.layout
    target = PosteriorTarget(data)
    logger.info(
        "Fitting %s: %d parameters, %d chains x %d iterations",
        target.name, layout.dim, nuts.n_chains, nuts.n_iter,
    )

    def pointwise(z):
        return pointwise_log_likelihood(data, transform(z, layout)[0])

    draws = nuts_sample(target, nuts, pointwise)
    constrained = constrained_draws(draws.samples, layout)
    summary = summarize(layout.constrained_names, constrained)
    scores = predictive_score(draws, data, seed=nuts.seed)
    result = FitResult(data, draws, constrained, summary, scores, nuts)
    if not result.converged:
        message = f"Split R-hat up to {summary.max_rhat:.3f} exceeds 1.05"
        logger.warning(message)
        warnings.warn(message, ConvergenceWarning, stacklevel=2)
    return result
