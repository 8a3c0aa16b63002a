"""
Configuration models.

Model and sampler settings are pydantic models so that values coming from
config files and command-line flags are coerced and validated in one place.
Defaults are the prior and sampler settings used for the weekly-case models.
"""

import enum
from typing import Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class Variant(str, enum.Enum):
    """
    Which blocks of the model are active.

    a) no space-time random effects; b) effects on the growth rate only;
    c) effects on the baseline only; d) effects on both plus covariates (full
    model); e) effects on both, intercepts only.
    """

    A = "a"
    B = "b"
    C = "c"
    D = "d"
    E = "e"

    @property
    def has_phi(self) -> bool:
        return self in (Variant.B, Variant.D, Variant.E)

    @property
    def has_psi(self) -> bool:
        return self in (Variant.C, Variant.D, Variant.E)

    @property
    def uses_covariates(self) -> bool:
        return self is not Variant.E


class DepletionMode(str, enum.Enum):
    """How the rate is rescaled by past cases."""

    SUSCEPTIBLE = "susceptible"
    LITERAL = "literal"


class PriorConfig(BaseModel):
    """Prior hyperparameters. Scales are standard deviations."""

    model_config = ConfigDict(frozen=True)

    beta0_mean: float = -0.5
    beta0_sd: float = Field(1.0, gt=0)
    beta_sd: float = Field(1.0, gt=0)
    eta_mean: float = 0.0
    eta_sd: float = Field(1.0, gt=0)
    sigma_phi_scale: float = Field(0.1, gt=0)
    sigma_psi_scale: float = Field(0.1, gt=0)
    dirichlet_concentration: float = Field(1.0, gt=0)


class ModelConfig(BaseModel):
    """
    Settings of the Poisson autoregressive model.

    Attributes:
        variant: Which random-effect and covariate blocks are active
        tau: Number of lagged weeks in the weighted autoregression
        immunity_window: Weeks of past cases counted in the depletion factor;
            None uses all available history
        depletion_mode: ``susceptible`` (1 - cumulative/pop, clamped) or
            ``literal`` (cumulative/pop)
        depletion_floor: Lower clamp of the susceptible fraction
        priors: Prior hyperparameters
        sum_to_zero_scale: Variance of the random-effect mean in the soft
            sum-to-zero penalty; the sum gets variance ``scale * n**2``
        growth_covariates: Covariate names entering the growth rate (X)
        baseline_covariates: Covariate names entering the baseline (V)
        standardize_global: Covariates centered and scaled over all cells
        standardize_per_area: Covariates centered and scaled within each area
    """

    model_config = ConfigDict(frozen=True)

    variant: Variant = Variant.D
    tau: int = Field(3, ge=1)
    immunity_window: Optional[int] = Field(None, ge=1)
    depletion_mode: DepletionMode = DepletionMode.SUSCEPTIBLE
    depletion_floor: float = Field(1e-6, gt=0, lt=1)
    priors: PriorConfig = PriorConfig()
    sum_to_zero_scale: float = Field(0.001, gt=0)
    growth_covariates: tuple[str, ...] = ()
    baseline_covariates: tuple[str, ...] = ()
    standardize_global: tuple[str, ...] = ()
    standardize_per_area: tuple[str, ...] = ()

    @field_validator(
        "growth_covariates",
        "baseline_covariates",
        "standardize_global",
        "standardize_per_area",
        mode="before",
    )
    @classmethod
    def _split_names(cls, value):
        if isinstance(value, str):
            return tuple(name.strip() for name in value.split(",") if name.strip())
        return value

    @model_validator(mode="after")
    def _check_standardization(self) -> "ModelConfig":
        both = set(self.standardize_global) & set(self.standardize_per_area)
        if both:
            raise ValueError(
                f"Covariates standardized both globally and per area: {sorted(both)}"
            )
        return self


class NutsConfig(BaseModel):
    """
    Settings of the No-U-Turn sampler.

    Attributes:
        n_chains: Number of independent chains
        n_warmup: Adaptation iterations per chain (discarded)
        n_iter: Post-warmup iterations per chain before thinning
        thin: Keep every ``thin``-th post-warmup iteration
        target_accept: Dual-averaging target for the acceptance statistic
        max_treedepth: Maximum tree depth; trajectories have at most
            ``2**max_treedepth`` leapfrog steps
        seed: Run seed; per-chain streams are derived from it
        max_energy_error: Energy error flagging a divergent transition
        init_radius: Initial points are uniform in ``(-r, r)`` per coordinate
        max_init_tries: Retries when the initial point has non-finite density
        n_workers: Threads used to run chains; None runs one per chain
    """

    model_config = ConfigDict(frozen=True)

    n_chains: int = Field(4, ge=1)
    n_warmup: int = Field(1000, ge=1)
    n_iter: int = Field(1000, ge=1)
    thin: int = Field(1, ge=1)
    target_accept: float = Field(0.8, gt=0, lt=1)
    max_treedepth: int = Field(10, ge=1)
    seed: int = Field(0, ge=0)
    max_energy_error: float = Field(1000.0, gt=0)
    init_radius: float = Field(2.0, gt=0)
    max_init_tries: int = Field(100, ge=1)
    n_workers: Optional[int] = Field(None, ge=1)

    @model_validator(mode="after")
    def _check_thin(self) -> "NutsConfig":
        if self.thin > self.n_iter:
            raise ValueError("thin cannot exceed n_iter")
        return self

    @property
    def draws_per_chain(self) -> int:
        return self.n_iter // self.thin
