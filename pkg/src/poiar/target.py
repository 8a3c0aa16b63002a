"""
Sampling targets.

A target is a log density over R^d together with its gradient. The sampler
only sees this interface; the model posterior and the Gaussian targets used to
check the sampler are interchangeable.
"""

from abc import ABC, abstractmethod
from typing import Optional

import numpy as np
import scipy.linalg

from poiar.errors import DataValidationError, NumericDomainError
from poiar.model import ModelData, log_posterior_grad


class Target(ABC):
    """
    Abstract base class for sampling targets.

    Implementations must be reentrant: chains evaluate the same target from
    several threads.
    """

    @property
    @abstractmethod
    def name(self) -> str:
        """Return a short label used in logs and manifests."""
        pass

    @property
    @abstractmethod
    def dim(self) -> int:
        """Return the dimension of the unconstrained space."""
        pass

    @abstractmethod
    def log_density_grad(self, z: np.ndarray) -> tuple[float, np.ndarray]:
        """
        Evaluate the log density and its gradient.

        Args:
            z: Point of length ``dim``

        Returns:
            ``(lp, grad)``; ``lp`` is ``-inf`` outside the support
        """
        pass

    def __repr__(self) -> str:
        return f"{self.__class__.__name__}(name='{self.name}', dim={self.dim})"


class GaussianTarget(Target):
    """
    Multivariate normal target.

    Args:
        mean: Mean vector
        cov: Covariance matrix, or a vector of variances for a diagonal one
    """

    def __init__(self, mean, cov):
        self.mean = np.atleast_1d(np.asarray(mean, dtype=float))
        cov = np.asarray(cov, dtype=float)
        d = len(self.mean)
        if cov.ndim == 1:
            cov = np.diag(cov)
        if cov.shape != (d, d):
            raise DataValidationError(f"Covariance must be {d} x {d}, got {cov.shape}")
        self.cov = cov
        try:
            self._precision = scipy.linalg.inv(cov)
        except np.linalg.LinAlgError as e:
            raise NumericDomainError(f"Singular covariance: {e}") from e

    @property
    def name(self) -> str:
        return "gaussian"

    @property
    def dim(self) -> int:
        return len(self.mean)

    def log_density_grad(self, z: np.ndarray) -> tuple[float, np.ndarray]:
        centered = np.asarray(z, dtype=float) - self.mean
        grad = -self._precision @ centered
        return float(0.5 * centered @ grad), grad


class PosteriorTarget(Target):
    """
    Posterior of the Poisson autoregressive model in unconstrained space.

    Args:
        data: Model bundle
        label: Optional name; defaults to ``variant-<v>``
    """

    def __init__(self, data: ModelData, label: Optional[str] = None):
        self.data = data
        self._label = label or f"variant-{data.config.variant.value}"

    @property
    def name(self) -> str:
        return self._label

    @property
    def dim(self) -> int:
        return self.data.layout.dim

    def log_density_grad(self, z: np.ndarray) -> tuple[float, np.ndarray]:
        return log_posterior_grad(z, self.data)
