"""
Leroux CAR and CAR-AR densities.

The Leroux precision is ``Q(alpha) = alpha * (D - W) + (1 - alpha) * I``.
Quadratic forms are evaluated by traversing the edge list, and the
log-determinant is ``sum(log(1 - alpha * lambda_i))`` over the eigenvalues of
``W + I - D``, so no dense matrix is formed on the log-density path.

Space-time fields are ``(L, T)`` arrays whose column ``t`` is the spatial
slice at week ``t``. ``Q`` is the precision structure throughout: a slice has
covariance ``sigma**2 * Q^-1``.
"""

from dataclasses import dataclass
from typing import Union

import numpy as np
import scipy.linalg
from scipy.signal import lfilter

from poiar.errors import DataValidationError, NumericDomainError
from poiar.graph import AreaGraph, EigenSpectrum

_LOG_2PI = np.log(2.0 * np.pi)

# An (L, T) real matrix; column t is the spatial slice at week t.
StField = np.ndarray


@dataclass(frozen=True)
class CarParams:
    """
    CAR-AR coefficients.

    The sampler keeps ``alpha`` and ``rho`` strictly inside ``(0, 1)``; the
    closed bounds are accepted here so the independence and random-walk
    limits can be evaluated directly.

    Attributes:
        alpha: Spatial smoothing
        rho: Temporal autocorrelation
        sigma: Scale of the innovations
    """

    alpha: float
    rho: float
    sigma: float

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise DataValidationError("alpha must lie in [0, 1]", location=self.alpha)
        if not 0.0 <= self.rho <= 1.0:
            raise DataValidationError("rho must lie in [0, 1]", location=self.rho)
        if not self.sigma > 0.0:
            raise DataValidationError("sigma must be positive", location=self.sigma)


def _check_rows(graph: AreaGraph, x: np.ndarray) -> None:
    if x.ndim not in (1, 2) or x.shape[0] != graph.n_areas:
        raise DataValidationError(
            f"Expected {graph.n_areas} rows, got shape {x.shape}"
        )


def quad_form(
    graph: AreaGraph, alpha: float, x: np.ndarray
) -> Union[float, np.ndarray]:
    """
    Evaluate ``x' Q(alpha) x`` by edge traversal.

    Args:
        graph: Adjacency structure
        alpha: Spatial smoothing in ``[0, 1]``
        x: An L-vector, or an ``(L, T)`` matrix evaluated column by column

    Returns:
        The quadratic form (a float, or one value per column)
    """
    x = np.asarray(x, dtype=float)
    _check_rows(graph, x)
    diff = x[graph.edges[:, 0]] - x[graph.edges[:, 1]]
    value = alpha * np.sum(diff**2, axis=0) + (1.0 - alpha) * np.sum(x**2, axis=0)
    return float(value) if x.ndim == 1 else value


def precision_matvec(graph: AreaGraph, alpha: float, x: np.ndarray) -> np.ndarray:
    """Sparse product ``Q(alpha) @ x`` for a vector or column matrix."""
    x = np.asarray(x, dtype=float)
    _check_rows(graph, x)
    degrees = graph.degrees if x.ndim == 1 else graph.degrees[:, None]
    return alpha * (degrees * x - graph.adjacency @ x) + (1.0 - alpha) * x


def dense_precision(graph: AreaGraph, alpha: float) -> np.ndarray:
    """Dense ``Q(alpha)``; only for simulation-sized graphs and oracles."""
    laplacian = np.diag(graph.degrees.astype(float)) - graph.adjacency.toarray()
    return alpha * laplacian + (1.0 - alpha) * np.eye(graph.n_areas)


def log_det_q(spectrum: EigenSpectrum, alpha: float) -> float:
    """
    Log-determinant of ``Q(alpha) = I - alpha * (W + I - D)``.

    Args:
        spectrum: Eigenvalues of ``W + I - D``
        alpha: Spatial smoothing in ``[0, 1)``

    Returns:
        ``sum(log(1 - alpha * lambda_i))``

    Raises:
        NumericDomainError: If a factor is not positive
    """
    factors = 1.0 - alpha * spectrum.lambdas
    if np.any(factors <= 0.0):
        raise NumericDomainError(
            f"Q(alpha={alpha}) is singular: non-positive eigenvalue factor"
        )
    return float(np.sum(np.log(factors)))


def log_det_q_grad(spectrum: EigenSpectrum, alpha: float) -> float:
    """Derivative of :func:`log_det_q` with respect to ``alpha``."""
    lambdas = spectrum.lambdas
    return float(-np.sum(lambdas / (1.0 - alpha * lambdas)))


def leroux_logpdf(
    graph: AreaGraph,
    spectrum: EigenSpectrum,
    x: np.ndarray,
    alpha: float,
    sigma: float,
) -> float:
    """
    Log-density of ``x ~ N(0, sigma**2 * Q(alpha)^-1)``.

    Args:
        graph: Adjacency structure
        spectrum: Eigenvalues of ``W + I - D`` for the same graph
        x: An L-vector
        alpha: Spatial smoothing in ``[0, 1)``
        sigma: Scale, positive

    Returns:
        The log-density
    """
    if sigma <= 0.0:
        raise DataValidationError("sigma must be positive", location=sigma)
    n = graph.n_areas
    quad = quad_form(graph, alpha, x)
    return (
        -0.5 * n * _LOG_2PI
        - n * np.log(sigma)
        + 0.5 * log_det_q(spectrum, alpha)
        - quad / (2.0 * sigma**2)
    )


def innovations(phi: StField, params: CarParams) -> StField:
    """
    Standardized innovations of a CAR-AR field; inverse of :func:`noncentered`.

    ``phi*_1 = phi_1 / sigma`` and ``phi*_t = (phi_t - rho * phi_{t-1}) / sigma``.
    """
    phi = np.asarray(phi, dtype=float)
    if phi.ndim != 2:
        raise DataValidationError(f"Expected an (L, T) field, got shape {phi.shape}")
    b = np.array([1.0, -params.rho]) / params.sigma
    return lfilter(b, [1.0], phi, axis=1)


def car_ar_logpdf(
    graph: AreaGraph,
    spectrum: EigenSpectrum,
    field: StField,
    params: CarParams,
) -> float:
    """
    Log-density of a space-time field under the CAR-AR prior.

    The first slice is ``N(0, sigma**2 Q^-1)`` and each later slice is
    ``N(rho * phi_{t-1}, sigma**2 Q^-1)``.

    Args:
        graph: Adjacency structure
        spectrum: Eigenvalues of ``W + I - D``
        field: ``(L, T)`` field
        params: CAR-AR coefficients

    Returns:
        The joint log-density of all T slices
    """
    field = np.asarray(field, dtype=float)
    if field.ndim != 2:
        raise DataValidationError(f"Expected an (L, T) field, got shape {field.shape}")
    _check_rows(graph, field)
    n_areas, n_weeks = field.shape
    resid = field.copy()
    resid[:, 1:] -= params.rho * field[:, :-1]
    quad = np.sum(quad_form(graph, params.alpha, resid))
    return float(
        n_weeks
        * (
            -0.5 * n_areas * _LOG_2PI
            - n_areas * np.log(params.sigma)
            + 0.5 * log_det_q(spectrum, params.alpha)
        )
        - quad / (2.0 * params.sigma**2)
    )


def noncentered(phi_star: StField, params: CarParams) -> StField:
    """
    Map standardized slices to the CAR-AR field.

    ``phi_1 = sigma * phi*_1`` and ``phi_t = rho * phi_{t-1} + sigma * phi*_t``.
    The first slice is scaled too, so that independent ``N(0, Q^-1)`` slices
    give exactly the CAR-AR prior.

    Args:
        phi_star: ``(L, T)`` standardized slices
        params: CAR-AR coefficients

    Returns:
        The ``(L, T)`` field
    """
    phi_star = np.asarray(phi_star, dtype=float)
    if phi_star.ndim != 2:
        raise DataValidationError(
            f"Expected an (L, T) field, got shape {phi_star.shape}"
        )
    return lfilter([params.sigma], [1.0, -params.rho], phi_star, axis=1)


def conditional_mean(graph: AreaGraph, alpha: float, x: np.ndarray, i: int) -> float:
    """
    Prior mean of ``x_i`` given the other entries of a Leroux slice.

    Returns:
        ``alpha / (N_i + 1 - alpha) * sum_{j ~ i} x_j``
    """
    x = np.asarray(x, dtype=float)
    _check_rows(graph, x)
    neighbor_sum = float(np.sum(x[graph.neighbors(i)]))
    return alpha / (graph.degrees[i] + 1.0 - alpha) * neighbor_sum


def sample_standardized_slices(
    graph: AreaGraph, alpha: float, n_weeks: int, rng: np.random.Generator
) -> StField:
    """
    Draw ``n_weeks`` independent ``N(0, Q(alpha)^-1)`` slices.

    Uses a dense Cholesky factor ``Q = R R'`` and solves ``R' u = z``.

    Raises:
        DataValidationError: If ``alpha >= 1``
        NumericDomainError: If the Cholesky factorization fails
    """
    if not alpha < 1.0:
        raise DataValidationError("Sampling needs alpha < 1", location=alpha)
    q = dense_precision(graph, alpha)
    try:
        factor = scipy.linalg.cholesky(q, lower=True)
    except np.linalg.LinAlgError as e:
        raise NumericDomainError(f"Cholesky of Q(alpha={alpha}) failed: {e}") from e
    z = rng.standard_normal((graph.n_areas, n_weeks))
    return scipy.linalg.solve_triangular(factor.T, z, lower=False)


def sample_car_field(
    graph: AreaGraph,
    spectrum: EigenSpectrum,
    params: CarParams,
    n_weeks: int,
    rng: np.random.Generator,
) -> StField:
    """
    Draw a CAR-AR field exactly.

    Args:
        graph: Adjacency structure
        spectrum: Eigenvalues of ``W + I - D``, used to check properness
        params: CAR-AR coefficients with ``alpha < 1``
        n_weeks: Number of time slices T
        rng: Stream owned by the caller

    Returns:
        The ``(L, T)`` field
    """
    log_det_q(spectrum, params.alpha)
    slices = sample_standardized_slices(graph, params.alpha, n_weeks, rng)
    return noncentered(slices, params)
