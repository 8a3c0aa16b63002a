"""
Model parameters and their unconstrained image.

The sampler works on a flat real vector. A :class:`Layout` names the slices of
that vector; :func:`transform` maps it to a :class:`ParameterSet` in
constrained space together with the log-Jacobian of the change of variables:

* identity for ``beta``, ``eta`` and the standardized slices ``phi_star`` and
  ``psi_star``;
* logistic for ``alpha`` and ``rho``;
* exponential for ``sigma``;
* stick-breaking for the lag weights ``w``.
"""

from dataclasses import dataclass
from functools import cached_property
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit, log_expit, logit

from poiar.car import CarParams
from poiar.errors import DataValidationError

FIELDS = ("phi", "psi")


@dataclass(frozen=True)
class Block:
    """A named slice of the unconstrained vector."""

    name: str
    start: int
    size: int

    @property
    def slice(self) -> slice:
        return slice(self.start, self.start + self.size)


@dataclass(frozen=True)
class Layout:
    """
    Position of every parameter block in the unconstrained vector.

    Order: ``beta``, ``eta``, ``w_raw`` (tau - 1 entries), then for each
    active random effect ``alpha_<f>``, ``rho_<f>``, ``sigma_<f>`` and the
    row-major ``(L, T)`` block ``<f>_star``.

    Attributes:
        n_beta: Number of growth-rate coefficients (intercept included)
        n_eta: Number of baseline coefficients (intercept included)
        tau: Lag depth
        n_areas: Number of areas L
        n_weeks: Number of weeks T
        has_phi: Whether the growth-rate random effect is sampled
        has_psi: Whether the baseline random effect is sampled
    """

    n_beta: int
    n_eta: int
    tau: int
    n_areas: int
    n_weeks: int
    has_phi: bool
    has_psi: bool

    @cached_property
    def blocks(self) -> dict[str, Block]:
        sizes = [("beta", self.n_beta), ("eta", self.n_eta), ("w_raw", self.tau - 1)]
        for field in self.fields:
            sizes += [
                (f"alpha_{field}", 1),
                (f"rho_{field}", 1),
                (f"sigma_{field}", 1),
                (f"{field}_star", self.n_areas * self.n_weeks),
            ]
        blocks = {}
        start = 0
        for name, size in sizes:
            blocks[name] = Block(name, start, size)
            start += size
        return blocks

    @property
    def fields(self) -> tuple[str, ...]:
        """Active random effects, a subset of ``("phi", "psi")``."""
        return tuple(f for f, on in zip(FIELDS, (self.has_phi, self.has_psi)) if on)

    @property
    def dim(self) -> int:
        return sum(block.size for block in self.blocks.values())

    def __getitem__(self, name: str) -> slice:
        return self.blocks[name].slice

    def __contains__(self, name: str) -> bool:
        return name in self.blocks

    @cached_property
    def constrained_names(self) -> tuple[str, ...]:
        """Column names of :meth:`ParameterSet.flatten_constrained`."""
        names = [f"beta[{i}]" for i in range(self.n_beta)]
        names += [f"eta[{i}]" for i in range(self.n_eta)]
        names += [f"w[{i}]" for i in range(self.tau)]
        for field in self.fields:
            names += [f"alpha_{field}", f"rho_{field}", f"sigma_{field}"]
            names += [
                f"{field}_star[{area},{t}]"
                for area in range(self.n_areas)
                for t in range(self.n_weeks)
            ]
        return tuple(names)

    def to_dict(self) -> dict:
        """Serializable description, written into run manifests."""
        return {
            "n_beta": self.n_beta,
            "n_eta": self.n_eta,
            "tau": self.tau,
            "n_areas": self.n_areas,
            "n_weeks": self.n_weeks,
            "has_phi": self.has_phi,
            "has_psi": self.has_psi,
            "dim": self.dim,
            "blocks": {
                name: [block.start, block.size] for name, block in self.blocks.items()
            },
        }


@dataclass(frozen=True, eq=False)
class ParameterSet:
    """
    All model parameters in constrained space.

    Random-effect entries are None when the variant excludes them; the model
    then uses a zero field.
    """

    beta: np.ndarray
    eta: np.ndarray
    w: np.ndarray
    theta_phi: Optional[CarParams] = None
    theta_psi: Optional[CarParams] = None
    phi_star: Optional[np.ndarray] = None
    psi_star: Optional[np.ndarray] = None

    def __post_init__(self):
        w = np.asarray(self.w, dtype=float)
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-9:
            raise DataValidationError("w must be a positive simplex", location=w)
        for field in FIELDS:
            theta = getattr(self, f"theta_{field}")
            star = getattr(self, f"{field}_star")
            if (theta is None) != (star is None):
                raise DataValidationError(
                    f"theta_{field} and {field}_star must be given together"
                )

    def theta(self, field: str) -> Optional[CarParams]:
        return getattr(self, f"theta_{field}")

    def star(self, field: str) -> Optional[np.ndarray]:
        return getattr(self, f"{field}_star")

    def flatten_constrained(self, layout: Layout) -> np.ndarray:
        """
        Concatenate constrained values in the order of ``layout.constrained_names``.
        """
        parts = [np.ravel(self.beta), np.ravel(self.eta), np.ravel(self.w)]
        for field in layout.fields:
            theta = self.theta(field)
            parts.append(np.array([theta.alpha, theta.rho, theta.sigma]))
            parts.append(np.ravel(self.star(field)))
        return np.concatenate(parts).astype(float)

    @classmethod
    def from_constrained(
        cls, values: Sequence[float], layout: Layout
    ) -> "ParameterSet":
        """
        Inverse of :meth:`flatten_constrained`.

        Args:
            values: Constrained values ordered as ``layout.constrained_names``
            layout: Parameter layout

        Returns:
            The parameter set
        """
        values = np.asarray(values, dtype=float)
        if len(values) != len(layout.constrained_names):
            raise DataValidationError(
                f"Expected {len(layout.constrained_names)} values, got {len(values)}"
            )
        pos = 0

        def take(n):
            nonlocal pos
            out = values[pos : pos + n]
            pos += n
            return out

        kwargs = {
            "beta": take(layout.n_beta),
            "eta": take(layout.n_eta),
            "w": take(layout.tau),
        }
        for field in layout.fields:
            alpha, rho, sigma = take(3)
            kwargs[f"theta_{field}"] = CarParams(float(alpha), float(rho), float(sigma))
            kwargs[f"{field}_star"] = take(layout.n_areas * layout.n_weeks).reshape(
                layout.n_areas, layout.n_weeks
            )
        return cls(**kwargs)


def stick_breaking(y: np.ndarray) -> tuple[np.ndarray, float]:
    """
    Map ``K - 1`` reals to a point of the K-simplex.

    ``z_k = expit(y_k - log(K - k))``, ``w_k = z_k * prod_{j<k}(1 - z_j)`` and
    ``w_K`` takes the remaining stick. ``y = 0`` gives the uniform simplex.

    Returns:
        The simplex point and the log-Jacobian
    """
    y = np.asarray(y, dtype=float)
    k = len(y) + 1
    shifted = y - np.log(k - 1 - np.arange(k - 1))
    z = expit(shifted)
    remaining = np.concatenate([[1.0], np.cumprod(1.0 - z)])
    w = np.append(remaining[:-1] * z, remaining[-1])
    log_jac = np.sum(
        log_expit(shifted) + log_expit(-shifted) + np.log(remaining[:-1])
    )
    return w, float(log_jac)


def stick_breaking_vjp(y: np.ndarray, grad_w: np.ndarray) -> np.ndarray:
    """
    Gradient with respect to ``y`` of ``f(w(y)) + log_jacobian(y)``.

    Args:
        y: Unconstrained stick-breaking coordinates
        grad_w: Gradient of ``f`` with respect to the K simplex entries

    Returns:
        The gradient with respect to ``y``
    """
    y = np.asarray(y, dtype=float)
    k = len(y) + 1
    z = expit(y - np.log(k - 1 - np.arange(k - 1)))
    remaining = np.concatenate([[1.0], np.cumprod(1.0 - z)])
    grad_y = np.empty(k - 1)
    grad_rem = grad_w[-1]
    for i in range(k - 2, -1, -1):
        grad_z = (grad_w[i] - grad_rem) * remaining[i]
        grad_y[i] = grad_z * z[i] * (1.0 - z[i]) + 1.0 - 2.0 * z[i]
        grad_rem = grad_w[i] * z[i] + grad_rem * (1.0 - z[i]) + 1.0 / remaining[i]
    return grad_y


def inverse_stick_breaking(w: np.ndarray) -> np.ndarray:
    """Inverse of :func:`stick_breaking`."""
    w = np.asarray(w, dtype=float)
    k = len(w)
    remaining = 1.0 - np.concatenate([[0.0], np.cumsum(w[:-1])])
    z = w[:-1] / remaining[:-1]
    return logit(z) + np.log(k - 1 - np.arange(k - 1))


def transform(z: np.ndarray, layout: Layout) -> tuple[ParameterSet, float]:
    """
    Map an unconstrained vector to constrained parameters.

    Args:
        z: Flat unconstrained vector of length ``layout.dim``
        layout: Block positions

    Returns:
        The parameter set and the log-Jacobian of the transform

    Raises:
        DataValidationError: If ``z`` does not match the layout
    """
    z = np.asarray(z, dtype=float)
    if z.shape != (layout.dim,):
        raise DataValidationError(
            f"Expected an unconstrained vector of length {layout.dim}, got {z.shape}"
        )
    w, log_jac = stick_breaking(z[layout["w_raw"]])
    kwargs = {"beta": z[layout["beta"]], "eta": z[layout["eta"]], "w": w}
    for field in layout.fields:
        u_alpha = z[layout[f"alpha_{field}"]][0]
        u_rho = z[layout[f"rho_{field}"]][0]
        u_sigma = z[layout[f"sigma_{field}"]][0]
        for u in (u_alpha, u_rho):
            log_jac += log_expit(u) + log_expit(-u)
        log_jac += u_sigma
        kwargs[f"theta_{field}"] = CarParams(
            alpha=float(expit(u_alpha)),
            rho=float(expit(u_rho)),
            sigma=float(np.exp(u_sigma)),
        )
        kwargs[f"{field}_star"] = z[layout[f"{field}_star"]].reshape(
            layout.n_areas, layout.n_weeks
        )
    return ParameterSet(**kwargs), float(log_jac)


def untransform(params: ParameterSet, layout: Layout) -> np.ndarray:
    """Inverse of :func:`transform`."""
    if len(params.w) != layout.tau:
        raise DataValidationError(f"Expected {layout.tau} lag weights")
    z = np.empty(layout.dim)
    z[layout["beta"]] = params.beta
    z[layout["eta"]] = params.eta
    z[layout["w_raw"]] = inverse_stick_breaking(params.w)
    for field in layout.fields:
        theta = params.theta(field)
        if theta is None:
            raise DataValidationError(f"Layout expects theta_{field}")
        z[layout[f"alpha_{field}"]] = logit(theta.alpha)
        z[layout[f"rho_{field}"]] = logit(theta.rho)
        z[layout[f"sigma_{field}"]] = np.log(theta.sigma)
        z[layout[f"{field}_star"]] = np.ravel(params.star(field))
    return z
