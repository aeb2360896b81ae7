"""Physical parameter vector, standardized latent coordinates, and priors.

Parameters are ordered [M, D, r, x]. Latent coordinates are
eta = (log theta - log theta_nom) / sigma_lambda, giving a unit-variance
Gaussian prior truncated to a box.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

# Two-sided 95% normal quantile; prior widths are specified as the
# multiplicative factor sitting at the 97.5th percentile.
Z95 = float(ndtri(0.975))


@dataclass(frozen=True)
class ParamVector:
    M: np.ndarray
    D: np.ndarray
    r: np.ndarray
    x: np.ndarray

    def __post_init__(self):
        for name in ("M", "D", "r", "x"):
            arr = np.atleast_1d(np.asarray(getattr(self, name), dtype=float))
            if np.any(arr <= 0.0) or not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} entries must be finite and > 0")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_theta(self) -> int:
        return self.M.size + self.D.size + self.r.size + self.x.size

    def to_array(self) -> np.ndarray:
        return np.concatenate([self.M, self.D, self.r, self.x])

    @classmethod
    def from_array(cls, theta: np.ndarray, n_gen: int, n_r: int, n_x: int) -> "ParamVector":
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (2 * n_gen + n_r + n_x,):
            raise ValueError("theta has wrong length")
        m, d = theta[:n_gen], theta[n_gen:2 * n_gen]
        r = theta[2 * n_gen:2 * n_gen + n_r]
        x = theta[2 * n_gen + n_r:]
        return cls(M=m, D=d, r=r, x=x)


@dataclass(frozen=True)
class LatentVector:
    eta: np.ndarray

    def __post_init__(self):
        eta = np.asarray(self.eta, dtype=float)
        if not np.all(np.isfinite(eta)):
            raise ValueError("eta must be finite")
        eta.setflags(write=False)
        object.__setattr__(self, "eta", eta)


@dataclass(frozen=True)
class PriorSpec:
    """Log-normal prior centered at nominal values, plus the latent box."""

    mu_lambda: np.ndarray     # log theta_nom
    sigma_lambda: np.ndarray  # per-parameter log-std
    eta_min: np.ndarray
    eta_max: np.ndarray
    n_gen: int
    n_r: int
    n_x: int

    def __post_init__(self):
        for name in ("mu_lambda", "sigma_lambda", "eta_min", "eta_max"):
            arr = np.asarray(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if np.any(self.sigma_lambda <= 0.0):
            raise ValueError("sigma_lambda must be > 0")
        if np.any(self.eta_min >= self.eta_max):
            raise ValueError("eta_min must be < eta_max componentwise")

    @property
    def n_theta(self) -> int:
        return self.mu_lambda.size

    @property
    def theta_nom(self) -> np.ndarray:
        return np.exp(self.mu_lambda)

    def class_slices(self) -> dict[str, slice]:
        ng, nr = self.n_gen, self.n_r
        return {
            "M": slice(0, ng),
            "D": slice(ng, 2 * ng),
            "r": slice(2 * ng, 2 * ng + nr),
            "x": slice(2 * ng + nr, 2 * ng + nr + self.n_x),
        }

    def param_names(self) -> list[str]:
        names = [f"M_{i + 1}" for i in range(self.n_gen)]
        names += [f"D_{i + 1}" for i in range(self.n_gen)]
        names += [f"r_{i + 1}" for i in range(self.n_r)]
        names += [f"x_{i + 1}" for i in range(self.n_x)]
        return names

    def split(self, theta: np.ndarray) -> ParamVector:
        return ParamVector.from_array(theta, self.n_gen, self.n_r, self.n_x)


def to_physical(eta: np.ndarray, prior: PriorSpec) -> np.ndarray:
    """theta = exp(mu + sigma * eta), componentwise."""
    eta = np.asarray(eta, dtype=float)
    if eta.shape != prior.mu_lambda.shape:
        raise ValueError("eta has wrong length")
    return np.exp(prior.mu_lambda + prior.sigma_lambda * eta)


def to_latent(theta: np.ndarray, prior: PriorSpec) -> np.ndarray:
    """Inverse of :func:`to_physical`."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != prior.mu_lambda.shape:
        raise ValueError("theta has wrong length")
    if np.any(theta <= 0.0):
        raise ValueError("theta entries must be > 0")
    return (np.log(theta) - prior.mu_lambda) / prior.sigma_lambda


def in_box(eta: np.ndarray, prior: PriorSpec) -> bool:
    return bool(np.all(eta >= prior.eta_min) and np.all(eta <= prior.eta_max))


def log_prior(eta: np.ndarray, prior: PriorSpec) -> float:
    """-||eta||^2 / 2 inside the admissible box, -inf outside."""
    eta = np.asarray(eta, dtype=float)
    if not in_box(eta, prior):
        return -np.inf
    return -0.5 * float(eta @ eta)


# 95% prior width and box truncation per parameter class (multiplicative).
DEFAULT_WIDTHS = {"M": 0.30, "D": 0.60, "r": 0.25, "x": 0.25}
DEFAULT_BOXES = {"M": 0.50, "D": 0.90, "r": 0.45, "x": 0.45}


def default_priors(case, widths: dict[str, float] | None = None,
                   boxes: dict[str, float] | None = None) -> PriorSpec:
    """Class-wise log-normal priors around the case nominals.

    A width w puts theta/theta_nom = 1+w at the 97.5th prior percentile;
    a box c truncates theta/theta_nom to [1/(1+c), 1+c] (symmetric in
    log-space).
    """
    widths = {**DEFAULT_WIDTHS, **(widths or {})}
    boxes = {**DEFAULT_BOXES, **(boxes or {})}
    ng = case.n_gen
    m_nom = np.array([g.M_nom for g in case.generators])
    d_nom = np.array([g.D_nom for g in case.generators])
    r_nom = case.nominal_r()
    x_nom = case.nominal_x()
    theta_nom = np.concatenate([m_nom, d_nom, r_nom, x_nom])

    sigma = np.empty(theta_nom.size)
    bound = np.empty(theta_nom.size)
    spans = [("M", ng), ("D", ng), ("r", r_nom.size), ("x", x_nom.size)]
    pos = 0
    for klass, n in spans:
        s = np.log1p(widths[klass]) / Z95
        sigma[pos:pos + n] = s
        bound[pos:pos + n] = np.log1p(boxes[klass]) / s
        pos += n

    return PriorSpec(
        mu_lambda=np.log(theta_nom),
        sigma_lambda=sigma,
        eta_min=-bound,
        eta_max=bound,
        n_gen=ng,
        n_r=r_nom.size,
        n_x=x_nom.size,
    )
