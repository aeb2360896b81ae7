"""Weighted multi-experiment likelihood and the exact/coarse log-posteriors.

Additive constants are dropped everywhere on the sampling path (they cancel
in Metropolis ratios); the full Gaussian log-likelihood with normalization
terms is kept separately for the noise-inflation diagnostic.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from .dae import (DaeModel, PowerFlowDiverged, SolverConfig, StepDiverged,
                  integrate, solve_equilibrium)
from .experiments import MeasurementSet
from .grid import NetworkCase
from .params import PriorSpec, in_box, log_prior, to_physical


@dataclass(frozen=True)
class FidelityConfig:
    decim_exact: int = 16
    decim_coarse: int = 24
    exact: SolverConfig = field(default_factory=lambda: SolverConfig(
        dt=0.01, newton_tol=1e-10, fidelity="exact"))
    coarse: SolverConfig = field(default_factory=lambda: SolverConfig(
        dt=0.02, newton_tol=1e-7, fidelity="coarse"))
    # The coarse quadratic is inflated by the subsample ratio so coarse and
    # exact log-posterior increments share the same information scale.
    coarse_scale: float | None = None

    def __post_init__(self):
        if self.decim_coarse <= self.decim_exact:
            raise ValueError("coarse decimation must exceed the exact one")
        span = self.decim_exact * self.exact.dt
        for cfg in (self.exact, self.coarse):
            if abs(span / cfg.dt - round(span / cfg.dt)) > 1e-9:
                raise ValueError("integrator step must divide the fit-grid spacing")
        if self.coarse_scale is None:
            object.__setattr__(self, "coarse_scale",
                               self.decim_coarse / self.decim_exact)

    def solver(self, fidelity: str) -> SolverConfig:
        if fidelity == "exact":
            return self.exact
        if fidelity == "coarse":
            return self.coarse
        raise ValueError(f"unknown fidelity {fidelity!r}")

    def coarse_subset(self, n_exact: int) -> np.ndarray:
        """Fit-grid indices used by the coarse likelihood (nearest-lower rule)."""
        ratio = self.decim_coarse / self.decim_exact
        n_coarse = int(np.floor((n_exact - 1) / ratio)) + 1
        return np.floor(ratio * np.arange(n_coarse)).astype(int)


@dataclass(frozen=True)
class PosteriorEval:
    log_post: float
    log_like: float
    log_prior: float
    fidelity: str
    feasible: bool
    n_forward_solves: int


class Posterior:
    """Log-posterior over standardized coordinates, at two fidelities.

    Holds the frozen measurement sets; evaluations are pure in eta. A small
    cache keyed on eta avoids re-solving the equilibrium between the Stage-0
    screen and the subsequent likelihood evaluations of the same proposal.
    """

    def __init__(self, case: NetworkCase, prior: PriorSpec,
                 measurements: list[MeasurementSet],
                 monitored_buses: tuple[int, ...],
                 fidelity: FidelityConfig | None = None,
                 horizon: float = 10.0):
        self.case = case
        self.prior = prior
        self.measurements = list(measurements)
        self.monitored = tuple(monitored_buses)
        self.fidelity = fidelity or FidelityConfig()
        self.horizon = horizon
        self.times = self.measurements[0].times
        for m in self.measurements:
            if m.times.shape != self.times.shape or np.any(m.times != self.times):
                raise ValueError("all experiments must share the fit grid")
        self.coarse_idx = self.fidelity.coarse_subset(self.times.size)
        # standardization factors sqrt(w)/sigma_eff, per experiment
        self._sw = [np.sqrt(m.weights) / m.sigma_eff[:, None] for m in self.measurements]
        self._profiles = [m.schedule.load_profile(case) for m in self.measurements]
        self.n_pf_solves = 0
        self.n_exact_evals = 0
        self.n_coarse_evals = 0
        self._last_attempted = 0
        self._cache: OrderedDict[bytes, tuple] = OrderedDict()

    # -- forward-model plumbing ---------------------------------------------

    def _model_op(self, eta: np.ndarray):
        """(model, op) at theta(eta); raises PowerFlowDiverged when infeasible."""
        key = np.asarray(eta, dtype=float).tobytes()
        hit = self._cache.get(key)
        if hit is not None:
            self._cache.move_to_end(key)
            if isinstance(hit, Exception):
                raise hit
            return hit
        theta = self.prior.split(to_physical(eta, self.prior))
        model = DaeModel(self.case, theta, self.monitored)
        self.n_pf_solves += 1
        try:
            op = solve_equilibrium(model)
        except PowerFlowDiverged as err:
            self._remember(key, err)
            raise
        self._remember(key, (model, op))
        return model, op

    def _remember(self, key: bytes, value) -> None:
        self._cache[key] = value
        while len(self._cache) > 8:
            self._cache.popitem(last=False)

    def screen(self, eta: np.ndarray) -> bool:
        """Stage-0 feasibility: box membership plus power-flow convergence."""
        if not in_box(np.asarray(eta, dtype=float), self.prior):
            return False
        try:
            self._model_op(eta)
        except PowerFlowDiverged:
            return False
        return True

    def _predict(self, eta: np.ndarray, fidelity: str) -> list[np.ndarray]:
        """Model channels (p, n_k) per experiment on the fidelity grid."""
        model, op = self._model_op(eta)
        cfg = self.fidelity.solver(fidelity)
        times = self.times if fidelity == "exact" else self.times[self.coarse_idx]
        out = []
        self._last_attempted = 0
        for prof in self._profiles:
            self._last_attempted += 1
            traj = integrate(model, op, prof, self.horizon, cfg, sample_times=times)
            out.append(traj.channels.T)
        return out

    # -- spec operations ------------------------------------------------------

    def residuals(self, eta: np.ndarray, fidelity: str = "exact") -> list[np.ndarray]:
        """y - h(x(t; theta(eta))) per experiment, (p, n_k) on the fidelity grid."""
        preds = self._predict(eta, fidelity)
        cols = slice(None) if fidelity == "exact" else self.coarse_idx
        return [m.y[:, cols] - pred for m, pred in zip(self.measurements, preds)]

    def log_likelihood(self, eta: np.ndarray, fidelity: str = "exact") -> float:
        """-1/2 sum of weighted standardized squared residuals (constant dropped)."""
        try:
            res = self.residuals(eta, fidelity)
        except (PowerFlowDiverged, StepDiverged):
            return -math.inf
        return self._quadratic(res, fidelity)

    def _quadratic(self, residuals: list[np.ndarray], fidelity: str) -> float:
        cols = slice(None) if fidelity == "exact" else self.coarse_idx
        total = 0.0
        for sw, r in zip(self._sw, residuals):
            z = sw[:, cols] * r
            total += float(z.ravel() @ z.ravel())
        if fidelity == "coarse":
            total *= self.fidelity.coarse_scale
        return -0.5 * total

    def log_likelihood_full(self, eta: np.ndarray) -> float:
        """Exact-fidelity Gaussian log-likelihood including normalization."""
        quad = self.log_likelihood(eta, "exact")
        if not np.isfinite(quad):
            return -math.inf
        const = 0.0
        for m in self.measurements:
            n_k = m.times.size
            const -= n_k * float(np.sum(np.log(m.sigma_eff)))
            const -= 0.5 * n_k * m.sigma_eff.size * math.log(2.0 * math.pi)
        return quad + const

    def log_posterior(self, eta: np.ndarray, fidelity: str = "exact") -> PosteriorEval:
        """Box gate, Stage-0 feasibility, then likelihood + prior."""
        eta = np.asarray(eta, dtype=float)
        lp = log_prior(eta, self.prior)
        if not np.isfinite(lp):
            return PosteriorEval(-math.inf, -math.inf, lp, fidelity, False, 0)
        try:
            self._model_op(eta)
        except PowerFlowDiverged:
            return PosteriorEval(-math.inf, -math.inf, lp, fidelity, False, 0)
        ll = self.log_likelihood(eta, fidelity)
        if fidelity == "exact":
            self.n_exact_evals += 1
        else:
            self.n_coarse_evals += 1
        if not np.isfinite(ll):
            # solves attempted before the failing experiment, plus the failure
            return PosteriorEval(-math.inf, -math.inf, lp, fidelity, False,
                                 self._last_attempted)
        return PosteriorEval(ll + lp, ll, lp, fidelity, True, len(self.measurements))

    def standardized_residuals(self, eta: np.ndarray, fidelity: str = "exact") -> np.ndarray:
        """Stacked sqrt(w) r / sigma_eff over experiments, for curvature work."""
        res = self.residuals(eta, fidelity)
        cols = slice(None) if fidelity == "exact" else self.coarse_idx
        return np.concatenate([(sw[:, cols] * r).ravel()
                               for sw, r in zip(self._sw, res)])

    def frequency_row_mask(self, fidelity: str = "exact") -> np.ndarray:
        """Mask over the stacked residual rows selecting frequency channels."""
        n_k = self.times.size if fidelity == "exact" else self.coarse_idx.size
        masks = []
        for m in self.measurements:
            per = np.zeros((m.sigma_eff.size, n_k), dtype=bool)
            per[-self.case.n_gen:, :] = True
            masks.append(per.ravel())
        return np.concatenate(masks)


def noise_ratio_diagnostic(posterior: Posterior, eta_center: np.ndarray) -> float:
    """|l_data| over the prior quadratic scale at the posterior center.

    Sane inflation keeps this in about [1e3, 1e6]; much larger means the
    prior is irrelevant and the posterior pathologically sharp.
    """
    eta = np.asarray(eta_center, dtype=float)
    l_full = posterior.log_likelihood_full(eta)
    prior_scale = max(0.5 * float(eta @ eta), 1e-12)
    return abs(l_full) / prior_scale
