"""Stagewise initialization, blocked adaptive proposals, and the three-stage
multifidelity delayed-acceptance Metropolis kernel, plus summaries.

The kernel is generic over a target exposing ``in_box``, ``feasible`` (the
power-flow screen), and coarse/exact log-posterior callables, so the same
machinery runs both the power-system posterior and analytic toy targets.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .identify import fd_jacobian, gauss_newton_curvature
from .likelihood import Posterior
from .params import PriorSpec, in_box, to_physical
from .rng import substream


# -- targets -----------------------------------------------------------------

class PosteriorTarget:
    """Adapter binding a :class:`Posterior` to the kernel protocol."""

    def __init__(self, posterior: Posterior):
        self.posterior = posterior

    def in_box(self, eta: np.ndarray) -> bool:
        return in_box(eta, self.posterior.prior)

    def feasible(self, eta: np.ndarray) -> bool:
        return self.posterior.screen(eta)

    def log_coarse(self, eta: np.ndarray) -> float:
        return self.posterior.log_posterior(eta, "coarse").log_post

    def log_exact(self, eta: np.ndarray) -> float:
        return self.posterior.log_posterior(eta, "exact").log_post


class GaussianTarget:
    """Analytic Gaussian target whose coarse surrogate is mean-shifted.

    Oracle for validating that the delayed-acceptance correction removes the
    surrogate bias exactly.
    """

    def __init__(self, mean: np.ndarray, cov: np.ndarray,
                 coarse_bias: np.ndarray | None = None):
        self.mean = np.asarray(mean, dtype=float)
        self.prec = np.linalg.inv(np.asarray(cov, dtype=float))
        self.bias = (np.zeros_like(self.mean) if coarse_bias is None
                     else np.asarray(coarse_bias, dtype=float))

    def in_box(self, eta) -> bool:
        return True

    def feasible(self, eta) -> bool:
        return True

    def log_exact(self, eta) -> float:
        d = np.asarray(eta) - self.mean
        return -0.5 * float(d @ self.prec @ d)

    def log_coarse(self, eta) -> float:
        d = np.asarray(eta) - self.mean - self.bias
        return -0.5 * float(d @ self.prec @ d)


# -- proposal machinery --------------------------------------------------------

@dataclass(frozen=True)
class BlockPartition:
    names: tuple[str, ...]
    indices: tuple[np.ndarray, ...]   # cyclic schedule order

    def __post_init__(self):
        all_idx = np.concatenate(self.indices) if self.indices else np.array([])
        if len(np.unique(all_idx)) != all_idx.size:
            raise ValueError("blocks must be disjoint")

    @property
    def n_blocks(self) -> int:
        return len(self.names)

    @classmethod
    def blocked(cls, prior: PriorSpec, frozen: tuple[str, ...] = ()) -> "BlockPartition":
        """Dynamics / resistance / reactance blocks, minus any frozen ones."""
        sl = prior.class_slices()
        spec = {
            "dyn": np.arange(sl["M"].start, sl["D"].stop),
            "res": np.arange(sl["r"].start, sl["r"].stop),
            "rea": np.arange(sl["x"].start, sl["x"].stop),
        }
        unknown = set(frozen) - set(spec)
        if unknown:
            raise ValueError(f"unknown blocks to freeze: {sorted(unknown)}")
        names = tuple(n for n in ("dyn", "res", "rea") if n not in frozen)
        if not names:
            raise ValueError("cannot freeze every block")
        return cls(names=names, indices=tuple(spec[n] for n in names))

    @classmethod
    def full(cls, prior: PriorSpec) -> "BlockPartition":
        return cls(names=("all",), indices=(np.arange(prior.n_theta),))


@dataclass
class ProposalState:
    """Per-block adaptive scale and Cholesky factor, plus the blend base."""

    scales: list[float]
    chols: list[np.ndarray]
    base_cov: list[np.ndarray]
    accepts: list[int]
    trials: list[int]

    @classmethod
    def from_curvature(cls, partition: BlockPartition, H0: np.ndarray | None,
                       n_theta: int) -> "ProposalState":
        chols, bases = [], []
        for idx in partition.indices:
            d = idx.size
            if H0 is None:
                cov = np.eye(d)
            else:
                # Identity term is the exact latent-prior Hessian.
                cov = np.linalg.inv(H0[np.ix_(idx, idx)] + np.eye(d))
            cov = 0.5 * (cov + cov.T)
            bases.append(cov)
            chols.append(_safe_cholesky(cov))
        n = partition.n_blocks
        return cls(scales=[1.0] * n, chols=chols, base_cov=bases,
                   accepts=[0] * n, trials=[0] * n)

    def reset_window(self) -> None:
        self.accepts = [0] * len(self.accepts)
        self.trials = [0] * len(self.trials)


def _safe_cholesky(cov: np.ndarray, tries: int = 3) -> np.ndarray:
    jitter = 1e-10 * np.trace(cov) / cov.shape[0]
    for k in range(tries + 1):
        try:
            return np.linalg.cholesky(cov + (jitter * 10 ** k if k else 0.0) * np.eye(cov.shape[0]))
        except np.linalg.LinAlgError:
            continue
    raise np.linalg.LinAlgError("covariance not positive definite after jitter")


def propose(block: int, eta: np.ndarray, partition: BlockPartition,
            proposal: ProposalState, rng: np.random.Generator) -> np.ndarray:
    """Candidate differing from eta only on the selected block."""
    idx = partition.indices[block]
    d = idx.size
    z = rng.standard_normal(d)
    step = proposal.scales[block] * (2.38 / math.sqrt(d)) * (proposal.chols[block] @ z)
    cand = eta.copy()
    cand[idx] += step
    return cand


def adapt(proposal: ProposalState, partition: BlockPartition,
          history: np.ndarray, epoch: int, a_target: float = 0.24,
          c0: float = 1.0, t0: float = 10.0, window: int = 500,
          beta_max: float = 0.7) -> None:
    """Robbins-Monro scale update plus covariance re-blending (burn-in only)."""
    gamma = c0 / (1.0 + epoch / t0)
    for b, idx in enumerate(partition.indices):
        if proposal.trials[b] > 0:
            a_hat = proposal.accepts[b] / proposal.trials[b]
            proposal.scales[b] = float(np.exp(
                np.log(proposal.scales[b]) + gamma * (a_hat - a_target)))
        d = idx.size
        n_hist = history.shape[0]
        if n_hist >= max(2 * d + 4, 20):
            emp = np.cov(history[:, idx], rowvar=False)
            emp = np.atleast_2d(emp)
            beta = min(beta_max, n_hist / window)
            blend = beta * emp + (1.0 - beta) * proposal.base_cov[b]
            try:
                proposal.chols[b] = _safe_cholesky(0.5 * (blend + blend.T))
            except np.linalg.LinAlgError:
                pass  # keep the previous factor
    proposal.reset_window()


# -- delayed-acceptance kernel ---------------------------------------------------

@dataclass
class ChainState:
    eta: np.ndarray
    l_exact: float
    l_coarse: float


@dataclass
class RunLedger:
    proposals: dict[str, int] = field(default_factory=dict)
    box_rejects: int = 0
    stage0_rejects: int = 0
    stage1_accepts: int = 0
    stage1_rejects: int = 0
    stage2_accepts: int = 0
    stage2_rejects: int = 0
    exact_solves: int = 0
    coarse_solves: int = 0
    spot_checks: int = 0
    wall_clock: float = 0.0
    mode: str = "da"

    @property
    def total_proposals(self) -> int:
        return sum(self.proposals.values())

    @property
    def stage1_trials(self) -> int:
        return self.stage1_accepts + self.stage1_rejects

    @property
    def accepted(self) -> int:
        return self.stage2_accepts

    @property
    def acceptance_rate(self) -> float:
        n = self.total_proposals
        return self.stage2_accepts / n if n else float("nan")

    def exact_solve_reduction(self, iterations: int) -> float:
        return 1.0 - self.exact_solves / iterations if iterations else float("nan")

    def check_conserved(self) -> None:
        if self.mode == "da":
            assert self.total_proposals == (self.box_rejects + self.stage0_rejects
                                            + self.stage1_trials)
            assert self.stage1_accepts == self.stage2_accepts + self.stage2_rejects
            assert self.exact_solves == self.stage1_accepts + 1
            assert self.coarse_solves == self.stage1_trials + 1
        else:
            assert self.total_proposals == (self.box_rejects + self.stage0_rejects
                                            + self.stage2_accepts + self.stage2_rejects)
            assert self.exact_solves == (self.total_proposals - self.box_rejects
                                         - self.stage0_rejects + 1)

    def as_dict(self) -> dict:
        return {
            "mode": self.mode,
            "proposals_per_block": dict(self.proposals),
            "total_proposals": self.total_proposals,
            "box_rejects": self.box_rejects,
            "stage0_rejects": self.stage0_rejects,
            "stage1_accepts": self.stage1_accepts,
            "stage1_rejects": self.stage1_rejects,
            "stage2_accepts": self.stage2_accepts,
            "stage2_rejects": self.stage2_rejects,
            "exact_solves": self.exact_solves,
            "coarse_solves": self.coarse_solves,
            "spot_checks": self.spot_checks,
            "acceptance_rate": self.acceptance_rate,
            "wall_clock_s": self.wall_clock,
        }


def da_step(state: ChainState, candidate: np.ndarray, target,
            rng: np.random.Generator, ledger: RunLedger,
            exact_only: bool = False) -> tuple[ChainState, bool]:
    """One box/Stage-0/Stage-1/Stage-2 transition; returns (state, accepted)."""
    if not target.in_box(candidate):
        ledger.box_rejects += 1
        return state, False
    if not target.feasible(candidate):
        ledger.stage0_rejects += 1
        return state, False

    if exact_only:
        l_new = target.log_exact(candidate)
        ledger.exact_solves += 1
        if math.log(rng.uniform()) < l_new - state.l_exact:
            ledger.stage2_accepts += 1
            return ChainState(candidate, l_new, math.nan), True
        ledger.stage2_rejects += 1
        return state, False

    lc_new = target.log_coarse(candidate)
    ledger.coarse_solves += 1
    if math.log(rng.uniform()) >= lc_new - state.l_coarse:
        ledger.stage1_rejects += 1
        return state, False
    ledger.stage1_accepts += 1

    le_new = target.log_exact(candidate)
    ledger.exact_solves += 1
    log_a2 = (le_new - state.l_exact) - (lc_new - state.l_coarse)
    if math.log(rng.uniform()) < log_a2:
        ledger.stage2_accepts += 1
        return ChainState(candidate, le_new, lc_new), True
    ledger.stage2_rejects += 1
    return state, False


# -- chain driver -----------------------------------------------------------------

@dataclass(frozen=True)
class ChainConfig:
    n_burn: int = 3000
    n_samp: int = 2000
    n_thin: int = 2
    n_adapt: int = 50
    a_target: float = 0.24
    kernel: str = "da"            # "da" | "exact"
    spot_check_every: int = 500
    history_window: int = 500
    rm_c0: float = 1.0
    rm_t0: float = 10.0

    @property
    def n_iterations(self) -> int:
        return self.n_burn + self.n_samp * self.n_thin


@dataclass
class ChainResult:
    etas: np.ndarray              # kept samples (N_samp, n_theta)
    thetas: np.ndarray
    summary: "Summary"
    ledger: RunLedger
    eta0: np.ndarray
    seed: int
    config: ChainConfig
    partition_names: tuple[str, ...]
    final_scales: tuple[float, ...] = ()


def run_chain(posterior: Posterior, cfg: ChainConfig, seed: int,
              eta0: np.ndarray, H0: np.ndarray | None = None,
              partition: BlockPartition | None = None,
              theta_true: np.ndarray | None = None,
              label: str = "joint") -> ChainResult:
    """Cycle blocks with the DA (or exact-only) kernel; adapt during burn-in.

    Fully reproducible for a given seed/config/label.
    """
    t_start = time.perf_counter()
    prior = posterior.prior
    partition = partition or BlockPartition.blocked(prior)
    target = PosteriorTarget(posterior)
    rng = substream(seed, "chain", label, cfg.kernel)
    exact_only = cfg.kernel == "exact"

    eta0 = np.asarray(eta0, dtype=float).copy()
    if not (target.in_box(eta0) and target.feasible(eta0)):
        raise ValueError("initial point must be inside the box and feasible")
    l_exact = target.log_exact(eta0)
    l_coarse = math.nan if exact_only else target.log_coarse(eta0)
    if not np.isfinite(l_exact):
        raise ValueError("initial point has -inf exact posterior")
    state = ChainState(eta0, l_exact, l_coarse)

    ledger = RunLedger(mode=cfg.kernel)
    ledger.exact_solves = 1
    ledger.coarse_solves = 0 if exact_only else 1
    proposal = ProposalState.from_curvature(partition, H0, prior.n_theta)

    history = np.empty((cfg.history_window, prior.n_theta))
    n_hist = 0
    kept = np.empty((cfg.n_samp, prior.n_theta))
    n_kept = 0

    for i in range(1, cfg.n_iterations + 1):
        b = (i - 1) % partition.n_blocks
        name = partition.names[b]
        ledger.proposals[name] = ledger.proposals.get(name, 0) + 1
        cand = propose(b, state.eta, partition, proposal, rng)
        state, accepted = da_step(state, cand, target, rng, ledger, exact_only)
        proposal.trials[b] += 1
        proposal.accepts[b] += int(accepted)

        history[n_hist % cfg.history_window] = state.eta
        n_hist += 1

        if i > cfg.n_burn and (i - cfg.n_burn) % cfg.n_thin == 0:
            kept[n_kept] = state.eta
            n_kept += 1

        if cfg.n_adapt and i % cfg.n_adapt == 0 and i <= cfg.n_burn:
            hist = history[:min(n_hist, cfg.history_window)]
            adapt(proposal, partition, hist, epoch=i // cfg.n_adapt,
                  a_target=cfg.a_target, c0=cfg.rm_c0, t0=cfg.rm_t0,
                  window=cfg.history_window)

        if cfg.spot_check_every and i % cfg.spot_check_every == 0:
            _spot_check(state, target, exact_only)
            ledger.spot_checks += 1

    assert n_kept == cfg.n_samp
    thetas = np.exp(prior.mu_lambda[None, :] + prior.sigma_lambda[None, :] * kept)
    summary = summarize(thetas, prior.param_names(), theta_true)
    ledger.wall_clock = time.perf_counter() - t_start
    ledger.check_conserved()
    return ChainResult(etas=kept, thetas=thetas, summary=summary, ledger=ledger,
                       eta0=eta0, seed=seed, config=cfg,
                       partition_names=partition.names,
                       final_scales=tuple(proposal.scales))


def _spot_check(state: ChainState, target, exact_only: bool,
                tol: float = 1e-8) -> None:
    """Cache coherence: stored log-posteriors match fresh evaluations."""
    fresh = target.log_exact(state.eta)
    if abs(fresh - state.l_exact) > tol * max(1.0, abs(fresh)):
        raise RuntimeError("exact log-posterior cache incoherent")
    if not exact_only:
        fresh_c = target.log_coarse(state.eta)
        if abs(fresh_c - state.l_coarse) > tol * max(1.0, abs(fresh_c)):
            raise RuntimeError("coarse log-posterior cache incoherent")


def run_decoupled(posterior: Posterior, cfg: ChainConfig, seed: int,
                  eta0: np.ndarray, H0: np.ndarray | None,
                  frozen_blocks: tuple[str, ...],
                  theta_true: np.ndarray | None = None) -> ChainResult:
    """Same kernel with whole parameter classes pinned at eta = 0."""
    partition = BlockPartition.blocked(posterior.prior, frozen=tuple(frozen_blocks))
    eta0 = np.asarray(eta0, dtype=float).copy()
    frozen_idx = _frozen_indices(posterior.prior, frozen_blocks)
    eta0[frozen_idx] = 0.0
    return run_chain(posterior, cfg, seed, eta0, H0, partition, theta_true,
                     label="decoupled-" + "-".join(sorted(frozen_blocks)))


def _frozen_indices(prior: PriorSpec, frozen_blocks: tuple[str, ...]) -> np.ndarray:
    sl = prior.class_slices()
    spans = {"dyn": list(range(sl["M"].start, sl["D"].stop)),
             "res": list(range(sl["r"].start, sl["r"].stop)),
             "rea": list(range(sl["x"].start, sl["x"].stop))}
    idx: list[int] = []
    for b in frozen_blocks:
        idx.extend(spans[b])
    return np.array(sorted(idx), dtype=int)


# -- summaries ---------------------------------------------------------------------

@dataclass(frozen=True)
class Summary:
    names: list[str]
    mean: np.ndarray
    std: np.ndarray
    q025: np.ndarray
    q975: np.ndarray
    theta_true: np.ndarray | None = None
    rel_err: np.ndarray | None = None
    covered: np.ndarray | None = None

    def coverage_count(self) -> int | None:
        return None if self.covered is None else int(self.covered.sum())

    def class_rollup(self) -> dict[str, tuple[float, float]]:
        """Per-class (mean, max) relative posterior-mean error, in percent."""
        if self.rel_err is None:
            return {}
        out = {}
        for klass in ("M", "D", "r", "x"):
            sel = [i for i, n in enumerate(self.names) if n.startswith(klass + "_")]
            if sel:
                errs = 100.0 * self.rel_err[sel]
                out[klass] = (float(errs.mean()), float(errs.max()))
        return out

    def rows(self) -> list[dict]:
        out = []
        for i, n in enumerate(self.names):
            row = {"name": n, "mean": self.mean[i], "std": self.std[i],
                   "q2.5": self.q025[i], "q97.5": self.q975[i]}
            if self.theta_true is not None:
                row["true"] = self.theta_true[i]
                row["rel_err_pct"] = 100.0 * self.rel_err[i]
                row["covered"] = bool(self.covered[i])
            out.append(row)
        return out


def summarize(thetas: np.ndarray, names: list[str],
              theta_true: np.ndarray | None = None) -> Summary:
    """Posterior summaries in physical space, plus truth comparisons."""
    thetas = np.asarray(thetas, dtype=float)
    if thetas.shape[0] < 10:
        raise ValueError("need at least 10 samples to summarize")
    mean = thetas.mean(axis=0)
    std = thetas.std(axis=0, ddof=1)
    q025 = np.percentile(thetas, 2.5, axis=0)
    q975 = np.percentile(thetas, 97.5, axis=0)
    rel = cov = tt = None
    if theta_true is not None:
        tt = np.asarray(theta_true, dtype=float)
        rel = np.abs(mean - tt) / np.abs(tt)
        cov = (tt >= q025) & (tt <= q975)
    return Summary(names=list(names), mean=mean, std=std, q025=q025, q975=q975,
                   theta_true=tt, rel_err=rel, covered=cov)


# -- stagewise initialization -------------------------------------------------------

@dataclass(frozen=True)
class InitConfig:
    max_iter_stage: int = 8
    polish_steps: int = 2          # joint Gauss-Newton polish (<= 10)
    fd_step: float = 1e-4
    obj_rtol: float = 1e-3
    max_halvings: int = 20
    stage_fidelity: str = "coarse"
    polish_fidelity: str = "exact"


def stagewise_init(posterior: Posterior, cfg: InitConfig | None = None,
                   frozen_blocks: tuple[str, ...] = ()) -> tuple[np.ndarray, np.ndarray]:
    """Stage A (generator block on frequency channels), Stage B (network block
    on all channels), joint polish; returns (eta0, H0 at eta0)."""
    cfg = cfg or InitConfig()
    prior = posterior.prior
    sl = prior.class_slices()
    dyn = np.arange(sl["M"].start, sl["D"].stop)
    net = np.arange(sl["r"].start, sl["x"].stop)
    frozen_idx = set(_frozen_indices(prior, tuple(frozen_blocks)).tolist())
    dyn = np.array([i for i in dyn if i not in frozen_idx], dtype=int)
    net = np.array([i for i in net if i not in frozen_idx], dtype=int)

    eta = np.zeros(prior.n_theta)
    freq_rows = posterior.frequency_row_mask(cfg.stage_fidelity)
    if dyn.size:
        eta = _gauss_newton(posterior, eta, dyn, freq_rows, cfg.stage_fidelity,
                            cfg.max_iter_stage, cfg)
    if net.size:
        eta = _gauss_newton(posterior, eta, net, None, cfg.stage_fidelity,
                            cfg.max_iter_stage, cfg)
    active = np.array([i for i in range(prior.n_theta) if i not in frozen_idx], dtype=int)
    if cfg.polish_steps and active.size:
        eta = _gauss_newton(posterior, eta, active, None, cfg.polish_fidelity,
                            cfg.polish_steps, cfg)

    J = fd_jacobian(posterior, eta, fidelity=cfg.polish_fidelity, step=cfg.fd_step)
    H0 = gauss_newton_curvature(J)
    return eta, H0


def _objective(posterior: Posterior, eta: np.ndarray, rows, fidelity: str) -> float:
    try:
        r = posterior.standardized_residuals(eta, fidelity)
    except Exception:
        return math.inf
    if rows is not None:
        r = r[rows]
    return 0.5 * float(r @ r)


def _gauss_newton(posterior: Posterior, eta: np.ndarray, active: np.ndarray,
                  rows, fidelity: str, max_iter: int, cfg: InitConfig) -> np.ndarray:
    """Damped Gauss-Newton over the active coordinates, others held fixed.

    A non-improving step halves the damping up to ``max_halvings`` times,
    then the current iterate is kept.
    """
    prior = posterior.prior
    eta = eta.copy()
    obj = _objective(posterior, eta, rows, fidelity)
    if not np.isfinite(obj):
        raise ValueError("initialization start point infeasible")
    h = cfg.fd_step
    for _ in range(max_iter):
        r0 = posterior.standardized_residuals(eta, fidelity)
        if rows is not None:
            r0 = r0[rows]
        J = np.empty((r0.size, active.size))
        for c, i in enumerate(active):
            up, dn = eta.copy(), eta.copy()
            up[i] += h
            dn[i] -= h
            ru = _try_rows(posterior, up, rows, fidelity)
            rd = _try_rows(posterior, dn, rows, fidelity)
            if ru is not None and rd is not None:
                J[:, c] = (ru - rd) / (2 * h)
            elif ru is not None:
                J[:, c] = (ru - r0) / h
            elif rd is not None:
                J[:, c] = (r0 - rd) / h
            else:
                J[:, c] = 0.0
        gram = J.T @ J
        gram += (1e-9 * max(np.trace(gram), 1.0) / active.size) * np.eye(active.size)
        try:
            delta = np.linalg.solve(gram, -J.T @ r0)
        except np.linalg.LinAlgError:
            break
        alpha = 1.0
        improved = False
        for _ in range(cfg.max_halvings):
            cand = eta.copy()
            cand[active] += alpha * delta
            cand = np.clip(cand, prior.eta_min + 1e-9, prior.eta_max - 1e-9)
            cand_obj = _objective(posterior, cand, rows, fidelity)
            if cand_obj < obj:
                rel_drop = (obj - cand_obj) / max(obj, 1e-300)
                eta, obj = cand, cand_obj
                improved = True
                break
            alpha *= 0.5
        if not improved:
            break
        if rel_drop < cfg.obj_rtol:
            break
    return eta


def _try_rows(posterior: Posterior, eta: np.ndarray, rows, fidelity: str):
    try:
        r = posterior.standardized_residuals(eta, fidelity)
    except Exception:
        return None
    return r if rows is None else r[rows]
