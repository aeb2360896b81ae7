"""Curvature diagnostics: finite-difference Jacobians, the Gauss-Newton
curvature, the block co-identifiability map, and (for validation) the
continuous variational sensitivity system.

The variational integrator is a validation oracle only; the inference path
uses finite differences of the stacked standardized residual map.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .dae import (DaeModel, LoadProfile, OperatingPoint, PowerFlowDiverged,
                  SensitivitySingular, SolverConfig, StepDiverged, integrate,
                  segment_steps, solve_algebraic)
from .likelihood import Posterior
from .params import PriorSpec, to_physical

CLASS_ORDER = ("M", "D", "r", "x")


@dataclass(frozen=True)
class CurvatureReport:
    J_eta: np.ndarray                 # stacked standardized residual Jacobian
    H: np.ndarray                     # n_theta x n_theta Gauss-Newton curvature
    blocks: dict[str, np.ndarray]     # class name -> parameter indices
    I: np.ndarray                     # 4x4 co-identifiability map
    reference_eta: np.ndarray


@dataclass(frozen=True)
class SensitivityRun:
    times: np.ndarray
    S_d: np.ndarray                   # (n_times, n_d, n_theta)
    S_a: np.ndarray                   # (n_times, n_a, n_theta)
    du0: np.ndarray                   # d[t_ref, e_fd]/dtheta, (2 n_gen, n_theta)
    constraint_residual: float        # max |g_xd S_d + g_xa S_a + g_theta|


def fd_jacobian(posterior: Posterior, eta_ref: np.ndarray,
                fidelity: str = "exact", step: float = 1e-4) -> np.ndarray:
    """Central-difference Jacobian of the stacked standardized residuals.

    Falls back to a one-sided difference (with a warning) for coordinates
    whose perturbed point is infeasible. Costs 2 n_theta forward evaluations.
    """
    eta_ref = np.asarray(eta_ref, dtype=float)
    base = None
    n = eta_ref.size
    cols = []
    for i in range(n):
        up, dn = eta_ref.copy(), eta_ref.copy()
        up[i] += step
        dn[i] -= step
        r_up = _try_residuals(posterior, up, fidelity)
        r_dn = _try_residuals(posterior, dn, fidelity)
        if r_up is not None and r_dn is not None:
            cols.append((r_up - r_dn) / (2.0 * step))
            continue
        if base is None:
            base = posterior.standardized_residuals(eta_ref, fidelity)
        if r_up is not None:
            warnings.warn(f"one-sided difference for coordinate {i} (lower point infeasible)")
            cols.append((r_up - base) / step)
        elif r_dn is not None:
            warnings.warn(f"one-sided difference for coordinate {i} (upper point infeasible)")
            cols.append((base - r_dn) / step)
        else:
            raise PowerFlowDiverged(f"both perturbations infeasible for coordinate {i}")
    return np.column_stack(cols)


def _try_residuals(posterior: Posterior, eta: np.ndarray, fidelity: str):
    try:
        return posterior.standardized_residuals(eta, fidelity)
    except (PowerFlowDiverged, StepDiverged):
        return None


def gauss_newton_curvature(J: np.ndarray) -> np.ndarray:
    """H = J^T J, symmetrized."""
    if not np.all(np.isfinite(J)):
        raise ValueError("Jacobian contains non-finite entries")
    h = J.T @ J
    return 0.5 * (h + h.T)


def co_identifiability(H: np.ndarray, blocks: dict[str, np.ndarray]) -> np.ndarray:
    """Normalized cross-block curvature map.

    I_XY = ||H_XY||_F / sqrt(||H_XX||_F ||H_YY||_F), unit diagonal.
    """
    names = [k for k in CLASS_ORDER if k in blocks]
    diag = {}
    for name in names:
        idx = blocks[name]
        diag[name] = np.linalg.norm(H[np.ix_(idx, idx)])
        if diag[name] == 0.0:
            raise ValueError(f"zero diagonal block {name!r}: index undefined")
    out = np.eye(len(names))
    for a, na in enumerate(names):
        for b in range(a + 1, len(names)):
            nb = names[b]
            val = np.linalg.norm(H[np.ix_(blocks[na], blocks[nb])])
            out[a, b] = out[b, a] = val / np.sqrt(diag[na] * diag[nb])
    return out


def class_blocks(prior: PriorSpec) -> dict[str, np.ndarray]:
    return {name: np.arange(sl.start, sl.stop)
            for name, sl in prior.class_slices().items()}


def curvature_report(posterior: Posterior, eta_ref: np.ndarray,
                     fidelity: str = "exact", step: float = 1e-4) -> CurvatureReport:
    J = fd_jacobian(posterior, eta_ref, fidelity, step)
    H = gauss_newton_curvature(J)
    blocks = class_blocks(posterior.prior)
    return CurvatureReport(J_eta=J, H=H, blocks=blocks,
                           I=co_identifiability(H, blocks),
                           reference_eta=np.asarray(eta_ref, dtype=float).copy())


# -- variational sensitivity system ------------------------------------------

def equilibrium_sensitivities(model: DaeModel, op: OperatingPoint,
                              loads0: np.ndarray):
    """d(equilibrium)/dtheta by differentiating the full initialization map.

    The plain bordered system of f, g alone is singular (uniform angle shift)
    and, at fixed setpoints, generally inconsistent; the implemented map pins
    the slack angle, PV voltages, and dispatched powers, and re-derives the
    governor/field setpoints. Those pinning rows plus setpoint columns make
    the system square and regular, and yield d[t_ref, e_fd]/dtheta as well.
    """
    case = model.case
    ng, nb = model.n_gen, model.n_bus
    n_d, n_a = model.n_d, model.n_a
    n_theta = model.f_theta(op.xd_star.to_array(), op.xa_star.to_array()).shape[1]

    xd = op.xd_star.to_array()
    xa = op.xa_star.to_array()
    f_xd, f_xa, g_xd, g_xa = model.jacobians(xd, xa)
    f_th = model.f_theta(xd, xa)
    g_th = model.g_theta(xd, xa)
    f_u = model.f_setpoints()

    slack = case.bus_index(case.slack_bus)
    gi = model.gen_idx
    non_slack_gens = [k for k in range(ng) if gi[k] != slack]

    # unknowns: [dx_d, dx_a, d t_ref, d e_fd, d delta_ref]
    n_tot = n_d + n_a + 3 * ng
    mat = np.zeros((n_tot, n_tot))
    rhs = np.zeros((n_tot, n_theta))
    mat[:n_d, :n_d] = f_xd
    mat[:n_d, n_d:n_d + n_a] = f_xa
    mat[:n_d, n_d + n_a:] = f_u
    mat[n_d:n_d + n_a, :n_d] = g_xd
    mat[n_d:n_d + n_a, n_d:n_d + n_a] = g_xa
    rhs[:n_d] = -f_th
    rhs[n_d:n_d + n_a] = -g_th

    row = n_d + n_a
    mat[row, n_d + 2 * ng + nb + slack] = 1.0          # slack angle pinned
    row += 1
    for k in range(ng):                                 # PV/slack voltage pinned
        mat[row, n_d + 2 * ng + gi[k]] = 1.0
        row += 1
    for k in non_slack_gens:                            # dispatch pinned
        mat[row, n_d + k] = 1.0
        row += 1
    for k in range(ng):                                 # delta_ref = equilibrium angle
        mat[row, n_d + n_a + 2 * ng + k] = 1.0
        mat[row, k] = -1.0
        row += 1
    assert row == n_tot

    try:
        sol = np.linalg.solve(mat, rhs)
    except np.linalg.LinAlgError:
        raise SensitivitySingular("equilibrium sensitivity system singular")
    return sol[:n_d], sol[n_d:n_d + n_a], sol[n_d + n_a:]


def integrate_sensitivities(model: DaeModel, op: OperatingPoint,
                            profile: LoadProfile, horizon: float,
                            cfg: SolverConfig) -> SensitivityRun:
    """Trapezoidal integration of the reduced variational ODE.

    Mirrors the forward scheme exactly: at a load breakpoint the step that
    lands on it is differentiated at the pre-jump algebraic endpoint, after
    which the algebraic sensitivity jumps to the new constraint branch. The
    recovered algebraic sensitivities satisfy the constraint by construction;
    the residual is reported as a sanity value.
    """
    traj = integrate(model, op, profile, horizon, cfg, record_states=True)
    n_t = traj.times.size
    n_d = model.n_d
    n_a = model.n_a
    dt = cfg.dt
    seg = segment_steps(profile, dt, n_t - 1)

    s_d0, _, du0 = equilibrium_sensitivities(model, op, profile.loads[seg[0]])
    n_theta = s_d0.shape[1]
    S_d = np.empty((n_t, n_d, n_theta))
    S_a = np.empty((n_t, n_a, n_theta))
    S_d[0] = s_d0

    f_u_du = model.f_setpoints() @ du0
    eye = np.eye(n_d)
    max_cres = 0.0

    def local_mats(xd, xa, t, s_d=None):
        """A_s, B_s at a state; optionally also recover S_a from s_d."""
        nonlocal max_cres
        f_xd, f_xa, g_xd, g_xa = model.jacobians(xd, xa)
        g_th = model.g_theta(xd, xa)
        lu = lu_factor(g_xa)
        x_gd = lu_solve(lu, g_xd)
        x_gth = lu_solve(lu, g_th)
        if not (np.all(np.isfinite(x_gd)) and np.all(np.isfinite(x_gth))):
            raise SensitivitySingular(f"g_xa singular at t = {t:.3f}")
        a_s = f_xd - f_xa @ x_gd
        b_s = model.f_theta(xd, xa) + f_u_du - f_xa @ x_gth
        s_a = None
        if s_d is not None:
            s_a = -(x_gd @ s_d + x_gth)
            cres = g_xd @ s_d + g_xa @ s_a + g_th
            max_cres = max(max_cres, float(np.max(np.abs(cres))))
        return a_s, b_s, s_a

    a_k, b_k, s_a = local_mats(traj.xd[0], traj.xa[0], traj.times[0], S_d[0])
    S_a[0] = s_a
    for k in range(n_t - 1):
        jump = seg[k + 1] != seg[k]
        if jump:
            # Pre-jump algebraic endpoint of the step that lands on the break.
            xa_pre = solve_algebraic(model, traj.xd[k + 1], traj.xa[k + 1],
                                     profile.loads[seg[k]],
                                     tol=min(cfg.newton_tol, 1e-10))
        else:
            xa_pre = traj.xa[k + 1]
        a_n, b_n, _ = local_mats(traj.xd[k + 1], xa_pre, traj.times[k + 1])
        rhs = (eye + 0.5 * dt * a_k) @ S_d[k] + 0.5 * dt * (b_k + b_n)
        S_d[k + 1] = np.linalg.solve(eye - 0.5 * dt * a_n, rhs)
        # Left endpoint of the next step is the stored (right-limit) state.
        a_k, b_k, s_a = local_mats(traj.xd[k + 1], traj.xa[k + 1],
                                   traj.times[k + 1], S_d[k + 1])
        S_a[k + 1] = s_a

    return SensitivityRun(times=traj.times, S_d=S_d, S_a=S_a, du0=du0,
                          constraint_residual=max_cres)


def jacobian_from_sensitivities(posterior: Posterior, eta: np.ndarray) -> np.ndarray:
    """Stacked standardized residual Jacobian via the variational system.

    Independent cross-check of :func:`fd_jacobian`: chains state sensitivities
    through the measurement map, standardization, and the latent
    reparameterization. Exact fidelity only.
    """
    eta = np.asarray(eta, dtype=float)
    model, op = posterior._model_op(eta)
    theta = to_physical(eta, posterior.prior)
    dtheta_deta = theta * posterior.prior.sigma_lambda
    cfg = posterior.fidelity.exact
    fit_steps = np.rint(posterior.times / cfg.dt).astype(int)

    blocks = []
    for meas in posterior.measurements:
        run = integrate_sensitivities(model, op, meas.schedule.load_profile(posterior.case),
                                      posterior.horizon, cfg)
        sw = np.sqrt(meas.weights) / meas.sigma_eff[:, None]
        traj = integrate(model, op, meas.schedule.load_profile(posterior.case),
                         posterior.horizon, cfg, record_states=True)
        rows = np.empty((meas.sigma_eff.size, posterior.times.size, eta.size))
        for j, k in enumerate(fit_steps):
            h_xd, h_xa = model.measure_jacobians(traj.xd[k], traj.xa[k])
            j_theta = h_xd @ run.S_d[k] + h_xa @ run.S_a[k]
            rows[:, j, :] = -sw[:, j][:, None] * (j_theta * dtheta_deta[None, :])
        blocks.append(rows.reshape(-1, eta.size))
    return np.vstack(blocks)
