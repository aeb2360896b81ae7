"""Forward model: equilibrium initialization and implicit-trapezoidal DAE integration.

One-axis (flux-decay) machine model with x_q = x'_d, zero stator resistance,
constant field voltage, and a first-order governor with droop plus a weak
angle-restoring feedback (the linear stabilizing controller) that pins the
otherwise-neutral common rotor-angle mode to the schedule. State layout:

    x_d = [delta (nG), dw (nG), Eq (nG), Tm (nG)]          n_d = 4 nG
    x_a = [PG (nG), QG (nG), V (nN), th (nN)]              n_a = 2 nG + 2 nN

Angles in rad, speeds as deviations from synchronous in rad/s, powers and
voltages in pu. Loads are constant-PQ, piecewise constant in time.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .grid import NetworkCase, assemble_ybus
from .params import ParamVector


class PowerFlowDiverged(RuntimeError):
    """Equilibrium (power-flow) Newton solve failed; candidate infeasible."""


class StepDiverged(RuntimeError):
    """Per-step Newton solve failed during DAE integration."""


class SensitivitySingular(RuntimeError):
    """Algebraic Jacobian singular along the trajectory."""


@dataclass(frozen=True)
class SolverConfig:
    dt: float = 0.01
    newton_tol: float = 1e-10
    newton_max_iter: int = 12
    fidelity: str = "exact"

    def __post_init__(self):
        if self.dt <= 0.0 or self.newton_tol <= 0.0:
            raise ValueError("dt and newton_tol must be > 0")


@dataclass(frozen=True)
class DynamicState:
    delta: np.ndarray
    dw: np.ndarray
    eq: np.ndarray
    tm: np.ndarray

    def to_array(self) -> np.ndarray:
        return np.concatenate([self.delta, self.dw, self.eq, self.tm])

    @classmethod
    def from_array(cls, xd: np.ndarray, n_gen: int) -> "DynamicState":
        return cls(xd[:n_gen].copy(), xd[n_gen:2 * n_gen].copy(),
                   xd[2 * n_gen:3 * n_gen].copy(), xd[3 * n_gen:].copy())


@dataclass(frozen=True)
class AlgebraicState:
    pg: np.ndarray
    qg: np.ndarray
    v: np.ndarray
    th: np.ndarray

    def to_array(self) -> np.ndarray:
        return np.concatenate([self.pg, self.qg, self.v, self.th])

    @classmethod
    def from_array(cls, xa: np.ndarray, n_gen: int, n_bus: int) -> "AlgebraicState":
        return cls(xa[:n_gen].copy(), xa[n_gen:2 * n_gen].copy(),
                   xa[2 * n_gen:2 * n_gen + n_bus].copy(), xa[2 * n_gen + n_bus:].copy())


@dataclass(frozen=True)
class OperatingPoint:
    xd_star: DynamicState
    xa_star: AlgebraicState
    t_ref: np.ndarray
    e_fd: np.ndarray
    delta_ref: np.ndarray   # controller angle schedule (= equilibrium angles)


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    channels: np.ndarray           # (n_times, p)
    xd: np.ndarray | None = None   # (n_times, n_d) when fully recorded
    xa: np.ndarray | None = None


@dataclass(frozen=True)
class LoadProfile:
    """Piecewise-constant bus loads: segment k active on [breaks[k], breaks[k+1])."""

    breaks: np.ndarray             # (n_seg,), breaks[0] == 0
    loads: np.ndarray              # (n_seg, n_bus, 2)

    def __post_init__(self):
        breaks = np.asarray(self.breaks, dtype=float)
        loads = np.asarray(self.loads, dtype=float)
        if breaks[0] != 0.0 or np.any(np.diff(breaks) <= 0.0):
            raise ValueError("breaks must start at 0 and increase")
        if loads.shape[0] != breaks.size:
            raise ValueError("one load block per segment required")
        object.__setattr__(self, "breaks", breaks)
        object.__setattr__(self, "loads", loads)

    @classmethod
    def constant(cls, loads: np.ndarray) -> "LoadProfile":
        return cls(breaks=np.zeros(1), loads=np.asarray(loads, dtype=float)[None, :, :])

    def at(self, t: float) -> np.ndarray:
        k = int(np.searchsorted(self.breaks, t, side="right")) - 1
        return self.loads[max(k, 0)]


class DaeModel:
    """Case + parameter vector bound together with precomputed constants."""

    def __init__(self, case: NetworkCase, theta: ParamVector,
                 monitored_buses: tuple[int, ...]):
        ng, nb = case.n_gen, case.n_buses
        if theta.M.size != ng or theta.D.size != ng:
            raise ValueError("theta generator blocks do not match the case")
        self.case = case
        self.theta = theta
        self.n_gen, self.n_bus = ng, nb
        self.n_d, self.n_a = 4 * ng, 2 * ng + 2 * nb
        self.gen_idx = np.array([case.bus_index(b) for b in case.gen_buses])
        self.monitored = tuple(monitored_buses)
        self.mon_idx = np.array([case.bus_index(b) for b in self.monitored])
        self.p = 2 * len(self.monitored) + ng
        self.omega_s = case.omega_s

        self.M = theta.M
        self.D = theta.D
        gens = case.generators
        self.xd_s = np.array([g.xd for g in gens])
        self.xdp = np.array([g.xd_prime for g in gens])
        self.td0p = np.array([g.Td0_prime for g in gens])
        self.tch = np.array([g.T_ch for g in gens])
        self.rd = np.array([g.R_d for g in gens])
        self.kang = np.array([g.k_ang for g in gens])
        self.csat = (self.xd_s - self.xdp) / self.xdp

        ybus = assemble_ybus(case, theta.r, theta.x)
        self.G, self.B = ybus.G, ybus.B
        self.Y = self.G + 1j * self.B
        # slices into x_d / x_a
        self.s_delta = slice(0, ng)
        self.s_dw = slice(ng, 2 * ng)
        self.s_eq = slice(2 * ng, 3 * ng)
        self.s_tm = slice(3 * ng, 4 * ng)
        self.s_pg = slice(0, ng)
        self.s_qg = slice(ng, 2 * ng)
        self.s_v = slice(2 * ng, 2 * ng + nb)
        self.s_th = slice(2 * ng + nb, 2 * ng + 2 * nb)

    # -- residuals ---------------------------------------------------------

    def injections(self, v: np.ndarray, th: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Network injections P_i(V, th), Q_i(V, th)."""
        vc = v * np.exp(1j * th)
        s = vc * np.conj(self.Y @ vc)
        return s.real, s.imag

    def f(self, xd: np.ndarray, xa: np.ndarray, t_ref: np.ndarray,
          e_fd: np.ndarray, delta_ref: np.ndarray) -> np.ndarray:
        """Differential right-hand side (rate of change of x_d)."""
        delta, dw = xd[self.s_delta], xd[self.s_dw]
        eq, tm = xd[self.s_eq], xd[self.s_tm]
        pg = xa[self.s_pg]
        vg = xa[self.s_v][self.gen_idx]
        thg = xa[self.s_th][self.gen_idx]
        ang = delta - thg
        i_d = (eq - vg * np.cos(ang)) / self.xdp
        out = np.empty(self.n_d)
        out[self.s_delta] = dw
        out[self.s_dw] = (tm - pg - self.D * dw) / self.M
        out[self.s_eq] = (e_fd - eq - (self.xd_s - self.xdp) * i_d) / self.td0p
        # Lead-compensated angle restoring: the (delta + T_ch dw) zero cancels
        # the governor lag, so the swing sees pure synchronizing stiffness.
        out[self.s_tm] = (t_ref - tm - dw / self.rd
                          - self.kang * (delta - delta_ref + self.tch * dw)) / self.tch
        return out

    def g(self, xd: np.ndarray, xa: np.ndarray, loads: np.ndarray) -> np.ndarray:
        """Algebraic residual: stator interface rows then power-balance rows."""
        delta, eq = xd[self.s_delta], xd[self.s_eq]
        pg, qg = xa[self.s_pg], xa[self.s_qg]
        v, th = xa[self.s_v], xa[self.s_th]
        vg, thg = v[self.gen_idx], th[self.gen_idx]
        ang = delta - thg
        p_inj, q_inj = self.injections(v, th)
        p_net = -loads[:, 0].copy()
        q_net = -loads[:, 1].copy()
        p_net[self.gen_idx] += pg
        q_net[self.gen_idx] += qg
        out = np.empty(self.n_a)
        out[self.s_pg] = pg - eq * vg * np.sin(ang) / self.xdp
        out[self.s_qg] = qg - (eq * vg * np.cos(ang) - vg ** 2) / self.xdp
        out[self.s_v] = p_net - p_inj
        out[self.s_th] = q_net - q_inj
        return out

    # -- analytic Jacobians ------------------------------------------------

    def injection_jacobians(self, v: np.ndarray, th: np.ndarray):
        """Dense dP/dth, dP/dV, dQ/dth, dQ/dV of the network injections."""
        dth = th[:, None] - th[None, :]
        a = self.G * np.cos(dth) + self.B * np.sin(dth)
        c = self.G * np.sin(dth) - self.B * np.cos(dth)
        p = v * (a @ v)
        q = v * (c @ v)
        vv = v[:, None] * v[None, :]
        dp_dth = vv * c
        np.fill_diagonal(dp_dth, -q - np.diag(self.B) * v ** 2)
        dp_dv = v[:, None] * a
        np.fill_diagonal(dp_dv, p / v + np.diag(self.G) * v)
        dq_dth = -vv * a
        np.fill_diagonal(dq_dth, p - np.diag(self.G) * v ** 2)
        dq_dv = v[:, None] * c
        np.fill_diagonal(dq_dv, q / v - np.diag(self.B) * v)
        return dp_dth, dp_dv, dq_dth, dq_dv, p, q

    def jacobians(self, xd: np.ndarray, xa: np.ndarray):
        """(f_xd, f_xa, g_xd, g_xa) at the given state."""
        ng, nb = self.n_gen, self.n_bus
        delta, dw = xd[self.s_delta], xd[self.s_dw]
        eq, tm = xd[self.s_eq], xd[self.s_tm]
        pg = xa[self.s_pg]
        v, th = xa[self.s_v], xa[self.s_th]
        vg, thg = v[self.gen_idx], th[self.gen_idx]
        ang = delta - thg
        sin_a, cos_a = np.sin(ang), np.cos(ang)
        gi = self.gen_idx

        f_xd = np.zeros((self.n_d, self.n_d))
        rng = np.arange(ng)
        f_xd[rng, ng + rng] = 1.0                                   # d(delta)/dt rows
        f_xd[ng + rng, ng + rng] = -self.D / self.M                 # swing rows
        f_xd[ng + rng, 3 * ng + rng] = 1.0 / self.M
        f_xd[2 * ng + rng, rng] = -self.csat * vg * sin_a / self.td0p
        f_xd[2 * ng + rng, 2 * ng + rng] = -(1.0 + self.csat) / self.td0p
        f_xd[3 * ng + rng, rng] = -self.kang / self.tch             # angle restoring
        f_xd[3 * ng + rng, ng + rng] = -1.0 / (self.rd * self.tch) - self.kang
        f_xd[3 * ng + rng, 3 * ng + rng] = -1.0 / self.tch

        f_xa = np.zeros((self.n_d, self.n_a))
        f_xa[ng + rng, rng] = -1.0 / self.M                          # dPG
        f_xa[2 * ng + rng, 2 * ng + gi] = self.csat * cos_a / self.td0p
        f_xa[2 * ng + rng, 2 * ng + nb + gi] = self.csat * vg * sin_a / self.td0p

        g_xd = np.zeros((self.n_a, self.n_d))
        g_xd[rng, rng] = -eq * vg * cos_a / self.xdp                 # stator P vs delta
        g_xd[rng, 2 * ng + rng] = -vg * sin_a / self.xdp
        g_xd[ng + rng, rng] = eq * vg * sin_a / self.xdp             # stator Q vs delta
        g_xd[ng + rng, 2 * ng + rng] = -vg * cos_a / self.xdp

        g_xa = np.zeros((self.n_a, self.n_a))
        g_xa[rng, rng] = 1.0
        g_xa[rng, 2 * ng + gi] = -eq * sin_a / self.xdp
        g_xa[rng, 2 * ng + nb + gi] = eq * vg * cos_a / self.xdp
        g_xa[ng + rng, ng + rng] = 1.0
        g_xa[ng + rng, 2 * ng + gi] = -(eq * cos_a - 2.0 * vg) / self.xdp
        g_xa[ng + rng, 2 * ng + nb + gi] = -eq * vg * sin_a / self.xdp

        dp_dth, dp_dv, dq_dth, dq_dv, _, _ = self.injection_jacobians(v, th)
        g_xa[self.s_v, self.s_pg] = _scatter_cols(nb, gi)
        g_xa[self.s_th, self.s_qg] = _scatter_cols(nb, gi)
        g_xa[self.s_v, self.s_v] = -dp_dv
        g_xa[self.s_v, self.s_th] = -dp_dth
        g_xa[self.s_th, self.s_v] = -dq_dv
        g_xa[self.s_th, self.s_th] = -dq_dth
        return f_xd, f_xa, g_xd, g_xa

    def f_theta(self, xd: np.ndarray, xa: np.ndarray) -> np.ndarray:
        """df/dtheta, theta ordered [M, D, r, x]."""
        ng = self.n_gen
        dw, tm = xd[self.s_dw], xd[self.s_tm]
        pg = xa[self.s_pg]
        n_theta = 2 * ng + self.theta.r.size + self.theta.x.size
        out = np.zeros((self.n_d, n_theta))
        rng = np.arange(ng)
        out[ng + rng, rng] = -(tm - pg - self.D * dw) / self.M ** 2
        out[ng + rng, ng + rng] = -dw / self.M
        return out

    def g_theta(self, xd: np.ndarray, xa: np.ndarray) -> np.ndarray:
        """dg/dtheta: branch parameters enter the power-balance rows via Y-bus."""
        ng, nb = self.n_gen, self.n_bus
        v, th = xa[self.s_v], xa[self.s_th]
        n_r, n_x = self.theta.r.size, self.theta.x.size
        out = np.zeros((self.n_a, 2 * ng + n_r + n_x))
        case = self.case
        r_map = {bi: 2 * ng + k for k, bi in enumerate(case.estimable_r)}
        x_map = {bi: 2 * ng + n_r + k for k, bi in enumerate(case.estimable_x)}
        r_all = np.array([br.r for br in case.branches])
        x_all = np.array([br.x for br in case.branches])
        r_all[list(case.estimable_r)] = self.theta.r
        x_all[list(case.estimable_x)] = self.theta.x

        for bi, br in enumerate(case.branches):
            if bi not in r_map and bi not in x_map:
                continue
            if br.tap != 1.0:
                raise NotImplementedError("estimable branches must have tap = 1")
            a, b = br.from_bus - 1, br.to_bus - 1
            r, x = r_all[bi], x_all[bi]
            d2 = (r * r + x * x) ** 2
            va, vb = v[a], v[b]
            dthab = th[a] - th[b]
            cab, sab = np.cos(dthab), np.sin(dthab)
            # injection derivatives w.r.t. series admittance (g_s, b_s)
            dpa = np.array([va * va - va * vb * cab, -va * vb * sab])
            dpb = np.array([vb * vb - va * vb * cab, va * vb * sab])
            dqa = np.array([-va * vb * sab, -va * va + va * vb * cab])
            dqb = np.array([va * vb * sab, -vb * vb + va * vb * cab])
            for col, dgs_dbs in ((r_map.get(bi), ((x * x - r * r) / d2, 2 * r * x / d2)),
                                 (x_map.get(bi), (-2 * r * x / d2, (x * x - r * r) / d2))):
                if col is None:
                    continue
                grad = np.array(dgs_dbs)
                out[2 * ng + a, col] = -dpa @ grad
                out[2 * ng + b, col] = -dpb @ grad
                out[2 * ng + nb + a, col] = -dqa @ grad
                out[2 * ng + nb + b, col] = -dqb @ grad
        return out

    def f_setpoints(self) -> np.ndarray:
        """df/d[t_ref, e_fd, delta_ref] (constant)."""
        ng = self.n_gen
        out = np.zeros((self.n_d, 3 * ng))
        rng = np.arange(ng)
        out[3 * ng + rng, rng] = 1.0 / self.tch        # t_ref into governor rows
        out[2 * ng + rng, ng + rng] = 1.0 / self.td0p  # e_fd into EMF rows
        out[3 * ng + rng, 2 * ng + rng] = self.kang / self.tch  # angle schedule
        return out

    # -- measurement map ----------------------------------------------------

    def measure(self, xd: np.ndarray, xa: np.ndarray) -> np.ndarray:
        """[V_r, V_i per monitored bus ..., dw_i / omega_s per generator]."""
        v = xa[self.s_v][self.mon_idx]
        th = xa[self.s_th][self.mon_idx]
        out = np.empty(self.p)
        out[0:2 * self.mon_idx.size:2] = v * np.cos(th)
        out[1:2 * self.mon_idx.size:2] = v * np.sin(th)
        out[2 * self.mon_idx.size:] = xd[self.s_dw] / self.omega_s
        return out

    def measure_jacobians(self, xd: np.ndarray, xa: np.ndarray):
        """(h_xd, h_xa) of the measurement map."""
        nm, ng, nb = self.mon_idx.size, self.n_gen, self.n_bus
        v = xa[self.s_v][self.mon_idx]
        th = xa[self.s_th][self.mon_idx]
        h_xd = np.zeros((self.p, self.n_d))
        h_xa = np.zeros((self.p, self.n_a))
        rows_r = np.arange(0, 2 * nm, 2)
        rows_i = rows_r + 1
        h_xa[rows_r, 2 * ng + self.mon_idx] = np.cos(th)
        h_xa[rows_r, 2 * ng + nb + self.mon_idx] = -v * np.sin(th)
        h_xa[rows_i, 2 * ng + self.mon_idx] = np.sin(th)
        h_xa[rows_i, 2 * ng + nb + self.mon_idx] = v * np.cos(th)
        h_xd[2 * nm + np.arange(ng), ng + np.arange(ng)] = 1.0 / self.omega_s
        return h_xd, h_xa

    def channel_classes(self) -> np.ndarray:
        """Boolean mask, True for frequency channels."""
        mask = np.zeros(self.p, dtype=bool)
        mask[2 * self.mon_idx.size:] = True
        return mask


def _scatter_cols(n_rows: int, idx: np.ndarray) -> np.ndarray:
    out = np.zeros((n_rows, idx.size))
    out[idx, np.arange(idx.size)] = 1.0
    return out


# -- public residual wrappers (spec operations) -----------------------------

def residual_f(model: DaeModel, xd: np.ndarray, xa: np.ndarray,
               t_ref: np.ndarray, e_fd: np.ndarray,
               delta_ref: np.ndarray) -> np.ndarray:
    return model.f(xd, xa, t_ref, e_fd, delta_ref)


def residual_g(model: DaeModel, xd: np.ndarray, xa: np.ndarray,
               loads: np.ndarray) -> np.ndarray:
    return model.g(xd, xa, loads)


# -- equilibrium -------------------------------------------------------------

_V_SANE = (0.5, 1.5)


def solve_equilibrium(model: DaeModel, loads0: np.ndarray | None = None,
                      tol: float = 1e-10, max_iter: int = 40) -> OperatingPoint:
    """Power flow (slack/PV/PQ) by damped Newton, then machine back-solve.

    Raises :class:`PowerFlowDiverged` when Newton fails or the solved
    voltages are outside a sane band; this is the Stage-0 feasibility signal.
    """
    case = model.case
    nb, ng = model.n_bus, model.n_gen
    loads = case.loads if loads0 is None else np.asarray(loads0, dtype=float)
    slack = case.bus_index(case.slack_bus)
    gi = model.gen_idx
    v_set = np.array([g.V_set for g in case.generators])
    p_disp = np.array([g.P_dispatch for g in case.generators])

    v = np.ones(nb)
    v[gi] = v_set
    th = np.zeros(nb)
    pq = np.array([i for i in range(nb) if i not in set(gi)])
    non_slack = np.array([i for i in range(nb) if i != slack])

    p_spec = -loads[:, 0].copy()
    p_spec[gi] += p_disp
    q_spec = -loads[:, 1].copy()

    def mismatch(v, th):
        p, q = model.injections(v, th)
        return np.concatenate([p[non_slack] - p_spec[non_slack], q[pq] - q_spec[pq]])

    mis = mismatch(v, th)
    for _ in range(max_iter):
        norm = np.max(np.abs(mis))
        if norm <= tol:
            break
        dp_dth, dp_dv, dq_dth, dq_dv, _, _ = model.injection_jacobians(v, th)
        top = np.hstack([dp_dth[np.ix_(non_slack, non_slack)], dp_dv[np.ix_(non_slack, pq)]])
        bot = np.hstack([dq_dth[np.ix_(pq, non_slack)], dq_dv[np.ix_(pq, pq)]])
        jac = np.vstack([top, bot])
        try:
            step = np.linalg.solve(jac, -mis)
        except np.linalg.LinAlgError:
            raise PowerFlowDiverged("singular power-flow Jacobian")
        alpha = 1.0
        for _ in range(12):
            v_new = v.copy()
            th_new = th.copy()
            th_new[non_slack] += alpha * step[:non_slack.size]
            v_new[pq] += alpha * step[non_slack.size:]
            if np.all(v_new > 0.05):
                mis_new = mismatch(v_new, th_new)
                if np.all(np.isfinite(mis_new)) and np.max(np.abs(mis_new)) < norm:
                    v, th, mis = v_new, th_new, mis_new
                    break
            alpha *= 0.5
        else:
            raise PowerFlowDiverged("power-flow line search stalled")
    else:
        raise PowerFlowDiverged(f"power flow not converged in {max_iter} iterations")

    if np.any(v < _V_SANE[0]) or np.any(v > _V_SANE[1]):
        raise PowerFlowDiverged("power flow converged to implausible voltages")

    p_calc, q_calc = model.injections(v, th)
    pg = p_calc[gi] + loads[gi, 0]
    qg = q_calc[gi] + loads[gi, 1]
    vc = v[gi] * np.exp(1j * th[gi])
    cur = np.conj((pg + 1j * qg) / vc)
    emf = vc + 1j * model.xdp * cur
    delta = np.angle(emf)
    eq = np.abs(emf)
    i_d = (eq - v[gi] * np.cos(delta - th[gi])) / model.xdp
    e_fd = eq + (model.xd_s - model.xdp) * i_d
    tm = pg.copy()
    t_ref = tm.copy()

    xd = np.concatenate([delta, np.zeros(ng), eq, tm])
    xa = np.concatenate([pg, qg, v, th])
    delta_ref = delta.copy()
    if max(np.max(np.abs(model.f(xd, xa, t_ref, e_fd, delta_ref))),
           np.max(np.abs(model.g(xd, xa, loads)))) > 1e-8:
        raise PowerFlowDiverged("equilibrium back-solve inconsistent")
    return OperatingPoint(
        xd_star=DynamicState.from_array(xd, ng),
        xa_star=AlgebraicState.from_array(xa, ng, nb),
        t_ref=t_ref, e_fd=e_fd, delta_ref=delta_ref,
    )


# -- integration -------------------------------------------------------------

def segment_steps(profile: LoadProfile, dt: float, n_steps: int) -> np.ndarray:
    """Active load segment per step, with breakpoints snapped to the grid.

    Ties resolve to the later segment, so a segment fully swallowed by
    snapping is skipped.
    """
    snapped = np.clip(np.rint(profile.breaks / dt).astype(int), 0, n_steps)
    return np.searchsorted(snapped, np.arange(n_steps + 1), side="right") - 1


def solve_algebraic(model: DaeModel, xd: np.ndarray, xa0: np.ndarray,
                    loads: np.ndarray, tol: float = 1e-10,
                    max_iter: int = 20) -> np.ndarray:
    """Re-solve g(x_d, x_a; loads) = 0 for x_a (consistent re-initialization)."""
    xa = xa0.copy()
    for _ in range(max_iter):
        res = model.g(xd, xa, loads)
        if np.max(np.abs(res)) <= tol:
            return xa
        _, _, _, g_xa = model.jacobians(xd, xa)
        try:
            xa = xa - np.linalg.solve(g_xa, res)
        except np.linalg.LinAlgError:
            raise StepDiverged("singular algebraic Jacobian at load event")
    raise StepDiverged("algebraic re-initialization failed to converge")


def integrate(model: DaeModel, op: OperatingPoint, profile: LoadProfile,
              horizon: float, cfg: SolverConfig,
              sample_times: np.ndarray | None = None,
              record_states: bool = False) -> Trajectory:
    """Integrate the DAE with fixed-step implicit trapezoidal stepping.

    Load-profile breakpoints are snapped to the step grid; at a breakpoint the
    algebraic state is re-solved (right-limit convention) before stepping.
    Channels are recorded at every grid point, or only at ``sample_times``.
    """
    dt = cfg.dt
    n_steps = int(round(horizon / dt))
    times = np.arange(n_steps + 1) * dt

    if sample_times is None:
        rec_steps = np.arange(n_steps + 1)
    else:
        rec = np.asarray(sample_times, dtype=float)
        rec_steps = np.rint(rec / dt).astype(int)
        if np.any(np.abs(rec_steps * dt - rec) > 1e-9) or np.any(rec_steps > n_steps):
            raise ValueError("sample_times must lie on the integration grid")
        times = rec_steps * dt

    seg_of_step = segment_steps(profile, dt, n_steps)

    ng, nb = model.n_gen, model.n_bus
    n_d, n_a = model.n_d, model.n_a
    n_z = n_d + n_a
    xd = op.xd_star.to_array()
    xa = op.xa_star.to_array()
    t_ref, e_fd, delta_ref = op.t_ref, op.e_fd, op.delta_ref

    channels = np.empty((len(times), model.p))
    xd_out = np.empty((len(times), n_d)) if record_states else None
    xa_out = np.empty((len(times), n_a)) if record_states else None
    rec_pos = {int(s): i for i, s in enumerate(rec_steps)}

    jac = np.empty((n_z, n_z))
    eye_d = np.eye(n_d)
    lu = None

    def refresh_lu(xd_ref, xa_ref):
        nonlocal lu
        f_xd, f_xa, g_xd, g_xa = model.jacobians(xd_ref, xa_ref)
        jac[:n_d, :n_d] = eye_d - 0.5 * dt * f_xd
        jac[:n_d, n_d:] = -0.5 * dt * f_xa
        jac[n_d:, :n_d] = g_xd
        jac[n_d:, n_d:] = g_xa
        lu = lu_factor(jac, check_finite=False)

    loads = profile.loads[seg_of_step[0]]
    xa = solve_algebraic(model, xd, xa, loads, tol=min(cfg.newton_tol, 1e-10))

    def record(step, xd, xa):
        i = rec_pos.get(step)
        if i is None:
            return
        channels[i] = model.measure(xd, xa)
        if record_states:
            xd_out[i] = xd
            xa_out[i] = xa

    record(0, xd, xa)
    refresh_lu(xd, xa)
    f_old = model.f(xd, xa, t_ref, e_fd, delta_ref)

    for k in range(n_steps):
        if k > 0 and seg_of_step[k] != seg_of_step[k - 1]:
            loads = profile.loads[seg_of_step[k]]
            xa = solve_algebraic(model, xd, xa, loads, tol=min(cfg.newton_tol, 1e-10))
            refresh_lu(xd, xa)
            f_old = model.f(xd, xa, t_ref, e_fd, delta_ref)
            record(k, xd, xa)  # right-limit value replaces the pre-jump sample

        xd_new = xd + dt * f_old          # explicit predictor
        xa_new = xa.copy()
        converged = False
        refreshed = 0
        res = np.empty(n_z)
        prev_norm = np.inf
        for it in range(cfg.newton_max_iter):
            f_new = model.f(xd_new, xa_new, t_ref, e_fd, delta_ref)
            res[:n_d] = xd_new - xd - 0.5 * dt * (f_old + f_new)
            res[n_d:] = model.g(xd_new, xa_new, loads)
            norm = np.max(np.abs(res))
            if not np.isfinite(norm):
                break
            if norm <= cfg.newton_tol:
                converged = True
                break
            if norm > 0.5 * prev_norm and refreshed < 3 and it > 0:
                refresh_lu(xd_new, xa_new)
                refreshed += 1
            prev_norm = norm
            step = lu_solve(lu, res, check_finite=False)
            xd_new = xd_new - step[:n_d]
            xa_new = xa_new - step[n_d:]
        if not converged:
            raise StepDiverged(f"Newton failed at t = {(k + 1) * dt:.3f}")
        xd, xa = xd_new, xa_new
        f_old = model.f(xd, xa, t_ref, e_fd, delta_ref)
        record(k + 1, xd, xa)

    return Trajectory(times=times, channels=channels, xd=xd_out, xa=xa_out)


def measure(model: DaeModel, xd: np.ndarray, xa: np.ndarray) -> np.ndarray:
    return model.measure(xd, xa)
