"""Load-pulse excitation, synthetic PMU data, and the effective noise model.

Ground truth is simulated at a perturbed "true" parameter vector, corrupted
with per-channel Gaussian noise at a prescribed SNR, and decimated to the
fit grid. Channel-class noise inflation and time-segment weights are frozen
alongside the data.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .dae import DaeModel, LoadProfile, SolverConfig, integrate, solve_equilibrium
from .grid import NetworkCase
from .params import ParamVector
from .rng import substream


@dataclass(frozen=True)
class Pulse:
    bus: int
    start: float       # [s]
    duration: float    # [s]
    amplitude: float   # fraction of local load

    def __post_init__(self):
        if not 0.0 < self.amplitude < 0.5:
            raise ValueError("pulse amplitude must be in (0, 0.5)")
        if not 0.2 <= self.duration <= 1.0:
            raise ValueError("pulse duration must be in [0.2, 1.0] s")


@dataclass(frozen=True)
class PulseSchedule:
    pulses: tuple[Pulse, ...]
    label: str = ""
    scale_reactive: bool = True   # preserve the local Q/P ratio

    def __post_init__(self):
        object.__setattr__(self, "pulses", tuple(sorted(self.pulses, key=lambda p: p.start)))
        for a, b in zip(self.pulses, self.pulses[1:]):
            if b.start < a.start + a.duration:
                raise ValueError("pulses overlap")

    def validate_horizon(self, horizon: float) -> None:
        for p in self.pulses:
            if p.start < 0.0 or p.start + p.duration > horizon:
                raise ValueError("pulse outside [0, T]")

    def load_profile(self, case: NetworkCase) -> LoadProfile:
        """Piecewise-constant loads implementing the pulse train."""
        breaks = [0.0]
        blocks = [case.loads.copy()]
        for p in self.pulses:
            bumped = case.loads.copy()
            i = case.bus_index(p.bus)
            bumped[i, 0] *= 1.0 + p.amplitude
            if self.scale_reactive:
                bumped[i, 1] *= 1.0 + p.amplitude
            breaks += [p.start, p.start + p.duration]
            blocks += [bumped, case.loads.copy()]
        return LoadProfile(breaks=np.array(breaks), loads=np.stack(blocks))


@dataclass(frozen=True)
class TruthSpec:
    theta_true: ParamVector
    caps: dict[str, float]
    seed: int


@dataclass(frozen=True)
class WindowParams:
    """Time-segment windows tied to each pulse, with channel-class weights."""

    t_inertia: float = 0.35     # after pulse onset
    t_damping: float = 1.2      # after pulse removal
    w_freq_inertia: float = 1.3
    w_freq_damping: float = 1.2
    w_volt_settle: float = 1.2


@dataclass(frozen=True)
class SynthesisConfig:
    snr_db: float = 25.0
    decim: int = 16
    horizon: float = 10.0
    solver: SolverConfig = field(default_factory=SolverConfig)
    rho: float = 0.02
    kappa_volt: float = 5.0
    kappa_freq: float = 15.0
    # Division guard only. Per-unit frequency-deviation channels have stds of
    # order 1e-5, so the floor must sit well below that or it dominates the
    # frequency noise model instead of guarding it.
    sigma_floor: float = 1e-9
    windows: WindowParams = field(default_factory=WindowParams)
    seed: int = 0


@dataclass(frozen=True)
class MeasurementSet:
    """Frozen per-experiment data: noisy channels plus the noise/weight model."""

    times: np.ndarray        # fit grid (N_t,)
    y: np.ndarray            # noisy channels (p, N_t)
    clean: np.ndarray        # clean channels (p, N_t), diagnostics only
    sigma_meas: np.ndarray   # (p,)
    sigma_eff: np.ndarray    # (p,)
    weights: np.ndarray      # (p, N_t), mean exactly 1
    schedule: PulseSchedule
    windows: tuple[tuple[str, float, float], ...] = ()

    @property
    def n_times(self) -> int:
        return self.times.size


# Paper-reported true generator parameters for the 9-bus study.
IEEE9_TRUE_M = (0.231, 0.066, 0.031)
IEEE9_TRUE_D = (1.958, 0.472, 0.194)

DEFAULT_CAPS = {"M": 0.06, "D": 0.10, "r": 0.08, "x": 0.08}


def default_experiments_ieee9(horizon: float = 10.0) -> list[PulseSchedule]:
    """Four pulse trains at the 9-bus load buses; the last alternates buses.

    Three pulses per train with >= 2 s settling gaps; amplitudes sit in the
    upper part of the 8-22% range so the short-window inertia information is
    strong enough for reduced-budget recovery.
    """
    mk = lambda *pulses, label: PulseSchedule(pulses=tuple(Pulse(*p) for p in pulses), label=label)
    scheds = [
        mk((5, 1.0, 0.40, 0.20), (5, 4.0, 0.45, 0.16), (5, 7.0, 0.42, 0.22),
           label="bus5-train"),
        mk((7, 1.0, 0.42, 0.18), (7, 4.0, 0.40, 0.22), (7, 7.0, 0.45, 0.15),
           label="bus7-train"),
        mk((9, 1.0, 0.45, 0.16), (9, 4.0, 0.42, 0.20), (9, 7.0, 0.40, 0.18),
           label="bus9-train"),
        mk((5, 1.0, 0.40, 0.18), (9, 4.0, 0.45, 0.20), (5, 7.0, 0.40, 0.16),
           label="bus5-bus9-alternating"),
    ]
    for s in scheds:
        s.validate_horizon(horizon)
    return scheds


def draw_truth(case: NetworkCase, seed: int,
               caps: dict[str, float] | None = None,
               use_table_generators: bool = True) -> TruthSpec:
    """True parameters: tabulated generator values plus seeded multiplicative
    perturbations of the network branches within the class caps."""
    caps = {**DEFAULT_CAPS, **(caps or {})}
    rng = substream(seed, "truth")
    m_nom = np.array([g.M_nom for g in case.generators])
    d_nom = np.array([g.D_nom for g in case.generators])
    if use_table_generators and case.name == "ieee9" and case.n_gen == 3:
        m_true = np.array(IEEE9_TRUE_M)
        d_true = np.array(IEEE9_TRUE_D)
    else:
        m_true = m_nom * (1.0 + rng.uniform(-caps["M"], caps["M"], size=case.n_gen))
        d_true = d_nom * (1.0 + rng.uniform(-caps["D"], caps["D"], size=case.n_gen))
    r_true = case.nominal_r() * (1.0 + rng.uniform(-caps["r"], caps["r"], size=len(case.estimable_r)))
    x_true = case.nominal_x() * (1.0 + rng.uniform(-caps["x"], caps["x"], size=len(case.estimable_x)))
    return TruthSpec(theta_true=ParamVector(M=m_true, D=d_true, r=r_true, x=x_true),
                     caps=caps, seed=seed)


def fit_grid(horizon: float, dt: float, decim: int) -> np.ndarray:
    n = int(np.floor(round(horizon / dt, 9) / decim)) + 1
    return np.arange(n) * (dt * decim)


def effective_sigma(clean: np.ndarray, sigma_meas: np.ndarray, freq_mask: np.ndarray,
                    rho: float, kappa_volt: float, kappa_freq: float,
                    sigma_floor: float) -> np.ndarray:
    """Channel-class inflated effective noise std.

    sigma_eff_j = kappa_j * sqrt(sigma_meas_j^2 + max(sigma_floor, rho*s_j)^2)
    with s_j the clean-channel std over time.
    """
    if rho < 0 or kappa_volt < 1 or kappa_freq < 1 or sigma_floor <= 0:
        raise ValueError("require rho >= 0, kappas >= 1, sigma_floor > 0")
    s_hat = clean.std(axis=1)
    sigma_model = np.maximum(sigma_floor, rho * s_hat)
    kappa = np.where(freq_mask, kappa_freq, kappa_volt)
    return kappa * np.sqrt(sigma_meas ** 2 + sigma_model ** 2)


def segment_windows(schedule: PulseSchedule, horizon: float,
                    wp: WindowParams) -> list[tuple[str, float, float]]:
    """Per-pulse (kind, t_start, t_end) windows; kinds M (inertia), D
    (damping), Y (network settling)."""
    out = []
    pulses = schedule.pulses
    for i, p in enumerate(pulses):
        onset, offset = p.start, p.start + p.duration
        next_onset = pulses[i + 1].start if i + 1 < len(pulses) else horizon
        out.append(("M", onset, min(onset + wp.t_inertia, horizon)))
        out.append(("D", offset, min(offset + wp.t_damping, horizon)))
        y_start = min(offset + wp.t_damping, horizon)
        if y_start < next_onset:
            out.append(("Y", y_start, next_onset))
    return out


def segment_weights(schedule: PulseSchedule, times: np.ndarray, freq_mask: np.ndarray,
                    horizon: float, wp: WindowParams,
                    normalize: bool = True) -> np.ndarray:
    """Time-channel weight matrix; overlaps resolve by precedence M > D > Y.

    With ``normalize`` the matrix is rescaled to mean exactly 1.
    """
    p, nt = freq_mask.size, times.size
    w = np.ones((p, nt))
    windows = segment_windows(schedule, horizon, wp)
    masks = {}
    for kind in ("M", "D", "Y"):
        m = np.zeros(nt, dtype=bool)
        for k, a, b in windows:
            if k == kind:
                m |= (times >= a) & (times < b)
        masks[kind] = m
    masks["D"] &= ~masks["M"]
    masks["Y"] &= ~(masks["M"] | masks["D"])
    w[np.ix_(freq_mask, masks["M"])] = wp.w_freq_inertia
    w[np.ix_(freq_mask, masks["D"])] = wp.w_freq_damping
    w[np.ix_(~freq_mask, masks["Y"])] = wp.w_volt_settle
    if normalize:
        w /= w.mean()
    return w


def synthesize(case: NetworkCase, truth: TruthSpec, schedules: list[PulseSchedule],
               cfg: SynthesisConfig, monitored_buses: tuple[int, ...]) -> list[MeasurementSet]:
    """Simulate at theta_true, add SNR-referenced noise, decimate, and freeze
    the effective-noise and weight models. Deterministic per seed."""
    model = DaeModel(case, truth.theta_true, monitored_buses)
    op = solve_equilibrium(model)
    times = fit_grid(cfg.horizon, cfg.solver.dt, cfg.decim)
    freq_mask = model.channel_classes()
    out = []
    for e, sched in enumerate(schedules):
        sched.validate_horizon(cfg.horizon)
        traj = integrate(model, op, sched.load_profile(case), cfg.horizon,
                         cfg.solver, sample_times=times)
        clean = traj.channels.T.copy()          # (p, N_t)
        snr_fac = 10.0 ** (-cfg.snr_db / 20.0) if np.isfinite(cfg.snr_db) else 0.0
        sigma_meas = clean.std(axis=1) * snr_fac
        rng = substream(truth.seed, "noise", e)
        noise = rng.standard_normal(clean.shape) * sigma_meas[:, None]
        sigma_eff = effective_sigma(clean, sigma_meas, freq_mask, cfg.rho,
                                    cfg.kappa_volt, cfg.kappa_freq, cfg.sigma_floor)
        weights = segment_weights(sched, times, freq_mask, cfg.horizon, cfg.windows)
        out.append(MeasurementSet(
            times=times, y=clean + noise, clean=clean,
            sigma_meas=sigma_meas, sigma_eff=sigma_eff, weights=weights,
            schedule=sched,
            windows=tuple(segment_windows(sched, cfg.horizon, cfg.windows)),
        ))
    return out
