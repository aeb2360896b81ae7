"""Run configuration: a strict sectioned key = value text format.

Unknown sections or keys are errors, so a config echoed into a report always
reproduces the run that wrote it. Defaults reproduce the reference 9-bus
study tuning.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, fields, replace

from .dae import SolverConfig
from .experiments import SynthesisConfig, WindowParams
from .likelihood import FidelityConfig
from .sampler import ChainConfig, InitConfig


class ConfigError(ValueError):
    """Malformed configuration document."""


@dataclass(frozen=True)
class RunConfig:
    # [run]
    case: str = "ieee9"
    seed: int = 7
    mode: str = "joint"                  # joint | decoupled | ablation
    out_dir: str = "out"
    budget: str = "full"                 # short | full | custom
    horizon: float = 10.0
    monitored_buses: tuple[int, ...] = (2, 4, 5, 6, 7, 8, 9)
    # [truth]
    cap_M: float = 0.06
    cap_D: float = 0.10
    cap_r: float = 0.08
    cap_x: float = 0.08
    truth_from_table: bool = True
    # [noise]
    snr_db: float = 25.0
    rho: float = 0.02
    kappa_volt: float = 5.0
    kappa_freq: float = 15.0
    sigma_floor: float = 1e-9
    # [windows]
    t_inertia: float = 0.35
    t_damping: float = 1.2
    w_freq_inertia: float = 1.3
    w_freq_damping: float = 1.2
    w_volt_settle: float = 1.2
    # [priors]
    width_M: float = 0.30
    width_D: float = 0.60
    width_rx: float = 0.25
    box_M: float = 0.50
    box_D: float = 0.90
    box_rx: float = 0.45
    # [fidelity]
    decim_exact: int = 16
    decim_coarse: int = 24
    dt_exact: float = 0.01
    dt_coarse: float = 0.02
    tol_exact: float = 1e-10
    tol_coarse: float = 1e-7
    # [mcmc]
    n_burn: int = 3000
    n_samp: int = 2000
    n_thin: int = 2
    n_adapt: int = 50
    a_target: float = 0.24
    kernel: str = "da"                   # da | exact
    partition: str = "blocked"           # blocked | full
    frozen_blocks: tuple[str, ...] = ()
    spot_check_every: int = 500
    # [init]
    init_enabled: bool = True
    max_iter_stage: int = 8
    polish_steps: int = 2
    # [identify]
    identify_center: str = "zero"        # zero | init | truth
    fd_step: float = 1e-4

    def validated(self) -> "RunConfig":
        cfg = self
        if cfg.budget == "short":
            cfg = replace(cfg, n_burn=300, n_samp=200, n_thin=1)
        elif cfg.budget == "full":
            pass
        elif cfg.budget != "custom":
            raise ConfigError(f"unknown budget preset {cfg.budget!r}")
        if cfg.mode not in ("joint", "decoupled", "ablation"):
            raise ConfigError(f"unknown mode {cfg.mode!r}")
        if cfg.kernel not in ("da", "exact"):
            raise ConfigError(f"unknown kernel {cfg.kernel!r}")
        if cfg.partition not in ("blocked", "full"):
            raise ConfigError(f"unknown partition {cfg.partition!r}")
        if cfg.mode == "decoupled" and not cfg.frozen_blocks:
            raise ConfigError("decoupled mode requires frozen_blocks")
        bad = set(cfg.frozen_blocks) - {"dyn", "res", "rea"}
        if bad:
            raise ConfigError(f"unknown frozen blocks {sorted(bad)}")
        if cfg.identify_center not in ("zero", "init", "truth"):
            raise ConfigError(f"unknown identify center {cfg.identify_center!r}")
        return cfg

    # -- derived sub-configs ------------------------------------------------

    def window_params(self) -> WindowParams:
        return WindowParams(self.t_inertia, self.t_damping, self.w_freq_inertia,
                            self.w_freq_damping, self.w_volt_settle)

    def synthesis_config(self) -> SynthesisConfig:
        return SynthesisConfig(
            snr_db=self.snr_db, decim=self.decim_exact, horizon=self.horizon,
            solver=SolverConfig(dt=self.dt_exact, newton_tol=self.tol_exact),
            rho=self.rho, kappa_volt=self.kappa_volt, kappa_freq=self.kappa_freq,
            sigma_floor=self.sigma_floor, windows=self.window_params(),
            seed=self.seed)

    def fidelity_config(self) -> FidelityConfig:
        return FidelityConfig(
            decim_exact=self.decim_exact, decim_coarse=self.decim_coarse,
            exact=SolverConfig(dt=self.dt_exact, newton_tol=self.tol_exact,
                               fidelity="exact"),
            coarse=SolverConfig(dt=self.dt_coarse, newton_tol=self.tol_coarse,
                                fidelity="coarse"))

    def chain_config(self) -> ChainConfig:
        return ChainConfig(n_burn=self.n_burn, n_samp=self.n_samp,
                           n_thin=self.n_thin, n_adapt=self.n_adapt,
                           a_target=self.a_target, kernel=self.kernel,
                           spot_check_every=self.spot_check_every)

    def init_config(self) -> InitConfig:
        return InitConfig(max_iter_stage=self.max_iter_stage,
                          polish_steps=self.polish_steps, fd_step=self.fd_step)

    def truth_caps(self) -> dict[str, float]:
        return {"M": self.cap_M, "D": self.cap_D, "r": self.cap_r, "x": self.cap_x}

    def prior_widths(self) -> dict[str, float]:
        return {"M": self.width_M, "D": self.width_D,
                "r": self.width_rx, "x": self.width_rx}

    def prior_boxes(self) -> dict[str, float]:
        return {"M": self.box_M, "D": self.box_D,
                "r": self.box_rx, "x": self.box_rx}


_SECTION_OF_KEY = {
    "run": ["case", "seed", "mode", "out_dir", "budget", "horizon", "monitored_buses"],
    "truth": ["cap_M", "cap_D", "cap_r", "cap_x", "truth_from_table"],
    "noise": ["snr_db", "rho", "kappa_volt", "kappa_freq", "sigma_floor"],
    "windows": ["t_inertia", "t_damping", "w_freq_inertia", "w_freq_damping",
                "w_volt_settle"],
    "priors": ["width_M", "width_D", "width_rx", "box_M", "box_D", "box_rx"],
    "fidelity": ["decim_exact", "decim_coarse", "dt_exact", "dt_coarse",
                 "tol_exact", "tol_coarse"],
    "mcmc": ["n_burn", "n_samp", "n_thin", "n_adapt", "a_target", "kernel",
             "partition", "frozen_blocks", "spot_check_every"],
    "init": ["init_enabled", "max_iter_stage", "polish_steps"],
    "identify": ["identify_center", "fd_step"],
}
_KEY_TO_SECTION = {k: s for s, keys in _SECTION_OF_KEY.items() for k in keys}
_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _parse_value(key: str, raw: str):
    kind = _FIELD_TYPES[key]
    raw = raw.strip()
    if kind == "int":
        return int(raw)
    if kind == "float":
        if raw.lower() in ("inf", "+inf", "infinity"):
            return math.inf
        return float(raw)
    if kind == "bool":
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"bad boolean for {key}: {raw!r}")
    if kind == "tuple[int, ...]":
        return tuple(int(v) for v in raw.split(",") if v.strip()) if raw else ()
    if kind == "tuple[str, ...]":
        return tuple(v.strip() for v in raw.split(",") if v.strip()) if raw else ()
    return raw


def parse_config(text: str) -> RunConfig:
    values: dict[str, object] = {}
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in _SECTION_OF_KEY:
                raise ConfigError(f"line {lineno}: unknown section [{section}]")
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in _KEY_TO_SECTION:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if section is not None and _KEY_TO_SECTION[key] != section:
            raise ConfigError(f"line {lineno}: key {key!r} does not belong in "
                              f"[{section}]")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = _parse_value(key, val)
    return RunConfig(**values).validated()


def load_config(path) -> RunConfig:
    with open(path) as fh:
        return parse_config(fh.read())


def format_config(cfg: RunConfig) -> str:
    def fmt(v):
        if isinstance(v, tuple):
            return ",".join(str(x) for x in v)
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, float):
            return repr(v)
        return str(v)

    out = []
    for section, keys in _SECTION_OF_KEY.items():
        out.append(f"[{section}]")
        for k in keys:
            out.append(f"{k} = {fmt(getattr(cfg, k))}")
        out.append("")
    return "\n".join(out)


def config_hash(cfg: RunConfig) -> str:
    """Short stable digest of the canonical config text."""
    return hashlib.sha256(format_config(cfg).encode()).hexdigest()[:12]
