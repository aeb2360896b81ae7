"""Network topology, nominal branch/generator data, and Y-bus assembly.

Bus ids are 1-based (as in case files); dense matrices and load/shunt
arrays are positional, row ``i`` holding bus ``i+1``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources

import numpy as np


class DegenerateBranchError(ValueError):
    """Branch with r = x = 0 has no series admittance."""


class CaseFormatError(ValueError):
    """Malformed or inconsistent case file."""


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    r: float
    x: float
    b_charging: float = 0.0
    tap: float = 1.0

    def __post_init__(self):
        if self.from_bus == self.to_bus:
            raise ValueError(f"branch {self.from_bus}-{self.to_bus}: self-loop")
        if self.x <= 0.0:
            raise ValueError(f"branch {self.from_bus}-{self.to_bus}: x must be > 0")
        if self.r < 0.0:
            raise ValueError(f"branch {self.from_bus}-{self.to_bus}: r must be >= 0")
        if self.b_charging < 0.0:
            raise ValueError(f"branch {self.from_bus}-{self.to_bus}: b_charging must be >= 0")
        if self.tap <= 0.0:
            raise ValueError(f"branch {self.from_bus}-{self.to_bus}: tap must be > 0")


@dataclass(frozen=True)
class GeneratorSpec:
    bus: int
    M_nom: float        # inertia constant [s]
    D_nom: float        # damping [pu torque / pu speed]
    xd: float           # d-axis synchronous reactance [pu]
    xd_prime: float     # d-axis transient reactance [pu]
    Td0_prime: float    # open-circuit transient time constant [s]
    T_ch: float         # governor time constant [s]
    R_d: float          # droop [rad/s per pu]
    V_set: float = 1.0  # terminal voltage setpoint [pu] (slack/PV)
    P_dispatch: float = 0.0  # scheduled active power [pu] (ignored at slack)
    # Angle-restoring gain of the stabilizing controller [pu torque / rad].
    # Pins the otherwise-neutral common rotor-angle mode to the schedule.
    k_ang: float = 8.0

    def __post_init__(self):
        for name in ("M_nom", "D_nom", "xd", "xd_prime", "Td0_prime", "T_ch",
                     "R_d", "V_set", "k_ang"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"generator at bus {self.bus}: {name} must be > 0")
        if self.xd <= self.xd_prime:
            raise ValueError(f"generator at bus {self.bus}: xd must exceed xd_prime")


@dataclass(frozen=True)
class AdmittanceMatrix:
    """Dense real/imaginary parts of the bus admittance matrix [pu]."""

    G: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "G", _readonly(np.asarray(self.G, dtype=float)))
        object.__setattr__(self, "B", _readonly(np.asarray(self.B, dtype=float)))


@dataclass(frozen=True)
class NetworkCase:
    """Fixed topology plus nominal parameters; immutable after construction."""

    n_buses: int
    branches: tuple[Branch, ...]
    generators: tuple[GeneratorSpec, ...]
    loads: np.ndarray           # (n_buses, 2) [P, Q] pu
    shunts: np.ndarray          # (n_buses, 2) [g_sh, b_sh] pu
    base_frequency: float = 60.0
    slack_bus: int = 1
    name: str = "case"

    def __post_init__(self):
        object.__setattr__(self, "branches", tuple(self.branches))
        object.__setattr__(self, "generators", tuple(self.generators))
        loads = np.zeros((self.n_buses, 2)) if self.loads is None else np.array(self.loads, dtype=float)
        shunts = np.zeros((self.n_buses, 2)) if self.shunts is None else np.array(self.shunts, dtype=float)
        for arr, what in ((loads, "loads"), (shunts, "shunts")):
            if arr.shape != (self.n_buses, 2):
                raise ValueError(f"{what} must have shape ({self.n_buses}, 2)")
        object.__setattr__(self, "loads", _readonly(loads))
        object.__setattr__(self, "shunts", _readonly(shunts))
        if len(self.generators) < 1:
            raise ValueError("at least one generator required")
        seen = set()
        for g in self.generators:
            self._check_bus(g.bus)
            if g.bus in seen:
                raise ValueError(f"duplicate generator at bus {g.bus}")
            seen.add(g.bus)
        self._check_bus(self.slack_bus)
        if self.slack_bus not in seen:
            raise ValueError("slack bus must host a generator")
        for br in self.branches:
            self._check_bus(br.from_bus)
            self._check_bus(br.to_bus)
        if not self._connected():
            raise ValueError("network graph is not connected")

    def _check_bus(self, bus: int):
        if not 1 <= bus <= self.n_buses:
            raise ValueError(f"bus id {bus} out of range 1..{self.n_buses}")

    def _connected(self) -> bool:
        adj = [[] for _ in range(self.n_buses)]
        for br in self.branches:
            adj[br.from_bus - 1].append(br.to_bus - 1)
            adj[br.to_bus - 1].append(br.from_bus - 1)
        seen = {0}
        stack = [0]
        while stack:
            for j in adj[stack.pop()]:
                if j not in seen:
                    seen.add(j)
                    stack.append(j)
        return len(seen) == self.n_buses

    @property
    def n_gen(self) -> int:
        return len(self.generators)

    @property
    def omega_s(self) -> float:
        return 2.0 * np.pi * self.base_frequency

    @property
    def estimable_r(self) -> tuple[int, ...]:
        """Branch indices with nonzero resistance."""
        return tuple(i for i, br in enumerate(self.branches) if br.r > 0.0)

    @property
    def estimable_x(self) -> tuple[int, ...]:
        """Branch indices with nonzero reactance (all of them, by invariant)."""
        return tuple(i for i, br in enumerate(self.branches) if br.x > 0.0)

    @property
    def gen_buses(self) -> tuple[int, ...]:
        return tuple(g.bus for g in self.generators)

    def bus_index(self, bus: int) -> int:
        self._check_bus(bus)
        return bus - 1

    def nominal_r(self) -> np.ndarray:
        return np.array([self.branches[i].r for i in self.estimable_r])

    def nominal_x(self) -> np.ndarray:
        return np.array([self.branches[i].x for i in self.estimable_x])


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def series_admittance(r: float, x: float) -> tuple[float, float]:
    """Series admittance (g_s, b_s) of a branch with impedance r + jx."""
    denom = r * r + x * x
    if denom == 0.0:
        raise DegenerateBranchError("branch with r = x = 0 has no admittance")
    return r / denom, -x / denom


def assemble_ybus(case: NetworkCase,
                  theta_r: np.ndarray | None = None,
                  theta_x: np.ndarray | None = None) -> AdmittanceMatrix:
    """Assemble the dense bus admittance matrix.

    ``theta_r`` / ``theta_x`` override the estimable branch resistances /
    reactances (in ``case.estimable_r`` / ``case.estimable_x`` order);
    non-estimable values are taken from the nominal case. Line charging is
    split half per end onto the diagonal of B.
    """
    r_all = np.array([br.r for br in case.branches])
    x_all = np.array([br.x for br in case.branches])
    if theta_r is not None:
        idx = case.estimable_r
        theta_r = np.asarray(theta_r, dtype=float)
        if theta_r.shape != (len(idx),):
            raise ValueError(f"theta_r must have length {len(idx)}")
        if np.any(theta_r <= 0.0):
            raise ValueError("estimable resistances must be > 0")
        r_all[list(idx)] = theta_r
    if theta_x is not None:
        idx = case.estimable_x
        theta_x = np.asarray(theta_x, dtype=float)
        if theta_x.shape != (len(idx),):
            raise ValueError(f"theta_x must have length {len(idx)}")
        if np.any(theta_x <= 0.0):
            raise ValueError("estimable reactances must be > 0")
        x_all[list(idx)] = theta_x

    n = case.n_buses
    Y = np.zeros((n, n), dtype=complex)
    for k, br in enumerate(case.branches):
        i, j = br.from_bus - 1, br.to_bus - 1
        g, b = series_admittance(r_all[k], x_all[k])
        ys = g + 1j * b
        ysh = 0.5j * br.b_charging
        t = br.tap
        Y[i, i] += (ys + ysh) / (t * t)
        Y[j, j] += ys + ysh
        Y[i, j] -= ys / t
        Y[j, i] -= ys / t
    Y += np.diag(case.shunts[:, 0] + 1j * case.shunts[:, 1])
    return AdmittanceMatrix(G=Y.real.copy(), B=Y.imag.copy())


def builtin_case_ieee9() -> NetworkCase:
    """The embedded canonical IEEE 9-bus (WSCC) case."""
    path = resources.files("daebayes").joinpath("cases/ieee9.case")
    return parse_case(path.read_text())


def load_case(path) -> NetworkCase:
    with open(path) as fh:
        return parse_case(fh.read())


def save_case(case: NetworkCase, path) -> None:
    with open(path, "w") as fh:
        fh.write(format_case(case))


_BRANCH_COLS = ["from_bus", "to_bus", "r", "x", "b_charging", "tap"]
_GEN_COLS = ["bus", "M_nom", "D_nom", "xd", "xd_prime", "Td0_prime",
             "T_ch", "R_d", "V_set", "P_dispatch", "k_ang"]
_LOAD_COLS = ["bus", "P", "Q"]
_SHUNT_COLS = ["bus", "g_sh", "b_sh"]
_CASE_KEYS = {"name", "n_buses", "base_frequency", "slack_bus"}
_SECTIONS = {"case", "buses", "branches", "generators", "loads", "shunts"}


def parse_case(text: str) -> NetworkCase:
    """Parse the sectioned key/value + table case format."""
    sections: dict[str, list[str]] = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip()
            if current not in _SECTIONS:
                raise CaseFormatError(f"line {lineno}: unknown section [{current}]")
            if current in sections:
                raise CaseFormatError(f"line {lineno}: duplicate section [{current}]")
            sections[current] = []
            continue
        if current is None:
            raise CaseFormatError(f"line {lineno}: content outside any section")
        sections[current].append(line)

    for required in ("case", "branches", "generators", "loads"):
        if required not in sections:
            raise CaseFormatError(f"missing required section [{required}]")

    meta: dict[str, str] = {}
    for line in sections["case"]:
        if "=" not in line:
            raise CaseFormatError(f"bad key/value line in [case]: {line!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in _CASE_KEYS:
            raise CaseFormatError(f"unknown [case] key {key!r}")
        meta[key] = val
    n_buses = int(meta["n_buses"])

    def table(name: str, cols: list[str]) -> list[dict[str, float]]:
        lines = sections.get(name)
        if not lines:
            return []
        header = lines[0].split()
        if header != cols:
            raise CaseFormatError(f"[{name}] header must be exactly: {' '.join(cols)}")
        rows = []
        for line in lines[1:]:
            parts = line.split()
            if len(parts) != len(cols):
                raise CaseFormatError(f"[{name}] row has {len(parts)} fields, expected {len(cols)}: {line!r}")
            rows.append({c: float(v) for c, v in zip(cols, parts)})
        return rows

    bus_rows = table("buses", ["bus"]) if "buses" in sections else []
    if bus_rows:
        ids = [int(r["bus"]) for r in bus_rows]
        if ids != list(range(1, n_buses + 1)):
            raise CaseFormatError("[buses] must list ids 1..n_buses in order")

    branches = tuple(
        Branch(int(r["from_bus"]), int(r["to_bus"]), r["r"], r["x"], r["b_charging"], r["tap"])
        for r in table("branches", _BRANCH_COLS)
    )
    generators = tuple(
        GeneratorSpec(int(r["bus"]), r["M_nom"], r["D_nom"], r["xd"], r["xd_prime"],
                      r["Td0_prime"], r["T_ch"], r["R_d"], r["V_set"],
                      r["P_dispatch"], r["k_ang"])
        for r in table("generators", _GEN_COLS)
    )
    loads = np.zeros((n_buses, 2))
    for r in table("loads", _LOAD_COLS):
        loads[int(r["bus"]) - 1] = (r["P"], r["Q"])
    shunts = np.zeros((n_buses, 2))
    for r in table("shunts", _SHUNT_COLS):
        shunts[int(r["bus"]) - 1] = (r["g_sh"], r["b_sh"])

    return NetworkCase(
        n_buses=n_buses,
        branches=branches,
        generators=generators,
        loads=loads,
        shunts=shunts,
        base_frequency=float(meta.get("base_frequency", 60.0)),
        slack_bus=int(meta.get("slack_bus", 1)),
        name=meta.get("name", "case"),
    )


def format_case(case: NetworkCase) -> str:
    out = ["[case]",
           f"name = {case.name}",
           f"n_buses = {case.n_buses}",
           f"base_frequency = {case.base_frequency!r}",
           f"slack_bus = {case.slack_bus}",
           "", "[buses]", "bus"]
    out += [str(i) for i in range(1, case.n_buses + 1)]
    out += ["", "[branches]", " ".join(_BRANCH_COLS)]
    for br in case.branches:
        out.append(f"{br.from_bus} {br.to_bus} {br.r!r} {br.x!r} {br.b_charging!r} {br.tap!r}")
    out += ["", "[generators]", " ".join(_GEN_COLS)]
    for g in case.generators:
        out.append(f"{g.bus} {g.M_nom!r} {g.D_nom!r} {g.xd!r} {g.xd_prime!r} "
                   f"{g.Td0_prime!r} {g.T_ch!r} {g.R_d!r} {g.V_set!r} "
                   f"{g.P_dispatch!r} {g.k_ang!r}")
    out += ["", "[loads]", " ".join(_LOAD_COLS)]
    for i in range(case.n_buses):
        if case.loads[i, 0] != 0.0 or case.loads[i, 1] != 0.0:
            out.append(f"{i + 1} {case.loads[i, 0]!r} {case.loads[i, 1]!r}")
    out += ["", "[shunts]", " ".join(_SHUNT_COLS)]
    for i in range(case.n_buses):
        if case.shunts[i, 0] != 0.0 or case.shunts[i, 1] != 0.0:
            out.append(f"{i + 1} {case.shunts[i, 0]!r} {case.shunts[i, 1]!r}")
    return "\n".join(out) + "\n"
