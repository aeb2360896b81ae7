"""File emission: measurement sets, chain outputs, curvature tables, and the
consolidated run report. All tables are CSV, all ledgers JSON text, and every
file starts with a version/config-hash/seed header line."""

from __future__ import annotations

import json
import os

import numpy as np

from . import __version__
from .config import RunConfig, config_hash, format_config
from .identify import CLASS_ORDER, CurvatureReport
from .pipeline import AblationResult, EstimateResult, Pipeline
from .sampler import ChainResult


def file_header(cfg: RunConfig) -> str:
    return f"# daebayes v{__version__} | config_hash={config_hash(cfg)} | seed={cfg.seed}"


def _write(path: str, text: str) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w") as fh:
        fh.write(text)


def _csv(header_line: str, columns: list[str], rows) -> str:
    lines = [header_line, ",".join(columns)]
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    return "\n".join(lines) + "\n"


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not serializable: {type(o)}")


# -- simulate -----------------------------------------------------------------

def channel_names(n_monitored: int, monitored: tuple[int, ...], n_gen: int) -> list[str]:
    names = []
    for b in monitored:
        names += [f"Vr_bus{b}", f"Vi_bus{b}"]
    names += [f"dw_pu_gen{i + 1}" for i in range(n_gen)]
    return names


def write_measurements(out_dir: str, pipe: Pipeline) -> list[str]:
    cfg = pipe.config
    head = file_header(cfg)
    chans = channel_names(len(cfg.monitored_buses), cfg.monitored_buses,
                          pipe.case.n_gen)
    written = []
    for e, m in enumerate(pipe.measurements, start=1):
        for tag, data in (("", m.y), ("_clean", m.clean)):
            path = os.path.join(out_dir, f"experiment_{e}{tag}.csv")
            rows = [[t, *data[:, k]] for k, t in enumerate(m.times)]
            _write(path, _csv(head, ["time", *chans], rows))
            written.append(path)
        meta = {
            "seed": cfg.seed,
            "label": m.schedule.label,
            "pulses": [{"bus": p.bus, "start": p.start, "duration": p.duration,
                        "amplitude": p.amplitude} for p in m.schedule.pulses],
            "sigma_meas": m.sigma_meas,
            "sigma_eff": m.sigma_eff,
            "windows": [{"kind": k, "start": a, "end": b} for k, a, b in m.windows],
            "n_times": int(m.times.size),
        }
        path = os.path.join(out_dir, f"experiment_{e}_meta.json")
        _write(path, json.dumps(meta, indent=1, sort_keys=True, default=_json_default) + "\n")
        written.append(path)
    truth = {
        "seed": pipe.truth.seed,
        "caps": pipe.truth.caps,
        "theta_true": {name: val for name, val in
                       zip(pipe.prior.param_names(), pipe.theta_true)},
    }
    path = os.path.join(out_dir, "truth.json")
    _write(path, json.dumps(truth, indent=1, sort_keys=True, default=_json_default) + "\n")
    written.append(path)
    return written


# -- identify -------------------------------------------------------------------

def write_curvature(out_dir: str, cfg: RunConfig, curv: CurvatureReport) -> list[str]:
    head = file_header(cfg)
    names = [k for k in CLASS_ORDER if k in curv.blocks]
    rows = [[n, *curv.I[i]] for i, n in enumerate(names)]
    co_path = os.path.join(out_dir, "coident.csv")
    _write(co_path, _csv(head, ["block", *names], rows))
    h_path = os.path.join(out_dir, "curvature.csv")
    _write(h_path, _csv(head, [f"c{j}" for j in range(curv.H.shape[1])],
                        [list(r) for r in curv.H]))
    return [co_path, h_path]


# -- estimate ---------------------------------------------------------------------

def write_chain(out_dir: str, cfg: RunConfig, chain: ChainResult,
                param_names: list[str]) -> list[str]:
    head = file_header(cfg)
    written = []
    cols = ["sample", *[f"eta_{n}" for n in param_names], *[f"theta_{n}" for n in param_names]]
    rows = [[i, *chain.etas[i], *chain.thetas[i]] for i in range(chain.etas.shape[0])]
    path = os.path.join(out_dir, "samples.csv")
    _write(path, _csv(head, cols, rows))
    written.append(path)

    srows = []
    for row in chain.summary.rows():
        srows.append([row["name"], row["mean"], row["std"], row["q2.5"], row["q97.5"],
                      row.get("true", ""), row.get("rel_err_pct", ""),
                      row.get("covered", "")])
    path = os.path.join(out_dir, "summary.csv")
    _write(path, _csv(head, ["name", "mean", "std", "q2.5", "q97.5", "true",
                             "rel_err_pct", "covered"], srows))
    written.append(path)

    path = os.path.join(out_dir, "ledger.json")
    _write(path, json.dumps(_ledger_dict(chain), indent=1, sort_keys=True,
                            default=_json_default) + "\n")
    written.append(path)
    return written


def _ledger_dict(chain: ChainResult) -> dict:
    # Wall-clock is dropped so emitted files are bit-reproducible per seed.
    d = chain.ledger.as_dict()
    d.pop("wall_clock_s", None)
    return d


def render_report(result: EstimateResult) -> str:
    pipe, chain = result.pipeline, result.chain
    cfg = pipe.config
    lines = [file_header(cfg), "", "== run config ==", format_config(cfg).rstrip(), ""]
    lines += ["== truth ==",
              *(f"{n} = {v!r}" for n, v in zip(pipe.prior.param_names(), pipe.theta_true)),
              ""]
    lines.append("== posterior summary ==")
    lines.append(f"{'name':<6} {'mean':>12} {'std':>12} {'q2.5':>12} {'q97.5':>12} "
                 f"{'true':>10} {'err%':>8} {'cov':>4}")
    for row in chain.summary.rows():
        lines.append(f"{row['name']:<6} {row['mean']:>12.6g} {row['std']:>12.4g} "
                     f"{row['q2.5']:>12.6g} {row['q97.5']:>12.6g} "
                     f"{row.get('true', float('nan')):>10.5g} "
                     f"{row.get('rel_err_pct', float('nan')):>8.2f} "
                     f"{str(row.get('covered', '')):>4}")
    roll = chain.summary.class_rollup()
    if roll:
        lines.append("")
        lines.append("class rollup (mean/max % error): " +
                     "  ".join(f"{k}={v[0]:.2f}/{v[1]:.2f}" for k, v in roll.items()))
    if result.curvature is not None:
        names = [k for k in CLASS_ORDER if k in result.curvature.blocks]
        lines += ["", "== co-identifiability ==",
                  "      " + "".join(f"{n:>8}" for n in names)]
        for i, n in enumerate(names):
            lines.append(f"{n:<6}" + "".join(f"{v:>8.3f}" for v in result.curvature.I[i]))
    lines += ["", "== ledger ==",
              json.dumps(_ledger_dict(chain), indent=1, sort_keys=True,
                         default=_json_default)]
    lines += ["", f"noise ratio |l_data|/(0.5||eta||^2) = {result.noise_ratio:.4g}", ""]
    lines.append("== built-in checks ==")
    for name, ok, detail in result.checks:
        mark = "PASS" if ok else "FAIL"
        lines.append(f"[{mark}] {name}" + (f" ({detail})" if detail else ""))
    return "\n".join(lines) + "\n"


def write_estimate(out_dir: str, result: EstimateResult) -> list[str]:
    pipe = result.pipeline
    cfg = pipe.config
    written = write_chain(out_dir, cfg, result.chain, pipe.prior.param_names())
    if result.curvature is not None:
        written += write_curvature(out_dir, cfg, result.curvature)
    path = os.path.join(out_dir, "report.txt")
    _write(path, render_report(result))
    written.append(path)
    path = os.path.join(out_dir, "config_echo.cfg")
    _write(path, file_header(cfg) + "\n" + format_config(cfg))
    written.append(path)
    return written


# -- ablate ------------------------------------------------------------------------

def write_ablation(out_dir: str, ab: AblationResult) -> list[str]:
    cfg = ab.pipeline.config
    rows = ab.rows()
    cols = list(rows[0].keys() | {"median_shift_vs_da_pct"})
    cols = ["variant", "iterations", "exact_solves", "coarse_solves", "time_min",
            "acceptance",
            *(f"err_{k}_{s}_pct" for k in ("M", "D", "r", "x") for s in ("mean", "max")),
            "median_shift_vs_da_pct"]
    table = [[r.get(c, "") for c in cols] for r in rows]
    path = os.path.join(out_dir, "ablation.csv")
    _write(path, _csv(file_header(cfg), cols, table))
    return [path]
