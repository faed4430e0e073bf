"""Command-line front end.

Every subcommand resolves a :class:`~bistable_phospho.config.RunConfig`
(flags over config file over defaults), writes its CSV/JSON outputs into the
output directory, and finishes with ``<command>.meta.json`` holding the full
resolved config. Passing that metadata file back through ``--config``
reproduces the run.

Exit codes: 0 when every output was written, 2 for configuration errors,
1 for failures during the computation.
"""
from __future__ import annotations

import argparse
import logging
import math
import os
import sys

import numpy as np

from . import __version__
from .config import COMMAND_DEFAULTS, RUN_SECTION, ConfigError, RunConfig, parse_value, read_file, \
    resolve
from .integrate import IntegrationError, SolverConfig, integrate_sde, simulate_full, \
    simulate_reduced
from .io import write_csv_atomic, write_json_atomic, write_text_atomic
from .model import ModelParams, manifold_state

log = logging.getLogger("bistable_phospho")

DESCRIPTIONS = {
    "simulate": "integrate the reduced or full model (stochastic when sigma > 0)",
    "nullclines": "nullcline polylines and equilibria of the reduced model",
    "diagram": "bifurcation diagram: eq1d, hopf2d or cyclefold2d",
    "regime-grid": "regime labels on a two-parameter grid",
    "sr": "Fourier peak amplitude versus noise level",
    "periods": "period mean and CV under noise across parameter values",
    "calibrate": "run the bistability scan and emit the calibrated default config",
}


def _dt_warning(params: ModelParams, dt: float) -> None:
    if params.tau < 10 * dt:
        log.warning("dt=%g is coarse for tau=%g (tau < 10 dt); Euler-Maruyama may be "
                    "inaccurate or unstable", dt, params.tau)


def _path(rc: RunConfig, name: str) -> str:
    return os.path.join(rc.outdir, name)


# ---------------------------------------------------------------------------
# subcommands: each returns (written paths, summary dict)


def cmd_simulate(rc: RunConfig):
    o = rc.options
    p = rc.params
    stochastic = p.sigma > 0
    if stochastic and o["system"] != "reduced":
        raise ConfigError("[simulate] stochastic runs (sigma > 0) need system = reduced")
    x0 = o["x0"]
    if o["system"] == "full":
        if x0 is None:
            x0 = list(manifold_state(1.0, 0.1, p))
        elif len(x0) == 2:
            x0 = list(manifold_state(x0[0], x0[1], p))
        elif len(x0) != 7:
            raise ConfigError("[simulate] x0 needs 2 (c_no, c_nop) or 7 values for the full system")
    else:
        x0 = [1.0, 0.1] if x0 is None else x0
        if len(x0) != 2:
            raise ConfigError("[simulate] x0 needs 2 values for the reduced system")
    x0 = np.asarray(x0, dtype=float)
    if stochastic:
        _dt_warning(p, o["dt"])
        traj = integrate_sde(x0, SolverConfig(dt=o["dt"], t_end=o["t_end"]), p, rc.base_seed,
                             o["seed_index"], o["record_every"])
    else:
        n = o["n_samples"]
        times = np.linspace(0.0, o["t_end"], n) if n >= 2 else None
        sim = simulate_full if o["system"] == "full" else simulate_reduced
        traj = sim(p, x0, o["t_end"], output_times=times, rtol=o["rel_tol"], atol=o["abs_tol"])
    path = _path(rc, "trajectory.csv")
    header = ["t", *traj.columns]
    if o["system"] == "full":
        # conserved cytoplasmic sum, for checking the manifold
        header.append("cyto_sum")
        rows = ([t, *s, s[0] + s[1] + s[3]] for t, s in zip(traj.times, traj.states))
    else:
        rows = ([t, *s] for t, s in zip(traj.times, traj.states))
    write_csv_atomic(path, header, rows)
    return [path], {"system": o["system"], "n_rows": len(traj.times), "x0": x0.tolist(),
                    "solver": traj.meta}


def cmd_nullclines(rc: RunConfig):
    from .phase import EQUILIBRIA_HEADER, find_equilibria, trace_nullclines

    o = rc.options
    lines = trace_nullclines(rc.params, (o["total_min"], o["total_max"]), o["n_total"])
    written = []
    for which, polys in lines.items():
        path = _path(rc, f"nullcline_{which}.csv")
        write_csv_atomic(path, ["polyline", "total", "frac"],
                         ([i, q.total, q.frac] for i, pl in enumerate(polys) for q in pl.points))
        written.append(path)
    eqs = find_equilibria(rc.params, ((o["total_min"], o["total_max"]), (0.0, 1.0)), o["grid"])
    path = _path(rc, "equilibria.csv")
    write_csv_atomic(path, EQUILIBRIA_HEADER + ["total", "frac"],
                     (e.row() + [e.total, e.frac] for e in eqs))
    written.append(path)
    return written, {"n_equilibria": len(eqs), "stable": [e.stable for e in eqs],
                     "polylines": {k: len(v) for k, v in lines.items()}}


def _diagram_eq1d(rc: RunConfig):
    from .continuation.diagram import diagram_1d

    o = rc.options
    dia = diagram_1d(rc.params, o["free"], tuple(o["range"]), segments=o["segments"],
                     with_cycles=o["with_cycles"], cycle_seconds=o["cycle_seconds"])
    written = dia.write(rc.outdir, "diagram")
    summary = {
        "hopf": [{o["free"]: float(e.u[2]), "l1": e.data.get("l1")} for e in dia.hopf_events()],
        "fold_cycle": [float(e.u[3]) for e in dia.cycle_folds()],
        "equilibrium_branches": [b.status for b in dia.equilibria],
        "cycle_branches": [f"{b.status}: {b.message}" for b in dia.cycles],
        "notes": dia.notes,
    }
    return written, summary


def _diagram_hopf2d(rc: RunConfig):
    from .continuation.diagram import write_curve
    from .continuation.hopf import bautin_points, enclosed_area, hopf_curve

    o = rc.options
    br = hopf_curve(rc.params, o["free2"], tuple(o["range2"]), o["free"], tuple(o["range"]))
    written = write_curve(br, rc.outdir, "hopf2d")
    summary = {"status": br.status, "message": br.message, "points": len(br.points),
               "bautin": [b.to_dict() for b in bautin_points(br)],
               "area": enclosed_area(br, o["free2"], o["free"])}
    return written, summary


def _diagram_cyclefold2d(rc: RunConfig):
    from .continuation.core import StepConfig
    from .continuation.cycles import FoldSeedError, continue_cycle_fold_curve
    from .continuation.diagram import diagram_1d, write_curve

    o = rc.options
    free, free2 = o["free"], o["free2"]
    sliced = rc.params.replace(**{free2: o["fold_slice"]})
    dia = diagram_1d(sliced, free, tuple(o["range"]), segments=o["segments"],
                     cycle_seconds=o["cycle_seconds"])
    written = dia.write(rc.outdir, "cyclefold2d_slice")
    bounds = {free: tuple(o["range"]), free2: tuple(o["range2"])}
    curves = []
    for i, ev in enumerate(dia.cycle_folds()):
        p0 = sliced.replace(**{free: float(ev.u[3])})
        for sign, tag in ((1.0, "up"), (-1.0, "down")):
            d = np.zeros(ev.u.size + 1)
            d[4] = sign
            try:
                cfg = StepConfig(ds=1e-2, ds_max=0.5, max_points=2000, newton_tol=5e-10,
                                 max_seconds=o["cycle_seconds"])
                br = continue_cycle_fold_curve(p0, (free, free2), ev, step_cfg=cfg,
                                               bounds=bounds, direction=d)
            except (FoldSeedError, IntegrationError) as exc:
                curves.append({"fold": i, "direction": tag, "status": "failed",
                               "message": str(exc)})
                continue
            written += write_curve(br, rc.outdir, f"cyclefold2d_{i}_{tag}")
            curves.append({"fold": i, "direction": tag, "status": br.status,
                           "message": br.message, "points": len(br.points),
                           "end": {free: float(br.points[-1].u[3]),
                                   free2: float(br.points[-1].u[4])}})
    summary = {"slice": {free2: o["fold_slice"]},
               "fold_cycle": [float(e.u[3]) for e in dia.cycle_folds()], "curves": curves,
               "notes": dia.notes}
    return written, summary


def cmd_diagram(rc: RunConfig):
    kind = rc.options["kind"]
    if len(rc.options["range"]) != 2 or len(rc.options["range2"]) != 2:
        raise ConfigError("[diagram] range and range2 need two values")
    for key in ("free", "free2"):
        if rc.options[key] not in ModelParams.field_names():
            raise ConfigError(f"[diagram] {key}: unknown parameter {rc.options[key]!r}")
    return {"eq1d": _diagram_eq1d, "hopf2d": _diagram_hopf2d,
            "cyclefold2d": _diagram_cyclefold2d}[kind](rc)


def _grid_values(section, key, v):
    if len(v) != 3 or v[2] < 1 or not float(v[2]).is_integer():
        raise ConfigError(f"[{section}] {key} must be 'lo, hi, n' with integer n >= 1")
    return np.linspace(v[0], v[1], int(v[2]))


def cmd_regime_grid(rc: RunConfig):
    from .phase import REGIME_GRID_HEADER, regime_grid

    o = rc.options
    v1 = _grid_values("regime-grid", "p1_values", o["p1_values"])
    v2 = _grid_values("regime-grid", "p2_values", o["p2_values"])
    rows = regime_grid(rc.params, o["p1"], v1, o["p2"], v2, o["t_transient"], o["t_observe"],
                       jobs=rc.jobs)
    path = _path(rc, "regime_grid.csv")
    write_csv_atomic(path, REGIME_GRID_HEADER, (list(r) for r in rows))
    counts = {}
    for _, _, lab in rows:
        counts[lab] = counts.get(lab, 0) + 1
    return [path], {"cells": len(rows), "labels": counts}


def cmd_sr(rc: RunConfig):
    from .stochastic import sr_sweep

    o = rc.options
    if o["sigmas"] is not None:
        sigmas = np.asarray(o["sigmas"], dtype=float)
    else:
        if not 0 < o["sigma_min"] <= o["sigma_max"] or o["n_sigma"] < 1:
            raise ConfigError("[sr] need 0 < sigma_min <= sigma_max and n_sigma >= 1")
        sigmas = np.logspace(math.log10(o["sigma_min"]), math.log10(o["sigma_max"]), o["n_sigma"])
    _dt_warning(rc.params, o["dt"])
    curve = sr_sweep(rc.params, sigmas, o["T"], o["n_seeds"], rc.base_seed, o["dt"],
                     o["record_every"], o["transient_frac"], jobs=rc.jobs)
    path = _path(rc, "sr.csv")
    curve.to_csv(path)
    path2 = _path(rc, "sr_per_seed.csv")
    write_csv_atomic(path2, ["sigma", "seed_index", "amplitude"],
                     ([s, j, a] for s, row in zip(curve.sigmas, curve.per_seed)
                      for j, a in enumerate(row)))
    k = curve.peak_index()
    return [path, path2], {"peak_sigma": float(curve.sigmas[k]),
                           "peak_amplitude": float(curve.amplitudes[k]),
                           "x0": curve.config["x0"]}


def cmd_periods(rc: RunConfig):
    from .stochastic import cv_vs_parameter, write_period_table

    o = rc.options
    th = o["thresholds"]
    if isinstance(th, list):
        if len(th) != 2:
            raise ConfigError("[periods] thresholds must be 'auto' or 'up, down'")
        th = tuple(th)
    elif th != "auto":
        raise ConfigError("[periods] thresholds must be 'auto' or 'up, down'")
    _dt_warning(rc.params, o["dt"])
    table = cv_vs_parameter(rc.params, o["free"], o["values"], o["sigma"], o["n_traj"],
                            rc.base_seed, o["T"], th, o["dt"], jobs=rc.jobs)
    path = _path(rc, "periods.csv")
    write_period_table(path, table)
    return [path], {"rows": [st.row(v) for v, st in table]}


def cmd_calibrate(rc: RunConfig):
    from .calibration import calibrate, config_text

    def progress(i, rep, seconds):
        log.info("candidate %d (m=%g, m_sca=%g, k_vn=%g, k_vcy=%g, A_cyto=%g): %s [%.0f s]",
                 i, rep.params.m, rep.params.m_sca, rep.params.k_vn, rep.params.k_vcy,
                 rep.params.A_cyto, rep.failed or "passed", seconds)

    hits = calibrate(first_only=not rc.options["full_scan"], progress=progress)
    if not hits:
        raise RuntimeError("no candidate passed the calibration targets")
    path = _path(rc, "calibrated.conf")
    write_text_atomic(path, config_text(hits[0]))
    written = [path]
    if len(hits) > 1:
        path2 = _path(rc, "calibration_hits.csv")
        keys = ["m", "m_sca", "k_vn", "k_vcy", "A_cyto", "A_n"]
        write_csv_atomic(path2, keys, ([getattr(h.params, k) for k in keys] for h in hits))
        written.append(path2)
    return written, {"chosen": hits[0].params.to_dict(), "details": hits[0].details,
                     "n_hits": len(hits)}


COMMANDS = {
    "simulate": cmd_simulate,
    "nullclines": cmd_nullclines,
    "diagram": cmd_diagram,
    "regime-grid": cmd_regime_grid,
    "sr": cmd_sr,
    "periods": cmd_periods,
    "calibrate": cmd_calibrate,
}


# ---------------------------------------------------------------------------
# argument handling


def _flag(key: str) -> str:
    return "--" + key.replace("_", "-")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bistable-phospho", description=__doc__.split("\n")[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True, metavar="command")
    for name, defaults in COMMAND_DEFAULTS.items():
        sp = sub.add_parser(name, help=DESCRIPTIONS[name], description=DESCRIPTIONS[name])
        sp.add_argument("-c", "--config", help="key = value config file or emitted metadata JSON")
        sp.add_argument("-o", "--outdir", help="output directory")
        sp.add_argument("--seed", type=int, dest="base_seed", help="base seed")
        sp.add_argument("-j", "--jobs", type=int, help="worker processes (0: all cores)")
        sp.add_argument("-p", "--param", action="append", default=[], metavar="NAME=VALUE",
                        help="model parameter override (repeatable)")
        sp.add_argument("-v", "--verbose", action="count", default=0)
        group = sp.add_argument_group(f"{name} options")
        for key, default in defaults.items():
            shown = "none" if default is None else str(default).strip("[]")
            group.add_argument(_flag(key), dest=f"opt_{key}", metavar="VALUE",
                               help=f"default: {shown}")
    return ap


def overrides_from_args(args) -> dict:
    out: dict[str, dict] = {}
    for item in args.param:
        if "=" not in item:
            raise ConfigError(f"--param expects NAME=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        out.setdefault("model", {})[k.strip()] = parse_value(v)
    for key in ("outdir", "base_seed", "jobs"):
        v = getattr(args, key)
        if v is not None:
            out.setdefault(RUN_SECTION, {})[key] = v
    for key in COMMAND_DEFAULTS[args.command]:
        v = getattr(args, f"opt_{key}")
        if v is not None:
            out.setdefault(args.command, {})[key] = parse_value(v)
    return out


def run(rc: RunConfig) -> list[str]:
    """Execute a resolved config; returns the written paths (metadata last)."""
    try:
        os.makedirs(rc.outdir, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {rc.outdir!r}: {exc.strerror}") from exc
    if not os.access(rc.outdir, os.W_OK):
        raise ConfigError(f"output directory {rc.outdir!r} is not writable")
    written, summary = COMMANDS[rc.command](rc)
    meta_path = _path(rc, f"{rc.command}.meta.json")
    write_json_atomic(meta_path, {
        "command": rc.command,
        "version": __version__,
        "config": rc.to_dict(),
        "outputs": [os.path.basename(p) for p in written],
        "summary": summary,
    })
    return written + [meta_path]


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s: %(message)s")
    try:
        sections = read_file(args.config) if args.config else {}
        rc = resolve(args.command, sections, overrides_from_args(args))
        written = run(rc)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (IntegrationError, RuntimeError, ValueError, OSError) as exc:
        print(f"error: {args.command} failed: {exc}", file=sys.stderr)
        return 1
    for p in written:
        print(p)
    return 0


if __name__ == "__main__":
    sys.exit(main())
