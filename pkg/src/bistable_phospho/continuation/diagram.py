"""One-parameter bifurcation diagrams and their JSON/CSV export."""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field

import numpy as np

from ..io import write_csv_atomic, write_json_atomic
from ..model import ModelParams
from ..phase import find_equilibria
from .core import Branch, CorrectorFailed, StepConfig
from .cycles import continue_cycle, cycle_near_hopf
from .equilibria import continue_equilibrium

log = logging.getLogger(__name__)

EQ_CSV_HEADER = ["param", "c_no", "c_nop", "trace", "det", "stable"]
CYCLE_CSV_HEADER = ["param", "T", "mu", "stable", "c_no_min", "c_no_max", "amplitude"]
CURVE_CSV_HEADER_TAIL = ["residual"]


@dataclass
class BifurcationDiagram:
    free: str
    range: tuple
    params: ModelParams
    equilibria: list = field(default_factory=list)
    cycles: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    def hopf_events(self):
        return [e for br in self.equilibria for e in br.events_of("hopf")]

    def cycle_folds(self):
        return [e for br in self.cycles for e in br.events_of("fold_cycle")]

    def to_dict(self) -> dict:
        return {"kind": "eq1d", "free": self.free, "range": list(self.range),
                "params": self.params.to_dict(),
                "equilibrium_branches": [b.to_dict() for b in self.equilibria],
                "cycle_branches": [b.to_dict() for b in self.cycles],
                "notes": list(self.notes)}

    def write(self, outdir, stem: str = "diagram") -> list[str]:
        written = []
        path = os.path.join(outdir, f"{stem}.json")
        write_json_atomic(path, self.to_dict())
        written.append(path)
        for i, br in enumerate(self.equilibria):
            path = os.path.join(outdir, f"{stem}_eq{i}.csv")
            write_csv_atomic(path, EQ_CSV_HEADER, equilibrium_rows(br))
            written.append(path)
        for i, br in enumerate(self.cycles):
            path = os.path.join(outdir, f"{stem}_cycle{i}.csv")
            write_csv_atomic(path, CYCLE_CSV_HEADER, cycle_rows(br))
            written.append(path)
        return written


def equilibrium_rows(br: Branch):
    for pt in br.points:
        yield [pt.u[2], pt.u[0], pt.u[1], pt.info["trace"], pt.info["det"], pt.info["stable"]]


def cycle_rows(br: Branch):
    for pt in br.points:
        i = pt.info
        yield [pt.u[3], pt.u[2], i["mu"], i["stable"], i["c_no_min"], i["c_no_max"],
               i["amplitude"]]


def curve_rows(br: Branch):
    """Flat rows for two-parameter curves: the unknowns then the residual."""
    for pt in br.points:
        yield [*pt.u, pt.residual]


def write_curve(br: Branch, outdir, stem: str) -> list[str]:
    json_path = os.path.join(outdir, f"{stem}.json")
    csv_path = os.path.join(outdir, f"{stem}.csv")
    write_json_atomic(json_path, br.to_dict())
    write_csv_atomic(csv_path, list(br.names) + CURVE_CSV_HEADER_TAIL, curve_rows(br))
    return [json_path, csv_path]


def _near(u, endpoints, free_tol):
    return any(abs(u - e) <= free_tol for e in endpoints)


def diagram_1d(params: ModelParams, free: str, range_: tuple[float, float],
               step_cfg: StepConfig | None = None, cycle_cfg: StepConfig | None = None,
               segments: int = 8, with_cycles: bool = True,
               cycle_seconds: float = 120.0) -> BifurcationDiagram:
    """Equilibrium branch over ``range_`` plus the cycle branches born at its Hopf points.

    The equilibrium branch starts at the lower end of the range. Each Hopf
    point seeds a small cycle which is continued away from it; a cycle branch
    that ends on another Hopf point already accounts for that point. Each
    cycle branch gets ``cycle_seconds`` of wall time unless ``cycle_cfg``
    says otherwise; canard explosions in stiff slices typically end in a
    truncated branch.
    """
    if cycle_cfg is None:
        cycle_cfg = StepConfig(ds=1e-2, ds_max=0.5, max_points=3000, newton_tol=5e-10,
                               max_seconds=cycle_seconds)
    lo, hi = range_
    start = params.replace(**{free: lo})
    eqs = find_equilibria(start)
    dia = BifurcationDiagram(free, (lo, hi), params)
    if not eqs:
        dia.notes.append(f"no equilibrium at {free}={lo}")
        return dia
    # one branch per equilibrium at the start that is not already on a branch
    for eq in eqs:
        on_branch = any(np.min(np.hypot(b.column("c_no") - eq.state[0],
                                        b.column("c_nop") - eq.state[1])) < 1e-6
                        for b in dia.equilibria)
        if on_branch:
            continue
        dia.equilibria.append(continue_equilibrium(start, free, (lo, hi), step_cfg,
                                                   x0=np.array(eq.state)))
    if not with_cycles:
        return dia
    done = []
    tol = 1e-4 * max(1.0, hi - lo)
    for ev in dia.hopf_events():
        if _near(ev.u[2], done, tol):
            continue
        seed = None
        for eps in (1e-3, 1e-2):
            try:
                seed = cycle_near_hopf(params, free, ev.u, eps=eps)
                break
            except (CorrectorFailed, np.linalg.LinAlgError, ValueError) as exc:
                log.info("cycle seed at %s=%g failed (eps=%g): %s", free, ev.u[2], eps, exc)
        if seed is None:
            dia.notes.append(f"no cycle seed near the Hopf point at {free}={ev.u[2]:.6g}")
            continue
        pv = getattr(seed.params, free)
        if not lo <= pv <= hi:
            dia.notes.append(f"cycle born at {free}={ev.u[2]:.6g} leaves the range")
            continue
        direction = 1 if pv >= ev.u[2] else -1
        br = continue_cycle(seed.params, free, seed, (lo, hi), cycle_cfg, direction=direction,
                            segments=segments)
        br.meta["hopf_origin"] = float(ev.u[2])
        dia.cycles.append(br)
        done.append(ev.u[2])
        for end in br.events_of("hopf_endpoint"):
            done.append(end.u[3])
    return dia
