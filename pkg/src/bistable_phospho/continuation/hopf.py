"""Two-parameter continuation of Hopf points and Bautin detection."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..model import PARAM_INDEX, ModelParams, jacobian_reduced_kernel, rhs_reduced_kernel
from .core import Branch, ContinuationProblem, Event, StepConfig, continue_curve, converge_point
from .equilibria import continue_equilibrium, with_values
from .lyapunov import HOPF_TRACE_TOL, first_lyapunov

BAUTIN_TOL = 1e-6


@dataclass
class CodimTwoPoint:
    kind: str
    location: dict
    l1: float

    def to_dict(self) -> dict:
        return {"kind": self.kind, "location": self.location, "l1": self.l1}


class HopfProblem(ContinuationProblem):
    """u = (c_no, c_nop, p1, p2); F(u) = (rhs_reduced, tr J)."""

    def __init__(self, params: ModelParams, free: tuple[str, str]):
        self.params = params
        self.free = tuple(free)
        self.idx = [PARAM_INDEX[n] for n in self.free]
        self.names = ["c_no", "c_nop", *self.free]

    def _p(self, u):
        p = self.params.as_array().copy()
        p[self.idx[0]] = u[2]
        p[self.idx[1]] = u[3]
        return p

    def residual(self, u):
        p = self._p(u)
        r = rhs_reduced_kernel(0.0, u[:2], p)
        J = jacobian_reduced_kernel(u[:2], p)
        return np.array([r[0], r[1], J[0, 0] + J[1, 1]])

    def point_info(self, u):
        p = self._p(u)
        J = jacobian_reduced_kernel(u[:2], p)
        det = J[0, 0] * J[1, 1] - J[0, 1] * J[1, 0]
        info = {"trace": J[0, 0] + J[1, 1], "det": det}
        if det > 0:
            info["omega"] = float(np.sqrt(det))
            info["l1"] = first_lyapunov(u[:2], with_values(self.params, self.free, u[2:]),
                                        check=False)
        return info

    def tests(self, u, info):
        return {"bautin": info["l1"]} if "l1" in info else {}

    def event_data(self, name, u):
        info = self.point_info(u)
        return {"l1": info.get("l1"), "omega": info.get("omega"), "trace": info["trace"]}

    def stop(self, u, info):
        if info["det"] <= 0:
            return "Hopf-fold interaction: det J <= 0"
        return None


def seed_hopf(params: ModelParams, p1: str, p1_range: tuple[float, float],
              which: int = 0, step_cfg: StepConfig | None = None) -> Event:
    """A Hopf point found by continuing equilibria in ``p1`` from ``params``."""
    br = continue_equilibrium(params, p1, p1_range, step_cfg)
    hopfs = br.events_of("hopf")
    if len(hopfs) <= which:
        raise ValueError(f"only {len(hopfs)} Hopf points found in {p1} range {p1_range}")
    return hopfs[which]


def continue_hopf_curve(params: ModelParams, free: tuple[str, str], seed, step_cfg=None,
                        bounds: dict | None = None, direction=None) -> Branch:
    """Hopf locus in the ``free`` parameter plane with Bautin points.

    ``seed`` is a Hopf point ``(c_no, c_nop, p1, p2)`` (or an equilibrium
    branch event). ``bounds`` maps parameter names to intervals; the curve
    stops on leaving them, on returning to the seed, or when det J <= 0.
    Bautin points are sign changes of l1, refined to |l1| <= 1e-6.
    """
    cfg = step_cfg or StepConfig(ds=0.05, ds_max=1.0, max_points=4000)
    prob = HopfProblem(params, free)
    u = np.asarray(getattr(seed, "u", seed), dtype=float)
    if u.size == 3:
        # equilibrium-branch event: (c_no, c_nop, p1)
        u = np.array([u[0], u[1], u[2], getattr(params, free[1])])
    u0 = converge_point(prob, u, fix=3, cfg=cfg)
    bnd = {}
    for name, (lo, hi) in (bounds or {}).items():
        bnd[prob.names.index(name)] = (lo, hi)
    br = continue_curve(prob, u0, direction, cfg, bounds=bnd,
                        event_tols={"bautin": BAUTIN_TOL}, closed=True, kind="hopf")
    for ev in br.events:
        if ev.kind == "bautin":
            ev.data["codim2"] = CodimTwoPoint(
                "Bautin",
                {free[0]: float(ev.u[2]), free[1]: float(ev.u[3]),
                 "c_no": float(ev.u[0]), "c_nop": float(ev.u[1])},
                float(ev.data["l1"])).to_dict()
    if br.message.startswith("Hopf-fold"):
        last = br.points[-1]
        br.events.append(Event("hopf_fold_interaction", len(br.points) - 1, last.u.copy(),
                               {"det": last.info["det"]}))
    br.meta.update({"free": list(free), "params": params.to_dict(),
                    "bounds": {k: list(v) for k, v in (bounds or {}).items()}})
    return br


def bautin_points(br: Branch) -> list[CodimTwoPoint]:
    out = []
    for ev in br.events_of("bautin"):
        d = ev.data["codim2"]
        out.append(CodimTwoPoint(d["kind"], d["location"], d["l1"]))
    return out


def enclosed_area(br: Branch, x: str, y: str) -> float:
    """Shoelace area of the curve, closed by the chord between its ends."""
    xs = br.column(x)
    ys = br.column(y)
    return float(0.5 * abs(np.dot(xs, np.roll(ys, -1)) - np.dot(ys, np.roll(xs, -1))))


def hopf_residual_ok(br: Branch) -> bool:
    return all(abs(pt.info["trace"]) <= HOPF_TRACE_TOL for pt in br.points)


def hopf_curve(params: ModelParams, p1: str, p1_range: tuple[float, float], p2: str,
               p2_range: tuple[float, float], step_cfg: StepConfig | None = None) -> Branch:
    """Hopf curve in (p1, p2) from the first Hopf point in ``p2`` at ``p1 = p1_range[0]``.

    The curve starts into increasing ``p1``. When it returns to the
    ``p1_range[0]`` edge the region it bounds is closed by that edge, and
    the status is reported as ``closed``.
    """
    lo = p1_range[0]
    base = params.replace(**{p1: lo, p2: p2_range[0]})
    ev = seed_hopf(base, p2, p2_range, 0)
    seed = np.array([ev.u[0], ev.u[1], lo, ev.u[2]])
    br = continue_hopf_curve(params.replace(**{p1: lo, p2: float(ev.u[2])}), (p1, p2), seed,
                             step_cfg, bounds={p1: tuple(p1_range), p2: tuple(p2_range)},
                             direction=np.array([0, 0, 1.0, 0]))
    if br.status == "boundary" and abs(br.points[-1].u[2] - lo) <= 1e-6 * max(abs(lo), 1e-12):
        br.status = "closed"
        br.message = f"returned to the {p1}={lo:g} boundary"
    return br


def hopf_curve_tau_kc(params: ModelParams, tau_min: float = 0.01, tau_max: float = 500.0,
                      kc_range=(0.05, 40.0), step_cfg: StepConfig | None = None) -> Branch:
    """Hopf curve in (tau, K_c) from the lower Hopf point at ``tau_min``.

    The bell returns to ``tau_min`` on its upper arm; the region it bounds is
    closed by the segment at ``tau_min``.
    """
    return hopf_curve(params, "tau", (tau_min, tau_max), "K_c", kc_range, step_cfg)
