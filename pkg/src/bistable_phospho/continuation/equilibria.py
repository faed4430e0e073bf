"""One-parameter continuation of equilibria with Hopf and fold detection."""
from __future__ import annotations

import numpy as np

from ..model import PARAM_INDEX, ModelParams, jacobian_reduced_kernel, rhs_reduced_kernel
from ..phase import classify_jacobian, find_equilibria
from .core import Branch, ContinuationProblem, StepConfig, continue_curve, converge_point
from .lyapunov import first_lyapunov


def param_vector(params: ModelParams, names, values) -> np.ndarray:
    p = params.as_array().copy()
    for n, v in zip(names, values):
        p[PARAM_INDEX[n]] = v
    return p


def with_values(params: ModelParams, names, values) -> ModelParams:
    return params.replace(**{n: float(v) for n, v in zip(names, values)})


class EquilibriumProblem(ContinuationProblem):
    """u = (c_no, c_nop, p); F(u) = rhs_reduced."""

    def __init__(self, params: ModelParams, free: str):
        if free not in PARAM_INDEX or free in ("use_piecewise_fsca", "sigma"):
            raise ValueError(f"cannot continue in {free!r}")
        self.params = params
        self.free = free
        self.idx = PARAM_INDEX[free]
        self.names = ["c_no", "c_nop", free]

    def _p(self, u):
        p = self.params.as_array().copy()
        p[self.idx] = u[2]
        return p

    def residual(self, u):
        return rhs_reduced_kernel(0.0, u[:2], self._p(u))

    def jacobian(self, u):
        p = self._p(u)
        J = np.empty((2, 3))
        J[:, :2] = jacobian_reduced_kernel(u[:2], p)
        h = 1e-7 * max(1.0, abs(u[2]))
        pp = p.copy()
        pm = p.copy()
        pp[self.idx] += h
        pm[self.idx] -= h
        J[:, 2] = (rhs_reduced_kernel(0.0, u[:2], pp) - rhs_reduced_kernel(0.0, u[:2], pm)) / (2 * h)
        return J

    def point_info(self, u):
        J = jacobian_reduced_kernel(u[:2], self._p(u))
        kind, ev = classify_jacobian(J)
        tr = J[0, 0] + J[1, 1]
        det = J[0, 0] * J[1, 1] - J[0, 1] * J[1, 0]
        return {"trace": tr, "det": det, "kind": kind, "stable": kind.startswith("stable"),
                "eigenvalues": [[z.real, z.imag] for z in ev]}

    def tests(self, u, info):
        return {"hopf": info["trace"], "fold": info["det"]}

    def event_valid(self, name, u):
        if name == "hopf":
            return self.point_info(u)["det"] > 0
        return True

    def event_data(self, name, u):
        info = self.point_info(u)
        out = {"trace": info["trace"], "det": info["det"]}
        if name == "hopf":
            p = self.params.replace(**{self.free: float(u[2])})
            out["omega"] = float(np.sqrt(info["det"]))
            out["l1"] = first_lyapunov(u[:2], p)
            out["criticality"] = "supercritical" if out["l1"] < 0 else "subcritical"
        return out


def continue_equilibrium(params: ModelParams, free: str, range_: tuple[float, float],
                         step_cfg: StepConfig | None = None, x0=None,
                         direction: int = 1) -> Branch:
    """Pseudo-arclength continuation of an equilibrium in parameter ``free``.

    Starts at ``params`` (whose ``free`` value must lie in ``range_``) from
    ``x0`` or the first equilibrium found there. Hopf events (trace sign
    change with det > 0) carry ``omega`` and the first Lyapunov coefficient;
    fold events mark det sign changes.
    """
    cfg = step_cfg or StepConfig()
    lo, hi = range_
    p0 = getattr(params, free)
    if not lo <= p0 <= hi:
        raise ValueError(f"{free}={p0} outside {range_}")
    if x0 is None:
        eqs = find_equilibria(params)
        if not eqs:
            raise ValueError("no equilibrium to start from")
        x0 = np.array(eqs[0].state)
    prob = EquilibriumProblem(params, free)
    u0 = converge_point(prob, np.array([x0[0], x0[1], p0], dtype=float), fix=2, cfg=cfg)
    d = np.zeros(3)
    d[2] = 1.0 if direction >= 0 else -1.0
    br = continue_curve(prob, u0, d, cfg, bounds={2: (lo, hi)}, kind="equilibrium",
                        event_tols={"hopf": 1e-8, "fold": 1e-8})
    br.meta.update({"free": free, "range": [lo, hi], "params": params.to_dict()})
    return br


def branch_stability(br: Branch) -> np.ndarray:
    return np.array([bool(pt.info.get("stable", False)) for pt in br.points])
