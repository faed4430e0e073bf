"""Pseudo-arclength predictor-corrector shared by all continuation problems.

A problem is a map ``F: R^(n+1) -> R^n``; the engine follows the curve
``F(u) = 0`` from a converged point, monitors scalar test functions and
refines their sign changes on the curve.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

log = logging.getLogger(__name__)

BRANCH_RESIDUAL_TOL = 1e-9


@dataclass
class StepConfig:
    ds: float = 1e-2
    ds_min: float = 1e-6
    ds_max: float = 1.0
    max_points: int = 2000
    grow: float = 1.3
    grow_after: int = 4
    newton_tol: float = 1e-11
    newton_maxiter: int = 15
    event_tol: float = 1e-8
    min_cos: float = 0.8
    closed_min_steps: int = 10
    # reject a step whose corrector moved farther than this many step lengths
    max_correction: float = 1.0
    # wall-clock budget for one branch (None: unlimited)
    max_seconds: float | None = None


@dataclass
class Event:
    kind: str
    index: int
    u: np.ndarray
    data: dict = field(default_factory=dict)

    def to_dict(self, names=None) -> dict:
        out = {"kind": self.kind, "index": self.index, "u": [float(v) for v in self.u]}
        if names:
            out["values"] = {n: float(v) for n, v in zip(names, self.u)}
        out.update({k: _jsonable(v) for k, v in self.data.items()})
        return out


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, complex):
        return [v.real, v.imag]
    return v


@dataclass
class BranchPoint:
    u: np.ndarray
    tangent: np.ndarray
    residual: float
    tests: dict = field(default_factory=dict)
    info: dict = field(default_factory=dict)


@dataclass
class Branch:
    """Ordered solution points plus detected events.

    ``names`` labels the components of the augmented unknown ``u``.
    """

    names: list
    points: list = field(default_factory=list)
    events: list = field(default_factory=list)
    kind: str = ""
    status: str = "ok"
    message: str = ""
    meta: dict = field(default_factory=dict)

    def column(self, name) -> np.ndarray:
        i = self.names.index(name)
        return np.array([pt.u[i] for pt in self.points])

    def test_values(self, name) -> np.ndarray:
        return np.array([pt.tests.get(name, np.nan) for pt in self.points])

    def events_of(self, kind) -> list:
        return [e for e in self.events if e.kind == kind]

    def to_dict(self) -> dict:
        test_names = sorted({k for pt in self.points for k in pt.tests})
        info_names = sorted({k for pt in self.points for k in pt.info})
        return {
            "kind": self.kind,
            "names": list(self.names),
            "status": self.status,
            "message": self.message,
            "meta": {k: _jsonable(v) for k, v in self.meta.items()},
            "points": [
                {
                    "u": [float(v) for v in pt.u],
                    "residual": float(pt.residual),
                    "tests": {k: _jsonable(pt.tests[k]) for k in test_names if k in pt.tests},
                    **{k: _jsonable(pt.info[k]) for k in info_names if k in pt.info},
                }
                for pt in self.points
            ],
            "events": [e.to_dict(self.names) for e in self.events],
        }


class ContinuationProblem:
    """Subclass hook: ``residual(u)`` and optionally ``jacobian(u)``."""

    names: list = []
    fd_step: float = 1e-7

    def residual(self, u: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def jacobian(self, u: np.ndarray) -> np.ndarray:
        return fd_jacobian(self.residual, u, self.fd_step)

    def tests(self, u: np.ndarray, info: dict) -> dict:
        return {}

    def point_info(self, u: np.ndarray) -> dict:
        return {}

    def event_valid(self, name: str, u: np.ndarray) -> bool:
        return True

    def event_data(self, name: str, u: np.ndarray) -> dict:
        return {}

    def stop(self, u: np.ndarray, info: dict) -> str | None:
        return None

    def after_accept(self, u: np.ndarray) -> bool:
        """Called on every accepted point; True if the defining system changed."""
        return False

    def invalid(self, u: np.ndarray) -> str | None:
        """Reason to reject a converged point, if any."""
        return None

    # components used to orient the tangent after the system changed
    orient: slice = slice(None)


def fd_jacobian(fun: Callable, u: np.ndarray, rel_step: float = 1e-7) -> np.ndarray:
    f0 = np.asarray(fun(u))
    J = np.empty((f0.size, u.size))
    for j in range(u.size):
        h = rel_step * max(1.0, abs(u[j]))
        up = u.copy()
        um = u.copy()
        up[j] += h
        um[j] -= h
        J[:, j] = (np.asarray(fun(up)) - np.asarray(fun(um))) / (2 * h)
    return J


def tangent_at(problem: ContinuationProblem, u: np.ndarray, ref: np.ndarray | None) -> np.ndarray:
    J = problem.jacobian(u)
    if ref is None:
        # null vector from the SVD
        _, _, vt = np.linalg.svd(J)
        t = vt[-1]
    else:
        A = np.vstack([J, ref])
        rhs = np.zeros(u.size)
        rhs[-1] = 1.0
        t = np.linalg.solve(A, rhs)
    t = t / np.linalg.norm(t)
    if ref is not None and np.dot(t, ref) < 0:
        t = -t
    return t


class CorrectorFailed(RuntimeError):
    pass


def correct(problem: ContinuationProblem, v: np.ndarray, t: np.ndarray, anchor: np.ndarray,
            s: float, cfg: StepConfig) -> tuple[np.ndarray, float]:
    """Newton on ``[F(u); t.(u - anchor) - s] = 0`` starting from ``v``."""
    u = v.copy()
    du = None
    res_prev = math.inf
    for _ in range(cfg.newton_maxiter + 1):
        F = np.asarray(problem.residual(u))
        if not np.all(np.isfinite(F)):
            raise CorrectorFailed("non-finite residual")
        res = float(np.linalg.norm(F))
        if du is not None:
            step = np.linalg.norm(du)
            scale = max(1.0, np.linalg.norm(u))
            if res <= cfg.newton_tol and step <= 1e-6 * scale:
                return u, res
            # rounding floor: Newton has stagnated inside the branch tolerance
            if res <= BRANCH_RESIDUAL_TOL and res > 0.5 * res_prev:
                return u, res
        res_prev = res
        g = np.append(F, np.dot(t, u - anchor) - s)
        A = np.vstack([problem.jacobian(u), t])
        try:
            du = np.linalg.solve(A, -g)
        except np.linalg.LinAlgError as exc:
            raise CorrectorFailed(str(exc)) from exc
        if not np.all(np.isfinite(du)):
            raise CorrectorFailed("singular corrector system")
        u = u + du
    raise CorrectorFailed(f"corrector did not converge (residual {res:.3g})")


def converge_point(problem: ContinuationProblem, u0: np.ndarray, fix: int,
                   cfg: StepConfig | None = None) -> np.ndarray:
    """Newton for a starting point with component ``fix`` held constant."""
    cfg = cfg or StepConfig()
    t = np.zeros(u0.size)
    t[fix] = 1.0
    u, _ = correct(problem, np.asarray(u0, float), t, np.asarray(u0, float), 0.0, cfg)
    return u


def _refine(problem, prev: BranchPoint, s_hi: float, name: str, g_lo: float, g_hi: float,
            cfg: StepConfig, tol: float):
    """Illinois regula falsi on arclength between ``prev`` (s=0) and s_hi."""
    t = prev.tangent
    a, b = 0.0, s_hi
    ga, gb = g_lo, g_hi
    u = None
    side = 0
    for _ in range(100):
        s = (a * gb - b * ga) / (gb - ga) if gb != ga else 0.5 * (a + b)
        if not (min(a, b) < s < max(a, b)):
            s = 0.5 * (a + b)
        u, _ = correct(problem, prev.u + s * t, t, prev.u, s, cfg)
        info = problem.point_info(u)
        gs = problem.tests(u, info)[name]
        if abs(gs) <= tol:
            return u, info
        if (gs > 0) == (gb > 0):
            b, gb = s, gs
            if side == -1:
                ga *= 0.5
            side = -1
        else:
            a, ga = s, gs
            if side == 1:
                gb *= 0.5
            side = 1
        if abs(b - a) <= 1e-15 * max(1.0, abs(s_hi)):
            break
    return u, problem.point_info(u)


def _land_on(problem, prev: BranchPoint, s_hi: float, i: int, edge: float, cfg: StepConfig):
    """Curve point between ``prev`` and arclength ``s_hi`` with ``u[i] == edge``."""
    t = prev.tangent
    a, b = 0.0, s_hi
    ga = prev.u[i] - edge
    u = prev.u
    for _ in range(60):
        s = 0.5 * (a + b)
        u, _ = correct(problem, prev.u + s * t, t, prev.u, s, cfg)
        g = u[i] - edge
        if abs(g) <= 1e-12 * max(1.0, abs(edge)):
            break
        if (g > 0) == (ga > 0):
            a, ga = s, g
        else:
            b = s
    u = u.copy()
    return u


def continue_curve(problem: ContinuationProblem, u0: np.ndarray, direction: np.ndarray | None,
                   cfg: StepConfig, bounds: dict | None = None, event_tols: dict | None = None,
                   closed: bool = False, kind: str = "") -> Branch:
    """Trace ``problem`` from the converged point ``u0``.

    ``direction`` orients the initial tangent (sign only). ``bounds`` maps
    component index -> (lo, hi); leaving the box ends the branch.
    """
    bounds = bounds or {}
    event_tols = event_tols or {}
    branch = Branch(names=list(problem.names), kind=kind)
    u0 = np.asarray(u0, dtype=float)
    problem.after_accept(u0)
    t0 = tangent_at(problem, u0, None)
    if direction is not None and np.dot(t0, direction) < 0:
        t0 = -t0
    info0 = problem.point_info(u0)
    p0 = BranchPoint(u0, t0, float(np.linalg.norm(problem.residual(u0))),
                     problem.tests(u0, info0), info0)
    branch.points.append(p0)
    ds = cfg.ds
    successes = 0
    t_start = time.monotonic()
    while len(branch.points) < cfg.max_points:
        if cfg.max_seconds is not None and time.monotonic() - t_start > cfg.max_seconds:
            branch.status = "budget"
            branch.message = f"time budget of {cfg.max_seconds:g} s exhausted"
            break
        prev = branch.points[-1]
        try:
            v = prev.u + ds * prev.tangent
            u, res = correct(problem, v, prev.tangent, prev.u, ds, cfg)
            if np.linalg.norm(u - v) > cfg.max_correction * ds and ds > 10 * cfg.ds_min:
                raise CorrectorFailed("corrector left the predictor neighbourhood")
            bad = problem.invalid(u)
            if bad:
                raise CorrectorFailed(bad)
            t_new = tangent_at(problem, u, prev.tangent)
            if np.dot(t_new, prev.tangent) < cfg.min_cos and ds > 10 * cfg.ds_min:
                raise CorrectorFailed("tangent turned too sharply")
        except (CorrectorFailed, np.linalg.LinAlgError, ArithmeticError) as exc:
            ds *= 0.5
            successes = 0
            if ds < cfg.ds_min:
                branch.status = "truncated"
                branch.message = f"step size below minimum: {exc}"
                log.info("branch truncated at point %d: %s", len(branch.points), exc)
                break
            continue
        info = problem.point_info(u)
        tests = problem.tests(u, info)
        pt = BranchPoint(u, t_new, res, tests, info)
        # events
        for name, g in tests.items():
            g_prev = prev.tests.get(name)
            if g_prev is None or not np.isfinite(g) or not np.isfinite(g_prev):
                continue
            if g_prev == 0 or (g > 0) == (g_prev > 0):
                continue
            try:
                ue, infe = _refine(problem, prev, ds, name, g_prev, g, cfg,
                                   event_tols.get(name, cfg.event_tol))
            except CorrectorFailed:
                continue
            if problem.event_valid(name, ue):
                ev = Event(name, len(branch.points), ue, problem.event_data(name, ue))
                branch.events.append(ev)
        out = [i for i, (lo, hi) in bounds.items() if not (lo <= u[i] <= hi)]
        if out:
            i = out[0]
            lo, hi = bounds[i]
            edge = lo if u[i] < lo else hi
            try:
                try:
                    ub = _land_on(problem, prev, ds, i, edge, cfg)
                except CorrectorFailed:
                    # secant guess on the edge, then Newton with that component fixed
                    w = (edge - prev.u[i]) / (u[i] - prev.u[i])
                    guess = prev.u + w * (u - prev.u)
                    guess[i] = edge
                    ub = converge_point(problem, guess, fix=i, cfg=cfg)
                infob = problem.point_info(ub)
                branch.points.append(BranchPoint(
                    ub, tangent_at(problem, ub, prev.tangent),
                    float(np.linalg.norm(problem.residual(ub))), problem.tests(ub, infob), infob))
            except (CorrectorFailed, np.linalg.LinAlgError):
                pass
            branch.status = "boundary"
            branch.message = f"reached {problem.names[i]} = {edge:g}"
            break
        branch.points.append(pt)
        if problem.after_accept(u):
            t_re = tangent_at(problem, u, None)
            k = problem.orient
            if np.dot(t_re[k], prev.tangent[k]) < 0:
                t_re = -t_re
            pt.tangent = t_re
        reason = problem.stop(u, info)
        if reason:
            branch.status = "truncated"
            branch.message = reason
            break
        if closed and len(branch.points) > cfg.closed_min_steps:
            if np.linalg.norm(u - u0) <= max(ds, cfg.ds) * 1.5:
                branch.status = "closed"
                branch.message = "returned to the starting point"
                break
        successes += 1
        if successes >= cfg.grow_after:
            ds = min(ds * cfg.grow, cfg.ds_max)
            successes = 0
    else:
        branch.status = "max_points"
    return branch
