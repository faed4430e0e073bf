"""Limit cycles by single shooting: continuation, Floquet multipliers, folds of cycles.

The cycle is parametrized as ``u = (c_no, c_nop, T, p)``: an anchor point on a
Poincare section (a line through a reference point, orthogonal to the flow
there), the period and the free parameter. The return map is integrated in
normalized time ``s = t/T`` on a mesh frozen between accepted points, taken
from an adaptive run; the variational equation is integrated with the same
stages, so the monodromy matrix is the exact derivative of the discrete map.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from ..integrate import IntegrationError, dopri
from ..model import (PARAM_INDEX, ModelParams, _jac2, _rhs2, jacobian_reduced_kernel,
                     rhs_reduced_kernel)
from ..phase import find_equilibria, peak_times
from .core import (Branch, ContinuationProblem, CorrectorFailed, Event, StepConfig,
                   continue_curve, converge_point, correct)
from .lyapunov import normal_form_basis

log = logging.getLogger(__name__)

RETURN_TOL = 1e-8
FOLD_TOL = 1e-6
# a fold-of-cycles curve whose amplitude turns upward below this multiple of
# the cutoff has passed its Bautin endpoint
AMPLITUDE_TURN = 20.0
REANCHOR_TOL = 0.1
MESH_RTOL = 1e-10
PROFILE_SAMPLES = 2048
MAX_MESH = 400_000


class FoldSeedError(ValueError):
    pass


@dataclass
class CycleSolution:
    anchor: np.ndarray
    period: float
    mu: float
    amplitude: float
    c_no_min: float
    c_no_max: float
    params: ModelParams
    residual: float = 0.0
    normal: np.ndarray | None = None

    @property
    def stable(self) -> bool:
        return abs(self.mu) < 1.0

    def to_dict(self) -> dict:
        return {"anchor": [float(v) for v in self.anchor], "period": self.period,
                "mu": self.mu, "amplitude": self.amplitude, "c_no_min": self.c_no_min,
                "c_no_max": self.c_no_max, "stable": self.stable, "residual": self.residual}


# ---------------------------------------------------------------------------
# fixed-mesh Dormand-Prince (5th-order weights) on the variational system

_A = np.array([
    [0, 0, 0, 0, 0, 0],
    [1 / 5, 0, 0, 0, 0, 0],
    [3 / 40, 9 / 40, 0, 0, 0, 0],
    [44 / 45, -56 / 15, 32 / 9, 0, 0, 0],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729, 0, 0],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656, 0],
])
_B = np.array([35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84])


@njit(cache=True)
def _var_f(y, p, T, k):
    a, b = _rhs2(y[0], y[1], p)
    j00, j01, j10, j11 = _jac2(y[0], y[1], p)
    k[0] = T * a
    k[1] = T * b
    # M row-major in y[2:6]
    k[2] = T * (j00 * y[2] + j01 * y[4])
    k[3] = T * (j00 * y[3] + j01 * y[5])
    k[4] = T * (j10 * y[2] + j11 * y[4])
    k[5] = T * (j10 * y[3] + j11 * y[5])
    k[6] = T * (j00 + j11)


@njit(cache=True)
def _shoot(x0, x1, T, p, mesh, A, B):
    """Flow over one period from (x0, x1); returns (x(T), M flattened, int tr J)."""
    y = np.zeros(7)
    y[0] = x0
    y[1] = x1
    y[2] = 1.0
    y[5] = 1.0
    K = np.zeros((6, 7))
    ys = np.empty(7)
    for i in range(mesh.shape[0] - 1):
        h = mesh[i + 1] - mesh[i]
        for st in range(6):
            for c in range(7):
                acc = y[c]
                for j in range(st):
                    acc += h * A[st, j] * K[j, c]
                ys[c] = acc
            _var_f(ys, p, T, K[st])
        for c in range(7):
            acc = 0.0
            for st in range(6):
                acc += B[st] * K[st, c]
            y[c] += h * acc
    return y


def make_mesh(x, T, p, rtol=MESH_RTOL) -> np.ndarray:
    """Normalized-time mesh from the accepted steps of an adaptive run."""
    ts, _, _, _ = dopri(rhs_reduced_kernel, np.asarray(x, float), 0.0, float(T), p,
                        rtol=rtol, atol=1e-13)
    mesh = np.asarray(ts) / T
    mesh[0] = 0.0
    mesh[-1] = 1.0
    if mesh.size > MAX_MESH:
        raise CorrectorFailed(f"shooting mesh of {mesh.size} intervals is too fine")
    # split each interval once: keeps the fixed-step error below the adaptive one
    mid = 0.5 * (mesh[1:] + mesh[:-1])
    out = np.empty(2 * mesh.size - 1)
    out[0::2] = mesh
    out[1::2] = mid
    return out


def cycle_profile(x, T, p, n=PROFILE_SAMPLES) -> tuple[np.ndarray, np.ndarray]:
    times = np.linspace(0.0, T, n + 1)
    ts, ys, _, _ = dopri(rhs_reduced_kernel, np.asarray(x, float), 0.0, float(T), p,
                         rtol=1e-10, atol=1e-13, output_times=times)
    return np.asarray(ts), np.asarray(ys)


def _unit_flow(x, p):
    f = np.array(_rhs2(x[0], x[1], p))
    nrm = np.linalg.norm(f)
    if nrm == 0.0:
        raise ValueError("anchor is an equilibrium: the flow vanishes there")
    return f / nrm


class CycleProblem(ContinuationProblem):
    """Shooting system for a periodic orbit.

    ``u = (c_no, c_nop, T, free..., x_2, ..., x_N)``: the anchor ``x_1`` on the
    section, the period, the free parameters and, for multiple shooting with
    ``segments = N > 1``, the states at ``k T / N``. Equations are
    ``phi_{T/N}(x_k) - x_{k+1} = 0`` (cyclically) and ``n.(x_1 - a) = 0``.
    """

    def __init__(self, params: ModelParams, free, anchor, normal=None,
                 reanchor_tol: float = REANCHOR_TOL, min_amplitude: float = 1e-3,
                 t_ref: float = 1.0, segments: int = 1):
        self.params = params
        # the period enters u as T / t_ref so that it does not dominate arclength
        self.t_ref = float(t_ref)
        self.free = (free,) if isinstance(free, str) else tuple(free)
        for name in self.free:
            if name not in PARAM_INDEX or name in ("use_piecewise_fsca", "sigma"):
                raise ValueError(f"cannot continue in {name!r}")
        if segments < 1:
            raise ValueError("segments must be >= 1")
        self.segments = int(segments)
        self.idx = [PARAM_INDEX[n] for n in self.free]
        self.k0 = 3 + len(self.free)
        self.names = ["c_no", "c_nop", "T", *self.free]
        for k in range(2, self.segments + 1):
            self.names += [f"c_no_{k}", f"c_nop_{k}"]
        self.orient = slice(2, self.k0)
        self.anchor = np.asarray(anchor, dtype=float).copy()
        self.normal = None if normal is None else np.asarray(normal, float)
        self.reanchor_tol = reanchor_tol
        self.min_amplitude = min_amplitude
        self.meshes = None
        self.n_reanchor = 0
        self._cache = {}

    def _p(self, u):
        p = self.params.as_array().copy()
        for k, i in enumerate(self.idx):
            p[i] = u[3 + k]
        return p

    def _states(self, u):
        xs = [u[:2]]
        for k in range(self.segments - 1):
            xs.append(u[self.k0 + 2 * k:self.k0 + 2 * k + 2])
        return xs

    def _col(self, k):
        """Column of the first component of segment state ``k`` in ``u``."""
        return 0 if k == 0 else self.k0 + 2 * (k - 1)

    def initial_u(self, x, T, values) -> np.ndarray:
        """Unknown vector for the orbit through ``x`` (period ``T`` in time units)."""
        u = np.concatenate([np.asarray(x, float)[:2], [T / self.t_ref], values])
        if self.segments > 1:
            p = self._p(u)
            times = np.arange(self.segments) * (T / self.segments)
            _, ys, _, _ = dopri(rhs_reduced_kernel, np.asarray(x, float), 0.0, times[-1], p,
                                rtol=1e-11, atol=1e-13, output_times=times)
            u = np.concatenate([u, np.asarray(ys)[1:].ravel()])
        return u

    def _ensure_section(self, u):
        if self.normal is None:
            self.normal = _unit_flow(self.anchor, self._p(u))

    def set_mesh(self, u):
        self._ensure_section(u)
        p = self._p(u)
        dt = u[2] * self.t_ref / self.segments
        self.meshes = [make_mesh(x, dt, p) for x in self._states(u)]
        self._cache.clear()

    def _eval(self, u):
        key = u.tobytes()
        ys = self._cache.get(key)
        if ys is None:
            if self.meshes is None:
                self.set_mesh(u)
            if not u[2] > 0:
                raise CorrectorFailed("non-positive period")
            p = self._p(u)
            dt = u[2] * self.t_ref / self.segments
            ys = [_shoot(x[0], x[1], dt, p, mesh, _A, _B)
                  for x, mesh in zip(self._states(u), self.meshes)]
            if len(self._cache) > 64:
                self._cache.clear()
            self._cache[key] = ys
        return ys

    def _gaps(self, u):
        xs = self._states(u)
        ys = self._eval(u)
        n = self.segments
        return np.concatenate([ys[k][:2] - xs[(k + 1) % n] for k in range(n)])

    def residual(self, u):
        self._ensure_section(u)
        return np.append(self._gaps(u), np.dot(self.normal, u[:2] - self.anchor))

    def jacobian(self, u):
        ys = self._eval(u)
        n = self.segments
        J = np.zeros((2 * n + 1, u.size))
        for k in range(n):
            r = 2 * k
            c = self._col(k)
            J[r:r + 2, c:c + 2] += ys[k][2:6].reshape(2, 2)
            c1 = self._col((k + 1) % n)
            J[r:r + 2, c1:c1 + 2] -= np.eye(2)
        J[-1, :2] = self.normal
        for j in range(2, self.k0):
            h = 1e-7 * max(1.0, abs(u[j]))
            up = u.copy()
            um = u.copy()
            up[j] += h
            um[j] -= h
            J[:-1, j] = (self._gaps(up) - self._gaps(um)) / (2 * h)
        return J

    def multiplier(self, u) -> float:
        return math.exp(sum(y[6] for y in self._eval(u)))

    def point_info(self, u):
        ys = self._eval(u)
        p = self._p(u)
        try:
            _, prof = cycle_profile(u[:2], u[2] * self.t_ref, p)
            lo = float(prof[:, 0].min())
            hi = float(prof[:, 0].max())
        except Exception:
            lo = hi = float("nan")
        mu = math.exp(sum(y[6] for y in ys))
        M = np.eye(2)
        for y in ys:
            M = y[2:6].reshape(2, 2) @ M
        return {"T": float(u[2] * self.t_ref), "mu": mu, "det_monodromy": float(np.linalg.det(M)),
                "amplitude": hi - lo, "c_no_min": lo, "c_no_max": hi,
                "stable": bool(abs(mu) < 1.0)}

    def tests(self, u, info):
        return {"fold_cycle": info["mu"] - 1.0}

    def event_data(self, name, u):
        info = self.point_info(u)
        return {k: info[k] for k in ("mu", "T", "amplitude", "c_no_min", "c_no_max")}

    def stop(self, u, info):
        if not info["amplitude"] >= self.min_amplitude:
            return f"Hopf endpoint: amplitude {info['amplitude']:.3g} below {self.min_amplitude:g}"
        return None

    def transversality(self, u) -> float:
        f = np.array(_rhs2(u[0], u[1], self._p(u)))
        return abs(np.dot(self.normal, f)) / max(np.linalg.norm(f), 1e-300)

    def invalid(self, u):
        f = np.array(_rhs2(u[0], u[1], self._p(u)))
        if np.dot(self.normal, f) <= 0.0:
            return "anchor moved to the backward crossing of the section"
        return None

    def after_accept(self, u):
        changed = False
        self._ensure_section(u)
        if self.transversality(u) < self.reanchor_tol:
            self.anchor = u[:2].copy()
            self.normal = _unit_flow(self.anchor, self._p(u))
            self.n_reanchor += 1
            changed = True
        try:
            self.set_mesh(u)
        except (IntegrationError, CorrectorFailed) as exc:
            # keep the previous mesh; the next corrector will fail if it is unusable
            log.info("re-meshing failed: %s", exc)
        return changed

    def solution(self, u) -> CycleSolution:
        info = self.point_info(u)
        vals = u[3:self.k0]
        return CycleSolution(
            np.array(u[:2]), info["T"], info["mu"], info["amplitude"], info["c_no_min"],
            info["c_no_max"], self.params.replace(**{n: float(v) for n, v in zip(self.free, vals)}),
            float(np.linalg.norm(self.residual(u))), self.normal.copy())


def _cycle_step_cfg() -> StepConfig:
    return StepConfig(ds=1e-2, ds_max=0.5, max_points=3000, newton_tol=5e-10)


def converge_cycle(params: ModelParams, x, T, free: str = "K_c", anchor=None,
                   cfg: StepConfig | None = None) -> CycleSolution:
    """Newton on the shooting system at fixed parameters."""
    cfg = cfg or _cycle_step_cfg()
    prob = CycleProblem(params, free, x if anchor is None else anchor)
    u = np.array([x[0], x[1], T, getattr(params, free)], dtype=float)
    fix = np.zeros(4)
    fix[3] = 1.0
    for _ in range(3):
        prob.set_mesh(u)
        u, _ = correct(prob, u, fix, u.copy(), 0.0, cfg)
    prob.set_mesh(u)
    u, _ = correct(prob, u, fix, u.copy(), 0.0, cfg)
    sol = prob.solution(u)
    if sol.residual > RETURN_TOL:
        raise CorrectorFailed(f"return-map residual {sol.residual:.3g} above {RETURN_TOL:g}")
    return sol


def cycle_from_simulation(params: ModelParams, x0=None, t_transient: float | None = None,
                          n_periods: int = 4) -> CycleSolution:
    """Stable cycle from a long run, refined by shooting.

    ``x0`` defaults to a perturbation of the first unstable equilibrium. The
    anchor is the last c_no maximum, where the flow is along c_nop.
    """
    p = params.as_array()
    if x0 is None:
        eqs = find_equilibria(params)
        unstable = [e for e in eqs if not e.stable]
        if not unstable:
            raise ValueError("no unstable equilibrium to start the cycle search from")
        x0 = np.array(unstable[0].state) * (1 + 1e-3)
    scale = max(params.tau, 1.0)
    t_transient = 300.0 * scale if t_transient is None else t_transient
    _, _, x, _ = dopri(rhs_reduced_kernel, np.asarray(x0, float), 0.0, t_transient, p,
                       rtol=1e-9, atol=1e-12)
    t_obs = 100.0 * scale
    for _ in range(6):
        times = np.linspace(0.0, t_obs, 20001)
        ts, ys, _, _ = dopri(rhs_reduced_kernel, x, 0.0, t_obs, p, rtol=1e-10, atol=1e-13,
                             output_times=times)
        tp, _ = peak_times(ts, ys[:, 0])
        hi = ys[:, 0].max()
        lo = ys[:, 0].min()
        big = [t for t in tp if np.interp(t, ts, ys[:, 0]) > lo + 0.5 * (hi - lo)]
        if len(big) >= n_periods and hi - lo > 1e-6:
            break
        t_obs *= 4
    else:
        raise ValueError("no sustained oscillation found by simulation")
    T = float(np.median(np.diff(big)))
    i = int(np.searchsorted(ts, big[-2]))
    return converge_cycle(params, ys[i], T)


def cycle_near_hopf(params: ModelParams, free: str, hopf_u, eps: float = 1e-3,
                    cfg: StepConfig | None = None) -> CycleSolution:
    """Small cycle born at a Hopf point ``hopf_u = (c_no, c_nop, p)``.

    The anchor is placed ``eps`` (relative to the state norm) along the real
    part of the critical eigenvector; period and parameter are solved for.
    """
    cfg = cfg or _cycle_step_cfg()
    hopf_u = np.asarray(getattr(hopf_u, "u", hopf_u), dtype=float)
    pr = params.replace(**{free: float(hopf_u[2])})
    xe = hopf_u[:2]
    J = jacobian_reduced_kernel(xe, pr.as_array())
    J = J - 0.5 * np.trace(J) * np.eye(2)
    P, w = normal_form_basis(J)
    v = P[:, 1] / np.linalg.norm(P[:, 1])
    a = xe + eps * max(1.0, np.linalg.norm(xe)) * v
    prob = CycleProblem(pr, free, a)
    u = np.array([a[0], a[1], 2 * np.pi / w, hopf_u[2]])
    prob._ensure_section(u)
    d = np.zeros(4)
    d[:2] = [-prob.normal[1], prob.normal[0]]
    for _ in range(4):
        prob.set_mesh(u)
        u, _ = correct(prob, u, d, u.copy(), 0.0, cfg)
    sol = prob.solution(u)
    if sol.residual > RETURN_TOL:
        raise CorrectorFailed(f"return-map residual {sol.residual:.3g} above {RETURN_TOL:g}")
    return sol


def continue_cycle(params: ModelParams, free: str, seed: CycleSolution,
                   range_: tuple[float, float], step_cfg: StepConfig | None = None,
                   direction: int = 1, min_amplitude: float = 1e-3,
                   segments: int = 1) -> Branch:
    """Pseudo-arclength continuation of a limit cycle in parameter ``free``.

    Points carry the period, the nontrivial Floquet multiplier ``mu`` and the
    c_no range of the orbit. Folds of cycles are sign changes of ``mu - 1``
    refined to ``|mu - 1| <= 1e-6``; the branch ends with a ``hopf_endpoint``
    event when the amplitude falls below ``min_amplitude``. ``segments > 1``
    switches to multiple shooting, needed for strongly unstable cycles whose
    multiplier amplifies rounding beyond the residual tolerance.
    """
    cfg = step_cfg or _cycle_step_cfg()
    p0 = getattr(seed.params, free)
    lo, hi = range_
    if not lo <= p0 <= hi:
        raise ValueError(f"{free}={p0} outside {range_}")
    base = seed.params
    prob = CycleProblem(base, free, seed.anchor, seed.normal, min_amplitude=min_amplitude,
                        t_ref=seed.period, segments=segments)
    u0 = prob.initial_u(seed.anchor, seed.period, [p0])
    if segments > 1:
        prob.set_mesh(u0)
        u0 = converge_point(prob, u0, fix=3, cfg=cfg)
    d = np.zeros(u0.size)
    d[3] = 1.0 if direction >= 0 else -1.0
    br = continue_curve(prob, u0, d, cfg, bounds={3: (lo, hi)}, kind="cycle",
                        event_tols={"fold_cycle": FOLD_TOL})
    _rescale_period(br, prob.t_ref)
    if br.message.startswith("Hopf endpoint"):
        last = br.points[-1]
        br.events.append(Event("hopf_endpoint", len(br.points) - 1, last.u.copy(),
                               {"amplitude": last.info["amplitude"], "T": last.info["T"]}))
    br.meta.update({"free": free, "range": [lo, hi], "params": base.to_dict(),
                    "reanchored": prob.n_reanchor, "segments": segments})
    return br


def _rescale_period(br: Branch, t_ref: float) -> None:
    for pt in br.points:
        pt.u = pt.u.copy()
        pt.u[2] *= t_ref
        pt.tangent = pt.tangent.copy()
        pt.tangent[2] *= t_ref
    for ev in br.events:
        ev.u = ev.u.copy()
        ev.u[2] *= t_ref


def branch_cycles(br: Branch, params: ModelParams) -> list[CycleSolution]:
    free = br.names[3]
    out = []
    for pt in br.points:
        info = pt.info
        out.append(CycleSolution(np.array(pt.u[:2]), float(pt.u[2]), info["mu"],
                                 info["amplitude"], info["c_no_min"], info["c_no_max"],
                                 params.replace(**{free: float(pt.u[3])}), pt.residual))
    return out


class CycleFoldProblem(CycleProblem):
    """Shooting system in two parameters augmented with ``mu - 1 = 0``."""

    def __init__(self, params, free, anchor, normal=None, min_amplitude=1e-6, t_ref=1.0,
                 segments=1):
        super().__init__(params, free, anchor, normal, min_amplitude=min_amplitude, t_ref=t_ref,
                         segments=segments)
        self._last_amplitude = None

    def residual(self, u):
        r = super().residual(u)
        return np.append(r, self.multiplier(u) - 1.0)

    def jacobian(self, u):
        J = np.zeros((2 * self.segments + 2, u.size))
        J[:-1] = super().jacobian(u)
        for j in range(u.size):
            h = 1e-7 * max(1.0, abs(u[j]))
            up = u.copy()
            um = u.copy()
            up[j] += h
            um[j] -= h
            J[-1, j] = (self.multiplier(up) - self.multiplier(um)) / (2 * h)
        return J

    def tests(self, u, info):
        return {}

    def stop(self, u, info):
        reason = super().stop(u, info)
        if reason:
            return reason
        # the fold locus continues smoothly through zero amplitude at a Bautin
        # point and retraces itself, so a step can jump over the cutoff
        a, prev = info["amplitude"], self._last_amplitude
        self._last_amplitude = a
        if prev is not None and a > prev and prev < AMPLITUDE_TURN * self.min_amplitude:
            return f"Hopf endpoint: amplitude minimum {prev:.3g} passed"
        return None


def continue_cycle_fold_curve(params: ModelParams, free: tuple[str, str], seed,
                              step_cfg: StepConfig | None = None, bounds: dict | None = None,
                              direction=None, min_amplitude: float = 1e-3) -> Branch:
    """Two-parameter curve of folds of cycles through ``seed``.

    ``seed`` is a ``fold_cycle`` event of :func:`continue_cycle` whose free
    parameter is ``free[0]`` (layout ``(c_no, c_nop, T, p1, x_2, ...)``);
    ``params`` supplies ``free[1]``. The curve ends when the amplitude drops
    below ``min_amplitude``.
    """
    cfg = step_cfg or StepConfig(ds=1e-2, ds_max=0.5, max_points=2000, newton_tol=5e-10)
    u = np.asarray(getattr(seed, "u", seed), dtype=float)
    segments = (u.size - 4) // 2 + 1
    u = np.concatenate([u[:4], [getattr(params, free[1])], u[4:]])
    prob = CycleFoldProblem(params, free, u[:2], min_amplitude=min_amplitude, t_ref=u[2],
                            segments=segments)
    u[2] = 1.0
    prob.set_mesh(u)
    mu = prob.multiplier(u)
    if not abs(mu - 1.0) <= FOLD_TOL:
        raise FoldSeedError(f"seed is not a fold of cycles: |mu - 1| = {abs(mu - 1):.3g}")
    bnd = {prob.names.index(k): v for k, v in (bounds or {}).items()}
    br = continue_curve(prob, u, direction, cfg, bounds=bnd, kind="cycle_fold")
    if br.message.startswith("Hopf endpoint: amplitude minimum"):
        del br.points[-1]
    _rescale_period(br, prob.t_ref)
    br.meta.update({"free": list(free), "params": params.to_dict(),
                    "bounds": {k: list(v) for k, v in (bounds or {}).items()}})
    return br
