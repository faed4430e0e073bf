"""Deterministic and stochastic time stepping.

* :func:`integrate_ode` -- Dormand-Prince 5(4) with adaptive steps and
  4th-order dense output. The stepping loop is written once; it runs
  compiled when the right-hand side is a numba function and as plain
  Python otherwise.
* :func:`integrate_sde` -- Euler-Maruyama for the reduced model with
  additive noise.
* :func:`detect_crossings` -- Schmitt-trigger upward crossings.

Noise is reproducible across platforms: uniforms come from the Philox-4x64
counter-based generator (53-bit doubles from the top bits of each raw
64-bit word) and pairs of uniforms become a pair of normals by Box-Muller,
one normal per state component per step. Per-trajectory keys come from
:func:`trajectory_key`.
"""
from __future__ import annotations

import math
import types
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from numba.core.registry import CPUDispatcher

from .io import write_csv_atomic
from .model import ModelParams, rhs_reduced_kernel, rhs_full_kernel, _rhs2

REDUCED_COLUMNS = ["c_no", "c_nop"]
FULL_COLUMNS = ["c_no", "c_nop", "c_ni", "c_cy", "Phi", "V_n", "V_cyto"]


class IntegrationError(RuntimeError):
    """Step budget exhausted or step size underflow."""


@dataclass
class SolverConfig:
    rel_tol: float = 1e-9
    abs_tol: float = 1e-12
    dt: float = 1e-3
    t_end: float = 100.0
    max_steps: int = 5_000_000
    output_times: np.ndarray | None = None

    def __post_init__(self):
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            raise ValueError("tolerances must be positive")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.t_end > 0:
            raise ValueError("t_end must be positive")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if self.output_times is not None:
            ot = np.asarray(self.output_times, dtype=float)
            if ot.ndim != 1 or (ot.size > 1 and np.any(np.diff(ot) <= 0)):
                raise ValueError("output_times must be strictly increasing")
            self.output_times = ot


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.asarray(self.states, dtype=float)
        if len(self.times) != len(self.states):
            raise ValueError("times and states differ in length")
        if len(self.times) > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")

    @property
    def columns(self) -> list[str]:
        return REDUCED_COLUMNS if self.states.shape[1] == 2 else FULL_COLUMNS

    def to_csv(self, path) -> None:
        write_csv_atomic(path, ["t", *self.columns],
                         ([t, *row] for t, row in zip(self.times, self.states)))

    @classmethod
    def from_csv(cls, path) -> "Trajectory":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(data[:, 0], data[:, 1:])


# ---------------------------------------------------------------------------
# Dormand-Prince 5(4)

A21 = 1 / 5
A31, A32 = 3 / 40, 9 / 40
A41, A42, A43 = 44 / 45, -56 / 15, 32 / 9
A51, A52, A53, A54 = 19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729
A61, A62, A63, A64, A65 = 9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656
B1, B3, B4, B5, B6 = 35 / 384, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84
E1, E3, E4, E5, E6, E7 = 71 / 57600, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40
C2, C3, C4, C5 = 1 / 5, 3 / 10, 4 / 5, 8 / 9
# dense output (Hairer & Wanner, dopri5 contd5)
D1 = -12715105075 / 11282082432
D3 = 87487479700 / 32700410799
D4 = -10690763975 / 1880347072
D5 = 701980252875 / 199316789632
D6 = -1453857185 / 822651844
D7 = 69997945 / 29380423

ST_OK, ST_MAXSTEPS, ST_UNDERFLOW, ST_NONFINITE = 0, 1, 2, 3


def _loop_template(t0, x0, p, t_end, rtol, atol, max_steps, out_times, record_steps, h_init):
    # ``_RHS`` is not a module global: _build_loop supplies it per right-hand side.
    n = x0.shape[0]
    y = x0.copy()
    t = t0
    k1 = _RHS(t, y, p)
    nfev = 1
    # output buffers
    if record_steps:
        cap = 1024
        ts = np.empty(cap)
        ys = np.empty((cap, n))
        ts[0] = t
        ys[0, :] = y
        nout = 1
    else:
        cap = out_times.shape[0]
        ts = out_times.copy()
        ys = np.full((cap, n), np.nan)
        nout = 0
        while nout < cap and out_times[nout] <= t0:
            if out_times[nout] == t0:
                ys[nout, :] = y
            nout += 1
    # initial step (Hairer's heuristic)
    if h_init > 0.0:
        h = h_init
    else:
        sc = atol + np.abs(y) * rtol
        d0 = math.sqrt(np.mean((y / sc) ** 2))
        d1 = math.sqrt(np.mean((k1 / sc) ** 2))
        if d0 < 1e-5 or d1 < 1e-5:
            h0 = 1e-6
        else:
            h0 = 0.01 * d0 / d1
        h0 = min(h0, t_end - t0)
        y1 = y + h0 * k1
        k2 = _RHS(t + h0, y1, p)
        nfev += 1
        d2 = math.sqrt(np.mean(((k2 - k1) / sc) ** 2)) / h0
        if max(d1, d2) <= 1e-15:
            h1 = max(1e-6, h0 * 1e-3)
        else:
            h1 = (0.01 / max(d1, d2)) ** 0.2
        h = min(100 * h0, h1)
    naccept = 0
    nreject = 0
    status = ST_OK
    hmin_factor = 1e-14
    while t < t_end:
        if naccept + nreject >= max_steps:
            status = ST_MAXSTEPS
            break
        if t + h > t_end:
            h = t_end - t
        if h <= hmin_factor * max(1.0, abs(t)):
            status = ST_UNDERFLOW
            break
        k2 = _RHS(t + C2 * h, y + h * (A21 * k1), p)
        k3 = _RHS(t + C3 * h, y + h * (A31 * k1 + A32 * k2), p)
        k4 = _RHS(t + C4 * h, y + h * (A41 * k1 + A42 * k2 + A43 * k3), p)
        k5 = _RHS(t + C5 * h, y + h * (A51 * k1 + A52 * k2 + A53 * k3 + A54 * k4), p)
        k6 = _RHS(t + h, y + h * (A61 * k1 + A62 * k2 + A63 * k3 + A64 * k4 + A65 * k5), p)
        ynew = y + h * (B1 * k1 + B3 * k3 + B4 * k4 + B5 * k5 + B6 * k6)
        k7 = _RHS(t + h, ynew, p)
        nfev += 6
        err_vec = h * (E1 * k1 + E3 * k3 + E4 * k4 + E5 * k5 + E6 * k6 + E7 * k7)
        sc = atol + rtol * np.maximum(np.abs(y), np.abs(ynew))
        err = math.sqrt(np.mean((err_vec / sc) ** 2))
        if not math.isfinite(err):
            nreject += 1
            h *= 0.2
            continue
        if err <= 1.0:
            tnew = t + h
            if not record_steps:
                # dense output on [t, tnew]
                if nout < cap and out_times[nout] <= tnew:
                    ydiff = ynew - y
                    bspl = h * k1 - ydiff
                    r4 = ydiff - h * k7 - bspl
                    r5 = h * (D1 * k1 + D3 * k3 + D4 * k4 + D5 * k5 + D6 * k6 + D7 * k7)
                    while nout < cap and out_times[nout] <= tnew:
                        th = (out_times[nout] - t) / h
                        th1 = 1.0 - th
                        ys[nout, :] = y + th * (ydiff + th1 * (bspl + th * (r4 + th1 * r5)))
                        nout += 1
            else:
                if nout == cap:
                    cap *= 2
                    ts2 = np.empty(cap)
                    ys2 = np.empty((cap, n))
                    ts2[:nout] = ts[:nout]
                    ys2[:nout, :] = ys[:nout, :]
                    ts = ts2
                    ys = ys2
                ts[nout] = tnew
                ys[nout, :] = ynew
                nout += 1
            t = tnew
            y = ynew
            k1 = k7
            naccept += 1
            if not np.all(np.isfinite(y)):
                status = ST_NONFINITE
                break
            fac = 0.9 * err ** -0.2 if err > 0 else 5.0
            h *= min(5.0, max(0.2, fac))
        else:
            nreject += 1
            h *= max(0.2, 0.9 * err ** -0.2)
    if record_steps:
        ts = ts[:nout].copy()
        ys = ys[:nout, :].copy()
    return ts, ys, y, t, nfev, naccept, nreject, status, h



def _build_loop(rhs):
    """Instance of the loop template calling ``rhs`` through a global name.

    Numba cannot cache a loop that receives its right-hand side as an
    argument or closure variable (the key changes every process), but it
    can cache one that refers to it as a global.
    """
    g = dict(_loop_template.__globals__)
    g["_RHS"] = rhs
    name = getattr(rhs, "__name__", "rhs")
    fn = types.FunctionType(_loop_template.__code__, g, f"_dopri_{name}")
    fn.__qualname__ = f"_dopri_{name}"
    return fn


_LOOPS = {}


def _compiled_loop(rhs):
    loop = _LOOPS.get(id(rhs))
    if loop is None:
        # cache files are keyed by name, so only the model's own kernels are cached
        cache = rhs is rhs_reduced_kernel or rhs is rhs_full_kernel
        loop = njit(cache=cache)(_build_loop(rhs))
        _LOOPS[id(rhs)] = loop
    return loop


_EMPTY = np.empty(0)


def dopri(rhs, x0, t0, t_end, p=None, rtol=1e-9, atol=1e-12, max_steps=5_000_000,
          output_times=None, h_init=0.0):
    """Low-level driver returning ``(times, states, y_end, stats)``.

    ``rhs(t, x, p)``; compiled when ``rhs`` is a numba dispatcher.
    """
    x0 = np.ascontiguousarray(x0, dtype=float)
    p = _EMPTY if p is None else np.ascontiguousarray(p, dtype=float)
    record = output_times is None
    ot = _EMPTY if record else np.ascontiguousarray(output_times, dtype=float)
    if isinstance(rhs, CPUDispatcher):
        loop = _compiled_loop(rhs)
    else:
        loop = _build_loop(rhs)
    ts, ys, y, t, nfev, nacc, nrej, status, h = loop(
        float(t0), x0, p, float(t_end), float(rtol), float(atol), int(max_steps), ot, record,
        float(h_init))
    stats = {"nfev": int(nfev), "n_accepted": int(nacc), "n_rejected": int(nrej), "h_last": float(h)}
    if status == ST_MAXSTEPS:
        raise IntegrationError(f"step budget of {max_steps} exhausted at t={t:.6g}")
    if status == ST_UNDERFLOW:
        raise IntegrationError(f"step size underflow at t={t:.6g} (stiffness?)")
    if status == ST_NONFINITE:
        raise IntegrationError(f"non-finite state at t={t:.6g}")
    return ts, ys, y, stats


def integrate_ode(rhs, x0, cfg: SolverConfig, params: ModelParams | np.ndarray | None = None,
                  t0: float = 0.0) -> Trajectory:
    """Adaptive Dormand-Prince integration of ``dx/dt = rhs(t, x, p)``.

    Samples every accepted step unless ``cfg.output_times`` is given, in
    which case the dense interpolant is evaluated there. Plain callables
    ``rhs(t, x)`` (two arguments) are also accepted.
    """
    p = params.as_array() if isinstance(params, ModelParams) else params
    f = rhs
    if not isinstance(rhs, CPUDispatcher):
        try:
            import inspect
            nargs = len(inspect.signature(rhs).parameters)
        except (TypeError, ValueError):
            nargs = 3
        if nargs == 2:
            def f(t, x, _p, _g=rhs):
                return np.asarray(_g(t, x), dtype=float)
    ts, ys, _, stats = dopri(f, x0, t0, t0 + cfg.t_end, p, cfg.rel_tol, cfg.abs_tol,
                             cfg.max_steps, cfg.output_times)
    meta = {"solver": "dopri5", "rel_tol": cfg.rel_tol, "abs_tol": cfg.abs_tol, **stats}
    return Trajectory(ts, ys, meta)


def simulate_reduced(params: ModelParams, x0, t_end, output_times=None, rtol=1e-9, atol=1e-12,
                     max_steps=20_000_000) -> Trajectory:
    ts, ys, _, stats = dopri(rhs_reduced_kernel, x0, 0.0, t_end, params.as_array(), rtol, atol,
                             max_steps, output_times)
    return Trajectory(ts, ys, {"solver": "dopri5", "rel_tol": rtol, "abs_tol": atol,
                               "system": "reduced", **stats})


def simulate_full(params: ModelParams, x0, t_end, output_times=None, rtol=1e-9, atol=1e-12,
                  max_steps=20_000_000) -> Trajectory:
    x0 = np.asarray(x0, dtype=float)
    if not x0[4] > 0:
        raise ZeroDivisionError("Phi must be positive in the full system")
    ts, ys, _, stats = dopri(rhs_full_kernel, x0, 0.0, t_end, params.as_array(), rtol, atol,
                             max_steps, output_times)
    return Trajectory(ts, ys, {"solver": "dopri5", "rel_tol": rtol, "abs_tol": atol,
                               "system": "full", **stats})


# ---------------------------------------------------------------------------
# stochastic

MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def trajectory_key(base_seed: int, index: int = 0) -> tuple[int, int]:
    """128-bit Philox key for trajectory ``index`` of an ensemble.

    ``k0 = splitmix64(base_seed)``, ``k1 = splitmix64(k0 ^ index)``.
    """
    k0 = splitmix64(int(base_seed) & MASK64)
    k1 = splitmix64(k0 ^ (int(index) & MASK64))
    return k0, k1


class NormalStream:
    """Standard normal pairs from Philox-4x64 via Box-Muller."""

    def __init__(self, base_seed: int, index: int = 0):
        k0, k1 = trajectory_key(base_seed, index)
        self._bitgen = np.random.Philox(key=np.array([k0, k1], dtype=np.uint64))

    def pairs(self, n: int) -> np.ndarray:
        raw = self._bitgen.random_raw(2 * n).reshape(n, 2)
        u = (raw >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)
        u1 = 1.0 - u[:, 0]  # (0, 1]
        r = np.sqrt(-2.0 * np.log(u1))
        th = 2.0 * np.pi * u[:, 1]
        out = np.empty((n, 2))
        out[:, 0] = r * np.cos(th)
        out[:, 1] = r * np.sin(th)
        return out


@njit(cache=True)
def _em_chunk(x, p, dt, sig_sqdt, xi, every, phase, out, nout, zero_drift):
    """Euler-Maruyama steps over one chunk of noise; records every ``every`` steps."""
    c0 = x[0]
    c1 = x[1]
    neg = 0
    for k in range(xi.shape[0]):
        if zero_drift:
            d0 = 0.0
            d1 = 0.0
        else:
            d0, d1 = _rhs2(c0, c1, p)
        c0 = c0 + d0 * dt + sig_sqdt * xi[k, 0]
        c1 = c1 + d1 * dt + sig_sqdt * xi[k, 1]
        if c0 < 0.0 or c1 < 0.0:
            neg += 1
        phase += 1
        if phase == every:
            phase = 0
            out[nout, 0] = c0
            out[nout, 1] = c1
            nout += 1
    x[0] = c0
    x[1] = c1
    return phase, nout, neg


CHUNK = 1 << 16


def integrate_sde(x0, cfg: SolverConfig, params: ModelParams, seed: int, index: int = 0,
                  record_every: int = 1, zero_drift: bool = False) -> Trajectory:
    """Euler-Maruyama path of the reduced model with additive noise of level ``params.sigma``.

    ``x_{k+1} = x_k + f(x_k) dt + sigma sqrt(dt) xi_k``. States are recorded
    every ``record_every`` steps (plus the initial state). Negative
    concentrations are not clamped; the number of steps leaving the
    nonnegative quadrant is reported in ``meta['negative_excursions']``.
    ``zero_drift`` replaces the model drift by zero (pure Brownian motion).
    """
    dt = cfg.dt
    n_steps = int(round(cfg.t_end / dt))
    if n_steps < 1:
        raise ValueError("t_end shorter than one step")
    if record_every < 1:
        raise ValueError("record_every must be >= 1")
    n_rec = n_steps // record_every
    out = np.empty((n_rec + 1, 2))
    x = np.array(x0, dtype=float)
    out[0] = x
    p = params.as_array()
    stream = NormalStream(seed, index)
    sig_sqdt = params.sigma * math.sqrt(dt)
    done = 0
    phase = 0
    nout = 1
    neg = 0
    while done < n_steps:
        k = min(CHUNK, n_steps - done)
        xi = stream.pairs(k)
        phase, nout, nn = _em_chunk(x, p, dt, sig_sqdt, xi, record_every, phase, out, nout,
                                    zero_drift)
        neg += nn
        done += k
    times = np.arange(nout) * (dt * record_every)
    meta = {"solver": "euler-maruyama", "dt": dt, "seed": int(seed), "index": int(index),
            "sigma": params.sigma, "record_every": record_every,
            "negative_excursions": int(neg), "rng": "philox4x64+box-muller"}
    return Trajectory(times, out[:nout], meta)


def euler_path(params: ModelParams, x0, dt: float, n_steps: int) -> np.ndarray:
    """Fixed-step deterministic Euler path (reference for sigma = 0)."""
    out = np.empty((n_steps + 1, 2))
    x = np.array(x0, dtype=float)
    out[0] = x
    _em_chunk(x, params.as_array(), dt, 0.0, np.zeros((n_steps, 2)), 1, 0, out, 1, False)
    return out


# ---------------------------------------------------------------------------
# events


def detect_crossings(traj: Trajectory, observable, up_threshold: float,
                     down_threshold: float) -> list[float]:
    """Upward crossings of ``up_threshold`` with hysteresis.

    After an event the trigger re-arms only once the observable drops below
    ``down_threshold``. It starts armed unless the first sample is already at
    or above ``up_threshold``. Event times are linearly interpolated.
    """
    if not up_threshold > down_threshold:
        raise ValueError("up_threshold must exceed down_threshold")
    if callable(observable):
        y = np.asarray([observable(s) for s in traj.states], dtype=float)
    else:
        y = np.asarray(observable, dtype=float)
    return crossing_times(traj.times, y, up_threshold, down_threshold)


def crossing_times(t: np.ndarray, y: np.ndarray, up: float, down: float) -> list[float]:
    if len(y) == 0:
        return []
    return [float(v) for v in _crossings(np.asarray(t, float), np.asarray(y, float), up, down)]


@njit(cache=True)
def _crossings(t, y, up, down):
    out = []
    armed = y[0] < up
    for i in range(1, y.shape[0]):
        if armed:
            if y[i] >= up and y[i - 1] < up:
                s = (up - y[i - 1]) / (y[i] - y[i - 1])
                out.append(t[i - 1] + s * (t[i] - t[i - 1]))
                armed = False
        elif y[i] < down:
            armed = True
    return np.array(out, dtype=np.float64) if len(out) else np.empty(0)
