"""Noise-driven responses: Fourier peak amplitude versus noise, and period statistics.

Ensembles are reproducible from a base seed. Trajectory ``j`` of an ensemble
always uses the noise stream ``trajectory_key(base_seed, j)``, so a sweep
over noise levels reuses the same realizations (common random numbers) and
results never depend on worker scheduling.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import partial

import numpy as np

from .integrate import MASK64, SolverConfig, Trajectory, crossing_times, dopri, integrate_sde, \
    splitmix64
from .io import write_csv_atomic
from .model import ModelParams, rhs_reduced_kernel
from .parallel import pmap
from .phase import find_equilibria

MIN_FFT_SAMPLES = 16
RESONANCE_HEADER = ["sigma", "mean_amplitude", "stderr"]
PERIODS_HEADER = ["param", "mean_period", "cv", "n_periods"]


def _series(traj: Trajectory, observable) -> np.ndarray:
    if observable is None:
        return np.asarray(traj.states[:, 0], dtype=float)
    if isinstance(observable, str):
        return np.asarray(traj.states[:, traj.columns.index(observable)], dtype=float)
    if isinstance(observable, (int, np.integer)):
        return np.asarray(traj.states[:, observable], dtype=float)
    return np.asarray([observable(s) for s in traj.states], dtype=float)


def fourier_peak_amplitude(traj, observable=None) -> float:
    """Largest DFT modulus over strictly positive frequencies, divided by the length.

    ``traj`` is a uniformly sampled :class:`Trajectory` (``observable`` is then
    a column name, index or callable on states; default ``c_no``) or a plain
    1-D series. The series is truncated to the largest power of two, its
    mean removed, and no window applied, so ``A sin(2 pi f t)`` over whole
    periods gives ``A / 2``.
    """
    if isinstance(traj, Trajectory):
        dts = np.diff(traj.times)
        if dts.size and not np.allclose(dts, dts[0], rtol=1e-6, atol=0.0):
            raise ValueError("trajectory is not uniformly sampled; resample it first")
        y = _series(traj, observable)
    else:
        y = np.asarray(traj, dtype=float)
    if y.size < MIN_FFT_SAMPLES:
        raise ValueError(f"series has {y.size} samples; at least {MIN_FFT_SAMPLES} needed")
    n = 1 << (y.size.bit_length() - 1)
    y = y[:n] - y[:n].mean()
    spectrum = np.abs(np.fft.rfft(y))[1:]
    return float(spectrum.max() / n)


def attractor_point(params: ModelParams, t_settle: float | None = None) -> np.ndarray:
    """State on the deterministic attractor reached from the first equilibrium.

    Stable equilibria are returned as they are; otherwise the equilibrium is
    perturbed and the flow followed for ``t_settle``.
    """
    eqs = find_equilibria(params)
    if not eqs:
        raise ValueError("no equilibrium to start from")
    stable = [e for e in eqs if e.stable]
    if stable:
        return np.array(stable[0].state)
    x0 = np.array(eqs[0].state) * (1 + 1e-3)
    t_settle = 300.0 * max(1.0, params.tau) if t_settle is None else t_settle
    _, _, x, _ = dopri(rhs_reduced_kernel, x0, 0.0, t_settle, params.as_array(), rtol=1e-9,
                       atol=1e-12)
    return x


def derive_seed(base_seed: int, k: int) -> int:
    """Independent base seed for item ``k`` of a sweep."""
    return splitmix64((int(base_seed) + 0x632BE59BD9B4E019 * (int(k) + 1)) & MASK64)


# ---------------------------------------------------------------------------
# stochastic resonance


@dataclass
class ResonanceCurve:
    sigmas: np.ndarray
    amplitudes: np.ndarray
    per_seed: np.ndarray
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        self.sigmas = np.asarray(self.sigmas, dtype=float)
        if np.any(np.diff(self.sigmas) <= 0):
            raise ValueError("sigmas must be strictly increasing")

    @property
    def stderr(self) -> np.ndarray:
        n = self.per_seed.shape[1]
        if n < 2:
            return np.zeros(len(self.sigmas))
        return self.per_seed.std(axis=1, ddof=1) / math.sqrt(n)

    def peak_index(self) -> int:
        return int(np.argmax(self.amplitudes))

    def rows(self):
        for s, a, e in zip(self.sigmas, self.amplitudes, self.stderr):
            yield [s, a, e]

    def to_csv(self, path) -> None:
        write_csv_atomic(path, RESONANCE_HEADER, self.rows())


def _sr_member(job, params: ModelParams, x0, cfg: SolverConfig, record_every: int,
               transient: float, observable):
    sigma, base_seed, j = job
    traj = integrate_sde(x0, cfg, params.replace(sigma=sigma), base_seed, j, record_every)
    keep = traj.times >= transient
    return fourier_peak_amplitude(Trajectory(traj.times[keep], traj.states[keep]), observable)


def sr_sweep(params: ModelParams, sigmas, T: float, n_seeds: int = 10, base_seed: int = 0,
             dt: float = 1e-2, record_every: int = 10, transient_frac: float = 0.2, x0=None,
             observable=None, jobs: int = 1) -> ResonanceCurve:
    """Mean Fourier peak amplitude of ``c_no`` per noise level.

    Every sigma runs ``n_seeds`` Euler-Maruyama paths of length ``T`` from
    ``x0`` (default: the deterministic attractor) and discards ``t <
    transient_frac * T`` before the transform.
    """
    sigmas = np.asarray(sigmas, dtype=float)
    if n_seeds < 1:
        raise ValueError("n_seeds must be >= 1")
    x0 = attractor_point(params) if x0 is None else np.asarray(x0, float)
    cfg = SolverConfig(dt=dt, t_end=T)
    jobs_list = [(float(s), int(base_seed), j) for s in sigmas for j in range(n_seeds)]
    fn = partial(_sr_member, params=params, x0=x0, cfg=cfg, record_every=record_every,
                 transient=transient_frac * T, observable=observable)
    amps = np.array(pmap(fn, jobs_list, jobs)).reshape(len(sigmas), n_seeds)
    config = {"T": T, "dt": dt, "n_seeds": n_seeds, "base_seed": int(base_seed),
              "record_every": record_every, "transient_frac": transient_frac,
              "x0": [float(v) for v in x0], "params": params.to_dict()}
    return ResonanceCurve(sigmas, amps.mean(axis=1), amps, config)


# ---------------------------------------------------------------------------
# period statistics


@dataclass
class PeriodStats:
    mean_period: float
    cv: float
    n_periods: int
    n_traj: int
    intervals: np.ndarray = field(default_factory=lambda: np.empty(0), repr=False)

    @property
    def oscillating(self) -> bool:
        return self.n_periods >= 2

    def row(self, param) -> list:
        return [param, self.mean_period, self.cv, self.n_periods]


def phosphorylated_fraction(states: np.ndarray) -> np.ndarray:
    s = states[:, 0] + states[:, 1]
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(s > 0, states[:, 1] / s, 0.0)


def pooled_intervals(event_lists) -> np.ndarray:
    """Inter-event intervals of each list without its first, pooled and sorted."""
    parts = [np.diff(np.sort(np.asarray(ev, float)))[1:] for ev in event_lists]
    parts = [p for p in parts if p.size]
    return np.sort(np.concatenate(parts)) if parts else np.empty(0)


def interval_stats(intervals, n_traj: int) -> PeriodStats:
    iv = np.asarray(intervals, dtype=float)
    if iv.size < 2:
        return PeriodStats(float("nan"), float("nan"), int(iv.size), n_traj, iv)
    mean = float(iv.mean())
    return PeriodStats(mean, float(iv.std(ddof=1) / mean), int(iv.size), n_traj, iv)


def fraction_band(params: ModelParams, rel=(0.6, 0.4), n_periods_hint: float = 2000.0
                  ) -> tuple[float, float]:
    """Hysteresis thresholds at fractions ``rel`` of the deterministic attractor's range.

    Uses the phosphorylated-fraction range of the noise-free orbit over
    ``n_periods_hint`` time units after settling; a stationary attractor
    (range below 1e-9) falls back to the absolute levels ``rel``.
    """
    x = attractor_point(params)
    times = np.linspace(0.0, n_periods_hint, 20001)
    _, ys, _, _ = dopri(rhs_reduced_kernel, x, 0.0, n_periods_hint, params.as_array(),
                        rtol=1e-9, atol=1e-12, output_times=times)
    f = phosphorylated_fraction(np.asarray(ys))
    lo, hi = float(f.min()), float(f.max())
    if hi - lo < 1e-9:
        return float(rel[0]), float(rel[1])
    return lo + rel[0] * (hi - lo), lo + rel[1] * (hi - lo)


def _period_member(j, params: ModelParams, x0, cfg: SolverConfig, base_seed: int,
                   record_every: int, up: float, down: float):
    traj = integrate_sde(x0, cfg, params, base_seed, j, record_every)
    return crossing_times(traj.times, phosphorylated_fraction(traj.states), up, down)


def period_statistics(params: ModelParams, sigma: float, n_traj: int = 50, T: float = 2000.0,
                      base_seed: int = 0, thresholds=(0.6, 0.4), dt: float = 1e-2,
                      record_every: int = 1, x0=None, jobs: int = 1) -> PeriodStats:
    """Mean and coefficient of variation of oscillation periods under noise.

    Periods are intervals between upward crossings of the phosphorylated
    fraction through ``thresholds[0]`` (re-armed below ``thresholds[1]``);
    ``thresholds="auto"`` places them at 60 % / 40 % of the deterministic
    orbit's fraction range (:func:`fraction_band`). The first interval of
    every trajectory is dropped and the rest pooled. Fewer than two pooled
    intervals yield NaN statistics, not an error.
    """
    if isinstance(thresholds, str):
        if thresholds != "auto":
            raise ValueError(f"unknown thresholds {thresholds!r}")
        thresholds = fraction_band(params)
    up, down = thresholds
    if not up > down:
        raise ValueError("thresholds must be (up, down) with up > down")
    x0 = attractor_point(params) if x0 is None else np.asarray(x0, float)
    cfg = SolverConfig(dt=dt, t_end=T)
    fn = partial(_period_member, params=params.replace(sigma=sigma), x0=x0, cfg=cfg,
                 base_seed=base_seed, record_every=record_every, up=up, down=down)
    events = pmap(fn, range(n_traj), jobs)
    return interval_stats(pooled_intervals(events), n_traj)


def cv_vs_parameter(params: ModelParams, free: str, values, sigma: float, n_traj: int = 50,
                    base_seed: int = 0, T: float = 2000.0, thresholds=(0.6, 0.4),
                    dt: float = 1e-2, jobs: int = 1) -> list[tuple[float, PeriodStats]]:
    """:func:`period_statistics` across values of ``free``; value ``k`` uses ``derive_seed(base_seed, k)``."""
    if not isinstance(thresholds, str):
        thresholds = tuple(thresholds)
    fn = partial(_cv_item, params=params, free=free, sigma=sigma, n_traj=n_traj,
                 base_seed=base_seed, T=T, thresholds=thresholds, dt=dt)
    stats = pmap(fn, list(enumerate(values)), jobs)
    return [(float(v), st) for v, st in zip(values, stats)]


def _cv_item(item, params, free, sigma, n_traj, base_seed, T, thresholds, dt):
    k, v = item
    p = params.replace(**{free: float(v)})
    return period_statistics(p, sigma, n_traj, T, derive_seed(base_seed, k), thresholds, dt)


def write_period_table(path, table) -> None:
    write_csv_atomic(path, PERIODS_HEADER, (st.row(v) for v, st in table))
