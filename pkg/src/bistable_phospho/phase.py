"""Phase-plane tools in (total, fraction) coordinates.

``total = c_no + c_nop`` and ``frac = c_nop / total``. Nullclines are
traced as roots in ``frac`` at fixed ``total``; equilibria come from Newton
iterations seeded on a grid.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import partial

import numpy as np
from numba import njit

from .integrate import IntegrationError, simulate_reduced
from .model import ModelParams, PhasePoint, ReducedState, _rhs2, jacobian_reduced_kernel
from .parallel import pmap

EQ_RESIDUAL_TOL = 1e-10
NULLCLINE_TOL = 1e-8
FRAC_GRID = 2048

KINDS = ("stable-node", "stable-focus", "unstable-node", "unstable-focus", "saddle")


@dataclass
class Equilibrium:
    state: ReducedState
    eigenvalues: tuple
    kind: str
    residual: float

    @property
    def stable(self) -> bool:
        return self.kind.startswith("stable")

    @property
    def total(self) -> float:
        return self.state.c_no + self.state.c_nop

    @property
    def frac(self) -> float:
        return self.state.c_nop / self.total

    def row(self) -> list:
        l1, l2 = self.eigenvalues
        return [self.state.c_no, self.state.c_nop, self.kind, l1.real, l1.imag, l2.real, l2.imag]


EQUILIBRIA_HEADER = ["c_no", "c_nop", "kind", "re_lambda1", "im_lambda1", "re_lambda2", "im_lambda2"]
NULLCLINE_HEADER = ["total", "frac", "which"]


def classify_jacobian(J: np.ndarray) -> tuple[str, tuple]:
    tr = J[0, 0] + J[1, 1]
    det = J[0, 0] * J[1, 1] - J[0, 1] * J[1, 0]
    ev = np.linalg.eigvals(J).astype(complex)
    ev = tuple(sorted(ev, key=lambda z: (z.real, z.imag)))
    if det < 0:
        return "saddle", ev
    focus = tr * tr - 4 * det < 0
    if tr < 0:
        return ("stable-focus" if focus else "stable-node"), ev
    return ("unstable-focus" if focus else "unstable-node"), ev


@njit(cache=True)
def _newton2(c0, c1, p, maxiter, tol):
    for _ in range(maxiter):
        r0, r1 = _rhs2(c0, c1, p)
        if abs(r0) + abs(r1) <= tol:
            return c0, c1, True
        J = jacobian_reduced_kernel(np.array([c0, c1]), p)
        det = J[0, 0] * J[1, 1] - J[0, 1] * J[1, 0]
        if det == 0.0 or not math.isfinite(det):
            return c0, c1, False
        d0 = (J[1, 1] * r0 - J[0, 1] * r1) / det
        d1 = (-J[1, 0] * r0 + J[0, 0] * r1) / det
        c0 -= d0
        c1 -= d1
        if not (math.isfinite(c0) and math.isfinite(c1)):
            return c0, c1, False
    r0, r1 = _rhs2(c0, c1, p)
    return c0, c1, abs(r0) + abs(r1) <= tol


def newton_equilibrium(x0, params: ModelParams, maxiter: int = 60):
    c0, c1, ok = _newton2(float(x0[0]), float(x0[1]), params.as_array(), maxiter, 1e-13)
    return np.array([c0, c1]), ok


def make_equilibrium(x, params: ModelParams) -> Equilibrium:
    p = params.as_array()
    J = jacobian_reduced_kernel(np.asarray(x, float), p)
    kind, ev = classify_jacobian(J)
    r = np.array(_rhs2(x[0], x[1], p))
    return Equilibrium(ReducedState(float(x[0]), float(x[1])), ev, kind, float(np.linalg.norm(r)))


@njit(cache=True)
def _sign_cells(totals, fracs, p):
    nt = totals.shape[0]
    nf = fracs.shape[0]
    s0 = np.empty((nt, nf), dtype=np.int8)
    s1 = np.empty((nt, nf), dtype=np.int8)
    for i in range(nt):
        for j in range(nf):
            r0, r1 = _rhs2((1.0 - fracs[j]) * totals[i], fracs[j] * totals[i], p)
            s0[i, j] = 1 if r0 > 0 else -1
            s1[i, j] = 1 if r1 > 0 else -1
    cells = []
    for i in range(nt - 1):
        for j in range(nf - 1):
            a = s0[i, j] + s0[i + 1, j] + s0[i, j + 1] + s0[i + 1, j + 1]
            b = s1[i, j] + s1[i + 1, j] + s1[i, j + 1] + s1[i + 1, j + 1]
            if abs(a) < 4 and abs(b) < 4:
                cells.append((i, j))
    return cells


def default_search_box(params: ModelParams) -> tuple[tuple[float, float], tuple[float, float]]:
    # the conserved cytoplasmic sum bounds the total by 1/A_cyto
    return (0.0, 1.0 / params.A_cyto), (0.0, 1.0)


def find_equilibria(params: ModelParams, search_box=None, grid: int | tuple[int, int] = 400
                    ) -> list[Equilibrium]:
    """Equilibria of the reduced model inside ``search_box``.

    ``search_box = ((total_lo, total_hi), (frac_lo, frac_hi))``. Newton is
    started in every grid cell where both right-hand-side components change
    sign; non-converged seeds are dropped and duplicates (closer than 1e-6)
    merged. Sorted by total.
    """
    if search_box is None:
        search_box = default_search_box(params)
    (t_lo, t_hi), (f_lo, f_hi) = search_box
    if t_lo < 0 or f_lo < 0 or f_hi > 1:
        raise ValueError("search box must lie in the nonnegative quadrant")
    nt, nf = (grid, grid) if isinstance(grid, int) else grid
    totals = np.linspace(max(t_lo, 1e-9), t_hi, nt)
    fracs = np.linspace(f_lo, f_hi, nf)
    p = params.as_array()
    found: list[np.ndarray] = []
    for i, j in _sign_cells(totals, fracs, p):
        T = 0.5 * (totals[i] + totals[i + 1])
        fr = 0.5 * (fracs[j] + fracs[j + 1])
        x, ok = newton_equilibrium(((1 - fr) * T, fr * T), params)
        if not ok or x[0] < -1e-12 or x[1] < -1e-12:
            continue
        tot = x[0] + x[1]
        if not (t_lo <= tot <= t_hi) or not (f_lo - 1e-12 <= x[1] / tot <= f_hi + 1e-12):
            continue
        if any(np.linalg.norm(x - y) < 1e-6 for y in found):
            continue
        found.append(x)
    eqs = [make_equilibrium(x, params) for x in found]
    eqs = [e for e in eqs if e.residual <= EQ_RESIDUAL_TOL]
    eqs.sort(key=lambda e: (e.total, e.frac))
    return eqs


# ---------------------------------------------------------------------------
# nullclines


@njit(cache=True)
def _comp(total, frac, p, which):
    r0, r1 = _rhs2((1.0 - frac) * total, frac * total, p)
    return r0 if which == 0 else r1


@njit(cache=True)
def _frac_roots(total, p, which, n_grid, tol):
    fr = np.linspace(0.0, 1.0, n_grid)
    vals = np.empty(n_grid)
    for k in range(n_grid):
        vals[k] = _comp(total, fr[k], p, which)
    out = []
    for k in range(n_grid - 1):
        if vals[k] == 0.0:
            out.append(fr[k])
        elif vals[k] * vals[k + 1] < 0.0:
            a = fr[k]
            b = fr[k + 1]
            fa = vals[k]
            for _ in range(200):
                mid = 0.5 * (a + b)
                fm = _comp(total, mid, p, which)
                if fm == 0.0 or (b - a) < 1e-15:
                    a = mid
                    b = mid
                    break
                if (fa < 0.0) == (fm < 0.0):
                    a = mid
                    fa = fm
                else:
                    b = mid
            out.append(0.5 * (a + b))
    if vals[n_grid - 1] == 0.0:
        out.append(1.0)
    res = np.empty(len(out))
    for k in range(len(out)):
        res[k] = out[k]
    return res


def nullcline_roots(total: float, params: ModelParams, which: str) -> np.ndarray:
    """Fractions where the ``which`` ('c_no' or 'c_nop') component vanishes."""
    w = {"c_no": 0, "c_nop": 1}[which]
    return _frac_roots(float(total), params.as_array(), w, FRAC_GRID, NULLCLINE_TOL)


@dataclass
class NullclinePolyline:
    which: str
    points: list = field(default_factory=list)

    def array(self) -> np.ndarray:
        return np.array([[q.total, q.frac] for q in self.points]).reshape(-1, 2)


def _link(columns: list[tuple[float, np.ndarray]], which: str, max_jump: float
          ) -> list[NullclinePolyline]:
    done: list[NullclinePolyline] = []
    active: list[NullclinePolyline] = []
    for total, roots in columns:
        roots = list(roots)
        pairs = sorted(
            ((abs(r - pl.points[-1].frac), ri, ai)
             for ri, r in enumerate(roots) for ai, pl in enumerate(active)),
        )
        used_r, used_a = set(), set()
        assign = {}
        for d, ri, ai in pairs:
            if d > max_jump or ri in used_r or ai in used_a:
                continue
            used_r.add(ri)
            used_a.add(ai)
            assign[ai] = ri
        new_active = []
        for ai, pl in enumerate(active):
            if ai in assign:
                pl.points.append(PhasePoint(total, float(roots[assign[ai]])))
                new_active.append(pl)
            else:
                done.append(pl)
        for ri, r in enumerate(roots):
            if ri not in used_r:
                new_active.append(NullclinePolyline(which, [PhasePoint(total, float(r))]))
        active = new_active
    done.extend(active)
    return done


def trace_nullclines(params: ModelParams, total_range=(1e-3, 10.0), n_total: int = 400,
                     max_jump: float = 0.15) -> dict[str, list[NullclinePolyline]]:
    """Both nullclines as polylines in the (total, frac) plane.

    Roots at neighbouring totals are linked to the nearest previous root;
    a fold ends a polyline instead of jumping to another branch.
    """
    lo, hi = total_range
    if not (0 < lo < hi):
        raise ValueError("total_range must lie in (0, inf)")
    totals = np.linspace(lo, hi, n_total)
    out = {}
    for which in ("c_no", "c_nop"):
        cols = [(float(T), nullcline_roots(T, params, which)) for T in totals]
        out[which] = _link(cols, which, max_jump)
    return out


def nullcline_rows(lines: dict[str, list[NullclinePolyline]]):
    for which, polys in lines.items():
        for pl in polys:
            for q in pl.points:
                yield [q.total, q.frac, which]


# ---------------------------------------------------------------------------
# regime classification

REGIMES = ("unique-stable-eq", "unique-stable-cycle", "cycle-eq-coexistence",
           "bistable-equilibria", "indeterminate")


@dataclass
class ProbeOutcome:
    oscillating: bool
    amplitude: float
    period: float
    final: np.ndarray
    converged_to: int | None


@dataclass
class RegimeResult:
    label: str
    equilibria: list
    probes: list
    detail: str = ""

    @property
    def stable_fraction(self) -> float | None:
        st = [e for e in self.equilibria if e.stable]
        return st[0].frac if len(st) == 1 else None


def peak_times(t: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    i = np.where((y[1:-1] > y[:-2]) & (y[1:-1] >= y[2:]))[0] + 1
    return t[i], y[i]


def observe_oscillation(t: np.ndarray, y: np.ndarray, amp_floor: float = 1e-3,
                        period_rtol: float = 0.05) -> tuple[bool, float, float]:
    """(oscillating, peak-to-trough amplitude, mean inter-peak interval)."""
    amp = float(y.max() - y.min())
    tp, yp = peak_times(t, y)
    # ignore ripples that do not reach the upper half of the range
    keep = yp >= y.min() + 0.5 * amp
    tp = tp[keep]
    if amp <= amp_floor or len(tp) < 3:
        return False, amp, float("nan")
    iv = np.diff(tp)
    period = float(iv.mean())
    periodic = bool(np.all(np.abs(iv - period) <= period_rtol * period))
    return periodic, amp, period


def run_probe(params: ModelParams, x0, t_transient: float, t_observe: float,
              n_samples: int = 20000, amp_floor: float = 1e-3) -> ProbeOutcome:
    ts = t_transient + np.linspace(0.0, t_observe, n_samples)
    try:
        tr = simulate_reduced(params, x0, t_transient + t_observe, output_times=ts,
                              rtol=1e-8, atol=1e-11)
    except IntegrationError:
        return ProbeOutcome(False, float("nan"), float("nan"), np.full(2, np.nan), None)
    osc, amp, per = observe_oscillation(tr.times, tr.states[:, 0], amp_floor)
    return ProbeOutcome(osc, amp, per, tr.states[-1].copy(), None)


def default_probes(params: ModelParams, eqs: list[Equilibrium]) -> list[np.ndarray]:
    probes = [np.array([1.0, 0.1]), np.array([0.5, 4.0]), np.array([6.0, 0.05])]
    for e in eqs:
        if e.stable:
            probes.append(np.array(e.state) * (1 + 1e-4))
    return probes


def classify_regime(params: ModelParams, probes=None, t_transient: float = 3000.0,
                    t_observe: float = 1000.0, amp_floor: float = 1e-3,
                    eqs: list[Equilibrium] | None = None) -> RegimeResult:
    """Label the long-time behaviour at ``params``.

    Combines the equilibrium analysis with post-transient simulations from
    each probe (and from every equilibrium, slightly perturbed).
    """
    if eqs is None:
        eqs = find_equilibria(params)
    stable = [e for e in eqs if e.stable]
    if probes is None:
        probes = default_probes(params, eqs)
    else:
        probes = [np.asarray(x, float) for x in probes] + \
            [np.array(e.state) * (1 + 1e-4) for e in stable]
    if not probes:
        raise ValueError("no probes")
    outcomes = []
    for x0 in probes:
        o = run_probe(params, x0, t_transient, t_observe, amp_floor=amp_floor)
        if not o.oscillating and stable:
            d = [np.linalg.norm(o.final - np.array(e.state)) for e in stable]
            k = int(np.argmin(d))
            if d[k] <= 1e-3 * max(1.0, np.linalg.norm(o.final)):
                o.converged_to = k
        outcomes.append(o)
    n_cyc = sum(o.oscillating for o in outcomes)
    settled = [o for o in outcomes if o.converged_to is not None]
    reached = {o.converged_to for o in settled}
    lost = [o for o in outcomes if not o.oscillating and o.converged_to is None]
    if lost:
        return RegimeResult("indeterminate", eqs, outcomes, "probe neither settled nor periodic")
    if n_cyc == len(outcomes):
        if stable:
            return RegimeResult("indeterminate", eqs, outcomes,
                                "stable equilibrium not reached by any probe")
        return RegimeResult("unique-stable-cycle", eqs, outcomes)
    if n_cyc > 0:
        return RegimeResult("cycle-eq-coexistence", eqs, outcomes)
    if len(stable) >= 2 and len(reached) >= 2:
        return RegimeResult("bistable-equilibria", eqs, outcomes)
    if len(stable) == 1:
        return RegimeResult("unique-stable-eq", eqs, outcomes)
    return RegimeResult("indeterminate", eqs, outcomes, "probes disagree with equilibria")


REGIME_GRID_HEADER = ["p1", "p2", "label"]


def _grid_cell(cell, params: ModelParams, p1: str, p2: str, t_transient: float,
               t_observe: float) -> str:
    v1, v2 = cell
    try:
        p = params.replace(**{p1: v1, p2: v2})
        return classify_regime(p, t_transient=t_transient, t_observe=t_observe).label
    except (ValueError, IntegrationError):
        return "indeterminate"


def regime_grid(params: ModelParams, p1: str, values1, p2: str, values2,
                t_transient: float = 3000.0, t_observe: float = 1000.0, jobs: int = 1
                ) -> list[tuple[float, float, str]]:
    """:func:`classify_regime` on every (p1, p2) cell, p1 varying slowest.

    Cells whose parameters are invalid or whose probes fail are labelled
    ``indeterminate``.
    """
    cells = [(float(a), float(b)) for a in values1 for b in values2]
    fn = partial(_grid_cell, params=params, p1=p1, p2=p2, t_transient=t_transient,
                 t_observe=t_observe)
    labels = pmap(fn, cells, jobs)
    return [(a, b, lab) for (a, b), lab in zip(cells, labels)]
