"""Bistable phosphorylation / nuclear import model.

Right-hand sides, Jacobian and the quasi-steady fraction relation for the
reduced (c_no, c_nop) system and the full seven-variable growth model.

The numerical kernels are numba-compiled and take the parameters packed in a
flat float array (see :meth:`ModelParams.as_array`) so that integrators and
continuation code can call them without Python overhead.
"""
from __future__ import annotations

import dataclasses
import math
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from numba import njit

# Indices into the packed parameter vector.
I_KVN, I_KVCY, I_KNT, I_KC, I_TAU, I_ACYTO, I_AN, I_M, I_MSCA, I_SIGMA, I_PW = range(11)
N_PARAMS = 11

HALF_SAT = 9.0 / 64.0
EPS = np.finfo(float).eps


class ModelDomainError(ValueError):
    """Raised for parameter values outside the model's domain."""


@dataclass(frozen=True)
class ModelParams:
    """All constants of the model.

    ``k_nt`` may be negative; this is only meaningful for continuation into
    the non-physical half-plane. The defaults mirror ``data/default.conf``:
    k_vn, k_vcy, A_cyto, A_n, m and m_sca are calibrated by the bistability
    scan in :mod:`bistable_phospho.calibration`, not published values.
    """

    k_vn: float = 0.05
    k_vcy: float = 0.11
    k_nt: float = 0.1
    K_c: float = 2.75
    tau: float = 0.01
    A_cyto: float = 0.05
    A_n: float = 1.0
    m: float = 3.0
    m_sca: float = 4.0
    sigma: float = 0.0
    use_piecewise_fsca: bool = False
    _packed: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        for name in ("k_vn", "k_vcy", "K_c", "tau", "A_cyto", "A_n"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise ModelDomainError(f"{name} must be positive and finite, got {v!r}")
        for name in ("m", "m_sca"):
            if not getattr(self, name) >= 1:
                raise ModelDomainError(f"{name} must be >= 1, got {getattr(self, name)!r}")
        if not self.sigma >= 0:
            raise ModelDomainError(f"sigma must be >= 0, got {self.sigma!r}")
        if not math.isfinite(self.k_nt):
            raise ModelDomainError("k_nt must be finite")
        packed = np.array(
            [
                self.k_vn, self.k_vcy, self.k_nt, self.K_c, self.tau, self.A_cyto,
                self.A_n, self.m, self.m_sca, self.sigma, float(bool(self.use_piecewise_fsca)),
            ],
            dtype=float,
        )
        packed.setflags(write=False)
        object.__setattr__(self, "_packed", packed)

    def as_array(self) -> np.ndarray:
        """Packed read-only parameter vector used by the compiled kernels."""
        return self._packed

    def replace(self, **changes) -> "ModelParams":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in dataclasses.fields(self) if f.init}

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in dataclasses.fields(cls) if f.init]


PARAM_INDEX = {name: i for i, name in enumerate(ModelParams.field_names())}


class ReducedState(NamedTuple):
    c_no: float
    c_nop: float


class FullState(NamedTuple):
    c_no: float
    c_nop: float
    c_ni: float
    c_cy: float
    Phi: float
    V_n: float
    V_cyto: float


class PhasePoint(NamedTuple):
    total: float
    frac: float


def to_phase(c_no: float, c_nop: float) -> PhasePoint:
    total = c_no + c_nop
    if total <= 0:
        raise ValueError("fraction undefined for non-positive total")
    return PhasePoint(total, c_nop / total)


def from_phase(total: float, frac: float) -> ReducedState:
    return ReducedState((1.0 - frac) * total, frac * total)


# ---------------------------------------------------------------------------
# compiled scalar kernels


@njit(cache=True)
def _fsca_pw(c, K):
    return K * max(0.125, 1.25 - 4.0 * c / K)


@njit(cache=True)
def _fsca_pw_d(c, K):
    # right branch at the kink
    if 1.25 - 4.0 * c / K > 0.125:
        return -4.0
    return 0.0


@njit(cache=True)
def _fsca_sm(c, K, q):
    u = c / K
    uq = u**q
    hq = HALF_SAT**q
    return K * (1.25 - 1.125 * uq / (uq + hq))


@njit(cache=True)
def _fsca_sm_d(c, K, q):
    u = c / K
    if u <= 0.0:
        if q == 1.0:
            return -1.125 / HALF_SAT
        return 0.0
    uq = u**q
    hq = HALF_SAT**q
    den = uq + hq
    return -1.125 * q * uq / u * hq / (den * den)


@njit(cache=True)
def _fsca(c, p):
    if p[I_PW] != 0.0:
        return _fsca_pw(c, p[I_KC])
    return _fsca_sm(c, p[I_KC], p[I_MSCA])


@njit(cache=True)
def _fsca_d(c, p):
    if p[I_PW] != 0.0:
        return _fsca_pw_d(c, p[I_KC])
    return _fsca_sm_d(c, p[I_KC], p[I_MSCA])


@njit(cache=True)
def _fp(c_no, c_nop, p):
    s = max(c_no + c_nop, 0.0)
    if s == 0.0:
        return 0.0
    m = p[I_M]
    f = _fsca(max(c_nop, 0.0), p)
    sm = s**m
    return s * sm / (sm + f**m) / p[I_TAU]


@njit(cache=True)
def _rhs2(c_no, c_nop, p):
    tau = p[I_TAU]
    knt = p[I_KNT]
    fp = _fp(c_no, c_nop, p)
    fdp = c_nop / tau
    g = p[I_ACYTO] * (p[I_KVN] + p[I_KVCY] - knt * c_nop)
    d0 = p[I_KVN] - fp + fdp - c_no * g
    d1 = fp - fdp - knt * c_nop - c_nop * g
    return d0, d1


@njit(cache=True)
def rhs_reduced_kernel(t, x, p):
    d0, d1 = _rhs2(x[0], x[1], p)
    out = np.empty(2)
    out[0] = d0
    out[1] = d1
    return out


@njit(cache=True)
def _jac2(c_no, c_nop, p):
    tau = p[I_TAU]
    knt = p[I_KNT]
    A = p[I_ACYTO]
    m = p[I_M]
    g = A * (p[I_KVN] + p[I_KVCY] - knt * c_nop)
    s = max(c_no + c_nop, 0.0)
    cp = max(c_nop, 0.0)
    f = _fsca(cp, p)
    fd = _fsca_d(cp, p) if c_nop >= 0.0 else 0.0
    if s > 0.0:
        sm = s**m
        fm = f**m
        den = sm + fm
        dfs = sm * (sm + (m + 1.0) * fm) / (den * den) / tau
        dff = -m * s * sm * fm / f / (den * den) / tau
    else:
        dfs = 0.0
        dff = 0.0
    dfp_dno = dfs
    dfp_dnop = dfs + dff * fd
    j00 = -dfp_dno - g
    j01 = -dfp_dnop + 1.0 / tau + c_no * A * knt
    j10 = dfp_dno
    j11 = dfp_dnop - 1.0 / tau - knt - g + c_nop * A * knt
    return j00, j01, j10, j11


@njit(cache=True)
def jacobian_reduced_kernel(x, p):
    j00, j01, j10, j11 = _jac2(x[0], x[1], p)
    out = np.empty((2, 2))
    out[0, 0] = j00
    out[0, 1] = j01
    out[1, 0] = j10
    out[1, 1] = j11
    return out


@njit(cache=True)
def rhs_full_kernel(t, x, p):
    c_no, c_nop, c_ni, c_cy, phi, vn, vcy = x[0], x[1], x[2], x[3], x[4], x[5], x[6]
    knt = p[I_KNT]
    A = p[I_ACYTO]
    An = p[I_AN]
    d0, d1 = _rhs2(c_no, c_nop, p)
    g = A * (p[I_KVN] + p[I_KVCY] - knt * c_nop)
    out = np.empty(7)
    out[0] = d0
    out[1] = d1
    out[2] = knt * c_nop * (1.0 - An * c_ni) / phi
    out[3] = p[I_KVCY] - c_cy * g
    out[4] = An * knt * c_nop - g * phi
    out[5] = An * knt * c_nop * vcy
    out[6] = g * vcy
    return out


# ---------------------------------------------------------------------------
# public scalar API


def _check_Kc(K_c):
    if not K_c > 0:
        raise ModelDomainError(f"K_c must be positive, got {K_c!r}")


def f_sca_piecewise(c_nop: float, K_c: float) -> float:
    """Piecewise-linear scaling K_c * max(1/8, 5/4 - 4 c_nop / K_c)."""
    _check_Kc(K_c)
    return float(_fsca_pw(float(c_nop), float(K_c)))


def f_sca_smooth(c_nop: float, K_c: float, m_sca: float) -> float:
    """Hill-type smooth scaling, 5K_c/4 at zero, decreasing to K_c/8."""
    _check_Kc(K_c)
    return float(_fsca_sm(float(c_nop), float(K_c), float(m_sca)))


def f_sca(c_nop: float, params: ModelParams) -> float:
    if params.use_piecewise_fsca:
        return f_sca_piecewise(c_nop, params.K_c)
    return f_sca_smooth(c_nop, params.K_c, params.m_sca)


def f_p(c_no: float, c_nop: float, params: ModelParams) -> float:
    """Phosphorylation propensity; 0 at the origin by continuity."""
    return float(_fp(float(c_no), float(c_nop), params.as_array()))


def f_dp(c_nop: float, params: ModelParams) -> float:
    """Dephosphorylation propensity c_nop / tau."""
    return c_nop / params.tau


def rhs_reduced(state, params: ModelParams) -> np.ndarray:
    x = np.asarray(state, dtype=float)
    return rhs_reduced_kernel(0.0, x, params.as_array())


def rhs_full(state, params: ModelParams) -> np.ndarray:
    x = np.asarray(state, dtype=float)
    if not x[4] > 0:
        raise ZeroDivisionError("Phi must be positive in the full system")
    if not x[6] > 0:
        raise ZeroDivisionError("V_cyto must be positive in the full system")
    return rhs_full_kernel(0.0, x, params.as_array())


def near_fsca_kink(c_nop: float, params: ModelParams) -> bool:
    kink = 9.0 * params.K_c / 32.0
    return abs(c_nop - kink) <= 10 * EPS * max(1.0, kink)


def jacobian_reduced(state, params: ModelParams) -> np.ndarray:
    """Analytic 2x2 Jacobian of :func:`rhs_reduced` with respect to (c_no, c_nop).

    With the piecewise scaling function the derivative uses the active linear
    branch and warns when evaluated at the kink.
    """
    x = np.asarray(state, dtype=float)
    if params.use_piecewise_fsca and near_fsca_kink(x[1], params):
        warnings.warn("Jacobian evaluated at the kink of the piecewise scaling function",
                      RuntimeWarning, stacklevel=2)
    return jacobian_reduced_kernel(x, params.as_array())


def manifold_state(c_no: float, c_nop: float, params: ModelParams, c_ni: float = 0.0,
                   V_cyto: float = 1.0, V_n: float | None = None) -> FullState:
    """Full state on the conserved manifold c_no + c_nop + c_cy = 1/A_cyto."""
    c_cy = 1.0 / params.A_cyto - c_no - c_nop
    if c_cy < 0:
        raise ValueError("c_no + c_nop exceeds 1/A_cyto")
    if V_n is None:
        V_n = 0.1 * V_cyto
    return FullState(c_no, c_nop, c_ni, c_cy, V_n / V_cyto, V_n, V_cyto)


# ---------------------------------------------------------------------------
# quasi-steady fraction relation

QS_GRID = 2048


def _qs_residual(frac, total, params: ModelParams):
    m = params.m
    f = np.array([f_sca(c, params) for c in np.atleast_1d(frac * total)])
    tm = total**m
    return frac - tm / (tm + f**m)


def quasi_steady_fractions(total: float, params: ModelParams, tol: float = 1e-10) -> list[float]:
    """All phosphorylated fractions in [0, 1] consistent with fast phosphorylation.

    Roots of ``frac - total^m / (total^m + f_sca(frac*total)^m)`` found by
    sign-change bracketing on a uniform grid and bisection.
    """
    if not total > 0:
        raise ValueError("total must be positive")
    grid = np.linspace(0.0, 1.0, QS_GRID)
    g = _qs_residual(grid, total, params)
    roots = []
    for i in range(len(grid) - 1):
        if g[i] == 0.0:
            roots.append(float(grid[i]))
            continue
        if g[i] * g[i + 1] < 0:
            roots.append(_bisect(lambda fr: float(_qs_residual(fr, total, params)[0]),
                                 grid[i], grid[i + 1], tol))
    if g[-1] == 0.0:
        roots.append(1.0)
    return roots


def _bisect(fun, a, b, tol, max_iter=200):
    fa = fun(a)
    for _ in range(max_iter):
        mid = 0.5 * (a + b)
        fm = fun(mid)
        if abs(fm) <= tol and b - a < 1e-12:
            return mid
        if fm == 0.0:
            return mid
        if (fa < 0) == (fm < 0):
            a, fa = mid, fm
        else:
            b = mid
        if b - a <= 4 * EPS * max(1.0, abs(a)):
            break
    return 0.5 * (a + b)
