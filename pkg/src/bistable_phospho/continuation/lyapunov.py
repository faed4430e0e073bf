"""First Lyapunov coefficient of a planar Hopf point."""
from __future__ import annotations

import numpy as np

from ..model import ModelParams, jacobian_reduced_kernel, rhs_reduced_kernel

HOPF_TRACE_TOL = 1e-8


class NotAHopfPoint(ValueError):
    pass


def normal_form_basis(J: np.ndarray) -> tuple[np.ndarray, float]:
    """Real basis ``P`` with ``P^-1 J P = [[0, -w], [w, 0]]`` and ``w > 0``."""
    vals, vecs = np.linalg.eig(J)
    i = int(np.argmax(vals.imag))
    w = float(vals[i].imag)
    if not w > 0:
        raise NotAHopfPoint("Jacobian has no complex pair")
    q = vecs[:, i]
    # |q| = sqrt(2) makes P a rotation when J is already in normal form
    q = q * (np.sqrt(2.0) / np.linalg.norm(q))
    # fix the phase so that Re(q) and Im(q) are orthogonal
    a = np.dot(q.real, q.real) - np.dot(q.imag, q.imag)
    b = 2.0 * np.dot(q.real, q.imag)
    q = q * np.exp(-0.5j * np.arctan2(b, a))
    P = np.column_stack([q.imag, q.real])
    return P, w


def _partials(F, h):
    """Second and third partials of both components of F at 0 (central differences)."""
    def f(x, y):
        return F(np.array([x, y]))

    f00 = f(0, 0)
    fxx = (f(h, 0) - 2 * f00 + f(-h, 0)) / h**2
    fyy = (f(0, h) - 2 * f00 + f(0, -h)) / h**2
    fxy = (f(h, h) - f(h, -h) - f(-h, h) + f(-h, -h)) / (4 * h**2)
    fxxx = (f(2 * h, 0) - 2 * f(h, 0) + 2 * f(-h, 0) - f(-2 * h, 0)) / (2 * h**3)
    fyyy = (f(0, 2 * h) - 2 * f(0, h) + 2 * f(0, -h) - f(0, -2 * h)) / (2 * h**3)
    # f_xyy = d/dx f_yy ; f_xxy = d/dy f_xx
    fyy_p = (f(h, h) - 2 * f(h, 0) + f(h, -h)) / h**2
    fyy_m = (f(-h, h) - 2 * f(-h, 0) + f(-h, -h)) / h**2
    fxyy = (fyy_p - fyy_m) / (2 * h)
    fxx_p = (f(h, h) - 2 * f(0, h) + f(-h, h)) / h**2
    fxx_m = (f(h, -h) - 2 * f(0, -h) + f(-h, -h)) / h**2
    fxxy = (fxx_p - fxx_m) / (2 * h)
    return np.array([fxx, fyy, fxy, fxxx, fyyy, fxyy, fxxy])


def lyapunov_from_partials(d: np.ndarray, w: float) -> float:
    fxx, fyy, fxy, fxxx, fyyy, fxyy, fxxy = d
    f_xx, g_xx = fxx
    f_yy, g_yy = fyy
    f_xy, g_xy = fxy
    cubic = fxxx[0] + fxyy[0] + fxxy[1] + fyyy[1]
    quad = f_xy * (f_xx + f_yy) - g_xy * (g_xx + g_yy) - f_xx * g_xx + f_yy * g_yy
    return (cubic + quad / w) / 16.0


def planar_first_lyapunov(rhs, x0, J=None, base_step=1e-4) -> float:
    """Cubic normal-form coefficient of ``dx/dt = rhs(x)`` at a Hopf point ``x0``.

    In coordinates where the linear part is ``[[0, -w], [w, 0]]`` this is
    ``(f_xxx + f_xyy + g_xxy + g_yyy)/16 + (f_xy (f_xx + f_yy) - g_xy (g_xx + g_yy)
    - f_xx g_xx + f_yy g_yy)/(16 w)``. Derivatives are central differences
    refined by one Richardson step (h, h/2).
    """
    x0 = np.asarray(x0, dtype=float)
    if J is None:
        J = _fd_jacobian(rhs, x0)
    P, w = normal_form_basis(J)
    Pinv = np.linalg.inv(P)
    r0 = np.asarray(rhs(x0), dtype=float)

    def F(z):
        return Pinv @ (np.asarray(rhs(x0 + P @ z), dtype=float) - r0)

    h = base_step * max(1.0, float(np.linalg.norm(x0)))
    d1 = _partials(F, h)
    d2 = _partials(F, h / 2)
    d = (4.0 * d2 - d1) / 3.0
    return float(lyapunov_from_partials(d, w))


def _fd_jacobian(rhs, x0, h=1e-7):
    n = len(x0)
    J = np.empty((n, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = h * max(1.0, abs(x0[j]))
        J[:, j] = (np.asarray(rhs(x0 + e)) - np.asarray(rhs(x0 - e))) / (2 * e[j])
    return J


def first_lyapunov(state, params: ModelParams, check: bool = True) -> float:
    """First Lyapunov coefficient of the reduced model at a Hopf equilibrium.

    Negative means supercritical (stable cycles are born), positive
    subcritical.
    """
    x = np.asarray(getattr(state, "state", state), dtype=float)
    p = params.as_array()
    J = jacobian_reduced_kernel(x, p)
    tr = J[0, 0] + J[1, 1]
    det = J[0, 0] * J[1, 1] - J[0, 1] * J[1, 0]
    if check and not (abs(tr) <= HOPF_TRACE_TOL and det > 0):
        raise NotAHopfPoint(f"not a Hopf point: tr J = {tr:.3g}, det J = {det:.3g}")
    # evaluate the Jordan form of the exact Hopf linearization
    Jh = J - 0.5 * tr * np.eye(2)
    return planar_first_lyapunov(lambda z: rhs_reduced_kernel(0.0, z, p), x, Jh)
