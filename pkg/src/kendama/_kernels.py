"""Hot numeric kernels.

Every kernel exists twice: a loop-based version compiled with ``numba.njit``
and a vectorised pure-numpy version. Which one is exported is decided once at
import time by the ``KENDAMA_NUMBA`` environment variable (``0``/``false``/``off``
selects numpy). Both versions must agree to round-off; ``tests/test_kernels.py``
checks that.
"""

from __future__ import annotations

import math
import os

import numpy as np

_FLAG = os.environ.get("KENDAMA_NUMBA", "1").strip().lower()
_WANT_NUMBA = _FLAG not in ("0", "false", "off", "no")

try:  # pragma: no cover - import guard
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = _WANT_NUMBA and HAVE_NUMBA


def _njit(fn):
    return numba.njit(cache=True, fastmath=False)(fn)


# ---------------------------------------------------------------------------
# cart-pendulum model (scalar math, shared by both backends)
#
# q = (x_cup, z_cup, phi); ball at (x + r sin phi, z - r cos phi).
# params = (m_c, m_b, r, g)
# ---------------------------------------------------------------------------


def _accel_py(x, F, p):
    """Generalised accelerations M^-1 (F - C qdot - G) by cofactor solve."""
    mc, mb, r, g = p[0], p[1], p[2], p[3]
    phi, dphi = x[2], x[5]
    s, c = math.sin(phi), math.cos(phi)
    m = mc + mb
    a13 = mb * r * c
    a23 = mb * r * s
    a33 = mb * r * r
    b1 = F[0] + mb * r * s * dphi * dphi
    b2 = F[1] - mb * r * c * dphi * dphi - m * g
    b3 = F[2] - mb * g * r * s
    # M = [[m,0,a13],[0,m,a23],[a13,a23,a33]]; det = m*(m*a33 - a13^2 - a23^2)
    schur = a33 - (a13 * a13 + a23 * a23) / m
    ddphi = (b3 - (a13 * b1 + a23 * b2) / m) / schur
    ddx = (b1 - a13 * ddphi) / m
    ddz = (b2 - a23 * ddphi) / m
    return ddx, ddz, ddphi


def _rhs_py(x, F, p, out):
    ddx, ddz, ddphi = _accel(x, F, p)
    out[0] = x[3]
    out[1] = x[4]
    out[2] = x[5]
    out[3] = ddx
    out[4] = ddz
    out[5] = ddphi


def _jac_py(x, F, p, Jx, JF):
    """Jacobians of the state derivative w.r.t. state (6x6) and the two cup forces (6x2)."""
    mc, mb, r, g = p[0], p[1], p[2], p[3]
    phi, dphi = x[2], x[5]
    s, c = math.sin(phi), math.cos(phi)
    m = mc + mb
    ddx, ddz, ddphi = _accel(x, F, p)
    a13 = mb * r * c
    a23 = mb * r * s
    a33 = mb * r * r
    schur = a33 - (a13 * a13 + a23 * a23) / m

    # d(qdd)/d(v) = M^-1 v, written out for the three right-hand sides needed
    # rhs_phi = -dh/dphi - dM/dphi qdd
    dM13 = -mb * r * s
    dM23 = mb * r * c
    v1 = mb * r * c * dphi * dphi - dM13 * ddphi
    v2 = mb * r * s * dphi * dphi - dM23 * ddphi
    v3 = -mb * g * r * c - (dM13 * ddx + dM23 * ddz)
    t3 = (v3 - (a13 * v1 + a23 * v2) / m) / schur
    t1 = (v1 - a13 * t3) / m
    t2 = (v2 - a23 * t3) / m
    # rhs_dphi = -dh/d(dphi)
    w1 = 2.0 * mb * r * s * dphi
    w2 = -2.0 * mb * r * c * dphi
    w3 = (-(a13 * w1 + a23 * w2) / m) / schur
    w1s = (w1 - a13 * w3) / m
    w2s = (w2 - a23 * w3) / m

    for i in range(6):
        for j in range(6):
            Jx[i, j] = 0.0
    Jx[0, 3] = 1.0
    Jx[1, 4] = 1.0
    Jx[2, 5] = 1.0
    Jx[3, 2] = t1
    Jx[4, 2] = t2
    Jx[5, 2] = t3
    Jx[3, 5] = w1s
    Jx[4, 5] = w2s
    Jx[5, 5] = w3

    # columns of M^-1 for e1 and e2 (the actuated cup forces)
    for k in range(2):
        e1 = 1.0 if k == 0 else 0.0
        e2 = 1.0 if k == 1 else 0.0
        z3 = (-(a13 * e1 + a23 * e2) / m) / schur
        z1 = (e1 - a13 * z3) / m
        z2 = (e2 - a23 * z3) / m
        JF[0, k] = 0.0
        JF[1, k] = 0.0
        JF[2, k] = 0.0
        JF[3, k] = z1
        JF[4, k] = z2
        JF[5, k] = z3


def _rk4_py(x0, F, p, h, nsteps, out):
    """Integrate with constant generalised force F; out has shape (nsteps+1, 6)."""
    k1 = np.empty(6)
    k2 = np.empty(6)
    k3 = np.empty(6)
    k4 = np.empty(6)
    tmp = np.empty(6)
    for i in range(6):
        out[0, i] = x0[i]
    for n in range(nsteps):
        xn = out[n]
        _rhs(xn, F, p, k1)
        for i in range(6):
            tmp[i] = xn[i] + 0.5 * h * k1[i]
        _rhs(tmp, F, p, k2)
        for i in range(6):
            tmp[i] = xn[i] + 0.5 * h * k2[i]
        _rhs(tmp, F, p, k3)
        for i in range(6):
            tmp[i] = xn[i] + h * k3[i]
        _rhs(tmp, F, p, k4)
        for i in range(6):
            out[n + 1, i] = xn[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])


def _shoot_py(x0, U, p, Ts, X):
    """Forward-Euler single-shooting roll-out; U is (N,2) cup forces, X is (N+1,6)."""
    N = U.shape[0]
    F = np.zeros(3)
    d = np.empty(6)
    for i in range(6):
        X[0, i] = x0[i]
    for k in range(N):
        F[0] = U[k, 0]
        F[1] = U[k, 1]
        _rhs(X[k], F, p, d)
        for i in range(6):
            X[k + 1, i] = X[k, i] + Ts * d[i]


def _adjoint_py(X, U, p, Ts, gX, gU, out):
    """Backpropagate dJ/dX (N+1,6) through the Euler recursion.

    gU holds the explicit dJ/dU terms on entry; the total gradient w.r.t. U is
    written to ``out`` (N,2).
    """
    N = U.shape[0]
    F = np.zeros(3)
    Jx = np.empty((6, 6))
    JF = np.empty((6, 2))
    lam = np.empty(6)
    nxt = np.empty(6)
    for i in range(6):
        lam[i] = gX[N, i]
    for k in range(N - 1, -1, -1):
        F[0] = U[k, 0]
        F[1] = U[k, 1]
        _jac(X[k], F, p, Jx, JF)
        for j in range(2):
            acc = gU[k, j]
            for i in range(6):
                acc += Ts * JF[i, j] * lam[i]
            out[k, j] = acc
        # lam_k = gX_k + (I + Ts Jx)^T lam_{k+1}
        for j in range(6):
            acc = gX[k, j] + lam[j]
            for i in range(6):
                acc += Ts * Jx[i, j] * lam[i]
            nxt[j] = acc
        for j in range(6):
            lam[j] = nxt[j]


# ---------------------------------------------------------------------------
# set kernels
# ---------------------------------------------------------------------------


def _support_numba_py(center, gens, dirs, out):
    m = gens.shape[0]
    for k in range(dirs.shape[0]):
        d0 = dirs[k, 0]
        d1 = dirs[k, 1]
        acc = d0 * center[0] + d1 * center[1]
        for j in range(m):
            acc += abs(d0 * gens[j, 0] + d1 * gens[j, 1])
        out[k] = acc


def _support_numpy(center, gens, dirs, out):
    out[:] = dirs @ center + np.abs(dirs @ gens.T).sum(axis=1)


def _hcontains_numba_py(H, h, pts, slack, out):
    for k in range(pts.shape[0]):
        ok = True
        for i in range(H.shape[0]):
            if H[i, 0] * pts[k, 0] + H[i, 1] * pts[k, 1] > h[i] + slack:
                ok = False
                break
        out[k] = ok


def _hcontains_numpy(H, h, pts, slack, out):
    out[:] = np.all(pts @ H.T <= h + slack, axis=1)


if USE_NUMBA:
    _accel = _njit(_accel_py)
    _rhs = _njit(_rhs_py)
    _jac = _njit(_jac_py)
    _rk4_impl = _njit(_rk4_py)
    _shoot_impl = _njit(_shoot_py)
    _adjoint_impl = _njit(_adjoint_py)
    _support_impl = _njit(_support_numba_py)
    _hcontains_impl = _njit(_hcontains_numba_py)
    BACKEND = "numba"
else:
    _accel = _accel_py
    _rhs = _rhs_py
    _jac = _jac_py
    _rk4_impl = _rk4_py
    _shoot_impl = _shoot_py
    _adjoint_impl = _adjoint_py
    _support_impl = _support_numpy
    _hcontains_impl = _hcontains_numpy
    BACKEND = "numpy"


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def rhs(x, F, params):
    out = np.empty(6)
    _rhs(_f64(x), _f64(F), _f64(params), out)
    return out


def jacobians(x, F, params):
    Jx = np.empty((6, 6))
    JF = np.empty((6, 2))
    _jac(_f64(x), _f64(F), _f64(params), Jx, JF)
    return Jx, JF


def rk4(x0, F, params, h, nsteps):
    out = np.empty((nsteps + 1, 6))
    _rk4_impl(_f64(x0), _f64(F), _f64(params), float(h), int(nsteps), out)
    return out


def shoot(x0, U, params, Ts):
    U = _f64(U)
    X = np.empty((U.shape[0] + 1, 6))
    _shoot_impl(_f64(x0), U, _f64(params), float(Ts), X)
    return X


def adjoint(X, U, params, Ts, gX, gU):
    U = _f64(U)
    out = np.empty_like(U)
    _adjoint_impl(_f64(X), U, _f64(params), float(Ts), _f64(gX), _f64(gU), out)
    return out


def zonotope_support(center, gens, dirs):
    dirs = np.atleast_2d(_f64(dirs))
    gens = _f64(gens).reshape(-1, 2)
    out = np.empty(dirs.shape[0])
    _support_impl(_f64(center), gens, dirs, out)
    return out


def hpoly_contains(H, h, pts, slack):
    pts = np.atleast_2d(_f64(pts))
    out = np.empty(pts.shape[0], dtype=np.bool_)
    _hcontains_impl(_f64(H).reshape(-1, 2), _f64(h), pts, float(slack), out)
    return out
