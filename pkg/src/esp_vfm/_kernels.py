"""Compiled kernels: ESP right-hand side and the Tsitouras 5(4) stepper.

Parameters travel as a flat float vector (see ``PVEC_FIELDS``) so that the
kernels stay numba-friendly and ensembles are just 2-D parameter arrays.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

from .model import RPM_TO_RADS, EspParams

PVEC_FIELDS = (
    "k1p", "k2p", "k3p", "k4p", "k1s", "k2s", "k3s", "k4s", "k5s", "Is", "B",
    "rho", "mu", "ku", "kd", "kbd", "kbl", "omega_t", "Pin", "Pout",
    "du", "Au", "Lu", "dd", "Ad", "Ld", "Ap", "Lp", "rho0",
)
PVEC_INDEX = {name: i for i, name in enumerate(PVEC_FIELDS)}
_N_FIELDS = len(PVEC_FIELDS)


def pack_params(p: EspParams) -> np.ndarray:
    """Flatten a parameter record; the two valve entries are appended last."""
    vec = [float(getattr(p, f)) for f in PVEC_FIELDS]
    vec.append(1.0 if p.cv_term_enabled else 0.0)
    vec.append(float(p.cv) if p.cv else 1.0)
    return np.array(vec)


_K128_PI = 128.0 / math.pi


@njit(cache=True)
def rhs_vec(x, torque, pv, out):
    Qp, w, Q1, Q2, P1, P2 = x[0], x[1], x[2], x[3], x[4], x[5]
    k1p, k2p, k3p, k4p = pv[0], pv[1], pv[2], pv[3]
    k1s, k2s, k3s, k4s, k5s, Is, B = pv[4], pv[5], pv[6], pv[7], pv[8], pv[9], pv[10]
    rho, mu, ku, kd, kbd, kbl, wt = pv[11], pv[12], pv[13], pv[14], pv[15], pv[16], pv[17]
    Pin, Pout = pv[18], pv[19]
    du, Au, Lu, dd, Ad, Ld, Ap, Lp, rho0 = (pv[20], pv[21], pv[22], pv[23], pv[24],
                                           pv[25], pv[26], pv[27], pv[28])
    out[0] = (P1 - P2 + k3p * mu * Qp) * Ap / (rho * Lp) \
        + Ap * (k1p * w * Qp + k2p * w * w + k4p * Qp * Qp) / Lp
    out[1] = (torque - k1s * rho * Qp * Qp - k2s * rho * w * Qp - k3s * mu * w
              - k4s * w - k5s * w * w) / Is
    boost = (wt / RPM_TO_RADS / kbd - Q1) * kbl * mu
    fu = _K128_PI * Lu * mu * Q1 / du ** 4
    out[2] = (boost + Pin - P1 - fu) * Au / (rho * Lu) - ku * Q1 * Q1 / (2.0 * Lu * Au)
    fd = _K128_PI * Ld * mu * Q2 / dd ** 4
    out[3] = (P2 - Pout - fd) * Ad / (rho * Ld) - kd * Q2 * Q2 / (2.0 * Ld * Ad)
    if pv[29] != 0.0:
        out[3] -= Q2 * Ad / (Ld * pv[30] ** 2 * rho0)
    out[4] = (Q1 - Qp) * B / (Au * Lu)
    out[5] = (Qp - Q2) * B / (Ad * Ld)


@njit(cache=True)
def torque_at(t, tt, gg):
    n = tt.shape[0]
    if n == 1 or t <= tt[0]:
        return gg[0]
    if t >= tt[n - 1]:
        return gg[n - 1]
    return np.interp(t, tt, gg)


# Tsitouras (2011) 5(4) tableau.
C2, C3, C4, C5 = 0.161, 0.327, 0.9, 0.9800255409045097
A21 = 0.161
A31, A32 = -0.008480655492356989, 0.335480655492357
A41, A42, A43 = 2.897153057105493, -6.359448489975075, 4.3622954328695815
A51, A52, A53, A54 = (5.325864828439257, -11.748883564062828, 7.4955393428898365,
                      -0.09249506636175525)
A61, A62, A63, A64, A65 = (5.86145544294642, -12.92096931784711, 8.159367898576159,
                           -0.071584973281401, -0.028269050394068383)
A71, A72, A73, A74, A75, A76 = (0.09646076681806523, 0.01, 0.4798896504144996,
                                1.379008574103742, -3.290069515436081, 2.324710524099774)
E1, E2, E3, E4, E5, E6, E7 = (-0.00178001105222577714, -0.0008164344596567469,
                              0.007880878010261995, -0.1447110071732629,
                              0.5823571654525552, -0.45808210592918697,
                              0.015151515151515152)

STATUS_OK = 0
STATUS_UNDERFLOW = 1
STATUS_NONFINITE = 2
STATUS_MAXSTEPS = 3


@njit(cache=True)
def _step(x, f, t, hs, tn, tt, gg, pv, K, y, xn, rtol, atol):
    """One Tsit5 step of signed size hs from (t, x) with f = rhs(x).

    Fills xn with the 5th-order solution and K[0..5] with stages k2..k7
    (K[5] is the RHS at xn).  Returns (sum of squared scaled errors,
    all-finite flag).
    """
    n = 6
    k2, k3, k4, k5, k6, k7 = K[0], K[1], K[2], K[3], K[4], K[5]
    for i in range(n):
        y[i] = x[i] + hs * A21 * f[i]
    rhs_vec(y, torque_at(t + C2 * hs, tt, gg), pv, k2)
    for i in range(n):
        y[i] = x[i] + hs * (A31 * f[i] + A32 * k2[i])
    rhs_vec(y, torque_at(t + C3 * hs, tt, gg), pv, k3)
    for i in range(n):
        y[i] = x[i] + hs * (A41 * f[i] + A42 * k2[i] + A43 * k3[i])
    rhs_vec(y, torque_at(t + C4 * hs, tt, gg), pv, k4)
    for i in range(n):
        y[i] = x[i] + hs * (A51 * f[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i])
    rhs_vec(y, torque_at(t + C5 * hs, tt, gg), pv, k5)
    for i in range(n):
        y[i] = x[i] + hs * (A61 * f[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i]
                            + A65 * k5[i])
    rhs_vec(y, torque_at(tn, tt, gg), pv, k6)
    for i in range(n):
        xn[i] = x[i] + hs * (A71 * f[i] + A72 * k2[i] + A73 * k3[i] + A74 * k4[i]
                             + A75 * k5[i] + A76 * k6[i])
    rhs_vec(xn, torque_at(tn, tt, gg), pv, k7)
    acc = 0.0
    finite = True
    for i in range(n):
        e = hs * (E1 * f[i] + E2 * k2[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i]
                  + E6 * k6[i] + E7 * k7[i])
        sc = atol + rtol * max(abs(x[i]), abs(xn[i]))
        acc += (e / sc) ** 2
        if not (math.isfinite(xn[i]) and math.isfinite(k7[i])):
            finite = False
    return acc, finite


@njit(cache=True)
def tsit5_on_grid(x0, ts, tt, gg, pv):
    """Tsit5 without step control, stepping exactly through the times ``ts``.

    Replaying a grid chosen by an adaptive run makes the result a smooth
    function of the parameters, which finite-difference sensitivities need.
    Returns (status, xs, fs).
    """
    n = 6
    m = ts.shape[0]
    xs = np.empty((m, n))
    fs = np.empty((m, n))
    K = np.empty((6, n))
    y = np.empty(n)
    xn = np.empty(n)
    x = x0.copy()
    f = np.empty(n)
    rhs_vec(x, torque_at(ts[0], tt, gg), pv, f)
    xs[0] = x
    fs[0] = f
    for j in range(1, m):
        acc, finite = _step(x, f, ts[j - 1], ts[j] - ts[j - 1], ts[j], tt, gg, pv, K, y,
                            xn, 1.0, 1.0)
        if not finite:
            return STATUS_NONFINITE, xs[:j], fs[:j]
        for i in range(n):
            x[i] = xn[i]
            f[i] = K[5, i]
        xs[j] = x
        fs[j] = f
    return STATUS_OK, xs, fs


@njit(cache=True)
def tsit5(x0, t0, t1, tt, gg, pv, rtol, atol, h0, hmin_rel, max_steps, record):
    """Integrate from t0 to t1 (either direction).

    Returns (status, n_accepted, ts, xs, fs); when ``record`` is False only
    the final point is stored.  On failure the arrays hold the last good
    point.
    """
    n = 6
    direction = 1.0 if t1 >= t0 else -1.0
    span = abs(t1 - t0)
    cap = max_steps + 1 if record else 1
    ts = np.empty(cap)
    xs = np.empty((cap, n))
    fs = np.empty((cap, n))
    x = x0.copy()
    f = np.empty(n)
    rhs_vec(x, torque_at(t0, tt, gg), pv, f)
    ts[0] = t0
    xs[0] = x
    fs[0] = f
    if span == 0.0:
        return STATUS_OK, 1, ts, xs, fs
    for i in range(n):
        if not math.isfinite(f[i]):
            return STATUS_NONFINITE, 1, ts, xs, fs
    K = np.empty((6, n))
    y = np.empty(n)
    xn = np.empty(n)
    h = h0 if h0 > 0.0 else min(1e-4, span)
    hmin = hmin_rel * max(abs(t0), abs(t1), 1.0)
    err_prev = 1e-4
    t = t0
    count = 1
    steps = 0
    while direction * (t1 - t) > 0.0:
        if steps >= max_steps:
            return STATUS_MAXSTEPS, count, ts, xs, fs
        steps += 1
        last = False
        if h >= abs(t1 - t):
            h = abs(t1 - t)
            last = True
        hs = direction * h
        tn = t1 if last else t + hs
        acc, finite = _step(x, f, t, hs, tn, tt, gg, pv, K, y, xn, rtol, atol)
        k7 = K[5]
        err = math.sqrt(acc / n)
        if not finite:
            err = 1e10
        if err <= 1.0:
            t = tn
            for i in range(n):
                x[i] = xn[i]
                f[i] = k7[i]
            if record:
                ts[count] = t
                xs[count] = x
                fs[count] = f
                count += 1
            else:
                ts[0] = t
                xs[0] = x
                fs[0] = f
            # PI step-size control
            fac = 0.9 * max(err, 1e-10) ** (-0.7 / 5.0) * err_prev ** (0.4 / 5.0)
            fac = min(5.0, max(0.2, fac))
            err_prev = max(err, 1e-4)
            h = h * fac
        else:
            if not finite and h <= hmin:
                return STATUS_NONFINITE, count, ts, xs, fs
            fac = max(0.2, 0.9 * err ** (-1.0 / 5.0))
            h = h * fac
            if h < hmin:
                return STATUS_UNDERFLOW, count, ts, xs, fs
    return STATUS_OK, count, ts, xs, fs


@njit(cache=True)
def propagate_ensemble(X, t0, t1, tt, gg, P, rtol, atol, max_steps):
    """Advance every row of X (N, 6) with its own parameter row P[i].

    Returns the new states and a per-row status code.
    """
    N = X.shape[0]
    out = np.empty_like(X)
    status = np.zeros(N, dtype=np.int64)
    for i in range(N):
        st, cnt, ts, xs, fs = tsit5(X[i], t0, t1, tt, gg, P[i], rtol, atol, 0.0, 1e-14,
                                    max_steps, False)
        status[i] = st
        out[i] = xs[0]
    return out, status
