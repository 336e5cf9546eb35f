"""Forward simulation of the ESP model: adaptive integration, steady states,
fixed-grid resampling and synthetic sensor noise."""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicHermiteSpline

from . import _kernels as K
from .model import (STATE_NAMES, STATE_SCALES, STATE_UNITS, EspParams, ModelError,
                    StateVector, rhs_array)
from .timeseries import SeriesError, TimeSeries

log = logging.getLogger(__name__)

# Pressure transmitters: 0.065 % of a 200 kPa full scale.
PRESSURE_SIGMA_PA = 0.065e-2 * 200e3


class IntegrationError(RuntimeError):
    def __init__(self, message, t_last=None, state=None):
        super().__init__(message)
        self.t_last = t_last
        self.state = state


class ConvergenceError(RuntimeError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


@dataclass
class TorqueSignal:
    """Shaft torque input (N m), linearly interpolated between samples."""

    series: TimeSeries
    interpolation: str = "linear"

    def __post_init__(self):
        if "torque" not in self.series.channels:
            raise SeriesError("torque signal needs a 'torque' channel")
        if self.interpolation != "linear":
            raise ValueError("only linear torque interpolation is supported")

    @classmethod
    def constant(cls, value: float, t_span=(0.0, 1.0)) -> "TorqueSignal":
        t0, t1 = t_span
        times = [t0] if t1 == t0 else [min(t0, t1), max(t0, t1)]
        return cls(TimeSeries(np.array(times), {"torque": np.full(len(times), float(value))},
                              {"torque": "Nm"}))

    @classmethod
    def from_arrays(cls, times, values) -> "TorqueSignal":
        return cls(TimeSeries(np.asarray(times, float), {"torque": np.asarray(values, float)},
                              {"torque": "Nm"}))

    @property
    def times(self) -> np.ndarray:
        return self.series.times

    @property
    def values(self) -> np.ndarray:
        return self.series["torque"]

    def __call__(self, t):
        return np.interp(t, self.times, self.values)

    def covers(self, t0: float, t1: float) -> bool:
        lo, hi = min(t0, t1), max(t0, t1)
        if self.times.size == 1:
            return True
        return self.times[0] <= lo + 1e-12 and self.times[-1] >= hi - 1e-12


@dataclass
class NoiseSpec:
    sigma: dict[str, float] = field(default_factory=lambda: {"P1": PRESSURE_SIGMA_PA,
                                                             "P2": PRESSURE_SIGMA_PA})
    seed: int = 0

    def __post_init__(self):
        for k, s in self.sigma.items():
            if not s >= 0:
                raise ValueError(f"noise sigma for {k} must be >= 0, got {s}")


def _state_array(x0) -> np.ndarray:
    if isinstance(x0, StateVector):
        return x0.as_array()
    x = np.asarray(x0, dtype=float)
    if x.shape != (6,):
        raise ModelError(f"initial state must have 6 entries, got shape {x.shape}")
    for name, v in zip(STATE_NAMES, x):
        if not math.isfinite(v):
            raise ModelError(f"initial state {name} is not finite")
    return x


def state_series(times, states, derivatives=None) -> TimeSeries:
    states = np.asarray(states)
    chans = {n: states[:, i] for i, n in enumerate(STATE_NAMES)}
    derivs = None
    if derivatives is not None:
        derivs = {n: np.asarray(derivatives)[:, i] for i, n in enumerate(STATE_NAMES)}
    return TimeSeries(np.asarray(times), chans, dict(zip(STATE_NAMES, STATE_UNITS)), derivs)


def integrate(params: EspParams, x0, torque: TorqueSignal, t_span, rtol: float = 1e-8,
              atol: float = 1e-8, max_steps: int = 500_000) -> TimeSeries:
    """Integrate the ESP model with the Tsitouras 5(4) pair and PI step control.

    Returns every accepted step (with the RHS at each step in
    ``derivatives``).  Backward integration is allowed (t_span[1] < t_span[0]);
    the returned series is then in increasing time order.
    """
    t0, t1 = map(float, t_span)
    x = _state_array(x0)
    if not torque.covers(t0, t1):
        raise SeriesError(f"torque signal does not cover [{t0}, {t1}]")
    pv = K.pack_params(params)
    status, n, ts, xs, fs = K.tsit5(x, t0, t1, torque.times, torque.values, pv, rtol, atol,
                                    0.0, 1e-14, max_steps, True)
    ts, xs, fs = ts[:n], xs[:n], fs[:n]
    if status != K.STATUS_OK:
        bad = None
        f_last = rhs_array(xs[-1], float(torque(ts[-1])), params)
        nonfinite = [nm for nm, v in zip(STATE_NAMES, f_last) if not math.isfinite(v)]
        if nonfinite:
            bad = nonfinite[0]
        reason = {K.STATUS_UNDERFLOW: "step size underflow",
                  K.STATUS_NONFINITE: "non-finite right-hand side",
                  K.STATUS_MAXSTEPS: "maximum number of steps exceeded"}[status]
        raise IntegrationError(f"integration failed at t = {ts[-1]:.6g} s: {reason}"
                               + (f" (state {bad})" if bad else ""),
                               t_last=float(ts[-1]), state=bad)
    if t1 < t0:
        ts, xs, fs = ts[::-1], xs[::-1], fs[::-1]
    return state_series(ts, xs, fs)


def integrate_on_grid(params: EspParams, x0, torque: TorqueSignal, times) -> TimeSeries:
    """Tsit5 steps exactly through ``times`` with no error control.

    Meant for replaying the grid of an earlier adaptive run, e.g. for
    finite-difference derivatives with respect to parameters.
    """
    ts = np.asarray(times, dtype=float)
    if ts.ndim != 1 or ts.size == 0 or np.any(np.diff(ts) <= 0):
        raise SeriesError("grid must be a non-empty, strictly increasing time array")
    status, xs, fs = K.tsit5_on_grid(_state_array(x0), ts, torque.times, torque.values,
                                     K.pack_params(params))
    if status != K.STATUS_OK:
        t_last = float(ts[len(xs) - 1])
        raise IntegrationError(f"non-finite state on the fixed grid after t = {t_last:.6g} s",
                               t_last=t_last)
    return state_series(ts, xs, fs)


def terminal_state(params: EspParams, x0, torque: TorqueSignal, t_span, rtol=1e-8,
                   atol=1e-8) -> np.ndarray:
    """Final state only (no trajectory storage)."""
    t0, t1 = map(float, t_span)
    x = _state_array(x0)
    status, n, ts, xs, fs = K.tsit5(x, t0, t1, torque.times, torque.values,
                                    K.pack_params(params), rtol, atol, 0.0, 1e-14,
                                    2_000_000, False)
    if status != K.STATUS_OK:
        raise IntegrationError(f"integration failed at t = {ts[0]:.6g} s (status {status})",
                               t_last=float(ts[0]))
    return xs[0].copy()


def _newton(residual, z0, scale, tol, max_iter, polish: int = 2):
    """Damped Newton with a central-difference Jacobian.

    Once the residual norm is below ``tol`` up to ``polish`` further full
    steps are taken as long as they keep reducing it, which pushes the root
    to the round-off floor.
    """
    z = np.array(z0, dtype=float)
    r = residual(z)
    nrm = np.linalg.norm(r)
    n = z.size
    extra = 0
    for _ in range(max_iter + polish):
        if nrm < tol:
            if extra >= polish:
                break
            extra += 1
        J = np.empty((n, n))
        for j in range(n):
            h = 1e-7 * max(abs(z[j]), scale[j])
            dz = np.zeros(n)
            dz[j] = h
            J[:, j] = (residual(z + dz) - residual(z - dz)) / (2 * h)
        try:
            step = np.linalg.solve(J, -r)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(J, -r, rcond=None)[0]
        lam = 1.0
        while lam > 1e-6:
            z_try = z + lam * step
            r_try = residual(z_try)
            n_try = np.linalg.norm(r_try)
            if np.isfinite(n_try) and n_try < nrm:
                break
            if nrm < tol:
                lam = 0.0
                break
            lam *= 0.5
        if lam <= 1e-6:
            break
        z, r, nrm = z_try, r_try, n_try
    if nrm < tol:
        return z, nrm
    raise ConvergenceError(f"steady-state Newton did not converge (residual {nrm:.3e})",
                           residual=float(nrm))


def scaled_residual(params: EspParams, x, torque) -> np.ndarray:
    """RHS divided by the characteristic state magnitudes (1/s)."""
    return rhs_array(np.asarray(x, float), torque, params) / STATE_SCALES


def default_guess(params: EspParams, torque: float | None = None, omega: float = 300.0
                  ) -> StateVector:
    """Rough operating point: twin-screw displacement flow, pressures from the
    pipeline/pump balances, speed from the shaft balance when torque is given."""
    p = params
    Q = 0.99 * p.twin_screw_displacement
    if torque is not None:
        a = p.k5s
        b = p.k2s * p.rho * Q + p.k3s * p.mu + p.k4s
        c = p.k1s * p.rho * Q ** 2 - torque
        disc = b * b - 4 * a * c
        if disc > 0:
            omega = (-b + math.sqrt(disc)) / (2 * a)
    P2 = 128 / math.pi * p.Ld * p.mu * Q / p.dd ** 4 + p.rho * p.kd * Q ** 2 / (2 * p.Ad ** 2)
    dp = p.k3p * p.mu * Q + p.rho * (p.k1p * omega * Q + p.k2p * omega ** 2 + p.k4p * Q ** 2)
    return StateVector(Q, omega, Q, Q, P2 - dp, P2)


def steady_state(params: EspParams, torque_const: float, guess: StateVector | None = None,
                 tol: float = 1e-11, max_iter: int = 100) -> StateVector:
    """Equilibrium of the model under constant torque (damped Newton)."""
    if guess is None:
        guess = default_guess(params, torque_const)
    z, _ = _newton(lambda x: scaled_residual(params, x, torque_const),
                   _state_array(guess), STATE_SCALES, tol, max_iter)
    return StateVector.from_array(z)


def steady_state_at_speed(params: EspParams, omega: float, guess: StateVector | None = None,
                          tol: float = 1e-11, max_iter: int = 100) -> tuple[StateVector, float]:
    """Equilibrium with prescribed shaft speed; returns (state, required torque)."""
    if guess is None:
        guess = default_guess(params, None, omega)
    g = _state_array(guess)
    p = params
    torque0 = (p.k1s * p.rho * g[0] ** 2 + p.k2s * p.rho * omega * g[0] + p.k3s * p.mu * omega
               + p.k4s * omega + p.k5s * omega ** 2)
    z0 = g.copy()
    z0[1] = torque0

    def res(z):
        x = z.copy()
        x[1] = omega
        return scaled_residual(params, x, z[1])

    scale = STATE_SCALES.copy()
    scale[1] = 50.0
    z, _ = _newton(res, z0, scale, tol, max_iter)
    torque = float(z[1])
    z[1] = omega
    return StateVector.from_array(z), torque


def resample_fixed(traj: TimeSeries, dt: float) -> TimeSeries:
    """Cubic Hermite resampling onto t0, t0 + dt, ...

    Slopes come from the solver derivatives when present, otherwise from
    second-order finite differences.  The final sample lands exactly on the
    last input time when the span is a multiple of dt.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if len(traj) == 0:
        raise SeriesError("cannot resample an empty series")
    t0, t1 = traj.span
    n = int(math.floor((t1 - t0) / dt * (1 + 1e-12) + 1e-9)) + 1
    if n == 1 and t1 > t0:
        warnings.warn("resampling interval exceeds the series span; single sample returned",
                      stacklevel=2)
    grid = t0 + dt * np.arange(n)
    if n > 1 and abs(grid[-1] - t1) <= 1e-9 * max(1.0, abs(t1)):
        grid[-1] = t1
    grid[0] = t0
    out = {}
    out_d = {}
    for name, y in traj.channels.items():
        if len(traj) == 1:
            out[name] = np.full(n, y[0])
            continue
        if traj.derivatives is not None and name in traj.derivatives:
            dy = traj.derivatives[name]
        else:
            dy = np.gradient(y, traj.times, edge_order=2) if len(traj) > 2 else \
                np.full_like(y, (y[1] - y[0]) / (traj.times[1] - traj.times[0]))
        spline = CubicHermiteSpline(traj.times, y, dy)
        vals = spline(grid)
        # exact reproduction at knots
        idx = np.searchsorted(traj.times, grid)
        hit = (idx < len(traj)) & (traj.times[np.minimum(idx, len(traj) - 1)] == grid)
        vals[hit] = y[idx[hit]]
        out[name] = vals
        if traj.derivatives is not None and name in traj.derivatives:
            out_d[name] = spline(grid, 1)
    return TimeSeries(grid, out, dict(traj.units), out_d or None, set(traj.flags))


def add_gaussian_noise(series: TimeSeries, spec: NoiseSpec) -> TimeSeries:
    missing = [c for c in spec.sigma if c not in series.channels]
    if missing:
        raise SeriesError(f"noise spec names unknown channel(s): {', '.join(missing)}")
    rng = np.random.default_rng(spec.seed)
    noisy = {}
    for name, sigma in spec.sigma.items():
        z = rng.standard_normal(len(series))
        noisy[name] = series[name] + sigma * z
    return series.with_channels(noisy)
