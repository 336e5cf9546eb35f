"""Synthetic test scenarios: a speed step on one of the two rig presets,
simulated from a steady operating point and sampled on the 0.5 s grid."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dsp import FilterDesign
from .model import STATE_NAMES, EspParams, StateVector, operating_conditions
from .sim import (NoiseSpec, TorqueSignal, add_gaussian_noise, integrate, resample_fixed,
                  steady_state_at_speed)
from .timeseries import TimeSeries

DATA_DT = 0.5
STEP_TIME = 5.0
TORQUE_FS = 250.0
TORQUE_CUTOFF = 2.0
# number of 0.5 s data points per scenario kind
DATA_POINTS = {"simulated": 30, "noisy": 37}


@dataclass
class Scenario:
    investigation: str
    kind: str
    params: EspParams
    x0: StateVector
    torque: TorqueSignal
    truth: TimeSeries           # all six states on the data grid
    measurements: TimeSeries    # P1/P2 as observed (noisy for kind="noisy")
    trajectory: TimeSeries      # solver output (accepted steps)

    @property
    def t_span(self) -> tuple[float, float]:
        return self.truth.span


def investigation_key(inv) -> str:
    s = str(inv)
    return s if s.startswith("inv") else f"inv{s}"


def step_torque(gamma_i: float, gamma_f: float, t_end: float, t_step: float = STEP_TIME,
                fs: float = TORQUE_FS, cutoff: float = TORQUE_CUTOFF) -> TorqueSignal:
    """Torque step smoothed by the order-8 low-pass used for the measured
    torque.  The filter starts in its steady state at ``gamma_i``."""
    from scipy import signal

    n = int(np.ceil(t_end * fs)) + 1
    t = np.arange(n) / fs
    raw = np.where(t >= t_step, gamma_f - gamma_i, 0.0)
    design = FilterDesign(8, cutoff, fs)
    smooth = signal.sosfilt(design.sos, raw) + gamma_i
    return TorqueSignal.from_arrays(t, smooth)


def build_scenario(investigation="inv1", kind: str = "simulated", noise_seed: int = 0,
                   params: EspParams | None = None, n_points: int | None = None,
                   noise_sigma: float | None = None) -> Scenario:
    """Simulate a speed-step experiment.

    ``params`` defaults to the investigation preset with the reference pump
    coefficients.  The initial and final torques are the steady-state torques
    at the investigation's initial and final shaft speeds.
    """
    inv = investigation_key(investigation)
    if kind not in DATA_POINTS:
        raise ValueError(f"unknown scenario kind {kind!r}; expected one of {sorted(DATA_POINTS)}")
    if params is None:
        params = EspParams.from_preset(inv, k_reference=True)
    oc = operating_conditions(inv)
    n = n_points or DATA_POINTS[kind]
    t_end = DATA_DT * (n - 1)
    x0, g_i = steady_state_at_speed(params, oc["omega_initial"])
    _, g_f = steady_state_at_speed(params, oc["omega_final"])
    torque = step_torque(g_i, g_f, t_end + 1.0)
    traj = integrate(params, x0, torque, (0.0, t_end))
    truth = resample_fixed(traj, DATA_DT)
    meas = truth.select(["P1", "P2"])
    meas.derivatives = None
    if kind == "noisy":
        sigma = NoiseSpec().sigma if noise_sigma is None else {"P1": noise_sigma,
                                                                "P2": noise_sigma}
        meas = add_gaussian_noise(meas, NoiseSpec(sigma, noise_seed))
    return Scenario(inv, kind, params, x0, torque, truth, meas, traj)


def truth_matrix(sc: Scenario) -> np.ndarray:
    return sc.truth.matrix(STATE_NAMES)
