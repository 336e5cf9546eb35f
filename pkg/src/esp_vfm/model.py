"""Lumped-element ESP system model.

Six states (pump flow, shaft speed, upstream/downstream pipeline flow, intake
and discharge pressure) driven by the shaft torque.  The right-hand side is
written with plain arithmetic operators only, so the same code evaluates on
floats, on numpy arrays (particle ensembles, finite-difference sweeps) and on
autodiff tensors (PINN residuals).
"""

from __future__ import annotations

import dataclasses
import math
import warnings
from dataclasses import dataclass, field
from importlib import resources
from typing import Any, Mapping

import numpy as np
import yaml

STATE_NAMES = ("Qp", "omega", "Q1", "Q2", "P1", "P2")
STATE_UNITS = ("m3s", "rads", "m3s", "m3s", "Pa", "Pa")

RPM_TO_RADS = math.pi / 30.0

# Symbols of the 26-parameter table, in table order.
TABLE_SYMBOLS = (
    "k1p", "k2p", "k3p", "k4p", "k1s", "k2s", "k3s", "k4s", "k5s", "Is", "B",
    "dd", "Ad", "Ld", "du", "Au", "Lu", "Ap", "Lp",
    "mu", "rho", "ku", "kd", "omega_t", "kbd", "kbl",
)

_POSITIVE = ("Is", "B", "rho", "mu", "du", "Au", "Lu", "dd", "Ad", "Ld", "Ap", "Lp", "rho0")


class ModelError(ValueError):
    """Invalid model input (non-finite state, bad parameter, domain error)."""


class ExtrapolationWarning(UserWarning):
    pass


def _is_scalar_number(v) -> bool:
    return isinstance(v, (int, float, np.floating, np.integer)) and not isinstance(v, bool)


@dataclass(frozen=True)
class EspParams:
    """Full ESP + twin-screw pump + pipeline parameter record (SI units).

    ``omega_t`` is stored in rad/s.  Fields may hold numpy arrays (one entry
    per particle) when the record is used for ensemble propagation; scalar
    validation is skipped for such fields.
    """

    k1p: float
    k2p: float
    k3p: float
    k4p: float
    k1s: float
    k2s: float
    k3s: float
    k4s: float
    k5s: float
    Is: float
    B: float
    rho: float
    mu: float
    ku: float
    kd: float
    kbd: float
    kbl: float
    omega_t: float
    Pin: float
    Pout: float
    du: float
    Au: float
    Lu: float
    dd: float
    Ad: float
    Ld: float
    Ap: float
    Lp: float
    rho0: float = 1000.0
    cv_term_enabled: bool = False
    cv: float | None = None

    def __post_init__(self):
        for name in _POSITIVE:
            v = getattr(self, name)
            if _is_scalar_number(v) and not (math.isfinite(v) and v > 0):
                raise ModelError(f"parameter {name} must be finite and > 0, got {v!r}")
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if _is_scalar_number(v) and not math.isfinite(v):
                raise ModelError(f"parameter {f.name} is not finite: {v!r}")
        if self.cv_term_enabled and not self.cv:
            raise ModelError("cv_term_enabled requires a non-zero valve coefficient cv")

    @classmethod
    def from_diameters(cls, **kw) -> "EspParams":
        """Build a record with pipeline areas computed from the diameters."""
        kw = dict(kw)
        kw.setdefault("Au", math.pi * kw["du"] ** 2 / 4.0)
        kw.setdefault("Ad", math.pi * kw["dd"] ** 2 / 4.0)
        return cls(**kw)

    @classmethod
    def from_preset(cls, investigation: str = "inv1", *, k_reference: bool = False,
                    path: str | None = None) -> "EspParams":
        """Load an investigation preset from the bundled (or given) table file.

        With ``k_reference`` the pump coefficients k3p/k4p are replaced by the
        reference values the estimation results are scored against.
        """
        cfg = load_presets(path)
        return params_from_config(cfg, investigation, k_reference=k_reference)

    def replace(self, **changes) -> "EspParams":
        return dataclasses.replace(self, **changes)

    @property
    def twin_screw_displacement(self):
        """Twin-screw pump displacement flow (m^3/s): speed in rpm over k_bd."""
        return self.omega_t / RPM_TO_RADS / self.kbd

    def to_config(self) -> dict:
        """Serialise to the {symbol: {value, unit}} layout in SI units."""
        out = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if f.name in ("cv_term_enabled",):
                out[f.name] = bool(v)
            elif f.name == "cv":
                if v is not None:
                    out[f.name] = {"value": float(v), "unit": "1"}
            else:
                out[f.name] = {"value": float(v), "unit": _SI_UNITS[f.name]}
        return out

    @classmethod
    def from_config(cls, cfg: Mapping[str, Any]) -> "EspParams":
        kw = {}
        for name, entry in cfg.items():
            if name == "cv_term_enabled":
                kw[name] = bool(entry)
            else:
                kw[name] = _to_si(name, entry)
        return cls(**kw)


_SI_UNITS = {
    "k1p": "1/m", "k2p": "m^2", "k3p": "1/m^3", "k4p": "1/m^4",
    "k1s": "s/m^2", "k2s": "m*s", "k3s": "m^2*s", "k4s": "kg*m", "k5s": "kg*m*s",
    "Is": "kg*m^2", "B": "Pa", "rho": "kg/m^3", "mu": "Pa*s", "ku": "1", "kd": "1",
    "kbd": "m", "kbl": "m", "omega_t": "rad/s", "Pin": "Pa", "Pout": "Pa",
    "du": "m", "Au": "m^2", "Lu": "m", "dd": "m", "Ad": "m^2", "Ld": "m",
    "Ap": "m^2", "Lp": "m", "rho0": "kg/m^3", "cv": "1",
}


def _to_si(name: str, entry) -> float:
    if not isinstance(entry, Mapping):
        return float(entry)
    value = float(entry["value"])
    unit = str(entry.get("unit", ""))
    if unit == "rpm":
        return value * RPM_TO_RADS
    if unit == "degC":
        return value
    return value


def load_presets(path: str | None = None) -> dict:
    if path is None:
        text = resources.files("esp_vfm").joinpath("data/presets.yaml").read_text("utf-8")
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    return yaml.safe_load(text)


def params_from_config(cfg: Mapping, investigation: str = "inv1", *,
                       k_reference: bool = False) -> EspParams:
    inv = cfg["investigations"].get(investigation)
    if inv is None:
        raise ModelError(f"unknown investigation preset {investigation!r}")
    kw = {k: _to_si(k, v) for k, v in cfg["esp"].items()}
    kw.update({k: _to_si(k, v) for k, v in inv.items() if k != "test"})
    if k_reference:
        kw.update({k: _to_si(k, v) for k, v in cfg.get("reference", {}).items()})
    return EspParams(**kw)


def operating_conditions(investigation: str = "inv1", path: str | None = None) -> dict:
    """Operating conditions of an investigation (initial/final speed, water
    fraction, temperature) as plain floats."""
    inv = load_presets(path)["investigations"][investigation]
    return {k: _to_si(k, v) for k, v in inv["test"].items()}


@dataclass(frozen=True)
class StateVector:
    Qp: float
    omega: float
    Q1: float
    Q2: float
    P1: float
    P2: float

    def __post_init__(self):
        for name in STATE_NAMES:
            v = getattr(self, name)
            if _is_scalar_number(v) and not math.isfinite(v):
                raise ModelError(f"state {name} is not finite: {v!r}")

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in STATE_NAMES], dtype=float)

    @classmethod
    def from_array(cls, x) -> "StateVector":
        x = np.asarray(x, dtype=float)
        if x.shape != (6,):
            raise ModelError(f"state array must have shape (6,), got {x.shape}")
        return cls(*map(float, x))


@dataclass(frozen=True)
class FluidSpec:
    water_fraction: float
    temperature: float
    continuous_viscosity: float | None = field(default=None)

    def __post_init__(self):
        if not (0.0 <= self.water_fraction < 1.0):
            raise ModelError(f"water fraction must lie in [0, 1), got {self.water_fraction}")

    def effective_viscosity(self) -> float:
        mu_c = self.continuous_viscosity
        if mu_c is None:
            mu_c = oil_viscosity_at_temperature(self.temperature)
        return brinkman_viscosity(mu_c, self.water_fraction)


def laminar_friction(Q, mu, L, d):
    """Laminar Darcy-Weisbach loss ``f_f(Q) * Q**2`` in product form (Pa).

    Returned as ``128 L mu Q / (pi d^4)`` so that it is linear in Q and
    finite at Q = 0.
    """
    return (128.0 / math.pi) * L * mu * Q / d ** 4


def brinkman_viscosity(mu_c: float, omega_frac: float) -> float:
    if not (0.0 <= omega_frac < 1.0):
        raise ModelError(f"water fraction must lie in [0, 1), got {omega_frac}")
    if mu_c <= 0:
        raise ModelError("continuous-phase viscosity must be positive")
    return mu_c * (1.0 / (1.0 - omega_frac)) ** 2.5


_VISC_POLY = (0.00026436, -0.04864, 3.436, -114.28, 1610.3)


def oil_viscosity_at_temperature(T: float) -> float:
    """Oil viscosity (Pa s) from the rheometer quartic fit, valid 10-60 degC."""
    if not 10.0 <= T <= 60.0:
        warnings.warn(f"T = {T} degC is outside the fitted 10-60 degC range",
                      ExtrapolationWarning, stacklevel=2)
    return float(np.polyval(_VISC_POLY, T)) / 1000.0


def rhs_terms(Qp, omega, Q1, Q2, P1, P2, torque, p):
    """Time derivatives of the six states.

    ``p`` is any object exposing the EspParams attributes; its fields and the
    states may be floats, arrays or autodiff tensors.
    """
    dQp = (P1 - P2 + p.k3p * p.mu * Qp) * p.Ap / (p.rho * p.Lp) \
        + p.Ap * (p.k1p * omega * Qp + p.k2p * omega ** 2 + p.k4p * Qp ** 2) / p.Lp
    domega = (torque - p.k1s * p.rho * Qp ** 2 - p.k2s * p.rho * omega * Qp
              - p.k3s * p.mu * omega - p.k4s * omega - p.k5s * omega ** 2) / p.Is
    boost = (p.omega_t / RPM_TO_RADS / p.kbd - Q1) * p.kbl * p.mu
    dQ1 = (boost + p.Pin - P1 - laminar_friction(Q1, p.mu, p.Lu, p.du)) * p.Au / (p.rho * p.Lu) \
        - p.ku * Q1 ** 2 / (2.0 * p.Lu * p.Au)
    dQ2 = (P2 - p.Pout - laminar_friction(Q2, p.mu, p.Ld, p.dd)) * p.Ad / (p.rho * p.Ld) \
        - p.kd * Q2 ** 2 / (2.0 * p.Ld * p.Ad)
    if p.cv_term_enabled:
        dQ2 = dQ2 - Q2 * p.Ad / (p.Ld * p.cv ** 2 * p.rho0)
    dP1 = (Q1 - Qp) * p.B / (p.Au * p.Lu)
    dP2 = (Qp - Q2) * p.B / (p.Ad * p.Ld)
    return dQp, domega, dQ1, dQ2, dP1, dP2


def rhs_array(x: np.ndarray, torque, params: EspParams) -> np.ndarray:
    """Vectorised RHS on arrays of shape (..., 6)."""
    d = rhs_terms(x[..., 0], x[..., 1], x[..., 2], x[..., 3], x[..., 4], x[..., 5],
                  torque, params)
    return np.stack(np.broadcast_arrays(*d), axis=-1)


def esp_rhs(state: StateVector, torque: float, params: EspParams) -> StateVector:
    for name in STATE_NAMES:
        if not math.isfinite(getattr(state, name)):
            raise ModelError(f"state {name} is not finite")
    if not math.isfinite(torque):
        raise ModelError("torque is not finite")
    d = rhs_terms(*(getattr(state, n) for n in STATE_NAMES), torque, params)
    return StateVector(*map(float, d))


# Characteristic magnitudes used to nondimensionalise residuals.
STATE_SCALES = np.array([1e-2, 3e2, 1e-2, 1e-2, 1e5, 1e5])
