"""Practical identifiability from output sensitivities.

Sensitivities are central finite differences of simulated outputs; the
Fisher information, covariance and correlation matrices follow from them
under a relative measurement-noise model.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .model import EspParams, StateVector
from .sim import (ConvergenceError, IntegrationError, TorqueSignal, integrate,
                  integrate_on_grid, resample_fixed, steady_state)

SET_12 = ("k1p", "k2p", "k3p", "k4p", "k1s", "k2s", "k5s", "rho", "mu", "B", "ku", "kd")
SET_8 = ("B", "mu", "rho", "ku", "kd", "k4p", "k1s", "k5s")
SET_15 = SET_12 + ("Is", "k3s", "k4s")

# Symbols describing the pump and the shaft; these are fixed first when a
# correlated pair has to be broken.
PUMP_SHAFT = ("k1p", "k2p", "k3p", "k4p", "k1s", "k2s", "k3s", "k4s", "k5s", "Is")


class SensitivityError(RuntimeError):
    pass


@dataclass
class ObservationScenario:
    """What is measured, when, and under which input.

    With ``equilibrium_start`` (the default) the run starts from the steady
    state of the parameters being evaluated under the initial torque, as a
    rig that has settled before acquisition does; ``x0`` then only seeds the
    Newton solve.  Otherwise ``x0`` is used as given for every run.
    """

    x0: StateVector
    torque: TorqueSignal
    times: np.ndarray
    observed: tuple[str, ...] = ("P1", "P2")
    equilibrium_start: bool = True

    def initial_state(self, params: EspParams) -> StateVector:
        if not self.equilibrium_start:
            return self.x0
        return steady_state(params, float(self.torque(float(self.times[0]))), guess=self.x0)


@dataclass
class SensitivityMatrix:
    S: np.ndarray                 # (n_times * n_observed, n_params)
    y: np.ndarray                 # nominal outputs, same row order
    params: tuple[str, ...]
    observed: tuple[str, ...]
    times: np.ndarray
    one_sided_agreement: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.S.shape[0] != len(self.times) * len(self.observed):
            raise ValueError("row count must equal n_times * n_observed")
        if not np.all(np.isfinite(self.S)):
            raise ValueError("sensitivity matrix contains non-finite entries")


def _sample(traj, scenario: ObservationScenario) -> np.ndarray:
    t = np.asarray(scenario.times, float)
    if len(t) > 1 and not np.allclose(np.diff(t), t[1] - t[0]):
        raise ValueError("observation grid must be uniform")
    dense = resample_fixed(traj, float(t[1] - t[0])) if len(t) > 1 else traj
    return np.column_stack([dense[n][:len(t)] for n in scenario.observed]).ravel()


def simulate_outputs(params: EspParams, scenario: ObservationScenario, rtol: float = 1e-10,
                     atol: float = 1e-10, step_grid: np.ndarray | None = None) -> np.ndarray:
    """Observed channels on the scenario grid, stacked time-major.

    With ``step_grid`` the solver replays those steps instead of choosing
    its own.
    """
    t = np.asarray(scenario.times, float)
    if step_grid is None:
        traj = integrate(params, scenario.initial_state(params), scenario.torque,
                         (float(t[0]), float(t[-1])), rtol=rtol, atol=atol)
    else:
        traj = integrate_on_grid(params, scenario.initial_state(params), scenario.torque,
                                 step_grid)
    return _sample(traj, scenario)


def _column(args):
    params, scenario, name, h_rel, grid = args
    theta = float(getattr(params, name))
    h = max(h_rel * abs(theta), 1e-12)
    out = {}
    for sign in (+1, -1):
        try:
            out[sign] = simulate_outputs(params.replace(**{name: theta + sign * h}), scenario,
                                         step_grid=grid)
        except (IntegrationError, ConvergenceError) as exc:
            direction = "+" if sign > 0 else "-"
            raise SensitivityError(f"integration failed for {name} perturbed {direction}h: "
                                   f"{exc}") from exc
    return name, h, out[+1], out[-1]


def output_sensitivities(params: EspParams, subset, scenario: ObservationScenario,
                         h_rel: float = 1e-6, step: float = 2.5e-4, workers: int = 1,
                         check_tol: float = 1e-3) -> SensitivityMatrix:
    """Central-difference sensitivities of the observed outputs.

    All runs (nominal and perturbed) use the same uniform Tsit5 step grid,
    so the differences carry no step-selection noise.  ``step`` must stay
    inside the explicit stability limit of the fastest mode (about 7e-4 s
    for the rig presets).

    Each column is also formed from the forward and backward one-sided
    quotients; their relative agreement with the central value (in the
    column 2-norm) is stored in ``one_sided_agreement`` and a column that
    disagrees by more than ``check_tol`` raises.
    """
    subset = tuple(subset)
    if not subset:
        raise ValueError("parameter subset is empty")
    for name in subset:
        if not hasattr(params, name):
            raise ValueError(f"unknown parameter {name!r}")
    t = np.asarray(scenario.times, float)
    n_steps = max(1, int(math.ceil((t[-1] - t[0]) / step - 1e-9)))
    grid = np.linspace(t[0], t[-1], n_steps + 1)
    y0 = simulate_outputs(params, scenario, step_grid=grid)
    jobs = [(params, scenario, n, h_rel, grid) for n in subset]
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            results = list(ex.map(_column, jobs))
    else:
        results = [_column(j) for j in jobs]
    S = np.empty((y0.size, len(subset)))
    agree = np.empty(len(subset))
    for j, (name, h, yp, ym) in enumerate(results):
        central = (yp - ym) / (2 * h)
        fwd = (yp - y0) / h
        bwd = (y0 - ym) / h
        scale = max(np.linalg.norm(central), 1e-300)
        agree[j] = max(np.linalg.norm(fwd - central), np.linalg.norm(bwd - central)) / scale
        if np.linalg.norm(central) > 0 and agree[j] > check_tol:
            raise SensitivityError(f"one-sided differences for {name} disagree with the "
                                   f"central value by {agree[j]:.2e}")
        S[:, j] = central
    return SensitivityMatrix(S, y0, subset, tuple(scenario.observed),
                             np.asarray(scenario.times, float), agree)


def fisher_information(S: SensitivityMatrix | np.ndarray, sigma) -> np.ndarray:
    """FIM = sum over rows of s s^T / sigma^2, accumulated in long double.

    ``sigma`` is either one value per row or a scalar.
    """
    mat = S.S if isinstance(S, SensitivityMatrix) else np.asarray(S, float)
    mat = np.atleast_2d(mat)
    sig = np.broadcast_to(np.asarray(sigma, float), (mat.shape[0],))
    if np.any(sig <= 0) or not np.all(np.isfinite(sig)):
        raise ValueError("measurement noise sigma must be positive and finite")
    w = (mat.astype(np.longdouble) / sig.astype(np.longdouble)[:, None])
    fim = w.T @ w
    fim = np.asarray(fim, dtype=float)
    return 0.5 * (fim + fim.T)


def relative_noise(S: SensitivityMatrix, level: float = 0.01) -> np.ndarray:
    """Per-row sigma equal to ``level`` times the nominal output magnitude."""
    return level * np.abs(S.y)


@dataclass
class IdentifiabilityReport:
    params: tuple[str, ...]
    fim: np.ndarray
    covariance: np.ndarray
    correlation: np.ndarray
    rank: int
    condition_number: float
    flagged: list[tuple[str, str, float]]
    fix_order: list[str]
    weak_directions: int = 0

    @property
    def rank_deficient(self) -> bool:
        return self.rank < len(self.params)

    def r(self, a: str, b: str) -> float:
        i, j = self.params.index(a), self.params.index(b)
        return float(self.correlation[i, j])

    def to_json(self) -> dict:
        return {
            "params": list(self.params),
            "fim": self.fim.tolist(),
            "covariance": self.covariance.tolist(),
            "correlation": self.correlation.tolist(),
            "rank": self.rank,
            "rank_deficient": self.rank_deficient,
            "weak_directions": self.weak_directions,
            "condition_number": self.condition_number,
            "flagged": [{"a": a, "b": b, "r": r} for a, b, r in self.flagged],
            "fix_order": self.fix_order,
        }

    def write(self, json_path, csv_path=None) -> None:
        with open(json_path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=2)
        if csv_path is not None:
            with open(csv_path, "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh)
                w.writerow([""] + list(self.params))
                for name, row in zip(self.params, np.abs(self.correlation)):
                    w.writerow([name] + [repr(float(v)) for v in row])


def covariance(fim: np.ndarray, cutoff: float = 1e-12) -> tuple[np.ndarray, int, float]:
    """Pseudo-inverse of a symmetric FIM with a relative eigenvalue cutoff.

    Returns (C, numerical rank, condition number of the equilibrated FIM)."""
    fim = np.asarray(fim, float)
    # Work on the unit-diagonal (equilibrated) matrix so the cutoff and the
    # condition number do not depend on the parameters' units.
    d = np.sqrt(np.abs(np.diag(fim)))
    d[d == 0] = 1.0
    F = fim / np.outer(d, d)
    lam, V = np.linalg.eigh(0.5 * (F + F.T))
    lam_max = float(np.max(np.abs(lam))) if lam.size else 0.0
    keep = lam > cutoff * lam_max
    rank = int(np.count_nonzero(keep))
    inv = np.zeros_like(lam)
    inv[keep] = 1.0 / lam[keep]
    C = ((V * inv) @ V.T) / np.outer(d, d)
    lam_min = float(np.min(lam)) if lam.size else 0.0
    cond = lam_max / lam_min if lam_min > 0 else math.inf
    return C, rank, cond


def correlation_matrix(fim: np.ndarray, cutoff: float = 1e-12) -> np.ndarray:
    """Correlation matrix of C = FIM^-1 with an exact unit diagonal.

    A singular FIM raises ``np.linalg.LinAlgError`` carrying the rank; use
    ``analyze`` to get a report in that case instead.
    """
    C, rank, _ = covariance(fim, cutoff)
    if rank < C.shape[0]:
        raise np.linalg.LinAlgError(f"FIM is rank deficient (rank {rank} of {C.shape[0]})")
    return _corr_from_cov(C)


def _corr_from_cov(C: np.ndarray) -> np.ndarray:
    d = np.sqrt(np.abs(np.diag(C)))
    with np.errstate(divide="ignore", invalid="ignore"):
        R = C / np.outer(d, d)
    R[~np.isfinite(R)] = 0.0
    R = np.clip(0.5 * (R + R.T), -1.0, 1.0)
    np.fill_diagonal(R, 1.0)
    return R


def identifiable_partition(R: np.ndarray, names, threshold: float = 0.95
                           ) -> tuple[list[tuple[str, str, float]], list[str]]:
    """Strongly correlated pairs (sorted by |r|, descending) and a greedy
    order in which to fix parameters until no flagged pair remains.

    Each round fixes the parameter involved in most remaining pairs; ties go
    to pump/shaft symbols, then to the larger summed |r|.
    """
    names = list(names)
    k = len(names)
    pairs = [(names[i], names[j], float(R[i, j]))
             for i in range(k) for j in range(i + 1, k) if abs(R[i, j]) >= threshold]
    pairs.sort(key=lambda p: -abs(p[2]))
    remaining = list(pairs)
    order: list[str] = []
    while remaining:
        count: dict[str, int] = {}
        weight: dict[str, float] = {}
        for a, b, r in remaining:
            for s in (a, b):
                count[s] = count.get(s, 0) + 1
                weight[s] = weight.get(s, 0.0) + abs(r)
        best = max(count, key=lambda s: (count[s], s in PUMP_SHAFT, weight[s], -names.index(s)))
        order.append(best)
        remaining = [p for p in remaining if best not in p[:2]]
    return pairs, order


def analyze(S: SensitivityMatrix, noise_level: float = 0.01, threshold: float = 0.95,
            weak_cutoff: float = 1e-12) -> IdentifiabilityReport:
    """FIM, covariance and correlation under ``noise_level`` relative noise.

    The covariance comes from the SVD of the whitened, column-equilibrated
    sensitivities rather than from inverting the formed FIM: squaring
    doubles the exponent range, and FIM eigenvalues far below 1e-12 of the
    largest are still well resolved this way.  ``rank`` uses the usual
    matrix-rank tolerance on the singular values; ``weak_directions`` counts
    FIM eigenvalues below ``weak_cutoff`` of the largest.
    """
    sigma = relative_noise(S, noise_level)
    fim = fisher_information(S, sigma)
    W = S.S / sigma[:, None]
    d = np.linalg.norm(W, axis=0)
    d[d == 0] = 1.0
    _, sv, Vt = np.linalg.svd(W / d, full_matrices=False)
    tol = sv[0] * max(W.shape) * np.finfo(float).eps if sv.size else 0.0
    keep = sv > tol
    rank = int(np.count_nonzero(keep))
    inv = np.zeros_like(sv)
    inv[keep] = 1.0 / sv[keep] ** 2
    C = ((Vt.T * inv) @ Vt) / np.outer(d, d)
    cond = float((sv[0] / sv[-1]) ** 2) if sv[-1] > 0 else math.inf
    weak = int(np.count_nonzero(sv ** 2 < weak_cutoff * sv[0] ** 2))
    R = _corr_from_cov(C)
    flagged, order = identifiable_partition(R, S.params, threshold)
    return IdentifiabilityReport(S.params, fim, C, R, rank, cond, flagged, order, weak)


def scenario_from(sc) -> ObservationScenario:
    """Observation setting (P1, P2 on the data grid) of a simulated scenario."""
    return ObservationScenario(sc.x0, sc.torque, sc.truth.times.copy(), ("P1", "P2"))


__all__ = [
    "SET_12", "SET_8", "SET_15", "ObservationScenario", "SensitivityMatrix",
    "IdentifiabilityReport", "SensitivityError", "output_sensitivities",
    "fisher_information", "correlation_matrix", "covariance", "identifiable_partition",
    "analyze", "simulate_outputs", "scenario_from", "relative_noise",
]
