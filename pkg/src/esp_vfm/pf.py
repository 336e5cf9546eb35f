"""Sequential importance resampling filter over states and parameters.

Each particle carries the six states plus its own copy of the unknown
parameters.  Parameters have no dynamics of their own; they only move
when a resampled particle is jittered.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels as K
from .model import STATE_NAMES, EspParams
from .sim import PRESSURE_SIGMA_PA, TorqueSignal, state_series
from .timeseries import SeriesError, TimeSeries

log = logging.getLogger(__name__)


class PfError(RuntimeError):
    pass


@dataclass(frozen=True)
class PfConfig:
    n_particles: int = 200
    ess_threshold: float = 50.0
    resample_jitter_std: float = 0.03     # relative, applied per component
    process_noise: float = 0.0
    init_span: float = 0.5                # uniform +/- fraction around nominal
    sigma: dict = field(default_factory=lambda: {"P1": PRESSURE_SIGMA_PA,
                                                  "P2": PRESSURE_SIGMA_PA})
    rtol: float = 1e-6
    atol: float = 1e-8
    max_steps: int = 200_000
    max_fail_fraction: float = 0.5

    def __post_init__(self):
        if self.n_particles < 1:
            raise ValueError("need at least one particle")
        if not 0 < self.ess_threshold <= self.n_particles:
            raise ValueError("ess_threshold must lie in (0, N]")
        if self.resample_jitter_std < 0 or self.init_span < 0:
            raise ValueError("jitter and initial span must be non-negative")
        if self.process_noise != 0:
            raise ValueError("only zero process noise is supported")
        if any(s <= 0 for s in self.sigma.values()):
            raise ValueError("measurement sigma must be positive")

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["jitter_mode"] = "relative (multiplicative N(1, std) per component)"
        return d


@dataclass
class ParticleEnsemble:
    states: np.ndarray        # (N, 6)
    params: np.ndarray        # (N, k)
    weights: np.ndarray       # (N,), normalized

    def __post_init__(self):
        n = self.states.shape[0]
        if self.params.shape[0] != n or self.weights.shape != (n,):
            raise ValueError("states, params and weights disagree on N")

    @property
    def n(self) -> int:
        return self.states.shape[0]

    def augmented(self) -> np.ndarray:
        return np.hstack([self.states, self.params])

    def mean(self) -> np.ndarray:
        return self.weights @ self.augmented()


def effective_sample_size(weights) -> float:
    w = np.asarray(weights, float)
    return float(1.0 / np.dot(w, w))


def normalize_log_weights(logw: np.ndarray) -> np.ndarray:
    """Normalized weights from log weights; -inf entries get weight 0."""
    m = np.max(logw)
    if not np.isfinite(m):
        raise PfError("every particle has zero likelihood")
    w = np.exp(logw - m)
    w /= w.sum()
    # one more pass pins the sum to 1 within rounding
    return w / w.sum()


def systematic_indices(weights, rng: np.random.Generator) -> np.ndarray:
    n = len(weights)
    positions = (rng.random() + np.arange(n)) / n
    cum = np.cumsum(weights)
    cum[-1] = 1.0
    return np.searchsorted(cum, positions, side="right").clip(0, n - 1)


def resample(ens: ParticleEnsemble, jitter_std: float, rng: np.random.Generator
             ) -> ParticleEnsemble:
    idx = systematic_indices(ens.weights, rng)
    u = ens.augmented()[idx]
    if jitter_std > 0:
        u = u * rng.normal(1.0, jitter_std, size=u.shape)
    n = ens.n
    return ParticleEnsemble(u[:, :6].copy(), u[:, 6:].copy(), np.full(n, 1.0 / n))


def log_likelihood(pred: np.ndarray, y: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    """Gaussian log-likelihood (up to a constant) of each row of ``pred``."""
    r = (pred - y) / sigma
    return -0.5 * np.sum(r * r, axis=-1)


@dataclass
class PfResult:
    times: np.ndarray
    mean: np.ndarray              # (n_times, 6 + k) weighted means
    names: tuple
    ess: np.ndarray
    resampled: np.ndarray
    failures: np.ndarray
    config: PfConfig
    seed: int

    @property
    def estimates(self) -> dict:
        return {n: float(v) for n, v in zip(self.names, self.mean[-1, 6:])}

    def states(self) -> TimeSeries:
        return state_series(self.times, self.mean[:, :6])

    def parameter_history(self) -> TimeSeries:
        return TimeSeries(self.times, {n: self.mean[:, 6 + i] for i, n in enumerate(self.names)})

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        self.states().to_csv(out / "pf_states.csv")
        TimeSeries(self.times, {"ess": self.ess, "resampled": self.resampled.astype(float),
                                "failures": self.failures.astype(float)}).to_csv(out / "pf_ess.csv")
        (out / "pf.json").write_text(json.dumps({"estimates": self.estimates, "seed": self.seed,
                                                 "config": self.config.to_dict()}, indent=1))


def initial_ensemble(config: PfConfig, x0, nominal: np.ndarray, rng: np.random.Generator
                     ) -> ParticleEnsemble:
    n = config.n_particles
    span = config.init_span
    params = nominal * rng.uniform(1.0 - span, 1.0 + span, size=(n, len(nominal)))
    states = np.tile(np.asarray(x0, float), (n, 1))
    return ParticleEnsemble(states, params, np.full(n, 1.0 / n))


def pf_run(config: PfConfig, known: EspParams, unknown: dict, measurements: TimeSeries,
           torque: TorqueSignal, x0, seed: int = 0) -> PfResult:
    """Filter the measured channels and return per-step weighted means.

    ``unknown`` maps parameter names to the nominal values around which the
    initial particles are drawn.  ``x0`` is the known initial state.
    """
    names = tuple(unknown)
    bad = [n for n in names if n not in K.PVEC_INDEX]
    if bad:
        raise ValueError(f"unknown parameters not in the model: {bad}")
    channels = [c for c in config.sigma if c in measurements.channels]
    if not channels:
        raise SeriesError("measurements contain none of the configured channels")
    if len(measurements) > 2 and not measurements.is_uniform(jitter=1e-9):
        raise SeriesError("particle filter needs uniformly sampled measurements")
    obs_idx = [STATE_NAMES.index(c) for c in channels]
    sigma = np.array([config.sigma[c] for c in channels])
    y = measurements.matrix(channels)
    times = measurements.times
    x0 = np.asarray(x0.as_array() if hasattr(x0, "as_array") else x0, float)

    rng = np.random.Generator(np.random.Philox(seed))
    nominal = np.array([float(unknown[n]) for n in names])
    ens = initial_ensemble(config, x0, nominal, rng)
    base = K.pack_params(known)
    cols = [K.PVEC_INDEX[n] for n in names]
    tt, gg = torque.times, torque.values

    n_t = len(times)
    means = np.empty((n_t, 6 + len(names)))
    ess = np.empty(n_t)
    resampled = np.zeros(n_t, bool)
    failures = np.zeros(n_t, int)
    means[0] = ens.mean()
    ess[0] = effective_sample_size(ens.weights)
    for k in range(1, n_t):
        P = np.tile(base, (ens.n, 1))
        P[:, cols] = ens.params
        X, status = K.propagate_ensemble(ens.states, float(times[k - 1]), float(times[k]),
                                         tt, gg, P, config.rtol, config.atol, config.max_steps)
        ok = (status == K.STATUS_OK) & np.all(np.isfinite(X), axis=1)
        failures[k] = int((~ok).sum())
        if failures[k] > config.max_fail_fraction * ens.n:
            raise PfError(f"{failures[k]} of {ens.n} particles failed to integrate "
                          f"between t={times[k - 1]:g} and t={times[k]:g}")
        X = np.where(ok[:, None], X, ens.states)
        logw = np.log(ens.weights, where=ens.weights > 0, out=np.full(ens.n, -np.inf))
        logw = logw + log_likelihood(X[:, obs_idx], y[k], sigma)
        logw[~ok] = -np.inf
        ens = ParticleEnsemble(X, ens.params, normalize_log_weights(logw))
        ess[k] = effective_sample_size(ens.weights)
        if ess[k] < config.ess_threshold:
            ens = resample(ens, config.resample_jitter_std, rng)
            resampled[k] = True
        means[k] = ens.mean()
    return PfResult(times, means, names, ess, resampled, failures, config, seed)


__all__ = ["PfError", "PfConfig", "ParticleEnsemble", "PfResult", "effective_sample_size",
           "normalize_log_weights", "systematic_indices", "resample", "log_likelihood",
           "initial_ensemble", "pf_run"]
