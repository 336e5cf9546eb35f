"""Physics-informed network for joint state and parameter estimation.

The network maps scaled time to the six states.  Its outputs are stretched
to physical ranges by an affine map whose bounds come from the measured
pressures, then converted to engineering units (m3/h, metres of water
column) before the ODE residuals, data misfit and initial-condition misfit
are formed.  Unknown parameters are trainable through fixed transforms, and
every loss term carries a trainable weight that is pushed *up* the loss
gradient while the network and parameters descend it.
"""

from __future__ import annotations

import copy
import json
import logging
import math
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from . import autodiff as ad
from .model import STATE_NAMES, EspParams, rhs_terms
from .nn import AdamState, MlpParams, adam_step, glorot_init, mlp_forward, mlp_with_derivative
from .sim import ConvergenceError, TorqueSignal, state_series
from .timeseries import SeriesError, TimeSeries

log = logging.getLogger(__name__)

PA_PER_MWC = 9806.65
M3H_PER_M3S = 3600.0
# SI -> engineering units, per state
ENG_FACTORS = np.array([M3H_PER_M3S, 1.0, M3H_PER_M3S, M3H_PER_M3S,
                        1.0 / PA_PER_MWC, 1.0 / PA_PER_MWC])
MEASURED = ("P1", "P2")
PUMP_BOUND_PARAMS = ("k1p", "k2p", "k4p", "k1s", "k2s")
SCENARIO_GROUP = {"simulated": "sim", "noisy": "sim", "experimental": "exp",
                  "sim": "sim", "exp": "exp"}


class PinnError(RuntimeError):
    pass


class TrainingDiverged(PinnError):
    def __init__(self, message, epoch=None, checkpoint=None):
        super().__init__(message)
        self.epoch = epoch
        self.checkpoint = checkpoint


def to_engineering(x_si: np.ndarray) -> np.ndarray:
    return np.asarray(x_si, float) * ENG_FACTORS


def to_si(x_eng: np.ndarray) -> np.ndarray:
    return np.asarray(x_eng, float) / ENG_FACTORS


def load_pinn_config(path=None) -> dict:
    if path is None:
        text = resources.files("esp_vfm.data").joinpath("pinn.yaml").read_text()
    else:
        text = Path(path).read_text()
    return yaml.safe_load(text)


# output scaling -----------------------------------------------------------

@dataclass(frozen=True)
class ScalingBounds:
    """Per-state [x_min, x_max] in SI units, ordered as STATE_NAMES."""

    lo: tuple
    hi: tuple

    def __post_init__(self):
        lo, hi = np.asarray(self.lo, float), np.asarray(self.hi, float)
        if lo.shape != (6,) or hi.shape != (6,):
            raise ValueError("bounds need one entry per state")
        bad = [STATE_NAMES[i] for i in range(6) if not lo[i] < hi[i]]
        if bad:
            raise ValueError(f"x_min must be below x_max for {bad}")
        object.__setattr__(self, "lo", tuple(map(float, lo)))
        object.__setattr__(self, "hi", tuple(map(float, hi)))

    @property
    def half_range(self) -> np.ndarray:
        return (np.array(self.hi) - np.array(self.lo)) / 2.0

    def to_dict(self) -> dict:
        return {n: [a, b] for n, a, b in zip(STATE_NAMES, self.lo, self.hi)}


def output_scale(raw, bounds: ScalingBounds):
    """(raw + 1)(x_max - x_min)/2 + x_min, column-wise; works on Tensors."""
    lo = np.array(bounds.lo)
    if isinstance(raw, ad.Tensor):
        return (raw + 1.0) * bounds.half_range + lo
    return (np.asarray(raw, float) + 1.0) * bounds.half_range + lo


def solve_bounds_system(dp: float, torque: float, p, rho: float, guess=(300.0, 0.01),
                        tol: float = 1e-12, max_iter: int = 60) -> tuple[float, float]:
    """Newton solve of the reduced pump/shaft balance for (omega, Qp).

    Head:   k1p rho w Q + k2p rho w^2 + k4p rho Q^2 = dp
    Torque: k1s rho Q^2 - k2s rho w Q + torque = 0
    """
    k1p, k2p, k4p, k1s, k2s = (float(getattr(p, n)) for n in PUMP_BOUND_PARAMS)
    sw, sq = 300.0, 0.01
    z = np.array([guess[0] / sw, guess[1] / sq])

    def F(z):
        w, q = z[0] * sw, z[1] * sq
        return np.array([(k1p * rho * w * q + k2p * rho * w * w + k4p * rho * q * q - dp) / 1e5,
                         (k1s * rho * q * q - k2s * rho * w * q + torque) / 50.0])

    def J(z):
        w, q = z[0] * sw, z[1] * sq
        return np.array([[(k1p * rho * q + 2 * k2p * rho * w) * sw / 1e5,
                          (k1p * rho * w + 2 * k4p * rho * q) * sq / 1e5],
                         [(-k2s * rho * q) * sw / 50.0,
                          (2 * k1s * rho * q - k2s * rho * w) * sq / 50.0]])
    f = F(z)
    for _ in range(max_iter):
        try:
            dz = np.linalg.solve(J(z), -f)
        except np.linalg.LinAlgError as exc:
            raise ConvergenceError("singular Jacobian in the bounds system", float(np.abs(f).max())) from exc
        lam = 1.0
        while lam > 1e-6:
            fn = F(z + lam * dz)
            if np.abs(fn).max() < np.abs(f).max() or lam < 1e-3:
                break
            lam *= 0.5
        z, f = z + lam * dz, fn
        if np.abs(f).max() < tol and np.abs(dz).max() < 1e-9:
            break
    res = float(np.abs(f).max())
    if not res < 1e-9:
        raise ConvergenceError(f"bounds system did not converge (scaled residual {res:.3g})", res)
    return float(z[0] * sw), float(z[1] * sq)


def pressure_extrema_times(P1: TimeSeries, P2: TimeSeries) -> tuple[int, int]:
    """Indices of min and max of P2 - P1 on their common grid."""
    if len(P1) != len(P2) or not np.allclose(P1.times, P2.times, rtol=0, atol=1e-9):
        raise SeriesError("P1 and P2 must share one time grid")
    dp = P2["P2"] - P1["P1"]
    i1, i2 = int(np.argmin(dp)), int(np.argmax(dp))
    if i1 == i2 or dp[i2] - dp[i1] <= 0:
        raise PinnError("P2 - P1 is flat; bounds estimation needs a window with dynamic excitation")
    return i1, i2


def estimate_state_bounds(P1: TimeSeries, P2: TimeSeries, torque: TorqueSignal,
                          guess_params: EspParams, rho: float = 931.51,
                          guess=(300.0, 0.01)) -> ScalingBounds:
    """Output-scaling bounds for all six states.

    ``guess_params`` supplies the pump coefficients used in the reduced
    balance; callers normally pass the true values inflated by 15 %.
    """
    i1, i2 = pressure_extrema_times(P1, P2)
    dp = P2["P2"] - P1["P1"]
    t = P1.times
    sol = [solve_bounds_system(float(dp[i]), float(torque(t[i])), guess_params, rho, guess)
           for i in (i1, i2)]
    (w_lo, q_lo), (w_hi, q_hi) = sol
    if not (w_lo < w_hi and q_lo < q_hi):
        log.warning("bounds system gave non-increasing extremes; ordering them")
        w_lo, w_hi = sorted((w_lo, w_hi))
        q_lo, q_hi = sorted((q_lo, q_hi))
    p1, p2 = P1["P1"], P2["P2"]
    return ScalingBounds((q_lo, w_lo, q_lo, q_lo, p1.min(), p2.min()),
                         (q_hi, w_hi, q_hi, q_hi, p1.max(), p2.max()))


def inflated_pump_params(p: EspParams, factor: float = 1.15) -> EspParams:
    return p.replace(**{n: getattr(p, n) * factor for n in PUMP_BOUND_PARAMS})


# parameter transforms -------------------------------------------------------

SCHEMES = ("softplus_shift", "linear", "softminus", "bounded")


@dataclass(frozen=True)
class ParameterTransform:
    scheme: str
    scale: float = 1.0
    anchor: float | None = None     # true value, bounded scheme only
    alpha: float | None = None

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown transform scheme {self.scheme!r}")
        if self.scheme == "bounded":
            if self.anchor is None or self.anchor == 0:
                raise ValueError("bounded transform needs a nonzero anchor")
            if self.alpha is None or not 0 < self.alpha <= 1:
                raise ValueError("bounded transform span must lie in (0, 1]")
        elif self.scale == 0:
            raise ValueError("transform scale must be nonzero")

    def __call__(self, x):
        return transform_parameter(x, self)

    def inverse(self, value: float) -> float:
        """Raw value mapping to ``value`` (used for warm starts and tests)."""
        if self.scheme == "linear":
            return value / self.scale
        if self.scheme == "bounded":
            return math.atanh((value / self.anchor - 1.0) / self.alpha)
        if self.scheme == "softplus_shift":
            s = value / self.scale - 0.9
            return math.log(math.expm1(s))
        # softminus: x - softplus(x) + 1 = 1 - log(1 + e^-x)
        s = 1.0 - value / self.scale
        return -math.log(math.expm1(s))

    def to_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items() if v is not None}


def transform_parameter(x, xf: ParameterTransform):
    if xf.scheme == "linear":
        return x * xf.scale
    if xf.scheme == "softplus_shift":
        return (ad.softplus(x) + 0.9) * xf.scale
    if xf.scheme == "softminus":
        return (x - ad.softplus(x) + 1.0) * xf.scale
    return (ad.tanh(x) * xf.alpha + 1.0) * xf.anchor


def case_transforms(case: int, truth: EspParams, config: dict | None = None) -> dict:
    cfg = (config or load_pinn_config())["cases"]
    entry = cfg.get(case, cfg.get(str(case)))
    if entry is None:
        raise ValueError(f"unknown case {case!r}")
    out = {}
    for name, spec in entry["transforms"].items():
        spec = {k: (v if k == "scheme" else float(v)) for k, v in spec.items()}
        if spec["scheme"] == "bounded":
            spec.setdefault("anchor", float(getattr(truth, name)))
        out[name] = ParameterTransform(**spec)
    return out


# schedule ----------------------------------------------------------------

@dataclass(frozen=True)
class Stage:
    start: int
    end: int
    nn: object
    ps: object
    sa: object
    max_sa: int

    @staticmethod
    def _rate(spec, epoch: int) -> float:
        if not isinstance(spec, dict):
            return float(spec)
        a, b = spec["from"], spec["to"]
        if epoch <= a:
            return float(spec["start"])
        if epoch >= b:
            return float(spec["end"])
        f = (epoch - a) / (b - a)
        return float(spec["start"]) + f * (float(spec["end"]) - float(spec["start"]))

    def rates(self, epoch: int) -> tuple[float, float, float]:
        return self._rate(self.nn, epoch), self._rate(self.ps, epoch), self._rate(self.sa, epoch)


@dataclass(frozen=True)
class TrainingSchedule:
    stages: tuple

    def __post_init__(self):
        if not self.stages:
            raise ValueError("schedule has no stages")
        if self.stages[0].start != 0:
            raise ValueError("schedule must start at epoch 0")
        for a, b in zip(self.stages, self.stages[1:]):
            if a.end != b.start:
                raise ValueError(f"stages [{a.start}, {a.end}) and [{b.start}, {b.end}) "
                                 "are not contiguous")
        for s in self.stages:
            if s.end <= s.start:
                raise ValueError(f"empty stage [{s.start}, {s.end})")

    @classmethod
    def from_config(cls, stages: list) -> "TrainingSchedule":
        return cls(tuple(Stage(int(s["epochs"][0]), int(s["epochs"][1]), s["nn"], s["ps"],
                               s["sa"], int(s["max_sa"])) for s in stages))

    @classmethod
    def for_case(cls, case: int, scenario: str, config: dict | None = None) -> "TrainingSchedule":
        cfg = (config or load_pinn_config())["schedules"]
        entry = cfg.get(case, cfg.get(str(case)))
        return cls.from_config(entry[SCENARIO_GROUP[scenario]])

    @property
    def epochs(self) -> int:
        return self.stages[-1].end

    def stage_at(self, epoch: int) -> Stage:
        for s in self.stages:
            if s.start <= epoch < s.end:
                return s
        raise IndexError(f"epoch {epoch} is outside the schedule")

    def truncated(self, epochs: int) -> "TrainingSchedule":
        """The first ``epochs`` epochs of this schedule (for smoke runs)."""
        out = []
        for s in self.stages:
            if s.start >= epochs:
                break
            out.append(Stage(s.start, min(s.end, epochs), s.nn, s.ps, s.sa, s.max_sa))
        return TrainingSchedule(tuple(out))


def softplus_inverse(w: float) -> float:
    # log(expm1(w)) loses nothing for small w and is ~w for large w
    return w + math.log(-math.expm1(-w)) if w > 30 else math.log(math.expm1(w))


def initial_loss_weights(case: int, scenario: str, config: dict | None = None) -> dict:
    cfg = (config or load_pinn_config())["initial_weights"]
    entry = cfg.get(case, cfg.get(str(case)))[SCENARIO_GROUP[scenario]]
    return {"data": [float(entry["data"])] * len(MEASURED),
            "physics": [float(v) for v in entry["physics"]],
            "ic": [float(entry["ic"])] * 6}


# problem and trainables -------------------------------------------------

@dataclass
class PinnTrainables:
    mlp: MlpParams
    raw_params: np.ndarray
    lam_r: np.ndarray
    lam_d: np.ndarray
    lam_ic: np.ndarray

    def groups(self) -> dict[str, list[np.ndarray]]:
        return {"nn": self.mlp.arrays(), "ps": [self.raw_params],
                "sa": [self.lam_r, self.lam_d, self.lam_ic]}

    def flat(self) -> list[np.ndarray]:
        g = self.groups()
        return g["nn"] + g["ps"] + g["sa"]

    def copy(self) -> "PinnTrainables":
        return copy.deepcopy(self)

    @classmethod
    def initial(cls, n_params: int, weights: dict, seed: int, architecture=(1, 20, 20, 20, 6)
                ) -> "PinnTrainables":
        inv = np.vectorize(softplus_inverse)
        return cls(glorot_init(architecture, seed), np.zeros(n_params),
                   inv(np.array(weights["physics"], float)),
                   inv(np.array(weights["data"], float)),
                   inv(np.array(weights["ic"], float)))


class _ParamView:
    """EspParams look-alike whose unknown fields are autodiff values."""

    def __init__(self, base: EspParams, overrides: dict):
        self._base = base
        self._over = overrides

    def __getattr__(self, name):
        over = self.__dict__["_over"]
        if name in over:
            return over[name]
        return getattr(self.__dict__["_base"], name)


@dataclass
class PinnProblem:
    """Everything the loss needs that is not trained."""

    known: EspParams
    names: tuple
    transforms: tuple
    bounds: ScalingBounds
    t0: float
    t1: float
    tau_col: np.ndarray
    torque_col: np.ndarray
    tau_data: np.ndarray
    y_data: np.ndarray              # (n, 2) measured P1, P2 in MWC
    y_ic_eng: np.ndarray            # (6,) initial state in engineering units

    @property
    def dtau_dt(self) -> float:
        return 2.0 / (self.t1 - self.t0)

    def tau(self, t):
        return 2.0 * (np.asarray(t, float) - self.t0) / (self.t1 - self.t0) - 1.0

    def physical_params(self, raw) -> dict:
        return {n: transform_parameter(raw[i], xf)
                for i, (n, xf) in enumerate(zip(self.names, self.transforms))}


def build_problem(known: EspParams, transforms: dict, measurements: TimeSeries,
                  torque: TorqueSignal, x0, bounds: ScalingBounds, n_collocation: int = 100
                  ) -> PinnProblem:
    t = measurements.times
    t0, t1 = float(t[0]), float(t[-1])
    tau_col = np.linspace(-1.0, 1.0, n_collocation)
    t_col = t0 + (tau_col + 1.0) * (t1 - t0) / 2.0
    y = np.column_stack([measurements[c] for c in MEASURED]) / PA_PER_MWC
    tau_data = 2.0 * (t - t0) / (t1 - t0) - 1.0
    x0 = np.asarray(x0.as_array() if hasattr(x0, "as_array") else x0, float)
    return PinnProblem(known, tuple(transforms), tuple(transforms.values()), bounds, t0, t1,
                       tau_col, np.asarray(torque(t_col), float), tau_data, y,
                       to_engineering(x0))


# loss ---------------------------------------------------------------------

_P_COLS = [STATE_NAMES.index(c) for c in MEASURED]


def loss_terms(tr, problem: PinnProblem) -> dict:
    """Unweighted per-state mean-square terms plus the masked total.

    ``tr`` holds either arrays or Tensors in the PinnTrainables layout.
    """
    half = problem.bounds.half_range
    lo = np.array(problem.bounds.lo)
    # one pass over collocation, data and the initial time
    tau_all = np.concatenate([problem.tau_col, problem.tau_data, [-1.0]])
    raw, draw = mlp_with_derivative(tr.mlp, tau_all)
    x_si = (raw + 1.0) * half + lo
    dx_si = draw * (half * problem.dtau_dt)
    return state_loss_terms(x_si, dx_si, tr, problem)


def state_loss_terms(x_si, dx_si, tr, problem: PinnProblem) -> dict:
    """Loss terms for given state values and time derivatives (SI units).

    Rows are the collocation points, then the data times, then t0, as
    stacked by ``loss_terms``.  Only the parameter and weight fields of
    ``tr`` are used.
    """
    n_c, n_d = len(problem.tau_col), len(problem.tau_data)
    dx_eng = dx_si * ENG_FACTORS
    cols = [x_si[:n_c, j] for j in range(6)]
    p = _ParamView(problem.known, problem.physical_params(tr.raw_params))
    f = rhs_terms(*cols, problem.torque_col, p)
    phys = [ad.mean(ad.square(dx_eng[:n_c, j] - f[j] * ENG_FACTORS[j])) for j in range(6)]

    data = [ad.mean(ad.square(x_si[n_c:n_c + n_d, j] * ENG_FACTORS[j] - problem.y_data[:, k]))
            for k, j in enumerate(_P_COLS)]
    x0_eng = x_si[n_c + n_d:, :] * ENG_FACTORS
    ic_all = ad.square(x0_eng - problem.y_ic_eng.reshape(1, 6))
    ic = [ic_all[0, j] for j in range(6)]

    m_r, m_d, m_ic = ad.softplus(tr.lam_r), ad.softplus(tr.lam_d), ad.softplus(tr.lam_ic)
    total = ad.tensor_sum(m_r * _stack(phys)) + ad.tensor_sum(m_d * _stack(data)) \
        + ad.tensor_sum(m_ic * _stack(ic))
    return {"total": total, "physics": phys, "data": data, "ic": ic}


def loss_times(problem: PinnProblem) -> np.ndarray:
    """Physical times of the rows used by ``state_loss_terms``."""
    tau = np.concatenate([problem.tau_col, problem.tau_data, [-1.0]])
    return problem.t0 + (tau + 1.0) * (problem.t1 - problem.t0) / 2.0


def _stack(items):
    """Stack scalars into a 1-d vector (Tensor-aware)."""
    if not any(isinstance(v, ad.Tensor) for v in items):
        return np.array([float(v) for v in items])
    ts = [ad.as_tensor(v) for v in items]
    n = len(ts)

    def back(g):
        return tuple(g[i] for i in range(n))
    return ad.Tensor(np.array([t.data for t in ts]), _parents=tuple(ts), _back=back)


def total_loss(tr: PinnTrainables, problem: PinnProblem) -> float:
    return float(ad.value_of(loss_terms(tr, problem)["total"]))


def _tensor_trainables(tr: PinnTrainables) -> tuple[PinnTrainables, list]:
    leaves = [ad.Tensor(a, requires_grad=True) for a in tr.flat()]
    n = len(tr.mlp.weights) * 2
    view = PinnTrainables(MlpParams.from_arrays(leaves[:n], tr.mlp.activation), leaves[n],
                          leaves[n + 1], leaves[n + 2], leaves[n + 3])
    return view, leaves


def loss_and_gradients(tr: PinnTrainables, problem: PinnProblem) -> tuple[dict, list]:
    """Loss breakdown (floats) and gradients in ``tr.flat()`` order."""
    view, leaves = _tensor_trainables(tr)
    terms = loss_terms(view, problem)
    terms["total"].backward()
    grads = [l.grad if l.grad is not None else np.zeros_like(l.data) for l in leaves]
    out = {"total": float(terms["total"].data),
           "physics": [float(v.data) for v in terms["physics"]],
           "data": [float(v.data) for v in terms["data"]],
           "ic": [float(ad.value_of(v)) for v in terms["ic"]]}
    return out, grads


# training -------------------------------------------------------------------

@dataclass
class TrainingResult:
    trainables: PinnTrainables
    estimates: dict
    history: list
    problem: PinnProblem
    epochs: int
    seconds: float
    final_loss: dict = field(default_factory=dict)

    def predict(self, times) -> TimeSeries:
        return predict_states(self.trainables, self.problem, times)

    def to_json(self) -> dict:
        return {"estimates": self.estimates,
                "transforms": {n: xf.to_dict() for n, xf in
                               zip(self.problem.names, self.problem.transforms)},
                "raw_params": self.trainables.raw_params.tolist(),
                "loss_weights": {"physics": ad.softplus(self.trainables.lam_r).tolist(),
                                 "data": ad.softplus(self.trainables.lam_d).tolist(),
                                 "ic": ad.softplus(self.trainables.lam_ic).tolist()},
                "bounds": self.problem.bounds.to_dict(),
                "final_loss": self.final_loss, "epochs": self.epochs,
                "seconds": self.seconds, "history": self.history,
                "adam": {"beta1": 0.9, "beta2": 0.999, "eps": 1e-8},
                "raw_init": 0.0}


def predict_states(tr: PinnTrainables, problem: PinnProblem, times) -> TimeSeries:
    times = np.asarray(times, float)
    raw = mlp_forward(tr.mlp, problem.tau(times))
    x = output_scale(raw, problem.bounds)
    return state_series(times, x)


def estimates_of(tr: PinnTrainables, problem: PinnProblem) -> dict:
    return {n: float(ad.value_of(v)) for n, v in problem.physical_params(tr.raw_params).items()}


def train(problem: PinnProblem, schedule: TrainingSchedule, trainables: PinnTrainables,
          log_every: int = 1000, callback=None) -> TrainingResult:
    """Run the staged three-optimizer Adam loop.

    Network weights and raw parameters descend the loss; the loss weights
    ascend it until the stage's ``max_sa`` epoch and are frozen afterwards.
    """
    tr = trainables.copy()
    groups = tr.groups()
    states = {k: AdamState.zeros_like(v) for k, v in groups.items()}
    n_nn = len(groups["nn"])
    history = []
    last_good = tr.copy()
    started = time.perf_counter()
    terms = None
    for epoch in range(schedule.epochs):
        stage = schedule.stage_at(epoch)
        lr_nn, lr_ps, lr_sa = stage.rates(epoch)
        terms, grads = loss_and_gradients(tr, problem)
        if not math.isfinite(terms["total"]) or not all(np.all(np.isfinite(g)) for g in grads):
            raise TrainingDiverged(f"non-finite loss at epoch {epoch} "
                                   f"(stage [{stage.start}, {stage.end}))", epoch, last_good)
        if epoch % log_every == 0:
            history.append({"epoch": epoch, **terms,
                            "estimates": estimates_of(tr, problem)})
            if callback is not None:
                callback(epoch, terms, tr)
            last_good = tr.copy()
        adam_step(states["nn"], groups["nn"], grads[:n_nn], lr_nn)
        adam_step(states["ps"], groups["ps"], grads[n_nn:n_nn + 1], lr_ps)
        if epoch < stage.max_sa:
            adam_step(states["sa"], groups["sa"], [-g for g in grads[n_nn + 1:]], lr_sa)
    final = loss_and_gradients(tr, problem)[0]
    history.append({"epoch": schedule.epochs, **final, "estimates": estimates_of(tr, problem)})
    return TrainingResult(tr, estimates_of(tr, problem), history, problem, schedule.epochs,
                          time.perf_counter() - started, final)


@dataclass
class PinnSetup:
    case: int
    scenario: str
    problem: PinnProblem
    schedule: TrainingSchedule
    weights: dict


def setup_from_scenario(sc, case: int, config: dict | None = None,
                        bounds: ScalingBounds | None = None) -> PinnSetup:
    """Assemble the training problem for a simulated/noisy Scenario."""
    config = config or load_pinn_config()
    truth = sc.params
    transforms = case_transforms(case, truth, config)
    known = truth
    if bounds is None:
        g = config["bounds_guess"]
        meas = sc.measurements
        bounds = estimate_state_bounds(meas.select(["P1"]), meas.select(["P2"]), sc.torque,
                                       inflated_pump_params(truth, g["pump_factor"]), g["rho"])
    n_col = int(config["network"]["collocation_points"])
    problem = build_problem(known, transforms, sc.measurements, sc.torque, sc.x0, bounds, n_col)
    schedule = TrainingSchedule.for_case(case, sc.kind, config)
    return PinnSetup(case, sc.kind, problem, schedule,
                     initial_loss_weights(case, sc.kind, config))


def train_scenario(sc, case: int, seed: int, epochs: int | None = None,
                   config: dict | None = None, log_every: int = 1000) -> TrainingResult:
    config = config or load_pinn_config()
    setup = setup_from_scenario(sc, case, config)
    schedule = setup.schedule if epochs is None else setup.schedule.truncated(epochs)
    arch = tuple(config["network"]["architecture"])
    tr = PinnTrainables.initial(len(setup.problem.names), setup.weights, seed, arch)
    return train(setup.problem, schedule, tr, log_every=log_every)


def write_result(result: TrainingResult, out_dir, dense_dt: float = 0.05) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "pinn.json").write_text(json.dumps(result.to_json(), indent=1))
    p = result.problem
    n = int(round((p.t1 - p.t0) / dense_dt)) + 1
    result.predict(np.linspace(p.t0, p.t1, n)).to_csv(out / "pinn_states.csv")


__all__ = ["PA_PER_MWC", "ENG_FACTORS", "PinnError", "TrainingDiverged", "ScalingBounds",
           "output_scale", "solve_bounds_system", "estimate_state_bounds",
           "pressure_extrema_times", "inflated_pump_params", "ParameterTransform",
           "transform_parameter", "case_transforms", "Stage", "TrainingSchedule",
           "initial_loss_weights", "softplus_inverse", "PinnTrainables", "PinnProblem",
           "build_problem", "loss_terms", "state_loss_terms", "loss_times", "total_loss",
           "loss_and_gradients", "train",
           "TrainingResult", "predict_states", "estimates_of", "setup_from_scenario",
           "train_scenario", "write_result", "load_pinn_config", "to_engineering", "to_si"]
