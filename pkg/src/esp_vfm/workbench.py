"""Experiment orchestration: the investigation x scenario x case matrix,
multi-realization runs, metrics and on-disk artifacts."""

from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .dsp import FilterDesign, butterworth_lowpass, downsample
from .model import STATE_NAMES, EspParams, StateVector, params_from_config
from .scenario import DATA_DT, Scenario, build_scenario, investigation_key
from .sim import TorqueSignal
from .timeseries import SeriesError, TimeSeries

log = logging.getLogger(__name__)

INVESTIGATIONS = (1, 2)
SCENARIOS = ("simulated", "noisy", "experimental")
CASES = (1, 2, 3)
SCENARIO_ALIASES = {"sim": "simulated", "simulated": "simulated", "noisy": "noisy",
                    "exp": "experimental", "experimental": "experimental"}
METHODS = ("pinn", "pf")
# data points on the 0.5 s grid for the experimental records
EXPERIMENTAL_POINTS = {1: 48, 2: 55}

REQUIRED_COLUMNS = ("t_s", "P1_Pa", "P2_Pa", "Q1_m3s", "omega_rads", "torque_Nm")
OPTIONAL_COLUMNS = ("Q2_m3s", "Qp_m3s")
PARTIAL = "partial observability"

# seed splitting: stream ids fed to SeedSequence alongside the master seed
_STREAMS = {"noise": 0, "init": 1, "pf": 2}


class ExperimentError(RuntimeError):
    pass


# seeds ---------------------------------------------------------------------

def derive_seed(master: int, investigation: int, scenario: str, case: int, realization: int,
                stream: str) -> int:
    """Deterministic 32-bit seed for one random stream of one realization.

    SeedSequence(master, spawn_key=(inv, scenario index, case, realization,
    stream)).  Every noise draw, network initialisation and particle-filter
    run is reproducible from the master seed alone.
    """
    key = (int(investigation), SCENARIOS.index(scenario), int(case), int(realization),
           _STREAMS[stream])
    return int(np.random.SeedSequence(int(master), spawn_key=key).generate_state(1)[0])


# spec / report -------------------------------------------------------------

@dataclass
class ExperimentSpec:
    investigation: int = 1
    scenario: str = "simulated"
    case: int = 1
    realizations: int = 30
    seed: int = 0
    methods: tuple = METHODS
    out_dir: str | None = None
    data_path: str | None = None
    epochs: int | None = None        # truncate the PINN schedule (smoke runs)
    workers: int = 1
    pinn_config: dict | None = None
    presets: dict | None = None      # parameter tables; bundled presets when None

    def __post_init__(self):
        self.scenario = SCENARIO_ALIASES.get(self.scenario, self.scenario)
        if self.investigation not in INVESTIGATIONS:
            raise ValueError(f"investigation must be one of {INVESTIGATIONS}")
        if self.scenario not in SCENARIOS:
            raise ValueError(f"scenario must be one of {SCENARIOS}")
        if self.case not in CASES:
            raise ValueError(f"case must be one of {CASES}")
        if self.realizations < 1:
            raise ValueError("need at least one realization")
        self.methods = tuple(self.methods)
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ValueError(f"unknown methods {bad}")

    @property
    def label(self) -> str:
        return f"inv{self.investigation}_{self.scenario}_case{self.case}"

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("pinn_config")
        d.pop("presets")
        d["methods"] = list(self.methods)
        return d


def experiment_matrix(**common) -> list[ExperimentSpec]:
    """The 18 cells: 2 investigations x 3 scenarios x 3 cases."""
    return [ExperimentSpec(investigation=i, scenario=s, case=c, **common)
            for i in INVESTIGATIONS for s in SCENARIOS for c in CASES]


@dataclass
class SkipRecord:
    label: str
    reason: str
    status: str = "skipped"

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class MetricReport:
    label: str
    method: str
    state_mape: dict
    param_mape: dict            # name -> (MAPE %, population std %)
    estimates: dict             # name -> list of per-realization estimates
    truth: dict
    excluded_samples: dict = field(default_factory=dict)
    realizations: int = 0
    failures: list = field(default_factory=list)
    status: str = "ok"

    def __post_init__(self):
        for k, v in self.state_mape.items():
            if v < 0:
                raise ValueError(f"negative MAPE for {k}")
        for k, (m, s) in self.param_mape.items():
            if m < 0 or s < 0:
                raise ValueError(f"negative MAPE/std for {k}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["param_mape"] = {k: {"mape": m, "std": s} for k, (m, s) in self.param_mape.items()}
        return d


# metrics --------------------------------------------------------------------

def mape_states(truth: TimeSeries, predicted: TimeSeries, channels=None
                ) -> tuple[dict, dict]:
    """Per-channel MAPE (%) and the count of samples skipped for zero truth."""
    if len(truth) != len(predicted) or not np.allclose(truth.times, predicted.times,
                                                       rtol=0, atol=1e-9):
        raise SeriesError("truth and prediction must share one time grid")
    names = channels or [n for n in truth.names if n in predicted.channels]
    out, excluded = {}, {}
    for n in names:
        y, yh = truth[n], predicted[n]
        keep = y != 0
        excluded[n] = int((~keep).sum())
        if not keep.any():
            out[n] = float("nan")
            continue
        out[n] = float(100.0 * np.mean(np.abs((y[keep] - yh[keep]) / y[keep])))
    return out, excluded


def mape_params(truth: float, estimates) -> tuple[float, float]:
    """Mean and population std (divide by N) of |1 - estimate/truth|, in %."""
    if truth == 0:
        raise ValueError("parameter MAPE is undefined for a zero true value")
    e = 100.0 * np.abs(1.0 - np.asarray(estimates, float) / truth)
    return float(e.mean()), float(e.std(ddof=0))


def mean_prediction(series: list[TimeSeries]) -> TimeSeries:
    ref = series[0]
    chans = {n: np.mean([s[n] for s in series], axis=0) for n in ref.names}
    return TimeSeries(ref.times, chans, dict(ref.units))


# experimental data ---------------------------------------------------------------

def ingest_experimental_csv(path, required=REQUIRED_COLUMNS, optional=OPTIONAL_COLUMNS
                            ) -> TimeSeries:
    """Validated measurement record from a rig CSV.

    Missing optional flow columns are allowed and flag the series as
    partially observed.
    """
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"experimental data file not found: {p}")
    with open(p, encoding="utf-8") as fh:
        header = [h.strip() for h in fh.readline().strip().split(",")]
    missing = [c for c in required if c not in header]
    extra = [c for c in header if c not in required and c not in optional]
    if missing or extra:
        raise SeriesError(f"{p}: schema mismatch; missing columns {missing}, "
                          f"unexpected columns {extra}")
    dup = sorted({c for c in header if header.count(c) > 1})
    if dup:
        raise SeriesError(f"{p}: duplicated columns {dup}")
    ts = TimeSeries.from_csv(p)
    if any(c not in header for c in optional):
        ts.flags.add(PARTIAL)
    return ts


def prepare_experimental(raw: TimeSeries, dt: float = DATA_DT, cutoff_hz: float = 10.0,
                         torque_cutoff_hz: float = 2.0, order: int = 8
                         ) -> tuple[TimeSeries, TorqueSignal]:
    """Filter the acquired signals and decimate them to the training grid."""
    fs = 1.0 / raw.sample_interval()
    # filter deviations from the first sample so the filter starts settled
    first = {n: raw[n][0] for n in raw.names}
    dev = raw.with_channels({n: raw[n] - first[n] for n in raw.names})
    sig = [n for n in raw.names if n != "torque"]
    smooth = butterworth_lowpass(dev.select(sig), FilterDesign(order, cutoff_hz, fs))
    smooth = smooth.with_channels({n: smooth[n] + first[n] for n in sig})
    tq = butterworth_lowpass(dev.select(["torque"]), FilterDesign(order, torque_cutoff_hz, fs))
    torque = tq.with_channels({"torque": tq["torque"] + first["torque"]})
    factor = int(round(dt * fs))
    if factor < 1 or abs(factor / fs - dt) > 1e-9 * max(1.0, dt):
        raise SeriesError(f"sample rate {fs} Hz cannot be decimated to a {dt} s grid")
    grid = downsample(smooth, factor)
    grid.flags = set(raw.flags)
    return grid, TorqueSignal(torque)


# running -------------------------------------------------------------------------

def experimental_scenario(spec: ExperimentSpec) -> Scenario:
    """Scenario assembled from a rig CSV instead of a simulation."""
    raw = ingest_experimental_csv(spec.data_path)
    grid, torque = prepare_experimental(raw)
    n = EXPERIMENTAL_POINTS[spec.investigation]
    if len(grid) > n:
        grid = TimeSeries(grid.times[:n], {k: v[:n] for k, v in grid.channels.items()},
                          dict(grid.units), None, set(grid.flags))
    first = {k: float(v[0]) for k, v in grid.channels.items()}
    # unmeasured flows start equal to the measured upstream flow (steady start)
    x0 = np.array([first.get("Qp", first["Q1"]), first["omega"], first["Q1"],
                   first.get("Q2", first["Q1"]), first["P1"], first["P2"]])
    inv = investigation_key(spec.investigation)
    params = (params_from_config(spec.presets, inv) if spec.presets is not None
              else EspParams.from_preset(inv))
    truth = grid.select([c for c in STATE_NAMES if c in grid.channels])
    meas = grid.select(["P1", "P2"])
    return Scenario(investigation_key(spec.investigation), "experimental", params,
                    StateVector.from_array(x0), torque, truth, meas, None)


def _scenario_for(spec: ExperimentSpec, realization: int) -> Scenario:
    if spec.scenario == "experimental":
        return experimental_scenario(spec)
    noise_seed = derive_seed(spec.seed, spec.investigation, spec.scenario, spec.case,
                             realization, "noise")
    params = None
    if spec.presets is not None:
        params = params_from_config(spec.presets, investigation_key(spec.investigation),
                                    k_reference=True)
    return build_scenario(investigation_key(spec.investigation), spec.scenario, noise_seed,
                          params=params)


def _run_realization(args) -> dict:
    spec, r, out = args
    from . import pf as pfm
    from . import pinn

    sc = _scenario_for(spec, r)
    rdir = Path(out) / f"r{r:03d}"
    rdir.mkdir(parents=True, exist_ok=True)
    record = {"realization": r}
    config = spec.pinn_config or pinn.load_pinn_config()
    names = list(pinn.case_transforms(spec.case, sc.params, config))
    if "pinn" in spec.methods:
        seed = derive_seed(spec.seed, spec.investigation, spec.scenario, spec.case, r, "init")
        try:
            res = pinn.train_scenario(sc, spec.case, seed, spec.epochs, config)
            pinn.write_result(res, rdir)
            res.predict(sc.truth.times).to_csv(rdir / "pinn_grid.csv")
            record["pinn"] = {"estimates": res.estimates, "seed": seed}
        except pinn.TrainingDiverged as exc:
            record["pinn"] = {"error": str(exc), "seed": seed}
    if "pf" in spec.methods:
        seed = derive_seed(spec.seed, spec.investigation, spec.scenario, spec.case, r, "pf")
        try:
            cfg = pfm.PfConfig()
            if spec.scenario == "experimental":
                # model-error allowance on real data
                cfg = pfm.PfConfig(sigma={k: 10.0 * v for k, v in cfg.sigma.items()})
            res = pfm.pf_run(cfg, sc.params,
                             {n: getattr(sc.params, n) for n in names},
                             sc.measurements, sc.torque, sc.x0, seed)
            res.write(rdir)
            res.states().to_csv(rdir / "pf_grid.csv")
            record["pf"] = {"estimates": res.estimates, "seed": seed}
        except pfm.PfError as exc:
            record["pf"] = {"error": str(exc), "seed": seed}
    (rdir / "record.json").write_text(json.dumps(record, indent=1))
    return record


def run_experiment(spec: ExperimentSpec) -> dict:
    """Run every realization of one matrix cell and aggregate the metrics.

    Returns {method: MetricReport} or {"skip": SkipRecord}.  Realizations
    that are already on disk (record.json present) are reused, so an
    interrupted sweep resumes where it stopped.
    """
    out = Path(spec.out_dir or f"runs/{spec.label}")
    out.mkdir(parents=True, exist_ok=True)
    (out / "spec.json").write_text(json.dumps(spec.to_dict(), indent=1))
    if spec.scenario == "experimental":
        skip = _experimental_skip(spec)
        if skip is not None:
            (out / "skip.json").write_text(json.dumps(skip.to_dict(), indent=1))
            return {"skip": skip}
    sc0 = _scenario_for(spec, 0)
    sc0.truth.to_csv(out / "truth.csv")
    (out / "truth_params.json").write_text(json.dumps(sc0.params.to_config(), indent=1))
    todo = [r for r in range(spec.realizations)
            if not (out / f"r{r:03d}" / "record.json").exists()]
    jobs = [(spec, r, str(out)) for r in todo]
    if spec.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=spec.workers) as ex:
            list(ex.map(_run_realization, jobs))
    else:
        for j in jobs:
            _run_realization(j)
    reports = evaluate_directory(out)
    (out / "report.json").write_text(json.dumps({m: r.to_dict() for m, r in reports.items()},
                                                indent=1))
    return reports


def _experimental_skip(spec: ExperimentSpec) -> SkipRecord | None:
    path = spec.data_path
    if path is None or not Path(path).exists():
        return SkipRecord(spec.label, "experimental CSV not available "
                          f"({path or 'no --data path given'}); no data is fabricated")
    return None


def evaluate_directory(out) -> dict:
    """Recompute MetricReports from the per-realization artifacts on disk."""
    out = Path(out)
    spec = json.loads((out / "spec.json").read_text())
    truth = TimeSeries.from_csv(out / "truth.csv")
    params = EspParams.from_config(json.loads((out / "truth_params.json").read_text()))
    rdirs = sorted(p for p in out.glob("r[0-9][0-9][0-9]") if (p / "record.json").exists())
    reports = {}
    for method in spec["methods"]:
        preds, est, failures = [], {}, []
        for d in rdirs:
            rec = json.loads((d / "record.json").read_text()).get(method)
            if rec is None:
                continue
            if "error" in rec:
                failures.append({"realization": d.name, "error": rec["error"]})
                continue
            preds.append(TimeSeries.from_csv(d / f"{method}_grid.csv"))
            for k, v in rec["estimates"].items():
                est.setdefault(k, []).append(v)
        if not preds:
            continue
        mean = mean_prediction(preds)
        smape, excl = mape_states(truth, mean, [n for n in STATE_NAMES if n in truth.channels])
        tv = {k: float(getattr(params, k)) for k in est}
        pm = {k: mape_params(tv[k], v) for k, v in est.items()}
        reports[method] = MetricReport(out.name, method, smape, pm, est, tv, excl,
                                       len(preds), failures)
    return reports


def default_workers() -> int:
    return max(1, (os.cpu_count() or 1))


__all__ = ["ExperimentSpec", "experiment_matrix", "SkipRecord", "MetricReport", "mape_states",
           "mape_params", "mean_prediction", "ingest_experimental_csv", "prepare_experimental",
           "run_experiment", "evaluate_directory", "derive_seed", "ExperimentError",
           "REQUIRED_COLUMNS", "OPTIONAL_COLUMNS", "PARTIAL"]
