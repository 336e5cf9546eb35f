"""``esp-vfm`` command line.

Exit status: 0 on success, 2 when inputs fail validation, 3 on numerical
failure (integration, Newton, training divergence, particle collapse).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import yaml

from .model import ModelError, load_presets, params_from_config
from .timeseries import SeriesError

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 2, 3

log = logging.getLogger("esp_vfm")


def _deep_merge(base: dict, extra: dict) -> dict:
    out = dict(base)
    for k, v in (extra or {}).items():
        out[k] = _deep_merge(out[k], v) if isinstance(v, dict) and isinstance(out.get(k), dict) \
            else v
    return out


def load_config(path: str | None) -> dict:
    """User config merged over the bundled presets and PINN settings.

    The file may hold any of the sections ``esp``, ``investigations``,
    ``reference`` (parameter tables) and ``network``, ``cases``,
    ``schedules``, ``initial_weights``, ``bounds_guess`` (training setup).
    """
    from .pinn import load_pinn_config

    cfg = {"presets": load_presets(), "pinn": load_pinn_config()}
    if path is None:
        return cfg
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"config file not found: {p}")
    user = yaml.safe_load(p.read_text()) or {}
    if not isinstance(user, dict):
        raise ValueError("config must be a mapping")
    preset_keys = {"esp", "investigations", "reference"}
    unknown = sorted(set(user) - preset_keys - set(cfg["pinn"]))
    if unknown:
        raise ValueError(f"unknown config sections {unknown}")
    cfg["presets"] = _deep_merge(cfg["presets"], {k: v for k, v in user.items()
                                                  if k in preset_keys})
    cfg["pinn"] = _deep_merge(cfg["pinn"], {k: v for k, v in user.items()
                                            if k not in preset_keys})
    return cfg


def _params(cfg: dict, investigation: int, reference: bool = True):
    return params_from_config(cfg["presets"], f"inv{investigation}", k_reference=reference)


def _scenario(args, cfg, kind=None, noise_seed=None):
    from .scenario import build_scenario

    kind = kind or {"sim": "simulated", "noisy": "noisy"}.get(args.scenario, args.scenario)
    return build_scenario(f"inv{args.investigation}", kind,
                          args.seed if noise_seed is None else noise_seed,
                          params=_params(cfg, args.investigation))


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# commands --------------------------------------------------------------------

def cmd_simulate(args, cfg) -> int:
    sc = _scenario(args, cfg)
    out = _out(args)
    sc.truth.to_csv(out / "truth.csv")
    sc.measurements.to_csv(out / "measurements.csv")
    sc.trajectory.to_csv(out / "trajectory.csv")
    sc.torque.series.to_csv(out / "torque.csv")
    print(f"wrote {len(sc.truth)} samples to {out}")
    return EXIT_OK


def cmd_filter(args, cfg) -> int:
    from .dsp import FilterDesign, butterworth_lowpass, downsample
    from .timeseries import TimeSeries

    ts = TimeSeries.from_csv(args.input)
    fs = args.fs or 1.0 / ts.sample_interval()
    design = FilterDesign(args.order, args.cutoff, fs)
    out = downsample(butterworth_lowpass(ts, design), args.downsample)
    dest = _out(args) / "filtered.csv"
    out.to_csv(dest)
    print(f"wrote {dest}")
    return EXIT_OK


def cmd_identify(args, cfg) -> int:
    from . import identifiability as ident

    sets = {"12": ident.SET_12, "8": ident.SET_8, "15": ident.SET_15}
    sc = _scenario(args, cfg, kind="simulated", noise_seed=0)
    S = ident.output_sensitivities(sc.params, sets[args.set], ident.scenario_from(sc),
                                   workers=args.workers)
    rep = ident.analyze(S, noise_level=args.noise_level, threshold=args.threshold)
    out = _out(args)
    rep.write(out / f"identifiability_{args.set}.json", out / f"correlation_{args.set}.csv")
    print(f"rank {rep.rank}/{len(rep.params)}, condition number {rep.condition_number:.3g}")
    if rep.flagged:
        a, b, r = rep.flagged[0]
        print(f"strongest correlation |r({a}, {b})| = {abs(r):.6f}")
    return EXIT_OK


def _spec(args, cfg, methods):
    from .workbench import ExperimentSpec

    return ExperimentSpec(investigation=args.investigation, scenario=args.scenario,
                          case=args.case, realizations=args.realizations, seed=args.seed,
                          methods=methods, out_dir=args.out, data_path=args.data,
                          epochs=args.epochs, workers=args.workers, pinn_config=cfg["pinn"],
                          presets=cfg["presets"])


def _report(result) -> int:
    if "skip" in result:
        print(f"skipped: {result['skip'].reason}")
        return EXIT_OK
    for method, rep in result.items():
        states = ", ".join(f"{k} {v:.4g}%" for k, v in rep.state_mape.items())
        params = ", ".join(f"{k} {m:.4g}% (std {s:.3g})" for k, (m, s) in rep.param_mape.items())
        print(f"[{method}] {rep.realizations} realizations\n  states: {states}\n"
              f"  params: {params}")
    return EXIT_OK


def cmd_train_pinn(args, cfg) -> int:
    from .workbench import run_experiment

    if args.schedule:
        cfg = dict(cfg)
        cfg["pinn"] = _deep_merge(cfg["pinn"], yaml.safe_load(Path(args.schedule).read_text()))
    return _report(run_experiment(_spec(args, cfg, ("pinn",))))


def cmd_run_pf(args, cfg) -> int:
    from .workbench import run_experiment

    return _report(run_experiment(_spec(args, cfg, ("pf",))))


def cmd_evaluate(args, cfg) -> int:
    from .workbench import evaluate_directory

    reports = evaluate_directory(args.out)
    print(json.dumps({m: r.to_dict() for m, r in reports.items()}, indent=1, default=float))
    return EXIT_OK


def cmd_sweep(args, cfg) -> int:
    from .workbench import ExperimentSpec, run_experiment

    methods = tuple(args.methods.split(","))
    base = Path(args.out)
    summary = {}
    for inv in _ints(args.investigations):
        for scen in args.scenarios.split(","):
            for case in _ints(args.cases):
                spec = ExperimentSpec(investigation=inv, scenario=scen, case=case,
                                      realizations=args.realizations, seed=args.seed,
                                      methods=methods, data_path=args.data,
                                      epochs=args.epochs, workers=args.workers,
                                      pinn_config=cfg["pinn"], presets=cfg["presets"])
                spec.out_dir = str(base / spec.label)
                res = run_experiment(spec)
                summary[spec.label] = ({"skip": res["skip"].to_dict()} if "skip" in res else
                                       {m: r.to_dict() for m, r in res.items()})
                print(f"{spec.label}: {'skipped' if 'skip' in res else 'done'}", flush=True)
    (base / "summary.json").write_text(json.dumps(summary, indent=1, default=float))
    return EXIT_OK


def _ints(text: str) -> list[int]:
    return [int(v) for v in text.split(",")]


# parser --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML overriding parameter tables or training setup")
    common.add_argument("--out", default="runs", help="output directory")
    common.add_argument("--seed", type=int, default=0, help="master seed")
    common.add_argument("--workers", type=int, default=1)
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="esp-vfm", parents=[common],
                                description="ESP virtual flow metering workbench")
    sub = p.add_subparsers(dest="command", required=True)

    def experiment_flags(sp, realizations=1):
        sp.add_argument("--investigation", type=int, choices=(1, 2), default=1)
        sp.add_argument("--scenario", choices=("sim", "simulated", "noisy", "exp",
                                               "experimental"), default="sim")
        sp.add_argument("--case", type=int, choices=(1, 2, 3), default=1)
        sp.add_argument("--realizations", type=int, default=realizations)
        sp.add_argument("--data", help="experimental CSV (t_s, P1_Pa, P2_Pa, Q1_m3s, ...)")
        sp.add_argument("--epochs", type=int, help="truncate the training schedule")

    sp = sub.add_parser("simulate", parents=[common], help="simulate a speed-step scenario")
    sp.add_argument("--investigation", type=int, choices=(1, 2), default=1)
    sp.add_argument("--scenario", choices=("sim", "simulated", "noisy"), default="sim")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("filter", parents=[common], help="Butterworth low-pass + decimation")
    sp.add_argument("--input", required=True)
    sp.add_argument("--order", type=int, default=8)
    sp.add_argument("--cutoff-hz", "--cutoff", dest="cutoff", type=float, default=10.0)
    sp.add_argument("--fs-hz", "--fs", dest="fs", type=float,
                    help="sample rate; inferred from the time column when omitted")
    sp.add_argument("--factor", "--downsample", dest="downsample", type=int, default=1)
    sp.set_defaults(func=cmd_filter)

    sp = sub.add_parser("identify", parents=[common], help="FIM correlation analysis")
    sp.add_argument("--investigation", type=int, choices=(1, 2), default=1)
    sp.add_argument("--set", choices=("8", "12", "15"), default="12")
    sp.add_argument("--noise-level", type=float, default=0.01)
    sp.add_argument("--threshold", type=float, default=0.95)
    sp.set_defaults(func=cmd_identify, scenario="sim")

    sp = sub.add_parser("train-pinn", parents=[common], help="train the PINN estimator")
    experiment_flags(sp)
    sp.add_argument("--schedule", help="YAML with schedules/initial_weights overrides")
    sp.set_defaults(func=cmd_train_pinn)

    sp = sub.add_parser("run-pf", parents=[common], help="run the particle filter")
    experiment_flags(sp)
    sp.set_defaults(func=cmd_run_pf)

    sp = sub.add_parser("evaluate", parents=[common],
                        help="recompute metrics from the artifacts in --out")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("sweep", parents=[common], help="run several matrix cells")
    sp.add_argument("--investigations", default="1,2")
    sp.add_argument("--scenarios", default="simulated,noisy,experimental")
    sp.add_argument("--cases", default="1,2,3")
    sp.add_argument("--methods", default="pinn,pf")
    sp.add_argument("--realizations", type=int, default=30)
    sp.add_argument("--data", help="experimental CSV")
    sp.add_argument("--epochs", type=int)
    sp.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    from .pf import PfError
    from .pinn import PinnError
    from .sim import ConvergenceError, IntegrationError

    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        return args.func(args, cfg)
    except (ValueError, SeriesError, ModelError, FileNotFoundError, KeyError,
            yaml.YAMLError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (IntegrationError, ConvergenceError, PinnError, PfError,
            np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
