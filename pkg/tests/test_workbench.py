import json

import numpy as np
import pytest

from esp_vfm import workbench as wb
from esp_vfm.timeseries import SeriesError, TimeSeries
from esp_vfm.workbench import (PARTIAL, ExperimentSpec, derive_seed, evaluate_directory,
                               experiment_matrix, ingest_experimental_csv, mape_params,
                               mape_states, prepare_experimental, run_experiment)

HEADER = "t_s,P1_Pa,P2_Pa,Q1_m3s,omega_rads,torque_Nm"


def _ts(t, **ch):
    return TimeSeries(np.asarray(t, float), {k: np.asarray(v, float) for k, v in ch.items()})


def test_state_mape_examples():
    truth = _ts([0, 1], P1=[100, 200])
    assert mape_states(truth, _ts([0, 1], P1=[110, 190]))[0]["P1"] == pytest.approx(7.5)
    assert mape_states(truth, truth)[0]["P1"] == 0.0
    assert mape_states(truth, _ts([0, 1], P1=[101, 202]))[0]["P1"] == pytest.approx(1.0)


def test_state_mape_excludes_zero_truth():
    m, excl = mape_states(_ts([0, 1, 2], Q=[0, 2, 4]), _ts([0, 1, 2], Q=[5, 1, 4]))
    assert m["Q"] == pytest.approx(25.0) and excl["Q"] == 1
    with pytest.raises(SeriesError):
        mape_states(_ts([0, 1], Q=[1, 2]), _ts([0, 2], Q=[1, 2]))


def test_parameter_mape_examples():
    assert mape_params(3.0, [3.0] * 30) == (0.0, 0.0)
    m, s = mape_params(2.0, [1.8, 2.2])
    assert m == pytest.approx(10.0) and s == pytest.approx(0.0, abs=1e-12)
    m, s = mape_params(-5.0, [-5.0, -6.0])
    assert m == pytest.approx(10.0) and s == pytest.approx(10.0)
    with pytest.raises(ValueError):
        mape_params(0.0, [1.0])


def test_matrix_enumerates_eighteen_cells():
    cells = experiment_matrix(realizations=2)
    assert len(cells) == 18
    assert len({c.label for c in cells}) == 18
    assert all(c.realizations == 2 for c in cells)


def test_spec_validation():
    assert ExperimentSpec(scenario="exp").scenario == "experimental"
    for bad in ({"investigation": 3}, {"scenario": "field"}, {"case": 4}, {"realizations": 0},
                {"methods": ("pinn", "ekf")}):
        with pytest.raises(ValueError):
            ExperimentSpec(**bad)


def test_seed_splitting():
    a = derive_seed(0, 1, "simulated", 1, 0, "noise")
    assert a == derive_seed(0, 1, "simulated", 1, 0, "noise")
    others = {derive_seed(0, 1, "simulated", 1, 0, s) for s in ("init", "pf")}
    others |= {derive_seed(1, 1, "simulated", 1, 0, "noise"),
               derive_seed(0, 2, "simulated", 1, 0, "noise"),
               derive_seed(0, 1, "noisy", 1, 0, "noise"),
               derive_seed(0, 1, "simulated", 2, 0, "noise"),
               derive_seed(0, 1, "simulated", 1, 1, "noise")}
    assert a not in others and len(others) == 7
    assert 0 <= a < 2 ** 32


def _write(path, lines):
    path.write_text("\n".join(lines) + "\n")
    return path


def test_ingest_well_formed(tmp_path):
    p = _write(tmp_path / "a.csv", [HEADER + ",Q2_m3s,Qp_m3s",
                                    "0.0,1e5,4e5,0.01,300,50,0.01,0.01",
                                    "0.004,1e5,4e5,0.01,300,50,0.01,0.01",
                                    "0.008,1e5,4e5,0.01,300,50,0.01,0.01"])
    ts = ingest_experimental_csv(p)
    assert len(ts) == 3 and PARTIAL not in ts.flags
    assert ts.names == ["P1", "P2", "Q1", "omega", "torque", "Q2", "Qp"]


def test_ingest_duplicate_timestamp_names_row(tmp_path):
    p = _write(tmp_path / "d.csv", [HEADER, "0.0,1,2,3,4,5", "0.004,1,2,3,4,5",
                                    "0.004,1,2,3,4,5"])
    with pytest.raises(SeriesError, match="row 4"):
        ingest_experimental_csv(p)


def test_ingest_rejections(tmp_path):
    with pytest.raises(SeriesError, match="row 3"):
        ingest_experimental_csv(_write(tmp_path / "n.csv", [HEADER, "0,1,2,3,4,5",
                                                            "1,1,nan,3,4,5"]))
    with pytest.raises(SeriesError, match="missing columns \\['torque_Nm'\\]"):
        ingest_experimental_csv(_write(tmp_path / "s.csv", ["t_s,P1_Pa,P2_Pa,Q1_m3s,omega_rads",
                                                            "0,1,2,3,4"]))
    with pytest.raises(SeriesError, match="unexpected columns \\['T_K'\\]"):
        ingest_experimental_csv(_write(tmp_path / "x.csv", [HEADER + ",T_K", "0,1,2,3,4,5,6"]))
    with pytest.raises(FileNotFoundError):
        ingest_experimental_csv(tmp_path / "missing.csv")


def test_ingest_without_downstream_flow_is_partial(tmp_path):
    p = _write(tmp_path / "p.csv", [HEADER, "0,1,2,3,4,5", "0.5,1,2,3,4,5"])
    assert PARTIAL in ingest_experimental_csv(p).flags


def test_prepare_experimental(tmp_path):
    fs, n = 250.0, 250 * 30
    t = np.arange(n) / fs
    rng = np.random.default_rng(0)
    raw = _ts(t, P1=-3e5 + 2e3 * np.sin(2 * np.pi * 60 * t), P2=4e5 + rng.normal(0, 1, n),
              Q1=np.full(n, 0.0085), omega=np.full(n, 300.0),
              torque=45.0 + 5.0 * (t > 10) + 3 * np.sin(2 * np.pi * 30 * t))
    raw.flags.add(PARTIAL)
    grid, torque = prepare_experimental(raw)
    assert grid.sample_interval() == pytest.approx(0.5) and len(grid) == 60
    assert PARTIAL in grid.flags and "torque" not in grid.channels
    assert np.allclose(grid["Q1"], 0.0085, rtol=1e-12)
    # the 60 Hz line is gone after the 10 Hz filter
    assert np.max(np.abs(grid["P1"] + 3e5)) < 1.0
    assert torque(25.0) == pytest.approx(50.0, abs=1e-3)
    with pytest.raises(SeriesError):
        prepare_experimental(raw, dt=0.5 + 1e-3)


def test_experimental_cell_without_data_is_skipped(tmp_path):
    rep = run_experiment(ExperimentSpec(scenario="experimental", out_dir=str(tmp_path),
                                        data_path=str(tmp_path / "none.csv")))
    assert set(rep) == {"skip"} and rep["skip"].status == "skipped"
    assert json.loads((tmp_path / "skip.json").read_text())["label"] == \
        "inv1_experimental_case1"


def _small(tmp_path, name):
    return ExperimentSpec(realizations=1, seed=3, epochs=40, out_dir=str(tmp_path / name))


def test_run_is_deterministic_and_replayable(tmp_path):
    a = run_experiment(_small(tmp_path, "a"))
    b = run_experiment(_small(tmp_path, "b"))
    assert set(a) == {"pinn", "pf"}
    for m in a:
        assert a[m].to_dict() | {"label": None} == b[m].to_dict() | {"label": None}
    stored = json.loads((tmp_path / "a" / "report.json").read_text())
    replay = {m: r.to_dict() for m, r in evaluate_directory(tmp_path / "a").items()}
    assert replay == stored
    rec = json.loads((tmp_path / "a" / "r000" / "record.json").read_text())
    assert rec["pinn"]["seed"] == derive_seed(3, 1, "simulated", 1, 0, "init")
    assert set(rec["pf"]["estimates"]) == {"B", "mu", "rho"}


def test_existing_realizations_are_reused(tmp_path):
    spec = _small(tmp_path, "c")
    run_experiment(spec)
    rec = tmp_path / "c" / "r000" / "record.json"
    doc = json.loads(rec.read_text())
    doc["pf"]["estimates"]["mu"] *= 2
    rec.write_text(json.dumps(doc))
    again = run_experiment(spec)
    assert again["pf"].estimates["mu"] == [doc["pf"]["estimates"]["mu"]]


def test_report_rejects_negative_metrics():
    with pytest.raises(ValueError):
        wb.MetricReport("x", "pf", {"P1": -1.0}, {}, {}, {})
