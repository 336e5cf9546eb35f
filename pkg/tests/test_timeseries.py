import numpy as np
import pytest

from esp_vfm.timeseries import SeriesError, TimeSeries, split_column


def test_csv_round_trip(tmp_path):
    ts = TimeSeries(np.array([0.0, 0.5, 1.0]),
                    {"P1": np.array([1.0, 2.0, 3.5]), "omega": np.array([1 / 3, 2.0, 3.0])},
                    {"P1": "Pa", "omega": "rads"})
    path = tmp_path / "a.csv"
    ts.to_csv(path)
    assert path.read_text().splitlines()[0] == "t_s,P1_Pa,omega_rads"
    back = TimeSeries.from_csv(path)
    assert np.array_equal(back.times, ts.times)
    assert np.array_equal(back["omega"], ts["omega"])
    assert back.units == ts.units


def test_invariants():
    with pytest.raises(SeriesError, match="increasing"):
        TimeSeries(np.array([0.0, 1.0, 1.0]), {"x": np.zeros(3)})
    with pytest.raises(SeriesError, match="shape"):
        TimeSeries(np.array([0.0, 1.0]), {"x": np.zeros(3)})
    with pytest.raises(SeriesError, match="non-finite"):
        TimeSeries(np.array([0.0, 1.0]), {"x": np.array([0.0, np.nan])})


def test_csv_errors(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("t_s,x\n0,1\n1,nan\n")
    with pytest.raises(SeriesError, match="row 3"):
        TimeSeries.from_csv(p)
    p.write_text("time,x\n0,1\n")
    with pytest.raises(SeriesError):
        TimeSeries.from_csv(p)
    p.write_text("")
    with pytest.raises(SeriesError):
        TimeSeries.from_csv(p)


def test_helpers():
    ts = TimeSeries(np.arange(5) * 0.5, {"a": np.arange(5.0), "b": -np.arange(5.0)})
    assert ts.is_uniform() and ts.sample_interval() == 0.5
    assert ts.select(["b"]).names == ["b"]
    assert ts.matrix(["a", "b"]).shape == (5, 2)
    assert split_column("Q1_m3s") == ("Q1", "m3s")
    assert split_column("x") == ("x", "")
