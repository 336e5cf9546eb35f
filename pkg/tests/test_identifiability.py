import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from esp_vfm import identifiability as ident
from esp_vfm.identifiability import (ObservationScenario, SensitivityMatrix, analyze,
                                     correlation_matrix, fisher_information,
                                     identifiable_partition, output_sensitivities,
                                     scenario_from, simulate_outputs)


@pytest.fixture(scope="module")
def obs(sim_scenario):
    return scenario_from(sim_scenario)


@pytest.fixture(scope="module")
def S12(inv1, obs):
    return output_sensitivities(inv1, ident.SET_12, obs)


def test_fim_single_row():
    s = np.array([[1.0, -2.0, 0.5]])
    assert np.allclose(fisher_information(s, 2.0), np.outer(s[0], s[0]) / 4.0, rtol=1e-15)


def test_fim_homogeneity_and_hand_sum():
    rng = np.random.default_rng(0)
    s = rng.normal(size=(2, 3))
    sig = np.array([0.3, 1.7])
    f = fisher_information(s, sig)
    hand = np.outer(s[0], s[0]) / 0.09 + np.outer(s[1], s[1]) / 1.7 ** 2
    assert np.allclose(f, hand, rtol=1e-14)
    assert np.allclose(fisher_information(s, 2 * sig), f / 4, rtol=1e-14)
    with pytest.raises(ValueError):
        fisher_information(s, np.array([1.0, 0.0]))


def test_correlation_examples():
    assert np.array_equal(correlation_matrix(np.diag([2.0, 5.0, 0.1])), np.eye(3))
    R = correlation_matrix(np.array([[2.0, 1.0], [1.0, 1.0]]))
    assert R[0, 1] == pytest.approx(-1 / np.sqrt(2), rel=1e-12)
    assert R[0, 0] == 1.0 and R[1, 1] == 1.0
    with pytest.raises(np.linalg.LinAlgError, match="rank"):
        correlation_matrix(np.array([[1.0, 1.0], [1.0, 1.0]]))


def test_partition_examples():
    pairs, order = identifiable_partition(np.eye(4), "abcd")
    assert pairs == [] and order == []
    R = np.eye(3)
    R[0, 1] = R[1, 0] = 0.97
    R[1, 2] = R[2, 1] = -0.99
    pairs, order = identifiable_partition(R, ["rho", "k4p", "mu"])
    assert [p[:2] for p in pairs] == [("k4p", "mu"), ("rho", "k4p")]
    assert order == ["k4p"]


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.01, 100.0), st.integers(0, 3))
def test_correlation_is_scale_free(seed, c, col):
    rng = np.random.default_rng(seed)
    S = rng.normal(size=(20, 4))
    S2 = S.copy()
    S2[:, col] *= c
    R1 = correlation_matrix(fisher_information(S, 1.0))
    R2 = correlation_matrix(fisher_information(S2, 1.0))
    assert np.allclose(R1, R2, atol=1e-9)
    assert np.all(np.abs(R1) <= 1 + 1e-9)
    assert np.array_equal(R1, R1.T)


def test_zero_sensitivity_column(inv1, obs):
    # the valve coefficient only acts when the valve term is enabled
    S = output_sensitivities(inv1.replace(cv=0.3), ("cv", "B"), obs)
    assert np.all(S.S[:, 0] == 0)
    assert np.linalg.norm(S.S[:, 1]) > 0


def test_sensitivity_sign_matches_coarse_oracle(inv1, obs):
    S = output_sensitivities(inv1, ("B",), obs)
    h = 1e-4 * inv1.B
    yp = simulate_outputs(inv1.replace(B=inv1.B + h), obs)
    ym = simulate_outputs(inv1.replace(B=inv1.B - h), obs)
    coarse = (yp - ym) / (2 * h)
    p1 = slice(0, None, 2)
    big = np.abs(coarse[p1]) > 0.05 * np.abs(coarse[p1]).max()
    assert np.all(np.sign(S.S[p1, 0][big]) == np.sign(coarse[p1][big]))
    assert np.linalg.norm(S.S[:, 0] - coarse) < 0.05 * np.linalg.norm(coarse)


def test_grid_refinement(inv1, sim_scenario):
    coarse = scenario_from(sim_scenario)
    t = coarse.times
    fine = ObservationScenario(coarse.x0, coarse.torque, np.linspace(t[0], t[-1], 2 * len(t) - 1))
    a = output_sensitivities(inv1, ("mu", "rho"), coarse)
    b = output_sensitivities(inv1, ("mu", "rho"), fine)
    assert b.S.shape[0] == 2 * a.S.shape[0] - 2
    na = np.linalg.norm(a.S, axis=0) / np.sqrt(a.S.shape[0])
    nb = np.linalg.norm(b.S, axis=0) / np.sqrt(b.S.shape[0])
    assert np.allclose(na, nb, rtol=0.05)


def test_one_sided_agreement(S12):
    assert S12.S.shape == (2 * 30, 12)
    assert np.all(S12.one_sided_agreement < 1e-3)


def test_report_properties(S12, tmp_path):
    rep = analyze(S12)
    assert np.all(np.diag(rep.correlation) == 1.0)
    assert np.array_equal(rep.correlation, rep.correlation.T)
    lam = np.linalg.eigvalsh(rep.fim)
    assert lam.min() >= -1e-9 * np.linalg.norm(rep.fim)
    assert ("rho", "ku") in [tuple(sorted(p[:2], key=ident.SET_12.index)) for p in rep.flagged]
    rep.write(tmp_path / "r.json", tmp_path / "r.csv")
    assert json.loads((tmp_path / "r.json").read_text())["params"] == list(ident.SET_12)
    assert (tmp_path / "r.csv").read_text().startswith(",k1p,")


def test_eight_parameter_report_flags_mu_k4p(inv1, obs):
    rep = analyze(output_sensitivities(inv1, ident.SET_8, obs))
    names = [set(p[:2]) for p in rep.flagged]
    assert {"mu", "k4p"} in names


def test_fifteen_parameter_set_is_worse(S12, inv1, obs):
    S15 = output_sensitivities(inv1, ident.SET_15, obs)
    assert analyze(S15).condition_number >= 10 * analyze(S12).condition_number


def test_sensitivity_matrix_validation():
    with pytest.raises(ValueError):
        SensitivityMatrix(np.zeros((3, 1)), np.zeros(3), ("a",), ("P1", "P2"), np.arange(2.0))
    with pytest.raises(ValueError):
        output_sensitivities(None, (), None)
