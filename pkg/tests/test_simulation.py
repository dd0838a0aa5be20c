import math

import numpy as np
import pytest
from scipy import integrate

from svcplm.exceptions import SimulationInstabilityError
from svcplm.simulation import (
    PRESETS,
    SIGMA_XI2,
    MonteCarloReport,
    ScenarioSpec,
    alpha1,
    alpha1_mean,
    alpha1_tilde,
    alpha2,
    coeff_functions,
    gen_dataset,
    get_preset,
    run_estimation_study,
    run_power_study,
    sigma_e2_from_ratio,
    xi_curve,
)
import svcplm.simulation as sim

import oracles


def test_coefficient_functions():
    a1, at, a2, m = coeff_functions(0.0, 0.3)
    assert a1 == pytest.approx(1.0) and a2 == pytest.approx(-1.0)
    u = np.linspace(0, 3, 7)
    assert np.allclose(alpha1_tilde(u, 0.0), alpha1_mean())
    assert np.allclose(alpha1_tilde(u, 1.0), alpha1(u))


def test_alpha1_mean_against_closed_form():
    assert alpha1_mean() == pytest.approx(oracles.alpha1_mean_closed_form(), abs=1e-8)
    assert alpha1_mean() == pytest.approx(0.5076, abs=1e-4)


def test_xi_variance():
    mean, _ = integrate.quad(xi_curve, 0, 1)
    second, _ = integrate.quad(lambda v: xi_curve(v) ** 2, 0, 1)
    assert second - mean**2 == pytest.approx(SIGMA_XI2, abs=1e-10)
    assert sigma_e2_from_ratio(0.5) == pytest.approx(2.75)
    with pytest.raises(ValueError):
        sigma_e2_from_ratio(1.0)


def test_generator_moments():
    ds, truth = gen_dataset(get_preset("scenario_iii").with_(n=100_000), 0.0, np.random.default_rng(0))
    assert np.var(ds.W[:, 0]) == pytest.approx(1.0, abs=0.02)
    assert np.corrcoef(ds.W.T)[0, 1] == pytest.approx(1 / math.sqrt(5), abs=0.02)
    assert np.var(ds.X[:, 0]) == pytest.approx(0.8, abs=0.02)
    assert np.var(truth.e) == pytest.approx(2.0, abs=0.05)


def test_generator_assembles_model():
    spec = get_preset("scenario_iii")
    ds, t = gen_dataset(spec, 0.5, np.random.default_rng(1))
    Y = t.beta[0] * t.xi + ds.W @ t.beta[1:] + np.sum(t.alpha * ds.X, axis=1) + t.eps
    assert np.allclose(ds.Y, Y)
    assert np.allclose(ds.eta[:, 0], t.xi + t.e)
    assert np.allclose(t.alpha[:, 0], alpha1_tilde(ds.U, 0.5))
    assert np.allclose(t.alpha[:, 1], alpha2(ds.U))


def test_generator_deterministic():
    spec = get_preset("scenario_i")
    a, _ = gen_dataset(spec, 0.1, np.random.default_rng(5))
    b, _ = gen_dataset(spec, 0.1, np.random.default_rng(5))
    assert a.Y.tobytes() == b.Y.tobytes() and a.eta.tobytes() == b.eta.tobytes()


def test_sweep_parameters():
    assert np.allclose(get_preset("scenario_i").parameters(0.25)[0], [0, -0.75, 1])
    assert np.allclose(get_preset("table5").parameters(1.0)[0], [0.2, -0.2, 1])
    _, varrho, _ = get_preset("scenario_ii").parameters(0.7)
    assert varrho == 0.7
    _, varrho, se2 = get_preset("scenario_iv").parameters(0.3)
    assert varrho is None and se2 == pytest.approx(2.75 * 0.7 / 0.3)


def test_spec_round_trip_and_validation():
    spec = get_preset("table5_desk")
    assert ScenarioSpec.from_dict(spec.to_dict()) == spec
    with pytest.raises(ValueError):
        ScenarioSpec(sweep_param="r", sweep=(1.5,))
    with pytest.raises(ValueError):
        ScenarioSpec.from_dict({"bogus": 1})
    with pytest.raises(ValueError):
        get_preset("table7")


def test_estimation_report_shape_and_ranges():
    spec = get_preset("scenario_iii").with_(replicates=4, sweep=(0.0, 0.5), seed=3)
    rep = run_estimation_study(spec)
    assert len(rep.rows) == 2 * 3 * 3
    for row in rep.rows:
        assert 0 <= row["cov"] <= 1 and all(math.isfinite(row[k]) for k in ("est", "se", "sd"))
    assert {r["method"] for r in rep.rows} == {"B", "P", "N"}


def test_power_report_shape():
    spec = get_preset("table5_desk").with_(replicates=2, B=20, sweep=(0.0,))
    rep = run_power_study(spec)
    keys = {(r["test"], r["calibration"], r["method"]) for r in rep.rows}
    assert keys == {(t, c, m) for t in ("T_n", "Wald") for c in ("Aym", "Boot") for m in "BPN"}
    assert rep.columns == ["sweep", "test", "calibration", "method", "power"]


def test_report_deterministic_and_schedule_independent(tmp_path):
    spec = get_preset("scenario_ii").with_(replicates=3, sweep=(0.2,), seed=8)
    a, b = run_estimation_study(spec), run_estimation_study(spec, workers=2)
    a.to_csv(tmp_path / "a.csv")
    b.to_csv(tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_instability_aborts(monkeypatch):
    monkeypatch.setattr(sim, "_estimation_record", lambda *a: (_ for _ in ()).throw(sim.SvcplmError("boom")))
    with pytest.raises(SimulationInstabilityError):
        run_estimation_study(get_preset("scenario_iii").with_(replicates=3, sweep=(0.0,)))


def test_presets_cover_tables():
    for name in ("scenario_i", "scenario_ii", "scenario_iii", "scenario_iv", "table5_desk", "table6_desk"):
        assert name in PRESETS
    assert PRESETS["table6_desk"].replicates == 200 and PRESETS["table6_desk"].B == 200


def test_report_lookup():
    rep = MonteCarloReport("estimation", [{"sweep": 0.0, "method": "P", "coef": "beta1", "est": 1.0,
                                           "se": 0.1, "sd": 0.1, "cov": 0.9}], 1)
    assert rep.lookup(method="P", coef="beta1")[0]["est"] == 1.0
    assert rep.lookup(method="N") == []
