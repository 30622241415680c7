import copy
import math

import numpy as np
import pytest
from scipy import stats

from wnll import io
from wnll.experiment import (ROW_COLUMNS, ConfigError, ExperimentConfig, compute_fits, coupling_exponent,
                             coupling_ratio, fit_loglog, power_of_n_delta, run_experiment)

ARC = {"kind": "arc", "center": [0.0], "radius": math.pi / 4}

CONVERGENCE = {
    "mode": "convergence", "manifold": {"kind": "circle"}, "region": ARC, "label_fn": {"name": "sin_theta"},
    "n_ladder": [600, 1200], "m": 30, "delta_rule": {"rule": "fixed_list", "values": [0.4, 0.2]},
    "seeds": [0, 1], "baseline": True,
}


def cfg(**over):
    d = copy.deepcopy(CONVERGENCE)
    d.update(over)
    return d


# -- config validation ----------------------------------------------------------------

@pytest.mark.parametrize("patch", [
    {"mode": "sweep"},
    {"colour": "red"},
    {"n_ladder": []},
    {"n_ladder": [1000, 500]},
    {"n_ladder": [10.5]},
    {"seeds": []},
    {"m": None},
    {"delta_rule": {"rule": "fixed_list", "values": [1.5]}},
    {"delta_rule": {"rule": "magic"}},
    {"delta_rule": {"rule": "power_of_n", "exponent": 0.5}},
    {"mu_rule": {"rule": "fixed", "values": [-1]}},
    {"mu_rule": {"rule": "golden"}},
    {"sampling": "sobol"},
    {"backend": "gpu"},
    {"reference": "maybe"},
    {"solver": {"method": "gmres"}},
    {"profile": "not_a_kernel"},
    {"label_fn": {"name": "spline"}},
    {"region": {"kind": "cap", "center": [0.0, 0.0], "radius": 0.5}},
])
def test_config_rejects(patch):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(cfg(**patch))


def test_config_requires_keys():
    d = cfg()
    del d["region"]
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(d)
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(cfg(mode="label_rate", label_rates=[0.0]))
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(cfg(mode="consistency", manifold={"kind": "sphere"},
                                       region={"kind": "cap", "center": [0.0, 0.0], "radius": 0.5}))


def test_config_defaults():
    c = ExperimentConfig.from_dict(cfg(baseline=None))
    assert c.reference_policy == "required" and not c.use_baseline
    assert ExperimentConfig.from_dict(cfg(mode="mu_study", baseline=None)).use_baseline
    assert ExperimentConfig.from_dict(cfg(mode="mu_study")).reference_policy == "auto"
    assert c.region_spec.geodesic_radius == pytest.approx(math.pi / 4)


# -- delta coupling ---------------------------------------------------------------------

@pytest.mark.parametrize("k,expected", [(1, 1 / 8), (2, 1 / 10), (3, 1 / 12)])
def test_coupling_exponent(k, expected):
    assert coupling_exponent(k) == expected


@pytest.mark.parametrize("k", [1, 2])
def test_coupled_delta_cancels_power_of_n(k):
    # at the critical exponent, delta^-(k+3) n^-1/2 is exactly 1 when a = 1
    for n in (1e3, 1e5, 1e7):
        d = power_of_n_delta(n, k, {"a": 1.0})
        assert d ** -(k + 3) * n ** -0.5 == pytest.approx(1.0)
        assert coupling_ratio(n, d, k) == pytest.approx(math.sqrt(math.log(n) - 2 * math.log(d) + 1))


def test_power_of_n_enforcement():
    with pytest.raises(ConfigError):
        power_of_n_delta(1000, 1, {"exponent": 0.2})
    assert power_of_n_delta(1000, 1, {"exponent": 0.2, "enforce_coupling": False}) == pytest.approx(1000 ** -0.2)
    assert power_of_n_delta(1000, 1, {"exponent": 0.1, "a": 2.0}) == pytest.approx(2 * 1000 ** -0.1)


# -- fitting -------------------------------------------------------------------------

def test_fit_matches_linregress():
    rng = np.random.default_rng(0)
    x = np.array([0.05, 0.1, 0.2, 0.4, 0.8])
    y = 3 * x ** 1.3 * np.exp(rng.normal(0, 0.05, x.size))
    fit = fit_loglog(x, y)
    ref = stats.linregress(np.log(x), np.log(y))
    assert fit["slope"] == pytest.approx(ref.slope, rel=1e-12)
    assert fit["intercept"] == pytest.approx(ref.intercept, rel=1e-12)
    assert fit["stderr"] == pytest.approx(ref.stderr, rel=1e-10)
    with pytest.raises(ValueError):
        fit_loglog([1.0], [2.0])


def test_fits_skip_null_rows():
    rows = [{"seed": 0, "n": 100, "delta": d, "err_max": e} for d, e in [(0.1, 0.01), (0.2, 0.02), (0.4, None)]]
    fits = compute_fits("convergence", rows)
    assert fits["err_max_vs_delta"]["median_slope"] == pytest.approx(1.0)
    assert fits["err_max_vs_n"]["median_slope"] is None


# -- runs ----------------------------------------------------------------------------

@pytest.fixture(scope="module")
def convergence_report():
    return run_experiment(cfg())


def test_convergence_rows(convergence_report):
    rows = convergence_report.rows
    assert len(rows) == 2 * 2 * 2
    assert [(r["seed"], r["n"], r["delta"]) for r in rows] == [
        (s, n, d) for s in (0, 1) for n in (600, 1200) for d in (0.4, 0.2)]
    for r in rows:
        assert set(r) == set(ROW_COLUMNS["convergence"])
        assert r["connected"] and r["converged"] and r["err_max"] > 0
        assert r["mu"] == r["n"] / r["m"]
    assert "wall_time" not in rows[0]


def test_slopes_recomputed_from_rows(convergence_report):
    for fit in convergence_report.fits["err_max_vs_delta"]["fits"]:
        sel = [r for r in convergence_report.rows if r["seed"] == fit["group"]["seed"] and r["n"] == fit["group"]["n"]]
        ref = stats.linregress(np.log([r["delta"] for r in sel]), np.log([r["err_max"] for r in sel]))
        assert fit["slope"] == pytest.approx(ref.slope, rel=1e-12)


def test_report_csv_is_deterministic(tmp_path, convergence_report, monkeypatch):
    monkeypatch.setenv("WNLL_THREADS", "3")
    again = run_experiment(cfg())
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    io.write_rows_csv(a, convergence_report.rows, convergence_report.columns)
    io.write_rows_csv(b, again.rows, again.columns)
    assert a.read_bytes() == b.read_bytes()
    back = io.io_roundtrip(tmp_path / "r.json", convergence_report.to_dict())
    assert compute_fits("convergence", back["rows"]) == convergence_report.fits


def test_disconnected_rows_have_null_errors():
    report = run_experiment(cfg(n_ladder=[40], m=2, seeds=[0, 1, 2],
                                delta_rule={"rule": "fixed_list", "values": [0.01]}))
    assert any(not r["connected"] for r in report.rows)
    for r in report.rows:
        if not r["connected"]:
            assert r["err_max"] is None and r["J_wnll"] is None and r["iterations"] is None
            assert r["unreachable"] > 0


def test_mu_study_rows():
    report = run_experiment(cfg(mode="mu_study", n_ladder=[600], seeds=[0],
                                mu_rule={"rule": "fixed", "values": [0, 1, 20]},
                                delta_rule={"rule": "fixed_list", "values": [0.2]}))
    by_mu = {r["mu"]: r for r in report.rows}
    assert by_mu[0.0]["err_max"] is None and by_mu[0.0]["mu_margin"] == 0.0 and not by_mu[0.0]["mu_pass"]
    assert by_mu[1.0]["J_wnll"] == by_mu[1.0]["J_gl"]
    assert by_mu[20.0]["J_wnll"] < by_mu[20.0]["J_gl"]


def test_label_rate_rows():
    report = run_experiment(cfg(mode="label_rate", n_ladder=[800], label_rates=[0.02, 0.1, 1.0], seeds=[0],
                                delta_rule={"rule": "fixed_list", "values": [0.2]}))
    rows = {r["label_rate"]: r for r in report.rows}
    assert rows[0.02]["m"] == 16 and rows[0.02]["n"] == 784
    assert rows[1.0]["J_wnll"] == 0.0 and rows[1.0]["J_gl"] == 0.0 and rows[1.0]["err_max"] == 0.0
    assert set(report.rows[0]) == set(ROW_COLUMNS["label_rate"])


def test_power_of_n_rows_report_coupling():
    report = run_experiment(cfg(n_ladder=[500, 2000], seeds=[0],
                                delta_rule={"rule": "power_of_n", "a": 0.4}))
    deltas = [r["delta"] for r in report.rows]
    assert deltas == pytest.approx([0.4 * 500 ** -0.125, 0.4 * 2000 ** -0.125])
    assert set(report.summary["coupling_ratio"]) == {"500", "2000"}


def test_discrepancy_rows_and_envelope():
    report = run_experiment({"mode": "discrepancy", "manifold": {"kind": "circle"}, "region": ARC,
                             "n_ladder": [500, 2000], "seeds": [0, 1, 2], "centers_per_dim": 128,
                             "delta_rule": {"rule": "fixed_list", "values": [0.2]}})
    assert len(report.rows) == 6
    base = [r for r in report.rows if r["n"] == 500]
    assert max(r["ratio"] for r in base) == pytest.approx(1.0)
    assert all(r["sup_gap"] <= r["bound"] * (1 + 1e-12) for r in base)
    assert report.summary["calibration_n"] == 500
    assert report.fits["sup_gap_vs_n"]["median_slope"] < 0


def test_consistency_rows():
    report = run_experiment({"mode": "consistency", "manifold": {"kind": "circle"},
                             "region": {"kind": "arc", "center": [0.0], "radius": 0.3},
                             "label_fn": "sin_theta", "sampling": "quasi_uniform", "n_ladder": [8000],
                             "delta_rule": {"rule": "fixed_list", "values": [0.2, 0.1]}, "queries": 4})
    assert [r["delta"] for r in report.rows] == [0.2, 0.1]
    assert all(r["const_residual"] <= 1e-12 for r in report.rows)
    assert report.rows[1]["max_residual"] < report.rows[0]["max_residual"]
