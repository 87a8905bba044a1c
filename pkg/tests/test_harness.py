import copy
import json
import math

import numpy as np
import pytest

from rhomix import families as F
from rhomix.harness import (ConfigError, ExperimentConfig, ReportRow, fit_rate_slope,
                            random_categorical_model, run_experiment)
from rhomix.measure import hellinger2

IID = {
    "version": 1, "scenario": "iid_recovery",
    "truth": {"family": "gaussian", "params": [0.0, 1.0]},
    "model": {"kind": "descriptors", "candidates": [
        {"family": "gaussian", "params": [0.0, 1.0]},
        {"family": "gaussian", "params": [1.5, 1.0]},
        {"family": "gaussian", "params": [0.0, 3.0]}]},
    "n": [60], "s_policy": {"kind": "fixed", "s": 0}, "replicates": 1, "seed": 3,
}

HMM = {
    "version": 1, "scenario": "hmm_rate",
    "truth": {"Q": [[0.8, 0.2], [0.2, 0.8]],
              "emissions": [{"family": "exponential", "params": [1.0]},
                            {"family": "exponential", "params": [4.0]}]},
    "model": {"L": 2, "w_mode": "stationary", "q_grid": [[[0.8, 0.2], [0.2, 0.8]]],
              "emission_nets": [
                  {"family": "exponential_centered", "center": 1.0, "half": 1, "log_step": 0.3},
                  {"family": "exponential_centered", "center": 4.0, "half": 1, "log_step": 0.3}]},
    "n": [120, 240], "s_policy": {"kind": "fixed", "s": 1}, "replicates": 2, "seed": 5,
}


def test_config_validation():
    ExperimentConfig.from_dict(IID)
    for bad in ({"colour": 1}, {"version": 2}, {"replicates": 0}, {"scenario": "nope"},
                {"s_policy": {"kind": "fixed"}}, {"s_policy": {"kind": "grid", "tau": 2.0}},
                {"n": [2]}, {"seed": -1}):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict({**IID, **bad})
    d = dict(IID)
    del d["seed"]
    with pytest.raises(ConfigError, match="seed"):
        ExperimentConfig.from_dict(d)
    with pytest.raises(ConfigError, match="spacing_selection"):
        ExperimentConfig.from_dict({**HMM, "scenario": "spacing_selection"})
    cfg = ExperimentConfig.from_dict({**IID, "iota": 2.0, "record_timing": True})
    assert ExperimentConfig.from_dict(cfg.to_dict()) == cfg


def test_truth_in_model_gives_zero_risk():
    rep = run_experiment(IID)
    assert not rep.errors and len(rep.rows) == 1
    assert rep.rows[0].h2 == 0.0 and rep.rows[0].chosen_id == "gauss(0,1)"


def test_report_is_deterministic_and_thread_invariant():
    a = run_experiment(HMM).to_csv()
    assert a == run_experiment(HMM).to_csv()
    assert a == run_experiment(HMM, threads=3).to_csv()
    lines = a.splitlines()
    assert lines[0] == "scenario,replicate,n,s_used,h2,param_err,ms,seed"
    assert len(lines) == 1 + 2 * 2
    assert all(line.split(",")[6] == "" for line in lines[1:])


def test_rows_complete_and_in_range():
    rep = run_experiment({**HMM, "s_policy": {"kind": "oracle_scan"}, "n": [40], "replicates": 1})
    assert not rep.errors
    assert [r.s_used for r in rep.rows] == [0, 1, 3, 8]
    assert all(0.0 <= r.h2 <= 1.0 and r.param_err >= 0.0 for r in rep.rows)


def test_timing_column_is_opt_in():
    rep = run_experiment({**IID, "record_timing": True})
    assert rep.rows[0].ms is not None and rep.rows[0].ms >= 0


def test_replicate_errors_are_recorded():
    bad = copy.deepcopy(IID)
    bad["n"] = [5]
    bad["s_policy"] = {"kind": "fixed", "s": 40}
    rep = run_experiment(bad)
    assert len(rep.errors) == 1 and rep.rows[0].h2 is None


def test_fit_rate_slope():
    ns = [100, 200, 400, 800]
    slope, icpt, r2 = fit_rate_slope([(n, 1.0 / n) for n in ns])
    assert abs(slope + 1) <= 1e-12 and abs(icpt) <= 1e-10 and r2 == pytest.approx(1.0)
    slope, _, _ = fit_rate_slope([(n, 0.3) for n in ns for _ in range(3)])
    assert slope == pytest.approx(0.0, abs=1e-12)
    rows = [ReportRow("x", r, n, 0, 2.0 / n ** 0.5 * (1 + 0.1 * r), None, None, 0)
            for n in ns for r in range(3)]
    assert fit_rate_slope(rows)[0] == pytest.approx(-0.5, abs=1e-12)
    with pytest.raises(ValueError):
        fit_rate_slope([(100, 0.1), (200, 0.05)])
    with pytest.raises(ValueError):
        fit_rate_slope([(100, 0.0), (200, 0.05), (400, 0.02)])


def test_random_categorical_model():
    m = random_categorical_model(20, 10, 0.15, 11)
    assert len(m) == 20
    h2 = np.array([m.hellinger2_rows([i])[0] for i in range(len(m))])
    off = h2[~np.eye(20, dtype=bool)]
    assert np.sqrt(off.min()) >= 0.15
    assert m[3].id == "c3"
    with pytest.raises(ConfigError):
        random_categorical_model(50, 2, 0.9, 0, max_tries=200)


def test_langevin_scenario_runs():
    cfg = {"version": 1, "scenario": "langevin_invariant",
           "truth": {"potential": "quadratic", "a": 1.0, "dt": 0.01, "delta_t": 0.1, "burn_in": 100},
           "model": {"family": "gaussian_scale_location", "z_min": -0.5, "z_max": 0.5, "z_count": 3,
                     "sigma_min": 0.5, "sigma_max": 1.0, "sigma_count": 3},
           "n": [300], "s_policy": {"kind": "fixed", "s": 2}, "replicates": 1, "seed": 1}
    rep = run_experiment(cfg)
    assert not rep.errors
    model = rep.models[rep.rows[0].model_file]
    cand = model[model.index_of(rep.rows[0].chosen_id)]
    assert rep.rows[0].h2 == pytest.approx(hellinger2(F.gaussian(0.0, math.sqrt(0.5)), cand),
                                           abs=1e-12)
