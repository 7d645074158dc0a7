import csv
import io
import json
import math
from dataclasses import replace

import numpy as np
import pytest

from ocmdp.cli import main
from ocmdp.errors import ConfigurationError
from ocmdp.harness import (
    benchmark,
    compute_regret,
    fit_slope,
    record_csv,
    run_experiment,
    sweep_horizons,
    verify_suite,
    write_record,
)
from ocmdp.scenario import ScenarioConfig, build_scenario, reference_config, save_scenario


@pytest.fixture(scope="module")
def reference():
    return build_scenario(reference_config())


@pytest.fixture(scope="module")
def reference_dir(tmp_path_factory, reference):
    return save_scenario(reference, tmp_path_factory.mktemp("ref") / "scn")


# ---------------------------------------------------------------- runs


def test_single_slot_run(reference):
    rec = run_experiment(reference, 1, 0)
    assert rec.states.shape == (1, 2) and rec.g_real.shape == (1, 2, 2)
    assert rec.step_norm[0].tolist() == [0.0, 0.0]
    assert np.array_equal(rec.q_final, [0.0, 0.0])


def test_run_is_deterministic(reference):
    a = run_experiment(reference, 200, 3)
    b = run_experiment(build_scenario(reference_config()), 200, 3)
    assert record_csv(a) == record_csv(b)
    c = run_experiment(reference, 200, 4)
    assert not np.array_equal(a.actions, c.actions)


def test_csv_running_sums(reference):
    rec = run_experiment(reference, 60, 1)
    rows = list(csv.DictReader(io.StringIO(record_csv(rec))))
    assert len(rows) == 60 * 2
    cum, cum_g2 = 0.0, 0.0
    for r in rows:
        cum += float(r["f_real"])
        cum_g2 += float(r["g_real_2"])
        assert float(r["cum_f_real"]) == pytest.approx(cum, abs=1e-12)
        assert float(r["cum_g_real_2"]) == pytest.approx(cum_g2, abs=1e-12)
    assert float(rows[-1]["cum_f_real"]) == pytest.approx(rec.F_T, abs=1e-12)
    assert rec.F_T_from1 == pytest.approx(rec.F_T - rec.f_real[0].sum())


def test_write_record(tmp_path, reference):
    rec = run_experiment(reference, 30, 2)
    csv_path, json_path = write_record(rec, tmp_path)
    assert csv_path.name == "run_T30_seed2.csv"
    summary = json.loads(json_path.read_text())
    assert summary["slot_range"] == [0, 29] and summary["scenario_hash"] == reference.digest()


def test_checked_run_clean(reference):
    rec = run_experiment(reference, 500, 0, check=True)
    assert rec.lemma.ok and rec.lemma.slots == 499


def test_queue_norm_series_starts_at_zero(reference):
    rec = run_experiment(reference, 50, 0)
    assert rec.q_norm[0] == 0.0 and rec.q_norm[1] == 0.0


# ---------------------------------------------------------------- regret


def test_regret_against_own_benchmark_parts(reference):
    T = 300
    rec = run_experiment(reference, T, 0)
    base = benchmark(reference, T, 0)
    reg = compute_regret(rec, base)
    assert reg.imaginary == pytest.approx(rec.ef_dot.sum() - T * base.value, abs=1e-9)
    assert np.allclose(reg.violation_realized, rec.G_T)


def test_constant_penalty_zero_regret(reference):
    scn = replace(reference, f_base=[np.full(6, 0.3), np.full(6, 0.3)], _blocks={}, _regime_counts={})
    T = 200
    reg = compute_regret(run_experiment(scn, T, 0), benchmark(scn, T, 0))
    assert abs(reg.imaginary) <= 1e-9


def test_hash_mismatch_rejected(reference):
    other = build_scenario(ScenarioConfig(seed=1))
    rec = run_experiment(reference, 20, 0)
    with pytest.raises(ConfigurationError):
        compute_regret(rec, benchmark(other, 20))
    with pytest.raises(ConfigurationError):
        compute_regret(rec, benchmark(reference, 21))


def test_path_benchmark_needs_matching_seed():
    scn = build_scenario(ScenarioConfig(penalty_process="sinusoidal", seed=2))
    rec = run_experiment(scn, 100, 1)
    compute_regret(rec, benchmark(scn, 100, 1))
    with pytest.raises(ConfigurationError):
        compute_regret(rec, benchmark(scn, 100, 2))


def test_fit_slope_examples():
    assert fit_slope([100, 400, 1600], [10, 20, 40]) == pytest.approx(0.5)
    assert fit_slope([100, 400, 1600], [5, 5, 5]) == pytest.approx(0.0, abs=1e-12)
    # regrets below 1 are floored so the log stays finite
    assert fit_slope([100, 400, 1600], [-3, 0.2, 1]) == pytest.approx(0.0, abs=1e-12)


# ---------------------------------------------------------------- sweeps


def test_sweep_preconditions(reference):
    with pytest.raises(ConfigurationError):
        sweep_horizons(reference, [100, 200], 5)
    with pytest.raises(ConfigurationError):
        sweep_horizons(reference, [100, 200, 400], 4)
    with pytest.raises(ConfigurationError):
        sweep_horizons(reference, [100, 400, 200], 5)


def test_small_sweep_serial(reference):
    res = sweep_horizons(reference, [50, 100, 200], 5, workers=1)
    assert [r.T for r in res.rows] == [50, 100, 200]
    assert all(len(r.regret) == 5 for r in res.rows)
    assert math.isfinite(res.slope) and not res.partial
    assert res.rows[0].constants["C"] > 0


def test_sweep_parallel_matches_serial(reference):
    a = sweep_horizons(reference, [40, 80, 160], 5, workers=1)
    b = sweep_horizons(reference, [40, 80, 160], 5, workers=2)
    assert a.to_dict() == b.to_dict()


# ---------------------------------------------------------------- verification


def test_verify_suite_passes(reference_dir):
    rep = verify_suite(reference_dir, T=300, trials=200, projection_trials=10)
    assert rep.ok, "\n".join(rep.lines())
    names = {r.name for r in rep.results}
    assert {"slater", "oracle", "sample-path-bounds", "perturbation-gap"} <= names


def test_verify_suite_broken_kernel(tmp_path, reference):
    d = save_scenario(reference, tmp_path / "s")
    models = json.loads((d / "models.json").read_text())
    models["models"][1]["kernel"][0][0][0] += 0.1
    (d / "models.json").write_text(json.dumps(models))
    rep = verify_suite(d)
    assert not rep.ok
    assert [(r.module, r.name) for r in rep.failures()] == [("mdp-core", "kernel-row-sum")]


def test_verify_suite_no_slater_margin(tmp_path, reference):
    d = save_scenario(reference, tmp_path / "s")
    tab = json.loads((d / "functions.json").read_text())
    tab["g_base"] = [(np.abs(np.asarray(g)) + 0.1).tolist() for g in tab["g_base"]]
    (d / "functions.json").write_text(json.dumps(tab))
    rep = verify_suite(d)
    assert [(r.module, r.name) for r in rep.failures()] == [("scenario-env", "slater")]


# ---------------------------------------------------------------- CLI


def test_cli_end_to_end(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(reference_config().to_dict()))
    scn = tmp_path / "scn"
    assert main(["gen", "--config", str(cfg), "--out", str(scn)]) == 0
    for name in ("config.json", "models.json", "functions.json", "certificate.json"):
        assert (scn / name).exists()

    assert main(["run", "--scenario", str(scn), "--T", "120", "--seed", "1", "--check"]) == 0
    first = (scn / "runs" / "run_T120_seed1.csv").read_bytes()
    assert main(["run", "--scenario", str(scn), "--T", "120", "--seed", "1", "--out", str(tmp_path / "again")]) == 0
    assert (tmp_path / "again" / "run_T120_seed1.csv").read_bytes() == first
    summary = json.loads((scn / "runs" / "run_T120_seed1.json").read_text())
    assert "regret" in summary and summary["lemma_checks"]["slots"] == 119

    assert main(["baseline", "--scenario", str(scn), "--T", "1000"]) == 0
    base = json.loads((scn / "baseline.json").read_text())
    assert base["constants"]["C"] > 0 and len(base["theta"]) == 2

    out = tmp_path / "sweep.json"
    assert main(["sweep", "--scenario", str(scn), "--T", "40,80,160", "--seeds", "5",
                 "--workers", "1", "--out", str(out)]) == 0
    assert len(json.loads(out.read_text())["rows"]) == 3

    assert main(["check", "--scenario", str(scn), "--T", "200"]) == 0
    assert "ALL PASS" in capsys.readouterr().out


def test_cli_errors(tmp_path, capsys):
    assert main(["run", "--scenario", str(tmp_path / "missing"), "--T", "10"]) == 1
    bad = tmp_path / "cfg.json"
    bad.write_text(json.dumps({"K": 0}))
    assert main(["gen", "--config", str(bad), "--out", str(tmp_path / "x")]) == 1
    assert "ConfigurationError" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        main(["sweep", "--scenario", "x"])
