import json
import math

import numpy as np
import pytest

from rbmlab import (
    AppConfig,
    ConfigError,
    ExperimentReport,
    LinearParams,
    Verdict,
    full_cov_linear,
    moment_reference,
    oracle_table,
    parse_config,
    rbm_cov_linear,
    run_experiment,
)
from rbmlab.cli import main


def empty_config(**experiment):
    return AppConfig(model=None, sim=None, experiment=experiment)


def test_moment_reference_gaussian_moments():
    assert moment_reference(1.7, 2, 1) == pytest.approx(1.7, rel=1e-14)
    assert moment_reference(0.5, 4, 1) == pytest.approx(3 * 0.25, rel=1e-14)
    assert moment_reference(1.0, 8, 1) == pytest.approx(105.0, rel=1e-13)
    assert moment_reference(2.0, 2, 3) == pytest.approx(6.0, rel=1e-14)
    # cross-check against direct quadrature of the chi distribution
    from scipy.integrate import quad

    want = quad(
        lambda r: r**3.2 * r ** (2 - 1) * np.exp(-(r**2) / (2 * 0.8)),
        0,
        np.inf,
    )[0] / quad(lambda r: r ** (2 - 1) * np.exp(-(r**2) / (2 * 0.8)), 0, np.inf)[0]
    assert moment_reference(0.8, 3.2, 2) == pytest.approx(want, rel=1e-9)


def test_oracle_table_contents():
    params = LinearParams(a=1.0, kappa=0.5, sigma=1.0, m0=0.0, v0=1.0)
    table = oracle_table(params, n=4, t=1.0, p=2, tau=0.25)
    assert table["full"]["variance"] == pytest.approx(full_cov_linear(params, 4, 1.0).variance)
    rbm = rbm_cov_linear(params, 4, 2, 0.25, 4)
    assert table["rbm"]["variance"] == pytest.approx(rbm.variance)
    assert np.asarray(table["rbm"]["covariance"]).shape == (4, 4)
    with pytest.raises(ConfigError):
        oracle_table(params, n=4, t=1.0, p=2)  # tau missing
    with pytest.raises(ConfigError):
        oracle_table(params, n=4, t=1.0, p=2, tau=0.3)  # grid misses t


# --- dispatch and seeding -------------------------------------------------------


def test_run_experiment_rejects_unknowns():
    with pytest.raises(ConfigError):
        run_experiment("levitate", empty_config())
    with pytest.raises(ConfigError):
        run_experiment("hierarchy", empty_config(kind="bench"))
    with pytest.raises(ConfigError):
        run_experiment("hierarchy", empty_config(gamme=1.0))  # typo


def fast_batching_config(**extra):
    return empty_config(n=4, p=2, samples=0, **extra)


def test_seed_resolution_order():
    sim_cfg = parse_config(
        {"sim": {"scheme": "full", "n": 2, "tau": 0.1, "t_end": 0.1, "seed": 5}}
    )
    cfg = AppConfig(model=None, sim=sim_cfg.sim, experiment={"n": 4, "p": 2, "samples": 0})
    assert run_experiment("verify-batching", cfg).environment["seed"] == 5
    cfg9 = AppConfig(model=None, sim=sim_cfg.sim, experiment={**cfg.experiment, "seed": 9})
    assert run_experiment("verify-batching", cfg9).environment["seed"] == 9
    assert run_experiment("verify-batching", cfg9, seed=3).environment["seed"] == 3
    assert run_experiment("verify-batching", fast_batching_config()).environment["seed"] == 0


def test_report_round_trip_byte_identical():
    report = run_experiment("verify-batching", fast_batching_config())
    text = report.to_json()
    again = ExperimentReport.from_json(text)
    assert again.to_json() == text
    assert text.endswith("\n")
    payload = json.loads(text)
    assert set(payload) == {"experiment", "inputs", "points", "tables", "verdicts", "environment"}


def test_reports_are_deterministic():
    a = run_experiment("converge-tau", empty_config(taus=[0.2, 0.1, 0.05], n=4))
    b = run_experiment("converge-tau", empty_config(taus=[0.2, 0.1, 0.05], n=4))
    assert a.to_json() == b.to_json()


def test_verify_batching_verdicts():
    report = run_experiment("verify-batching", empty_config(n=4, p=2, samples=4000))
    ids = [v.criterion for v in report.verdicts]
    assert ids == ["criterion-1", "criterion-1"]
    assert report.passed
    assert report.tables["marginal"][0]["den"] == 3
    assert report.environment["wall_times"] == {}


def test_verify_batching_anchor_override():
    report = run_experiment("verify-batching", empty_config(n=6, p=3, anchors=[2], samples=0))
    assert report.inputs["experiment"]["anchors"] == [2]
    assert report.passed
    with pytest.raises(ConfigError):
        run_experiment("verify-batching", empty_config(n=4, p=2, anchors=[7], samples=0))


def test_converge_tau_verdict_and_label():
    report = run_experiment("converge-tau", empty_config(taus=[0.2, 0.1, 0.05], n=4))
    (v,) = report.verdicts
    assert v.criterion == "criterion-4"
    assert v.passed and not v.advisory
    assert report.tables["kl_label"] == "KL (Gaussian moment proxy)"
    assert {pt["x"] for pt in report.points} == {0.2, 0.1, 0.05}
    # impossible slope window must fail honestly
    bad = run_experiment(
        "converge-tau", empty_config(taus=[0.2, 0.1, 0.05], n=4, kl_slope_range=[10, 11])
    )
    assert not bad.passed and bad.failing()[0].criterion == "criterion-4"


def test_converge_n_oracle_verdicts():
    report = run_experiment("converge-n", empty_config(ns=[4, 8, 16], k_list=[2, 3]))
    ids = sorted(v.criterion for v in report.verdicts)
    assert ids == ["criterion-5", "criterion-6"]
    assert all(isinstance(v.passed, bool) for v in report.verdicts)


def test_hierarchy_report():
    report = run_experiment(
        "hierarchy", empty_config(gamma=1.0, k_max=2, l_max=10, t_grid=[0.0, 0.5, 1.0])
    )
    (v,) = report.verdicts
    assert v.criterion == "criterion-9" and v.passed
    assert v.measured["pointwise_violations"] == 0
    assert v.measured["a11_max_error"] < 1e-8
    assert len(report.point_table) == 2 * 10 * 3 - 3  # k <= l rows only, on 3 times
    assert report.tables["bounds"]["r_list"] == [0, 1]


def test_moment_check_needs_model_and_sim():
    with pytest.raises(ConfigError):
        run_experiment("moment-check", empty_config())
    cfg = parse_config(
        {
            "model": {"family": "sine", "sigma": 1.0},
            "sim": {
                "scheme": "rbm",
                "n": 16,
                "p": 2,
                "tau": 0.1,
                "t_end": 0.3,
                "replicas": 2,
                "seed": 1,
            },
            "experiment": {"orders": [2, 4]},
        }
    )
    report = run_experiment("moment-check", cfg)
    (v,) = report.verdicts
    assert v.criterion == "criterion-8" and v.passed
    assert set(v.measured["sup_ratio"]) == {"2.0", "4.0"}
    assert report.tables["reference"]["stationary_variance"] == 1.0
    assert {pt["q"] for pt in report.points} == {2.0, 4.0}


def test_bench_is_advisory_without_assertion():
    report = run_experiment("bench", empty_config(ns=[64, 128, 256], reps=1))
    (v,) = report.verdicts
    assert v.criterion == "criterion-11" and v.advisory
    assert report.passed  # advisory verdicts never gate
    wall = report.environment["wall_times"]
    assert set(wall) == {"64", "128", "256"}
    assert set(wall["64"]) == {"full_seconds", "rbm_seconds"}


def test_strong_coupling_reports_no_verdicts():
    cfg = parse_config(
        {
            "model": {"family": "linear", "params": {"a": 1.0, "kappa": 0.5}},
            "experiment": {"taus": [0.2, 0.1], "n": 4, "p": 2, "t_end": 0.4, "replicas": 8},
        }
    )
    report = run_experiment("strong-coupling", cfg)
    assert report.verdicts == []
    assert {pt["x"] for pt in report.points} == {0.2, 0.1}
    assert "monotone_decreasing_in_tau" in report.tables


# --- CLI ------------------------------------------------------------------------


def test_cli_success_and_report_file(tmp_path, capsys):
    out = tmp_path / "report.json"
    code = main(["verify-batching", "--n", "4", "--p", "2", "--samples", "0", "--out", str(out)])
    assert code == 0
    report = ExperimentReport.from_json(out.read_text())
    assert report.experiment == "verify-batching"
    capsys.readouterr()


def test_cli_stdout_report(capsys):
    assert main(["converge-tau", "--seed", "1"]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["environment"]["seed"] == 1


def test_cli_config_errors_exit_2(tmp_path, capsys):
    assert main(["verify-batching", "--n", "5", "--p", "2"]) == 2
    bad = tmp_path / "bad.toml"
    bad.write_text("[experiment]\nkind = 'hierarchy'\nnope = 1\n")
    assert main(["hierarchy", "--config", str(bad)]) == 2
    assert main(["simulate", "--config", str(tmp_path / "missing.toml")]) == 2
    err = capsys.readouterr().err
    assert "error:" in err


def test_cli_failing_verdict_exits_3(tmp_path, capsys):
    cfg = tmp_path / "strict.toml"
    cfg.write_text(
        "[experiment]\nkind = 'converge-tau'\ntaus = [0.2, 0.1, 0.05]\nn = 4\n"
        "kl_slope_range = [10.0, 11.0]\n"
    )
    assert main(["converge-tau", "--config", str(cfg)]) == 3
    captured = capsys.readouterr()
    assert "FAIL criterion-4" in captured.err


def test_cli_csv_point_table(tmp_path, capsys):
    csv = tmp_path / "points.csv"
    code = main(
        ["hierarchy", "--gamma", "1.0", "--kmax", "1", "--lmax", "2",
         "--t", "0:1:3", "--csv", str(csv), "--out", str(tmp_path / "r.json")]
    )
    assert code == 0
    lines = csv.read_text().splitlines()
    assert lines[0] == "k,l,t,value"
    assert len(lines) == 1 + 2 * 3
    capsys.readouterr()


def test_cli_simulate_summary(tmp_path, capsys):
    cfg = tmp_path / "sim.toml"
    cfg.write_text(
        "[model]\nfamily = 'linear'\n[model.params]\na = 1.0\nkappa = 0.5\n"
        "[sim]\nscheme = 'full'\nn = 4\ntau = 0.25\nt_end = 0.5\nreplicas = 2\n"
    )
    assert main(["simulate", "--config", str(cfg)]) == 0
    out = capsys.readouterr().out
    header, *rows = out.splitlines()
    assert header == "step,time,stat,value,stderr"
    assert len(rows) == 3 * 3  # three moment orders, three checkpoints
    traj = tmp_path / "traj.csv"
    assert main(["simulate", "--config", str(cfg), "--record", "trajectory", "--out", str(traj)]) == 0
    assert traj.read_text().splitlines()[0] == "replica,step,time,particle,dim0"


def test_cli_oracle(tmp_path, capsys):
    cfg = tmp_path / "params.toml"
    cfg.write_text("[model]\nfamily = 'linear'\n[model.params]\na = 1.0\nkappa = 0.5\n")
    assert main(["oracle", "--params", str(cfg), "--n", "8", "--t", "1.0"]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["meanfield"]["variance"] == pytest.approx(0.6832623561226213)
    assert "rbm" not in payload


def test_cli_seed_override_reaches_report(tmp_path):
    out = tmp_path / "r.json"
    main(["verify-batching", "--n", "4", "--p", "2", "--samples", "0",
          "--seed", "77", "--out", str(out)])
    assert ExperimentReport.from_json(out.read_text()).environment["seed"] == 77


def test_verdict_dataclass_shape():
    v = Verdict(criterion="criterion-0", passed=True, measured=1.0, tolerance="x < 2")
    assert not v.advisory
    assert vars(v) == {
        "criterion": "criterion-0",
        "passed": True,
        "measured": 1.0,
        "tolerance": "x < 2",
        "advisory": False,
    }
