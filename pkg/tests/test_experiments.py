import json
import subprocess
import sys

import numpy as np
import pytest

from sympolicy.cli import main
from sympolicy.experiments import (
    ConfigError,
    ExperimentConfig,
    RunRecord,
    aggregate_runs,
    load_policy,
    load_record,
    read_history,
    replay_policy,
    run_experiment,
    validate,
    write_results,
    write_summary,
)
from sympolicy.reference_policies import REFERENCE_POLICIES, reference_policy

SMALL = dict(population_size=12, generations=3, horizon=2.0, validation_size=8, batch_size=4)


@pytest.fixture(scope="module")
def gp_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    cfg = ExperimentConfig("sho-noise", "gp-dynamic", **SMALL)
    return cfg, run_experiment(cfg, 0, out), out


def test_config_errors():
    with pytest.raises(ConfigError):
        ExperimentConfig("nope", "gp-static")
    with pytest.raises(ConfigError):
        ExperimentConfig("sho-noise", "annealing")
    with pytest.raises(ConfigError):
        ExperimentConfig("cstr", "lqg")
    with pytest.raises(ConfigError):
        ExperimentConfig("sho-noise", "gp-static", population_size=0)
    with pytest.raises(ConfigError):
        ExperimentConfig("sho-noise", "gp-static", gp={"nonsense": 1})
    with pytest.raises(ConfigError):
        ExperimentConfig("sho-noise", "gp-static", dt=-1.0)


def test_config_defaults_follow_preset():
    cfg = ExperimentConfig("cstr", "gp-dynamic")
    assert (cfg.pop, cfg.gens, cfg.latent) == (1000, 100, 2)
    g = cfg.gp_config(3)
    assert (g.population_size, g.generations, g.latent_size, g.seed) == (1000, 100, 2, 3)
    assert ExperimentConfig("cstr", "gp-static").gp_config(0).latent_size == 0


def test_config_roundtrip():
    cfg = ExperimentConfig("acrobot-partial", "nde-cmaes", 20, 4, seed=9, gp={"tournament_size": 3})
    assert ExperimentConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg


def test_gp_record(gp_run):
    cfg, rec, out = gp_run
    assert rec.status == "ok", rec.error
    assert len(rec.history) == 3
    assert rec.best["kind"] == "dynamic"
    assert np.isfinite(rec.validation_fitness)
    assert len(rec.validation) == 8
    best = [h["best_fitness"] for h in rec.history]
    assert best == sorted(best)


def test_written_files(gp_run):
    cfg, rec, out = gp_run
    for name in ("config.json", "history.csv", "validation.csv", "best_policy.txt", "record.json", "metadata.json"):
        assert (out / name).exists()
    assert json.loads((out / "config.json").read_text()) == cfg.to_dict()
    assert len(read_history(out / "history.csv")) == cfg.gens
    assert read_history(out / "history.csv") == rec.history
    res = replay_policy(out / "best_policy.txt", "sho-noise", n_trials=8, horizon=2.0)
    assert res.mean == rec.validation_fitness


def test_record_reload_reproduces_validation(gp_run):
    cfg, rec, out = gp_run
    loaded = load_record(out)
    assert loaded.history == rec.history and loaded.best == rec.best
    score, _ = validate(loaded.policy(), ExperimentConfig.from_dict(loaded.config))
    assert score == rec.validation_fitness


def test_runs_are_byte_reproducible(gp_run, tmp_path):
    cfg, rec, out = gp_run
    run_experiment(cfg, 0, tmp_path)
    for name in ("config.json", "history.csv", "validation.csv", "best_policy.txt", "record.json"):
        assert (tmp_path / name).read_bytes() == (out / name).read_bytes()


def test_lqg_method():
    rec = run_experiment(ExperimentConfig("sho-noise", "lqg", validation_size=8))
    assert rec.status == "ok" and rec.history == [] and rec.best == {"kind": "lqg"}
    assert np.isfinite(rec.validation_fitness)


def test_random_search_history_is_running_best():
    cfg = ExperimentConfig("sho-partial", "random-search", **SMALL)
    rec = run_experiment(cfg)
    assert len(rec.history) == 3
    best = [h["best_fitness"] for h in rec.history]
    assert best == sorted(best) and best[-1] == rec.train_fitness


def test_nde_method(tmp_path):
    cfg = ExperimentConfig("acrobot-noise", "nde-cmaes", **SMALL)
    rec = run_experiment(cfg, 0, tmp_path)
    assert rec.status == "ok", rec.error
    assert (tmp_path / "best_policy.params").exists()
    res = replay_policy(tmp_path, "acrobot-noise", n_trials=8, horizon=2.0)
    assert res.mean == rec.validation_fitness


def test_runtime_failure_gives_partial_record(tmp_path, monkeypatch):
    import sympolicy.experiments as ex

    def broken(*a, **k):
        raise RuntimeError("simulated failure")

    monkeypatch.setattr(ex, "_run_random_search", broken)
    rec = run_experiment(ExperimentConfig("sho-noise", "random-search", **SMALL), 0, tmp_path)
    assert rec.status == "failed" and "simulated failure" in rec.error
    assert json.loads((tmp_path / "record.json").read_text())["status"] == "failed"


def test_write_results_reports_path(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    rec = RunRecord({}, 0, [], {}, None, None, [])
    with pytest.raises(OSError, match="file"):
        write_results(rec, blocker / "sub")


def test_replay_reference_policy():
    text = "\n".join(f"da{i + 1} = {e}" for i, e in enumerate(REFERENCE_POLICIES[("sho-varying", "dynamic")]["da"]))
    text += "\nu1 = " + REFERENCE_POLICIES[("sho-varying", "dynamic")]["u"][0]
    res = replay_policy(text, "sho-varying", n_trials=128)
    assert np.isfinite(res.fitness).all() and len(res.fitness) == 128
    again = replay_policy(text, "sho-varying", n_trials=128)
    np.testing.assert_array_equal(res.fitness, again.fitness)


def test_replay_zero_policy_on_acrobot(tmp_path):
    res = replay_policy("u1 = 0", "acrobot-noise", n_trials=8, trajectory_csv=tmp_path / "t.csv")
    np.testing.assert_array_equal(res.fitness, -2500)
    assert res.trajectory_path.read_text().startswith("t,x1,x2,x3,x4,y1,y2,y3,y4,u1")


def test_load_policy_sources(gp_run):
    cfg, rec, out = gp_run
    pol = reference_policy("sho-noise", "static")
    assert load_policy(pol, "sho-noise") is pol
    assert load_policy(out, "sho-noise") == rec.policy()
    assert load_policy(rec, "sho-noise") == rec.policy()


def _fake(eid, hist, val, method="gp-dynamic"):
    return RunRecord({"experiment": eid, "method": method}, 0,
                     [{"generation": g, "best_fitness": v} for g, v in enumerate(hist)],
                     {"kind": "static", "text": "u1 = 0"}, None, val, [])


def test_aggregate_arithmetic(tmp_path):
    s = aggregate_runs([_fake("sho-noise", [-3, -2, -1], -5.0), _fake("sho-noise", [-5, -4, -1], -4.0)])
    assert s.mean_best == [-4.0, -3.0, -1.0]
    assert s.validation == [-5.0, -4.0] and s.best_run == 1 and s.best_validation == -4.0
    single = aggregate_runs([_fake("sho-noise", [-3, -2], -1.0)])
    assert single.mean_best == [-3.0, -2.0]
    twin = aggregate_runs([_fake("cstr", [-3, -2], -1.0)] * 2)
    assert twin.mean_best == [-3.0, -2.0]
    path = write_summary(s, tmp_path)
    assert json.loads(path.read_text())["mean_best"] == [-4.0, -3.0, -1.0]


def test_aggregate_rejects_mixed():
    with pytest.raises(ConfigError):
        aggregate_runs([_fake("sho-noise", [-1], -1.0), _fake("cstr", [-1], -1.0)])
    with pytest.raises(ConfigError):
        aggregate_runs([])


def test_cli_run_replay_aggregate(tmp_path, capsys):
    args = ["run", "--experiment", "sho-partial", "--method", "gp-static", "--pop", "8", "--gens", "2",
            "--batch", "4", "--horizon", "2", "--runs", "2", "--seed", "3", "--out", str(tmp_path)]
    assert main(args) == 0
    dirs = sorted(tmp_path.iterdir())
    assert [d.name for d in dirs] == ["sho-partial_gp-static_seed3", "sho-partial_gp-static_seed4"]
    assert main(["replay", str(dirs[0]), "--experiment", "sho-partial", "--batch", "4", "--horizon", "2",
                 "--trajectory", str(tmp_path / "traj.csv")]) == 0
    assert (tmp_path / "traj.csv").exists()
    assert main(["aggregate", *map(str, dirs), "--out", str(tmp_path / "summary")]) == 0
    out = capsys.readouterr().out
    assert "mean fitness" in out and "2 runs" in out


def test_cli_errors(capsys):
    assert main(["replay", "u1 = q9", "--experiment", "sho-noise"]) == 2
    assert "error" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        main(["run", "--experiment", "sho-noise", "--method", "magic"])
    assert main(["run", "--experiment", "cstr", "--method", "lqg"]) == 2


def test_cli_list_presets_subprocess():
    out = subprocess.run([sys.executable, "-m", "sympolicy", "list-presets"], capture_output=True, text=True,
                         check=True).stdout
    assert len(out.strip().splitlines()) == 7
    assert "cstr" in out and "N=1000" in out
