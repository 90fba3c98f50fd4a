import csv
import statistics

import pytest

from delayed_nashq import experiment
from delayed_nashq.errors import BoundViolation, ConfigError, OracleNotConverged
from delayed_nashq.experiment import (
    CSV_COLUMNS,
    ExperimentConfig,
    UniformStream,
    detect_convergence,
    load_config,
    load_game,
    load_oracle,
    parse_config_text,
    run_batch,
    run_single,
    summarize,
)
from delayed_nashq.grid_worlds import DOWN
from delayed_nashq.markov_game import JointPolicy

SHORT = dict(max_steps=3000, checkpoint_interval=1000)


@pytest.fixture(scope="module")
def grid1():
    return load_game("grid1", 0.8)


@pytest.fixture(scope="module")
def oracle1():
    return load_oracle("grid1", 0.8, 1e-9)


def test_uniform_stream_matches_scalar_draws():
    import numpy as np

    stream = UniformStream(42)
    gen = np.random.Generator(np.random.PCG64(42))
    ours = [stream.random() for _ in range(10_000)]
    assert ours == gen.random(10_000).tolist()


def test_config_file_and_overrides(tmp_path):
    path = tmp_path / "exp.cfg"
    path.write_text("# comment\ngame = grid2\nm = 10\nmax_steps = 1e5\nepsilon_1 = none\n")
    cfg = load_config(str(path), m=20, runs=None)
    assert cfg.game == "grid2" and cfg.m == 20 and cfg.max_steps == 100_000 and cfg.epsilon_1 is None


@pytest.mark.parametrize("text", ["bogus = 1", "m 5", "m = five"])
def test_config_errors(text):
    with pytest.raises(ConfigError):
        parse_config_text(text)


@pytest.mark.parametrize("kwargs", [
    dict(max_steps=0), dict(runs=0), dict(gamma=1.0), dict(epsilon=0.0), dict(game="grid7"),
    dict(algorithm="sarsa"),
])
def test_invalid_configs(kwargs):
    with pytest.raises(ConfigError):
        ExperimentConfig(**kwargs).validate()


def test_run_single_rejects_zero_steps():
    with pytest.raises(ConfigError):
        run_single(ExperimentConfig(max_steps=0), 0)


def test_epsilon_modes():
    assert ExperimentConfig().resolved_epsilon_1(0.8) == pytest.approx(0.004)
    assert ExperimentConfig(epsilon_mode="direct").resolved_epsilon_1(0.8) == 0.06
    assert ExperimentConfig(epsilon_1=0.01).resolved_epsilon_1(0.8) == 0.01


def all_down(model):
    return JointPolicy.pure(model, [DOWN] * model.n_states, [DOWN] * model.n_states)


def test_detect_convergence_synthetic(grid1, oracle1):
    history = [(t, all_down(grid1)) for t in range(100, 1000, 100)]
    history += [(t, oracle1.policy) for t in range(1000, 1600, 100)]
    assert detect_convergence(history, grid1, oracle1, window=5) == 1000
    assert detect_convergence(history, grid1, oracle1, window=7) is None


def test_detect_convergence_never_stable(grid1, oracle1):
    history = [(t, all_down(grid1) if t % 200 else oracle1.policy) for t in range(100, 2000, 100)]
    assert detect_convergence(history, grid1, oracle1, window=3) is None


def test_detect_convergence_window_one(grid1, oracle1):
    assert detect_convergence([(37, oracle1.policy)], grid1, oracle1, window=1) == 37


def test_detect_convergence_needs_converged_oracle(grid1, oracle1):
    import dataclasses

    bad = dataclasses.replace(oracle1, converged=False)
    with pytest.raises(OracleNotConverged):
        detect_convergence([(1, oracle1.policy)], grid1, bad, window=1)


def strip(record):
    d = dict(record.__dict__)
    d.pop("wall_ms")
    return d


def test_run_single_is_deterministic():
    cfg = ExperimentConfig(**SHORT)
    a = run_single(cfg, 9)
    b = run_single(cfg, 9)
    assert strip(a) == strip(b)
    assert a.total_steps == 3000 and not a.converged
    assert [c.t for c in a.checkpoints] == [1000, 2000, 3000]
    assert a.successful_updates <= a.attempted_updates


def test_nash_q_baseline_runs():
    rec = run_single(ExperimentConfig(algorithm="nash_q", **SHORT), 1)
    assert rec.error is None and rec.total_steps == 3000


def test_batch_outputs(tmp_path):
    cfg = ExperimentConfig(runs=3, base_seed=5, output_dir=str(tmp_path), **SHORT)
    summary, records = run_batch(cfg)
    assert [r.seed for r in records] == [5, 6, 7]
    with open(tmp_path / "runs.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == CSV_COLUMNS
    assert len(rows) == 4
    assert (tmp_path / "summary.csv").exists()
    assert (tmp_path / "checkpoints" / "run_0000.txt").read_text().count("\n") == 3
    assert summary.runs == 3


def test_summary_matches_rows(tmp_path):
    fake = [experiment._failed_record(ExperimentConfig(), i, i, RuntimeError("x")) for i in range(4)]
    fake = [r.__class__(**{**r.__dict__, "error": None, "converged": i != 2,
                           "convergence_step": 1000 * (i + 1) if i != 2 else None})
            for i, r in enumerate(fake)]
    summary = summarize(fake)
    experiment.write_outputs(tmp_path, fake, summary)
    rows = experiment.read_records(tmp_path / "runs.csv")
    steps = [int(r["convergence_step"]) for r in rows if r["converged"] == "true"]
    with open(tmp_path / "summary.csv", newline="") as fh:
        srow = list(csv.DictReader(fh))[0]
    assert float(srow["mean_convergence_step"]) == statistics.fmean(steps)
    assert float(srow["median_convergence_step"]) == statistics.median(steps)
    assert float(srow["std_convergence_step"]) == statistics.pstdev(steps)
    assert float(srow["convergence_rate"]) == 0.75


def test_single_run_summary_equals_record():
    rec = run_single(ExperimentConfig(**SHORT), 3)
    rec = rec.__class__(**{**rec.__dict__, "converged": True, "convergence_step": 1234})
    summary = summarize([rec])
    assert summary.mean_convergence_step == summary.median_convergence_step == 1234
    assert summary.std_convergence_step == 0.0 and summary.convergence_rate == 1.0


def test_failed_runs_become_rows(monkeypatch, tmp_path):
    def boom(config, seed, run_id=0):
        if seed == 1:
            raise BoundViolation("escape events", 10, 5)
        return real(config, seed, run_id)

    real = experiment.run_single
    monkeypatch.setattr(experiment, "run_single", boom)
    cfg = ExperimentConfig(runs=2, output_dir=str(tmp_path), **SHORT)
    summary, records = run_batch(cfg)
    assert summary.failed_runs == 1
    assert records[1].error.startswith("BoundViolation")
    assert "BoundViolation" in (tmp_path / "errors.txt").read_text()


def test_batch_order_independent_of_workers(tmp_path):
    cfg = ExperimentConfig(runs=2, **SHORT)
    _, serial = run_batch(cfg, write=False)
    _, parallel = run_batch(ExperimentConfig(runs=2, workers=2, **SHORT), write=False)
    assert [strip(r) for r in serial] == [strip(r) for r in parallel]
