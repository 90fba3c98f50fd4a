"""Experiment configuration, single runs, convergence detection and batches.

Randomness: every run owns a numpy ``Generator(PCG64(seed))``. Uniforms are
drawn from it in blocks and consumed one at a time, which yields exactly the
same sequence as scalar draws, so runs are bit-reproducible for a given numpy
PCG64 implementation. The uniforms drive mixed-strategy sampling, exploration
and stochastic transitions, in the order the loop needs them.
"""

from __future__ import annotations

import csv
import dataclasses
import functools
import logging
import math
import os
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import BoundViolation, ConfigError, NashQError, OracleNotConverged
from .grid_worlds import PRESETS, preset
from .learners import DelayedNashQLearner, NashQLearner
from .markov_game import GameModel, JointPolicy, parse_game, reachable_states
from .nash_oracle import OracleResult, is_nash_profile, nash_value_iteration
from .pac_monitor import CheckpointRecord, PacMonitor, PacParams

logger = logging.getLogger(__name__)

ALGORITHMS = ("delayed_nash_q", "nash_q")
EPSILON_MODES = ("theorem", "direct")

CSV_COLUMNS = (
    "run_id", "seed", "game", "algorithm", "gamma", "m", "epsilon1", "converged", "convergence_step",
    "total_steps", "episodes", "successful_updates", "attempted_updates", "escape_events",
    "optimism_violations", "accuracy_violations", "v1_init", "v2_init", "wall_ms",
)
SUMMARY_COLUMNS = (
    "runs", "failed_runs", "converged_runs", "convergence_rate",
    "mean_convergence_step", "median_convergence_step", "std_convergence_step",
)


class UniformStream:
    """Scalar ``random()`` on top of block draws from PCG64."""

    __slots__ = ("_gen", "_buf", "_pos")
    BLOCK = 4096

    def __init__(self, seed: int):
        self._gen = np.random.Generator(np.random.PCG64(seed))
        self._buf: List[float] = []
        self._pos = 0

    def random(self) -> float:
        if self._pos == len(self._buf):
            self._buf = self._gen.random(self.BLOCK).tolist()
            self._pos = 0
        x = self._buf[self._pos]
        self._pos += 1
        return x


# -- configuration -------------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentConfig:
    game: str = "grid1"
    algorithm: str = "delayed_nash_q"
    gamma: Optional[float] = 0.8
    epsilon: float = 0.06
    epsilon_1: Optional[float] = None
    # "theorem": epsilon_1 = (1 - gamma) * epsilon / 3; "direct": epsilon_1 = epsilon
    epsilon_mode: str = "theorem"
    delta: float = 0.1
    m: int = 50
    max_steps: int = 2_000_000
    runs: int = 50
    base_seed: int = 0
    checkpoint_interval: int = 10_000
    convergence_window_episodes: int = 50
    convergence_tol: float = 1e-6
    oracle_tol: float = 1e-9
    exploration_rate: float = 0.1
    workers: int = 1
    output_dir: Optional[str] = None

    def validate(self) -> "ExperimentConfig":
        if not (self.game in PRESETS or self.game.startswith("file:")):
            raise ConfigError(f"game must be one of {sorted(PRESETS)} or file:<path>, got {self.game!r}")
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        if self.epsilon_mode not in EPSILON_MODES:
            raise ConfigError(f"epsilon_mode must be one of {EPSILON_MODES}")
        if self.gamma is not None and not 0.0 <= self.gamma < 1.0:
            raise ConfigError("gamma must lie in [0, 1)")
        if not self.epsilon > 0:
            raise ConfigError("epsilon must be positive")
        if self.epsilon_1 is not None and not self.epsilon_1 > 0:
            raise ConfigError("epsilon_1 must be positive")
        if not 0.0 < self.delta < 1.0:
            raise ConfigError("delta must lie in (0, 1)")
        for name in ("m", "max_steps", "runs", "checkpoint_interval", "convergence_window_episodes", "workers"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be a positive integer, got {getattr(self, name)}")
        if not 0.0 <= self.exploration_rate <= 1.0:
            raise ConfigError("exploration_rate must lie in [0, 1]")
        return self

    def resolved_epsilon_1(self, gamma: float) -> float:
        if self.epsilon_1 is not None:
            return self.epsilon_1
        if self.epsilon_mode == "direct":
            return self.epsilon
        return (1.0 - gamma) * self.epsilon / 3.0


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(ExperimentConfig)}


def _coerce(key: str, raw: str):
    kind = _FIELD_TYPES[key]
    text = raw.strip()
    if "Optional" in str(kind) and text.lower() in ("", "none"):
        return None
    try:
        if "int" in str(kind):
            return int(float(text)) if "e" in text.lower() else int(text)
        if "float" in str(kind):
            return float(text)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None
    return text


def parse_config_text(text: str) -> Dict[str, object]:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    values: Dict[str, object] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected 'key = value'")
        key, raw = (part.strip() for part in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in _FIELD_TYPES:
            raise ConfigError(f"config line {lineno}: unknown key {key!r}")
        values[key] = _coerce(key, raw)
    return values


def load_config(path: Optional[str] = None, **overrides) -> ExperimentConfig:
    values: Dict[str, object] = {}
    if path is not None:
        try:
            values.update(parse_config_text(Path(path).read_text()))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
    values.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig(**values).validate()


# -- model and oracle caches -----------------------------------------------------------

@functools.lru_cache(maxsize=8)
def load_game(game: str, gamma: Optional[float]) -> GameModel:
    if game.startswith("file:"):
        path = game[len("file:"):]
        try:
            model = parse_game(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read game file {path}: {exc}") from None
        except ValueError as exc:
            raise ConfigError(f"bad game file {path}: {exc}") from None
        if gamma is not None and gamma != model.gamma:
            model = dataclasses.replace(model, gamma=gamma)
        return model
    return preset(game, gamma)


@functools.lru_cache(maxsize=8)
def load_oracle(game: str, gamma: Optional[float], tol: float) -> OracleResult:
    return nash_value_iteration(load_game(game, gamma), tol=tol)


# -- convergence -------------------------------------------------------------------------

def _restricted(model: GameModel, policy: JointPolicy):
    states = reachable_states(model, policy)
    live = [s for s in states if s not in model.terminals]
    return tuple(states), policy.pi_1[live].tobytes(), policy.pi_2[live].tobytes()


def detect_convergence(history: Sequence[Tuple[int, JointPolicy]], model: GameModel, oracle: OracleResult,
                       window: int, tol: float = 1e-6) -> Optional[int]:
    """First episode-boundary step from which the greedy policy stays put for
    ``window`` boundaries and is certified Nash; None otherwise.

    ``history`` holds ``(t, policy)`` pairs, one per episode boundary. Two
    policies count as the same when they reach the same states from the
    initial state and agree on them.
    """
    if not oracle.converged:
        raise OracleNotConverged(f"oracle residual {oracle.residual:.3g}; cannot certify convergence")
    if window < 1:
        raise ValueError("window must be positive")
    key = None
    start = None
    count = 0
    verdict: Optional[bool] = None
    for t, policy in history:
        k = _restricted(model, policy)
        if k == key:
            count += 1
        else:
            key, start, count, verdict = k, t, 1, None
        if count >= window:
            if verdict is None:
                verdict = is_nash_profile(model, policy, oracle, tol)
            if verdict:
                return start
    return None


class _OnlineDetector:
    """Streaming version of :func:`detect_convergence` driven by the learner's cache."""

    def __init__(self, model: GameModel, oracle: Optional[OracleResult], window: int, tol: float):
        self.model = model
        self.oracle = oracle
        self.window = window
        self.tol = tol
        self.key = None
        self.start = 0
        self.count = 0
        self.verdicts: Dict[object, bool] = {}

    def episode_end(self, t: int, learner) -> Optional[int]:
        key = learner.reachable_signature()
        if key == self.key:
            self.count += 1
        else:
            self.key, self.start, self.count = key, t, 1
        if self.count < self.window or self.oracle is None:
            return None
        verdict = self.verdicts.get(key)
        if verdict is None:
            verdict = is_nash_profile(self.model, learner.greedy_policy(), self.oracle, self.tol)
            self.verdicts[key] = verdict
        return self.start if verdict else None


# -- single run -------------------------------------------------------------------------

@dataclass(frozen=True)
class RunRecord:
    run_id: int
    seed: int
    game: str
    algorithm: str
    gamma: float
    m: int
    epsilon1: float
    converged: bool
    convergence_step: Optional[int]
    total_steps: int
    episodes: int
    successful_updates: int
    attempted_updates: int
    escape_events: int
    optimism_violations: int
    accuracy_violations: int
    v1_init: float
    v2_init: float
    wall_ms: float
    # diagnostics kept off the CSV
    optimism_checked: int = 0
    eps4_failures: int = 0
    final_eps4_ok: bool = True
    monotonicity_violations: int = 0
    min_decrease: float = math.inf
    value_increases: int = 0
    value_increases_assumption: int = 0
    assumption_steps: int = 0
    plain_selections: int = 0
    third_cause_changes: int = 0
    scan_mismatches: int = 0
    error: Optional[str] = None
    checkpoints: Tuple[CheckpointRecord, ...] = field(default=(), repr=False)

    @property
    def assumption_held(self) -> bool:
        return self.plain_selections == 0

    def csv_row(self) -> List[str]:
        row = []
        for name in CSV_COLUMNS:
            value = getattr(self, name)
            if value is None:
                row.append("")
            elif isinstance(value, bool):
                row.append("true" if value else "false")
            elif isinstance(value, float):
                row.append(repr(value))
            else:
                row.append(str(value))
        return row


def _make_learner(config: ExperimentConfig, model: GameModel, epsilon_1: float):
    if config.algorithm == "delayed_nash_q":
        return DelayedNashQLearner(model, config.m, epsilon_1)
    return NashQLearner(model, config.exploration_rate)


def run_single(config: ExperimentConfig, seed: int, run_id: int = 0) -> RunRecord:
    """Run one learner until certified convergence or ``max_steps``."""
    config.validate()
    model = load_game(config.game, config.gamma)
    gamma = model.gamma
    oracle: Optional[OracleResult] = load_oracle(config.game, config.gamma, config.oracle_tol)
    if not oracle.converged:
        logger.warning("oracle for %s did not converge; runs will not be certified", config.game)
        oracle = None
    eps_1 = config.resolved_epsilon_1(gamma)
    params = PacParams(config.epsilon, config.delta, eps_1, config.m, gamma)
    learner = _make_learner(config, model, eps_1)
    monitor = PacMonitor(model, params, oracle)
    detector = _OnlineDetector(model, oracle, config.convergence_window_episodes, config.convergence_tol)
    rng = UniformStream(seed)

    succ = model.successors
    r1 = model.reward_1.ravel().tolist()
    r2 = model.reward_2.ravel().tolist()
    terminal = model.terminal_mask.tolist()
    n1, n2 = model.n_actions_1, model.n_actions_2
    interval = config.checkpoint_interval
    choose, update = learner.choose, learner.update
    escaped, record = monitor.escaped, monitor.record

    started = time.perf_counter()
    s = model.initial
    t = 0
    episodes = 0
    converged_at: Optional[int] = None
    # first step at which a plain stage equilibrium had been selected
    assumption_steps: Optional[int] = None
    while t < config.max_steps:
        t += 1
        a1, a2 = choose(s, rng)
        p = (s * n1 + a1) * n2 + a2
        nxt, cum = succ[p]
        if len(nxt) == 1:
            s_next = nxt[0]
        else:
            u = rng.random()
            s_next = nxt[-1]
            for cand, c in zip(nxt, cum):
                if u < c:
                    s_next = cand
                    break
        esc = escaped(learner, p)
        att, ok = update(t, s, a1, a2, r1[p], r2[p], s_next)
        record(att, ok, esc)
        if assumption_steps is None and learner.plain_selections:
            assumption_steps = t
        if terminal[s_next]:
            episodes += 1
            s = model.initial
            converged_at = detector.episode_end(t, learner)
        else:
            s = s_next
        if t % interval == 0:
            monitor.checkpoint(learner, t, s)
        if converged_at is not None:
            break
    if t % interval != 0:
        # closing audit; a converged run is judged from the initial state
        monitor.checkpoint(learner, t, model.initial if converged_at is not None else s)
    wall_ms = (time.perf_counter() - started) * 1000.0

    log = monitor.log
    v1, v2 = learner.value(model.initial)
    cps = tuple(log.checkpoints)
    return RunRecord(
        run_id=run_id, seed=seed, game=config.game, algorithm=config.algorithm, gamma=gamma, m=config.m,
        epsilon1=eps_1, converged=converged_at is not None, convergence_step=converged_at,
        total_steps=t, episodes=episodes, successful_updates=log.successful_updates,
        attempted_updates=log.attempted_updates, escape_events=log.escape_events,
        optimism_violations=log.optimism_count, accuracy_violations=log.accuracy_count,
        v1_init=float(v1), v2_init=float(v2), wall_ms=round(wall_ms, 3),
        optimism_checked=sum(c.optimism_checked for c in cps),
        eps4_failures=len(log.eps_or_better_violations),
        final_eps4_ok=cps[-1].eps4_ok if cps else True,
        monotonicity_violations=getattr(learner, "monotonicity_violations", 0),
        min_decrease=getattr(learner, "min_decrease", math.inf),
        value_increases=learner.value_increases, plain_selections=learner.plain_selections,
        value_increases_assumption=learner.value_increases_assumption,
        assumption_steps=assumption_steps if assumption_steps is not None else t,
        third_cause_changes=sum(c.third_cause_changes for c in cps),
        scan_mismatches=sum(c.scan_mismatches for c in cps),
        checkpoints=cps,
    )


def _failed_record(config: ExperimentConfig, run_id: int, seed: int, exc: BaseException) -> RunRecord:
    return RunRecord(
        run_id=run_id, seed=seed, game=config.game, algorithm=config.algorithm,
        gamma=config.gamma if config.gamma is not None else math.nan, m=config.m,
        epsilon1=config.resolved_epsilon_1(config.gamma or 0.0), converged=False, convergence_step=None,
        total_steps=0, episodes=0, successful_updates=0, attempted_updates=0, escape_events=0,
        optimism_violations=0, accuracy_violations=0, v1_init=math.nan, v2_init=math.nan, wall_ms=0.0,
        error=f"{type(exc).__name__}: {exc}",
    )


def _run_guarded(args) -> RunRecord:
    config, run_id, seed = args
    try:
        return run_single(config, seed, run_id)
    except (NashQError, ArithmeticError, ValueError) as exc:
        logger.error("run %d (seed %d) failed: %s", run_id, seed, exc)
        return _failed_record(config, run_id, seed, exc)


# -- batches -----------------------------------------------------------------------------

@dataclass(frozen=True)
class BatchSummary:
    runs: int
    failed_runs: int
    converged_runs: int
    convergence_rate: float
    mean_convergence_step: Optional[float]
    median_convergence_step: Optional[float]
    std_convergence_step: Optional[float]

    def csv_row(self) -> List[str]:
        return ["" if getattr(self, c) is None else repr(getattr(self, c)) if isinstance(getattr(self, c), float)
                else str(getattr(self, c)) for c in SUMMARY_COLUMNS]


def summarize(records: Sequence[RunRecord]) -> BatchSummary:
    """Convergence statistics; the spread is the population standard deviation."""
    steps = [r.convergence_step for r in records if r.converged]
    n = len(records)
    return BatchSummary(
        runs=n,
        failed_runs=sum(r.error is not None for r in records),
        converged_runs=len(steps),
        convergence_rate=len(steps) / n if n else 0.0,
        mean_convergence_step=float(statistics.fmean(steps)) if steps else None,
        median_convergence_step=float(statistics.median(steps)) if steps else None,
        std_convergence_step=float(statistics.pstdev(steps)) if steps else None,
    )


def run_batch(config: ExperimentConfig, write: bool = True) -> Tuple[BatchSummary, List[RunRecord]]:
    """Run ``config.runs`` seeds and optionally write ``runs.csv`` and ``summary.csv``."""
    config.validate()
    jobs = [(config, i, config.base_seed + i) for i in range(config.runs)]
    if config.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(config.workers, len(jobs), os.cpu_count() or 1)) as pool:
            records = list(pool.map(_run_guarded, jobs))
    else:
        records = [_run_guarded(job) for job in jobs]
    records.sort(key=lambda r: r.run_id)
    summary = summarize(records)
    if write and config.output_dir:
        write_outputs(Path(config.output_dir), records, summary)
    return summary, records


def write_records(path: Path, records: Sequence[RunRecord]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for rec in records:
            writer.writerow(rec.csv_row())


def write_outputs(out: Path, records: Sequence[RunRecord], summary: Optional[BatchSummary] = None) -> None:
    out.mkdir(parents=True, exist_ok=True)
    write_records(out / "runs.csv", records)
    if summary is not None:
        with open(out / "summary.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(SUMMARY_COLUMNS)
            writer.writerow(summary.csv_row())
    cp_dir = out / "checkpoints"
    cp_dir.mkdir(exist_ok=True)
    for rec in records:
        with open(cp_dir / f"run_{rec.run_id:04d}.txt", "w") as fh:
            for cp in rec.checkpoints:
                fh.write(cp.line() + "\n")
    failed = [r for r in records if r.error is not None]
    if failed:
        with open(out / "errors.txt", "w") as fh:
            for rec in failed:
                fh.write(f"{rec.run_id}, {rec.seed}, {rec.error}\n")


def read_records(path: Path) -> List[Dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
