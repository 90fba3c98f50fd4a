"""Command-line entry point: ``nashq {run,batch,oracle,solve-stage,bounds}``."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from .errors import BoundViolation, ConfigError, NashQError
from .experiment import (
    CSV_COLUMNS,
    ExperimentConfig,
    load_config,
    load_game,
    load_oracle,
    run_batch,
    run_single,
    summarize,
    write_outputs,
)
from .pac_monitor import PacParams, compute_bounds
from .stage_game import parse_bimatrix, select_equilibrium, support_enumeration

EXIT_CONFIG = 2
EXIT_BOUND = 3
EXIT_ERROR = 1


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat 'key = value' config file; flags override it")
    p.add_argument("--game", help="grid1, grid2 or file:<path>")
    p.add_argument("--algorithm", choices=("delayed_nash_q", "nash_q"))
    p.add_argument("--gamma", type=float)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--epsilon-1", dest="epsilon_1", type=float)
    p.add_argument("--epsilon-mode", dest="epsilon_mode", choices=("theorem", "direct"))
    p.add_argument("--delta", type=float)
    p.add_argument("--m", type=int)
    p.add_argument("--max-steps", dest="max_steps", type=int)
    p.add_argument("--runs", type=int)
    p.add_argument("--seed", dest="base_seed", type=int)
    p.add_argument("--checkpoint-interval", dest="checkpoint_interval", type=int)
    p.add_argument("--window", dest="convergence_window_episodes", type=int)
    p.add_argument("--oracle-tol", dest="oracle_tol", type=float)
    p.add_argument("--workers", type=int)
    p.add_argument("--out", dest="output_dir")


_CONFIG_KEYS = (
    "game", "algorithm", "gamma", "epsilon", "epsilon_1", "epsilon_mode", "delta", "m", "max_steps",
    "runs", "base_seed", "checkpoint_interval", "convergence_window_episodes", "oracle_tol", "workers",
    "output_dir",
)


def _config(args) -> ExperimentConfig:
    return load_config(args.config, **{k: getattr(args, k) for k in _CONFIG_KEYS})


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nashq", description="Delayed Nash Q-learning experiments")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="one seeded run")
    _add_config_flags(p)
    p = sub.add_parser("batch", help="runs seeds base_seed .. base_seed + runs - 1")
    _add_config_flags(p)
    p = sub.add_parser("oracle", help="dump Nash Q-values and state values")
    _add_config_flags(p)
    p = sub.add_parser("solve-stage", help="equilibria of a bimatrix game file")
    p.add_argument("path", help="file with 'n1 n2' then two row-major payoff matrices; '-' reads stdin")
    p = sub.add_parser("bounds", help="theoretical constants for a configuration")
    _add_config_flags(p)
    return parser


def _emit_records(records, out) -> None:
    writer = csv.writer(out)
    writer.writerow(CSV_COLUMNS)
    for rec in records:
        writer.writerow(rec.csv_row())


def cmd_run(args) -> int:
    config = _config(args)
    record = run_single(config, config.base_seed)
    if config.output_dir:
        write_outputs(Path(config.output_dir), [record], summarize([record]))
    _emit_records([record], sys.stdout)
    return 0


def cmd_batch(args) -> int:
    config = _config(args)
    summary, records = run_batch(config)
    _emit_records(records, sys.stdout)
    print(f"# converged {summary.converged_runs}/{summary.runs}, mean step {summary.mean_convergence_step}, "
          f"median {summary.median_convergence_step}, std {summary.std_convergence_step}")
    bound_failures = [r for r in records if r.error and r.error.startswith(BoundViolation.__name__)]
    if bound_failures:
        for rec in bound_failures:
            print(f"run {rec.run_id}: {rec.error}", file=sys.stderr)
        return EXIT_BOUND
    return EXIT_ERROR if summary.failed_runs else 0


def cmd_oracle(args) -> int:
    config = _config(args)
    model = load_game(config.game, config.gamma)
    result = load_oracle(config.game, config.gamma, config.oracle_tol)
    q_rows = [["s", "a1", "a2", "q1", "q2"]]
    for s in range(model.n_states):
        for a1 in range(model.n_actions_1):
            for a2 in range(model.n_actions_2):
                q_rows.append([s, a1, a2, repr(float(result.q_star.q_1[s, a1, a2])),
                               repr(float(result.q_star.q_2[s, a1, a2]))])
    v_rows = [["s", "v1", "v2"]]
    for s in range(model.n_states):
        v_rows.append([s, repr(float(result.v_star[0][s])), repr(float(result.v_star[1][s]))])
    if config.output_dir:
        out = Path(config.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        for name, rows in (("q_star.csv", q_rows), ("v_star.csv", v_rows)):
            with open(out / name, "w", newline="") as fh:
                csv.writer(fh).writerows(rows)
    else:
        csv.writer(sys.stdout).writerows(v_rows)
    print(f"# converged={result.converged} residual={result.residual:.3g} sweeps={result.iterations}",
          file=sys.stderr)
    return 0 if result.converged else EXIT_ERROR


def cmd_solve_stage(args) -> int:
    text = sys.stdin.read() if args.path == "-" else Path(args.path).read_text()
    try:
        game = parse_bimatrix(text)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    enum = support_enumeration(game)
    np.set_printoptions(precision=6, suppress=True)
    for i, eq in enumerate(enum.equilibria):
        print(f"eq {i}: x={eq.strategy_1} y={eq.strategy_2} values=({eq.value_1:.6g}, {eq.value_2:.6g})")
    if enum.degenerate:
        print("# degenerate game: singular support systems were skipped")
    best = select_equilibrium(game)
    print(f"selected: x={best.strategy_1} y={best.strategy_2} values=({best.value_1:.6g}, {best.value_2:.6g}) "
          f"class={best.klass.value}")
    return 0


def cmd_bounds(args) -> int:
    config = _config(args)
    model = load_game(config.game, config.gamma)
    gamma = model.gamma
    params = PacParams(config.epsilon, config.delta, config.resolved_epsilon_1(gamma), config.m, gamma)
    for line in compute_bounds(params, model.shape).lines():
        print(line)
    return 0


COMMANDS = {
    "run": cmd_run, "batch": cmd_batch, "oracle": cmd_oracle,
    "solve-stage": cmd_solve_stage, "bounds": cmd_bounds,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BoundViolation as exc:
        print(f"bound violation: {exc}", file=sys.stderr)
        return EXIT_BOUND
    except (NashQError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
