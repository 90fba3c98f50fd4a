"""Acceptance criteria 1 through 10, one PASS/FAIL line each.

The two 50-seed batches are run once per module and shared by the criteria
that read them. The lines are printed straight to the terminal so they show
up in ``pytest -v`` output even when the test passes.
"""

import math
import sys

import numpy as np
import pytest

from delayed_nashq.experiment import ExperimentConfig, run_batch
from delayed_nashq.grid_worlds import GRID1, mirror_state_index, preset
from delayed_nashq.markov_game import (
    JointPolicy,
    QTables,
    build_known_game,
    h_step_horizon,
    h_step_values,
    policy_evaluation,
)
from delayed_nashq.nash_oracle import nash_value_iteration
from delayed_nashq.pac_monitor import PacParams, compute_bounds
from delayed_nashq.stage_game import BimatrixGame, classify_equilibrium, support_enumeration

sys.path.insert(0, __file__.rsplit("/", 1)[0])
from oracles import (  # noqa: E402
    best_response_gains,
    brute_force_pure_class,
    grid_equilibria_2xn,
    in_general_position,
)

RUNS = 50
PAPER_STEPS = {"grid1": 445_640, "grid2": 485_460}
EPS = 0.06
GAMMA = 0.8
DELTA = 0.1
M = 50


def report(capsys, number, ok, detail):
    with capsys.disabled():
        print(f"\nacceptance {number}: {'PASS' if ok else 'FAIL'} ({detail})")


@pytest.fixture(scope="module")
def batches():
    out = {}
    for game in ("grid1", "grid2"):
        cfg = ExperimentConfig(game=game, gamma=GAMMA, epsilon=EPS, delta=DELTA, m=M, runs=RUNS,
                               max_steps=2_000_000, checkpoint_interval=10_000)
        out[game] = run_batch(cfg, write=False)
    return out


@pytest.fixture(scope="module")
def bounds():
    return compute_bounds(PacParams.from_epsilon(EPS, DELTA, M, GAMMA), (72, 4, 4))


def _convergence(batches, game, number, capsys):
    summary, records = batches[game]
    target = PAPER_STEPS[game]
    mean = summary.mean_convergence_step
    ratio = mean / target if mean else math.inf
    ok = summary.failed_runs == 0 and summary.converged_runs == RUNS and 0.5 <= ratio <= 2.0
    report(capsys, number, ok, f"{game}: {summary.converged_runs}/{RUNS} converged, "
           f"mean step {mean:.0f} vs {target}, ratio {ratio:.3f}")
    assert ok


def test_criterion_1_grid1_batch(batches, capsys):
    _convergence(batches, "grid1", 1, capsys)


def test_criterion_2_grid2_batch(batches, capsys):
    _convergence(batches, "grid2", 2, capsys)


def test_criterion_3_oracle_exactness(capsys):
    model = preset("grid1", GAMMA)
    res = nash_value_iteration(model)
    v1, v2 = res.v_star
    init_err = max(abs(v1[model.initial] - 0.512), abs(v2[model.initial] - 0.512))
    mirror_err = max(abs(v1[s] - v2[mirror_state_index(GRID1, model, s)]) for s in range(model.n_states))
    ok = res.converged and init_err <= 1e-6 and mirror_err <= 1e-9
    report(capsys, 3, ok, f"v(initial) = ({v1[model.initial]:.9f}, {v2[model.initial]:.9f}), "
           f"max mirror gap {mirror_err:.2e}")
    assert ok


def test_criterion_4_hard_bounds(batches, bounds, capsys):
    worst = [0.0, 0.0, 0.0]
    for _, records in batches.values():
        for r in records:
            assert r.error is None, r.error
            worst[0] = max(worst[0], r.successful_updates / bounds.max_successful)
            worst[1] = max(worst[1], r.attempted_updates / bounds.max_attempted)
            worst[2] = max(worst[2], r.escape_events / bounds.max_escapes)
    ok = all(w <= 1.0 for w in worst)
    report(capsys, 4, ok, "largest fraction of bound used: successful {:.2e}, attempted {:.2e}, "
           "escapes {:.2e}".format(*worst))
    assert ok


def test_criterion_5_monotonicity(batches, capsys):
    eps1 = PacParams.from_epsilon(EPS, DELTA, M, GAMMA).epsilon_1
    q_bad = sum(r.monotonicity_violations for _, rs in batches.values() for r in rs)
    min_dec = min(r.min_decrease for _, rs in batches.values() for r in rs)
    grid1 = batches["grid1"][1]
    v_bad = sum(r.value_increases_assumption for r in grid1)
    full = sum(r.assumption_held for r in grid1)
    prefix = min(r.assumption_steps for r in grid1)
    ok = q_bad == 0 and min_dec >= eps1 * (1 - 1e-9) and v_bad == 0
    report(capsys, 5, ok, f"Q increases {q_bad}, smallest decrease {min_dec:.6f} (eps1 {eps1:.6f}), "
           f"value increases while no plain stage game seen {v_bad} "
           f"({full} whole runs qualify, shortest qualifying prefix {prefix} steps)")
    assert ok


def test_criterion_6_optimism(batches, capsys):
    records = batches["grid1"][1]
    bad = sum(r.optimism_violations for r in records)
    checked = sum(r.optimism_checked for r in records)
    frac = bad / checked
    ok = checked > 0 and frac <= 0.01
    report(capsys, 6, ok, f"{bad}/{checked} optimism violations, fraction {frac:.4%}")
    assert ok


def test_criterion_7_stage_solver(capsys):
    rng = np.random.default_rng(20240607)
    br_fail = missed = spurious = class_bad = pure_bad = 0
    n_pure = n_general = 0
    for g in range(1000):
        n2 = 2 if g % 2 == 0 else 3
        a = rng.integers(-5, 6, (2, n2))
        b = rng.integers(-5, 6, (2, n2))
        game = BimatrixGame(a, b)
        enum = support_enumeration(game)
        eqs = enum.equilibria
        xs = np.array([e.strategy_1[0] for e in eqs])
        for e in eqs:
            g1, g2 = best_response_gains(a, b, e.strategy_1, e.strategy_2)
            br_fail += g1 > 1e-9 or g2 > 1e-9
        # every returned equilibrium lies near a grid epsilon-equilibrium
        hits = grid_equilibria_2xn(a, b, eps=1e-3, step=1e-3, slack=True)
        for x in xs:
            missed += not hits.size or np.abs(hits - x).min() > 1e-2
        # and, away from degenerate ties, every grid hit lies near a returned one
        if in_general_position(a, b) and not enum.degenerate:
            n_general += 1
            for h in grid_equilibria_2xn(a, b, eps=1e-3, step=1e-3):
                spurious += np.abs(xs - h).min() > 1e-2
        pure = {(e.support_1[0], e.support_2[0]): e for e in eqs
                if len(e.support_1) == 1 and len(e.support_2) == 1}
        for i in range(2):
            for j in range(n2):
                brute = brute_force_pure_class(a, b, i, j)
                if (brute is None) != ((i, j) not in pure):
                    pure_bad += 1
                elif brute is not None:
                    n_pure += 1
                    class_bad += classify_equilibrium(game, pure[(i, j)]).value != brute
    ok = not (br_fail or missed or spurious or class_bad or pure_bad)
    report(capsys, 7, ok, f"1000 games: best-response failures {br_fail}, missed {missed}, "
           f"spurious grid hits {spurious} over {n_general} games in general position, "
           f"pure-set mismatches {pure_bad}, class mismatches {class_bad}/{n_pure}")
    assert ok


def test_criterion_8_known_game(capsys):
    rng = np.random.default_rng(8)
    exact = True
    worst = -np.inf
    bound = None
    for k in range(100):
        model = preset("grid1" if k % 2 == 0 else "grid2", GAMMA)
        bound = 2 * model.v_max + 1e-9
        q = QTables(rng.uniform(0, model.v_max, model.shape), rng.uniform(0, model.v_max, model.shape))
        known = rng.random(model.shape) < rng.uniform(0.05, 0.95)
        surrogate = build_known_game(model, known, q)
        keep = known.copy()
        keep[model.terminal_mask] = True
        rows = np.flatnonzero(keep.ravel())
        t_old = model.transition.toarray()[rows]
        t_new = surrogate.transition.toarray()[rows, :model.n_states]
        exact &= np.array_equal(t_old, t_new) and not surrogate.transition.toarray()[rows, model.n_states:].any()
        exact &= np.array_equal(surrogate.reward_1[:model.n_states][keep], model.reward_1[keep])
        exact &= np.array_equal(surrogate.reward_2[:model.n_states][keep], model.reward_2[keep])
        n = surrogate.n_states
        pi_1 = rng.dirichlet(np.ones(4), n)
        pi_2 = rng.dirichlet(np.ones(4), n)
        v1, v2 = policy_evaluation(surrogate, JointPolicy(pi_1, pi_2))
        worst = max(worst, float(np.max(v1)), float(np.max(v2)))
    ok = bool(exact) and worst <= bound
    report(capsys, 8, ok, f"known rows bit-exact: {bool(exact)}, largest value {worst:.6f} <= {bound:.9f}")
    assert ok


def test_criterion_9_truncation(capsys):
    model = preset("grid1", GAMMA)
    res = nash_value_iteration(model)
    horizon = h_step_horizon(GAMMA, EPS)
    v1, v2 = policy_evaluation(model, res.policy, tol=1e-12)
    h1, h2 = h_step_values(model, res.policy, horizon)
    gap = max(np.abs(v1 - h1).max(), np.abs(v2 - h2).max())
    ok = horizon == 23 and gap <= EPS
    report(capsys, 9, ok, f"H = {horizon}, max |v - v_H| = {gap:.3e}")
    assert ok


def test_criterion_10_bounds_report(bounds, capsys):
    ok = (
        math.isclose(bounds.epsilon_1, 0.004, rel_tol=1e-12)
        and math.isclose(bounds.kappa, 1.44e6, rel_tol=1e-12)
        and 1.95e7 <= bounds.theoretical_m <= 2.05e7
        and math.isclose(bounds.zeta, (2 + 4 * M) * bounds.kappa, rel_tol=1e-12)
        and math.isclose(bounds.zeta_theoretical, (2 + 4 * bounds.theoretical_m) * bounds.kappa, rel_tol=1e-12)
    )
    report(capsys, 10, ok, f"eps1 {bounds.epsilon_1:g}, kappa {bounds.kappa:.4g}, "
           f"theoretical m {bounds.theoretical_m:.4g} vs m = {M} ({bounds.theoretical_m / M:.2e}x), "
           f"zeta {bounds.zeta:.4g}, theoretical zeta {bounds.zeta_theoretical:.4g}, "
           f"sample bound {bounds.sample_bound:.3g}")
    assert ok
