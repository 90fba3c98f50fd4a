"""Exact Nash Q-values by Nash value iteration on a fully known model."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from .errors import NonConvergence
from .markov_game import (
    GameModel,
    JointPolicy,
    QTables,
    policy_evaluation,
    policy_from_equilibria,
    reachable_states,
    stage_values,
)
from .stage_game import EqClass

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class OracleResult:
    q_star: QTables
    v_star: Tuple[np.ndarray, np.ndarray]
    residual: float
    iterations: int
    converged: bool = True
    policy: Optional[JointPolicy] = None
    # states whose selected equilibrium was neither globally optimal nor a saddle
    plain_states: tuple = field(default=())


def default_max_iter(gamma: float, tol: float) -> int:
    if gamma <= 0.0:
        return 10
    return 10 * math.ceil(math.log(tol * (1.0 - gamma)) / math.log(gamma))


def _continuation(model: GameModel, v1: np.ndarray, v2: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """``R^i + gamma * E[v^i(s')]`` for every profile."""
    t = model.transition
    q1 = model.reward_1 + model.gamma * (t @ v1).reshape(model.shape)
    q2 = model.reward_2 + model.gamma * (t @ v2).reshape(model.shape)
    return q1, q2


def nash_value_iteration(
    model: GameModel, tol: float = 1e-9, max_iter: Optional[int] = None, strict: bool = False
) -> OracleResult:
    """Iterate the Nash-Bellman operator from zero until the sup-norm change is within tol.

    Stage equilibria are picked by the same selection rule the learners use.
    Without convergence the last iterate is returned with ``converged=False``
    (or :class:`NonConvergence` is raised when ``strict``).
    """
    if max_iter is None:
        max_iter = default_max_iter(model.gamma, tol)
    q = QTables.constant(model, 0.0)
    eqs = q.solve(model)
    residual = math.inf
    iterations = 0
    for iterations in range(1, max_iter + 1):
        v1, v2 = stage_values(eqs, model)
        q1, q2 = _continuation(model, v1, v2)
        residual = float(max(np.abs(q1 - q.q_1).max(), np.abs(q2 - q.q_2).max()))
        q = QTables(q1, q2)
        eqs = q.solve(model)
        if residual <= tol:
            break
    converged = residual <= tol
    v_star = stage_values(eqs, model)
    plain = tuple(s for s, eq in enumerate(eqs) if eq is not None and eq.klass is EqClass.PLAIN)
    result = OracleResult(q, v_star, residual, iterations, converged, policy_from_equilibria(eqs, model), plain)
    if not converged:
        logger.warning("Nash value iteration stopped at residual %.3g after %d sweeps", residual, iterations)
        if strict:
            raise NonConvergence(f"Nash value iteration residual {residual:.3g} > {tol:.3g}", residual, result)
    return result


def nash_bellman_residual(model: GameModel, q: QTables) -> float:
    """Sup-norm distance between ``q`` and one Nash-Bellman application to it."""
    v1, v2 = q.values(model)
    q1, q2 = _continuation(model, v1, v2)
    return float(max(np.abs(q1 - q.q_1).max(), np.abs(q2 - q.q_2).max()))


def best_response_values(model: GameModel, policy: JointPolicy, player: int, tol: float = 1e-12) -> np.ndarray:
    """Optimal values of ``player`` against the opponent's fixed strategy."""
    n_s = model.n_states
    live = ~model.terminal_mask
    t = model.transition
    if player == 1:
        reward, opp = model.reward_1, policy.pi_2
        # average the opponent's action out of each (s, a1, a2) row
        weights = opp[:, None, :] * np.ones((1, model.n_actions_1, 1))
        n_own = model.n_actions_1
    else:
        reward, opp = model.reward_2, policy.pi_1
        weights = opp[:, :, None] * np.ones((1, 1, model.n_actions_2))
        n_own = model.n_actions_2
    v = np.zeros(n_s)
    for _ in range(100_000):
        cont = reward + model.gamma * (t @ v).reshape(model.shape)
        if player == 1:
            q_own = (weights * cont).sum(axis=2)
        else:
            q_own = (weights * cont).sum(axis=1)
        v_new = np.where(live, q_own.max(axis=1), 0.0)
        change = float(np.abs(v_new - v).max())
        v = v_new
        if change <= tol:
            return v
    raise NonConvergence("best-response value iteration did not converge", change)


def deviation_gains(model: GameModel, policy: JointPolicy, tol: float = 1e-12):
    """Per-state gain each player gets from its best unilateral deviation."""
    inner = max(tol, 1e-13)
    v1, v2 = policy_evaluation(model, policy, inner)
    br1 = best_response_values(model, policy, 1, inner)
    br2 = best_response_values(model, policy, 2, inner)
    return br1 - v1, br2 - v2


def is_nash_profile(model: GameModel, policy: JointPolicy, oracle: Optional[OracleResult] = None,
                    tol: float = 1e-6) -> bool:
    """True iff no unilateral deviation gains more than tol at any state the
    profile reaches from the initial state.

    ``oracle`` is accepted for interface symmetry with convergence detection;
    the certificate itself is a direct deviation search on the true model.
    """
    gain_1, gain_2 = deviation_gains(model, policy, min(1e-12, tol * 1e-3))
    reach = reachable_states(model, policy)
    return bool(gain_1[reach].max() <= tol and gain_2[reach].max() <= tol)
