"""Delayed Nash Q-learning and the Nash Q-learning baseline.

One learner object holds both players' tables. Both players observe the same
experience and run the same deterministic equilibrium selection, so two
mirrored copies would stay identical anyway.

Tables live in flat Python lists indexed like the rows of
``GameModel.transition``; per-step work is scalar and list indexing beats
numpy element access by a wide margin at this scale.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from .markov_game import GameModel, JointPolicy, QTables
from .stage_game import CLASSIFY_TOL, BimatrixGame, EqClass, EquilibriumProfile, select_equilibrium

# float slack for the Q monotonicity self-check
_MONO_TOL = 1e-12
# stage values can only be trusted to the classification tolerance: two cells
# within it both count as the global optimum
_VALUE_TOL = CLASSIFY_TOL


@dataclass(frozen=True)
class StepEvents:
    """What one observed transition did to the learner.

    ``attempts`` lists ``(player, success)`` for every attempted update in the
    step; both players can attempt in the same step.
    """

    attempts: Tuple[Tuple[int, bool], ...]
    q_changed: bool
    chosen_profile: Tuple[int, int]
    stage_values: Tuple[float, float]

    @property
    def attempted_update(self) -> Optional[Tuple[int, bool]]:
        return self.attempts[0] if self.attempts else None

    @property
    def successes(self) -> int:
        return sum(1 for _, ok in self.attempts if ok)


class _Stage:
    """Cached stage solution for one state."""

    __slots__ = ("eq", "v1", "v2", "pure", "cum1", "cum2", "signature")

    def __init__(self, eq: EquilibriumProfile):
        self.eq = eq
        self.v1 = eq.value_1
        self.v2 = eq.value_2
        if eq.is_pure:
            self.pure = (eq.support_1[0], eq.support_2[0])
        else:
            self.pure = None
        self.cum1 = np.cumsum(eq.strategy_1).tolist()
        self.cum2 = np.cumsum(eq.strategy_2).tolist()
        self.signature = (eq.strategy_1.tobytes(), eq.strategy_2.tobytes())


def _draw(cum: List[float], u: float) -> int:
    for i, c in enumerate(cum):
        if u < c:
            return i
    # rounding can leave the last cumulative entry a hair below 1
    for i in range(len(cum) - 1, -1, -1):
        if i == 0 or cum[i] > cum[i - 1]:
            return i
    return 0


class _TabularNashLearner:
    """Shared machinery: flat Q lists, stage cache, greedy policies."""

    def __init__(self, model: GameModel, q_init: float):
        self.model = model
        self.gamma = model.gamma
        self.n1 = model.n_actions_1
        self.n2 = model.n_actions_2
        self.k = self.n1 * self.n2
        n = model.n_profiles
        self.q1 = [float(q_init)] * n
        self.q2 = [float(q_init)] * n
        self.is_terminal = model.terminal_mask.tolist()
        self._stage: List[Optional[_Stage]] = [None] * model.n_states
        # stage values per state; terminals are pinned at zero and never invalidated
        self._vals: List[Optional[Tuple[float, float]]] = [
            (0.0, 0.0) if term else None for term in self.is_terminal
        ]
        self._last_v: List[Optional[Tuple[float, float]]] = [None] * model.n_states
        self.stage_solves = 0
        self.plain_selections = 0
        self.value_increases = 0
        # increases seen while every selection so far was globally optimal or a saddle
        self.value_increases_assumption = 0

    # -- stage games -------------------------------------------------------

    def stage(self, s: int) -> _Stage:
        entry = self._stage[s]
        if entry is None:
            lo = s * self.k
            hi = lo + self.k
            game = BimatrixGame(
                np.array(self.q1[lo:hi]).reshape(self.n1, self.n2),
                np.array(self.q2[lo:hi]).reshape(self.n1, self.n2),
            )
            entry = _Stage(select_equilibrium(game))
            self._stage[s] = entry
            if not self.is_terminal[s]:
                self._vals[s] = (entry.v1, entry.v2)
            self.stage_solves += 1
            if entry.eq.klass is EqClass.PLAIN:
                self.plain_selections += 1
            last = self._last_v[s]
            if last is not None and (entry.v1 > last[0] + _VALUE_TOL or entry.v2 > last[1] + _VALUE_TOL):
                self.value_increases += 1
                if self.plain_selections == 0:
                    self.value_increases_assumption += 1
            self._last_v[s] = (entry.v1, entry.v2)
        return entry

    def value(self, s: int) -> Tuple[float, float]:
        """Stage values ``(v1, v2)`` of the current tables; zero at terminals."""
        v = self._vals[s]
        if v is None:
            self.stage(s)
            v = self._vals[s]
        return v

    def greedy_profile(self, s: int, rng) -> Tuple[Tuple[int, int], Tuple[float, float]]:
        """Sample the selected stage equilibrium at ``s`` and return it with the stage values."""
        entry = self.stage(s)
        if entry.pure is not None:
            return entry.pure, (entry.v1, entry.v2)
        return (_draw(entry.cum1, rng.random()), _draw(entry.cum2, rng.random())), (entry.v1, entry.v2)

    def choose(self, s: int, rng) -> Tuple[int, int]:
        return self.greedy_profile(s, rng)[0]

    @property
    def assumption_held(self) -> bool:
        """True while every selected stage equilibrium was globally optimal or a saddle."""
        return self.plain_selections == 0

    # -- snapshots ---------------------------------------------------------

    def snapshot(self) -> QTables:
        shape = self.model.shape
        return QTables(np.array(self.q1).reshape(shape), np.array(self.q2).reshape(shape))

    def greedy_policy(self) -> JointPolicy:
        m = self.model
        pi_1 = np.zeros((m.n_states, self.n1))
        pi_2 = np.zeros((m.n_states, self.n2))
        for s in range(m.n_states):
            if self.is_terminal[s]:
                pi_1[s, 0] = pi_2[s, 0] = 1.0
            else:
                eq = self.stage(s).eq
                pi_1[s], pi_2[s] = eq.strategy_1, eq.strategy_2
        return JointPolicy(pi_1, pi_2)

    def stage_value_arrays(self) -> Tuple[np.ndarray, np.ndarray]:
        vals = [self.value(s) for s in range(self.model.n_states)]
        return np.array([v[0] for v in vals]), np.array([v[1] for v in vals])

    def reachable_signature(self, start: Optional[int] = None):
        """Greedy policy restricted to the states it reaches from ``start``.

        Returned as a hashable tuple of ``(state, strategy bytes)`` pairs.
        """
        m = self.model
        start = m.initial if start is None else start
        seen = {start}
        stack = [start]
        succ = m.successors
        while stack:
            s = stack.pop()
            if self.is_terminal[s]:
                continue
            entry = self.stage(s)
            eq = entry.eq
            base = s * self.k
            for a1 in eq.support_1:
                for a2 in eq.support_2:
                    for s_next in succ[base + a1 * self.n2 + a2][0]:
                        if s_next not in seen:
                            seen.add(s_next)
                            stack.append(s_next)
        return tuple((s, self._stage[s].signature) for s in sorted(seen) if not self.is_terminal[s])

    def _invalidate(self, s: int) -> None:
        self._stage[s] = None
        if not self.is_terminal[s]:
            self._vals[s] = None


class DelayedNashQLearner(_TabularNashLearner):
    """Delayed Nash Q-learning.

    :param model: game whose state and action sets the tables cover; only
        ``gamma`` and the terminal set are read during learning.
    :param m: samples per attempted update.
    :param epsilon_1: update threshold and bonus.
    """

    def __init__(self, model: GameModel, m: int, epsilon_1: float):
        if m < 1:
            raise ValueError("m must be a positive integer")
        if epsilon_1 <= 0:
            raise ValueError("epsilon_1 must be positive")
        super().__init__(model, model.v_max)
        n = model.n_profiles
        self.m = int(m)
        self.epsilon_1 = float(epsilon_1)
        self.u1 = [0.0] * n
        self.u2 = [0.0] * n
        self.l1 = [0] * n
        self.l2 = [0] * n
        self.b1 = [0] * n
        self.b2 = [0] * n
        self.learn1 = [True] * n
        self.learn2 = [True] * n
        self.t_star = 0
        self.successful_updates = 0
        self.attempted_updates = 0
        self.monotonicity_violations = 0
        self.min_decrease = float("inf")

    def _player_update(self, p, t, target, q, u, l, b, learn):
        """One player's pass over the update rule; returns None or success flag."""
        if b[p] <= self.t_star:
            learn[p] = True
        if not learn[p]:
            return None
        if l[p] == 0:
            b[p] = t
        l[p] += 1
        u[p] += target
        if l[p] != self.m:
            return None
        mean = u[p] / self.m
        old = q[p]
        success = old - mean >= 2.0 * self.epsilon_1
        if success:
            new = mean + self.epsilon_1
            q[p] = new
            self.t_star = t
            drop = old - new
            if drop < self.min_decrease:
                self.min_decrease = drop
            if drop < self.epsilon_1 - _MONO_TOL:
                self.monotonicity_violations += 1
        elif b[p] > self.t_star:
            learn[p] = False
        u[p] = 0.0
        l[p] = 0
        return success

    def update(self, t: int, s: int, a1: int, a2: int, r1: float, r2: float, s_next: int) -> Tuple[int, int]:
        """Apply one experience; returns ``(attempted, successful)`` counts."""
        p = (s * self.n1 + a1) * self.n2 + a2
        v1, v2 = self.value(s_next)  # values at the start of step t
        g = self.gamma
        r_1 = self._player_update(p, t, r1 + g * v1, self.q1, self.u1, self.l1, self.b1, self.learn1)
        r_2 = self._player_update(p, t, r2 + g * v2, self.q2, self.u2, self.l2, self.b2, self.learn2)
        attempted = (r_1 is not None) + (r_2 is not None)
        successful = (r_1 is True) + (r_2 is True)
        if attempted:
            self.attempted_updates += attempted
            if successful:
                self.successful_updates += successful
                self._invalidate(s)
        return attempted, successful

    def observe(self, t: int, s: int, a1: int, a2: int, r1: float, r2: float, s_next: int) -> StepEvents:
        stage = self.value(s)
        before = (self.attempted_updates, self.successful_updates)
        p = (s * self.n1 + a1) * self.n2 + a2
        v1, v2 = self.value(s_next)
        g = self.gamma
        attempts = []
        for player, target, tables in (
            (1, r1 + g * v1, (self.q1, self.u1, self.l1, self.b1, self.learn1)),
            (2, r2 + g * v2, (self.q2, self.u2, self.l2, self.b2, self.learn2)),
        ):
            res = self._player_update(p, t, target, *tables)
            if res is not None:
                attempts.append((player, res))
        n_succ = sum(ok for _, ok in attempts)
        self.attempted_updates = before[0] + len(attempts)
        self.successful_updates = before[1] + n_succ
        if n_succ:
            self._invalidate(s)
        return StepEvents(tuple(attempts), n_succ > 0, (a1, a2), stage)


class NashQLearner(_TabularNashLearner):
    """Nash Q-learning with ``1/n`` step sizes and epsilon-greedy exploration."""

    def __init__(self, model: GameModel, exploration_rate: float = 0.1, q_init: float = 0.0):
        super().__init__(model, q_init)
        self.exploration_rate = float(exploration_rate)
        self.visits = [0] * model.n_profiles
        self.successful_updates = 0
        self.attempted_updates = 0

    def choose(self, s: int, rng) -> Tuple[int, int]:
        if self.exploration_rate > 0.0 and rng.random() < self.exploration_rate:
            return int(rng.random() * self.n1), int(rng.random() * self.n2)
        return self.greedy_profile(s, rng)[0]

    def update(self, t: int, s: int, a1: int, a2: int, r1: float, r2: float, s_next: int) -> Tuple[int, int]:
        p = (s * self.n1 + a1) * self.n2 + a2
        v1, v2 = self.value(s_next)
        self.visits[p] += 1
        alpha = 1.0 / self.visits[p]
        g = self.gamma
        old1, old2 = self.q1[p], self.q2[p]
        self.q1[p] = (1.0 - alpha) * old1 + alpha * (r1 + g * v1)
        self.q2[p] = (1.0 - alpha) * old2 + alpha * (r2 + g * v2)
        changed = self.q1[p] != old1 or self.q2[p] != old2
        if changed:
            self._invalidate(s)
        self.attempted_updates += 2
        self.successful_updates += 2 * changed
        return 2, 2 * changed

    def observe(self, t: int, s: int, a1: int, a2: int, r1: float, r2: float, s_next: int) -> StepEvents:
        stage = self.value(s)
        _, succ = self.update(t, s, a1, a2, r1, r2, s_next)
        return StepEvents(((1, succ > 0), (2, succ > 0)), succ > 0, (a1, a2), stage)
