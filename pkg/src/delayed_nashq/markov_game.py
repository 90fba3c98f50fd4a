"""Two-player Markov games: model, tables, policies and evaluation.

Transitions are stored as a sparse ``(S * A1 * A2, S)`` matrix whose row
``(s * A1 + a1) * A2 + a2`` is the next-state distribution of that profile.
Terminal states are absorbing with zero reward and are valued at zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from .errors import NonConvergence, TerminalState
from .stage_game import BimatrixGame, EquilibriumProfile, select_equilibrium

ROW_SUM_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class GameModel:
    n_states: int
    n_actions_1: int
    n_actions_2: int
    transition: sp.csr_matrix
    reward_1: np.ndarray
    reward_2: np.ndarray
    gamma: float
    terminals: frozenset
    initial: int = 0
    labels: Optional[Tuple] = None
    # synthetic models (known-state games) may carry rewards above 1
    bounded_rewards: bool = True

    def __post_init__(self):
        n_rows = self.n_states * self.n_actions_1 * self.n_actions_2
        t = sp.csr_matrix(self.transition, dtype=float)
        t.sum_duplicates()
        t.sort_indices()
        object.__setattr__(self, "transition", t)
        object.__setattr__(self, "terminals", frozenset(int(s) for s in self.terminals))
        shape = (self.n_states, self.n_actions_1, self.n_actions_2)
        r1 = np.asarray(self.reward_1, dtype=float)
        r2 = np.asarray(self.reward_2, dtype=float)
        object.__setattr__(self, "reward_1", r1)
        object.__setattr__(self, "reward_2", r2)
        if t.shape != (n_rows, self.n_states):
            raise ValueError(f"transition shape {t.shape} != {(n_rows, self.n_states)}")
        if r1.shape != shape or r2.shape != shape:
            raise ValueError(f"reward arrays must have shape {shape}")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must lie in [0, 1), got {self.gamma}")
        if not 0 <= self.initial < self.n_states:
            raise ValueError("initial state out of range")
        if t.nnz and t.data.min() < 0:
            raise ValueError("negative transition probability")
        sums = np.asarray(t.sum(axis=1)).ravel()
        bad = np.flatnonzero(np.abs(sums - 1.0) > ROW_SUM_TOL)
        if bad.size:
            s, a1, a2 = self.unflatten(int(bad[0]))
            raise ValueError(f"transition row ({s},{a1},{a2}) sums to {sums[bad[0]]!r}")
        if self.bounded_rewards and (r1.min() < 0 or r1.max() > 1 or r2.min() < 0 or r2.max() > 1):
            raise ValueError("rewards must lie in [0, 1]")
        for s in self.terminals:
            rows = t[self.profile_rows(s)]
            if rows.nnz != rows.shape[0] or not np.all(rows.indices == s):
                raise ValueError(f"terminal state {s} must self-loop")
            if r1[s].any() or r2[s].any():
                raise ValueError(f"terminal state {s} must carry zero reward")

    @property
    def shape(self):
        return (self.n_states, self.n_actions_1, self.n_actions_2)

    @property
    def n_profiles(self) -> int:
        return self.n_states * self.n_actions_1 * self.n_actions_2

    @property
    def v_max(self) -> float:
        return 1.0 / (1.0 - self.gamma)

    def flat(self, s: int, a1: int, a2: int) -> int:
        return (s * self.n_actions_1 + a1) * self.n_actions_2 + a2

    def unflatten(self, row: int):
        s, rest = divmod(row, self.n_actions_1 * self.n_actions_2)
        a1, a2 = divmod(rest, self.n_actions_2)
        return s, a1, a2

    def profile_rows(self, s: int) -> slice:
        k = self.n_actions_1 * self.n_actions_2
        return slice(s * k, (s + 1) * k)

    @cached_property
    def terminal_mask(self) -> np.ndarray:
        mask = np.zeros(self.n_states, dtype=bool)
        mask[list(self.terminals)] = True
        return mask

    @cached_property
    def successors(self):
        """Per profile row: (next states, cumulative probabilities) as lists."""
        t = self.transition
        out = []
        for row in range(t.shape[0]):
            lo, hi = t.indptr[row], t.indptr[row + 1]
            out.append((t.indices[lo:hi].tolist(), np.cumsum(t.data[lo:hi]).tolist()))
        return out

    def next_distribution(self, s: int, a1: int, a2: int):
        nxt, cum = self.successors[self.flat(s, a1, a2)]
        probs = np.diff([0.0] + cum)
        return dict(zip(nxt, probs.tolist()))


@dataclass(frozen=True, eq=False)
class JointPolicy:
    """Per-state mixed strategies, arrays of shape ``(S, A1)`` and ``(S, A2)``."""

    pi_1: np.ndarray
    pi_2: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "pi_1", np.asarray(self.pi_1, dtype=float))
        object.__setattr__(self, "pi_2", np.asarray(self.pi_2, dtype=float))

    @classmethod
    def pure(cls, model: GameModel, actions_1: Sequence[int], actions_2: Sequence[int]) -> "JointPolicy":
        pi_1 = np.zeros((model.n_states, model.n_actions_1))
        pi_2 = np.zeros((model.n_states, model.n_actions_2))
        pi_1[np.arange(model.n_states), actions_1] = 1.0
        pi_2[np.arange(model.n_states), actions_2] = 1.0
        return cls(pi_1, pi_2)

    def validate(self, model: GameModel, tol: float = 1e-12) -> None:
        live = ~model.terminal_mask
        for pi in (self.pi_1[live], self.pi_2[live]):
            if pi.size and (pi.min() < 0 or np.abs(pi.sum(axis=1) - 1.0).max() > tol):
                raise ValueError("policy rows must be probability vectors at non-terminal states")

    def joint_weights(self) -> np.ndarray:
        """``(S, A1 * A2)`` probability of each joint profile."""
        s = self.pi_1.shape[0]
        return (self.pi_1[:, :, None] * self.pi_2[:, None, :]).reshape(s, -1)

    def same_as(self, other: "JointPolicy", states=None) -> bool:
        if states is None:
            return np.array_equal(self.pi_1, other.pi_1) and np.array_equal(self.pi_2, other.pi_2)
        idx = list(states)
        return np.array_equal(self.pi_1[idx], other.pi_1[idx]) and np.array_equal(self.pi_2[idx], other.pi_2[idx])


@dataclass(frozen=True, eq=False)
class QTables:
    q_1: np.ndarray
    q_2: np.ndarray

    @classmethod
    def constant(cls, model: GameModel, value: float) -> "QTables":
        return cls(np.full(model.shape, float(value)), np.full(model.shape, float(value)))

    def copy(self) -> "QTables":
        return QTables(self.q_1.copy(), self.q_2.copy())

    def stage_game(self, s: int) -> BimatrixGame:
        return BimatrixGame(self.q_1[s], self.q_2[s])

    def solve(self, model: GameModel):
        """Selected stage equilibrium per state (None at terminals)."""
        return [None if s in model.terminals else select_equilibrium(self.stage_game(s))
                for s in range(model.n_states)]

    def values(self, model: GameModel) -> Tuple[np.ndarray, np.ndarray]:
        """State values from the selected stage equilibria; zero at terminals."""
        return stage_values(self.solve(model), model)

    def greedy_policy(self, model: GameModel) -> JointPolicy:
        return policy_from_equilibria(self.solve(model), model)


def stage_values(eqs: Sequence[Optional[EquilibriumProfile]], model: GameModel):
    v1 = np.zeros(model.n_states)
    v2 = np.zeros(model.n_states)
    for s, eq in enumerate(eqs):
        if eq is not None:
            v1[s], v2[s] = eq.value_1, eq.value_2
    return v1, v2


def policy_from_equilibria(eqs: Sequence[Optional[EquilibriumProfile]], model: GameModel) -> JointPolicy:
    pi_1 = np.zeros((model.n_states, model.n_actions_1))
    pi_2 = np.zeros((model.n_states, model.n_actions_2))
    for s, eq in enumerate(eqs):
        if eq is None:
            # terminal: any valid row, the value is pinned to zero anyway
            pi_1[s, 0] = pi_2[s, 0] = 1.0
        else:
            pi_1[s], pi_2[s] = eq.strategy_1, eq.strategy_2
    return JointPolicy(pi_1, pi_2)


def sample_transition(model: GameModel, s: int, a1: int, a2: int, rng) -> Tuple[int, float, float]:
    """Draw the next state and return it with both players' rewards.

    ``rng`` only needs a ``random()`` method returning a uniform in [0, 1);
    point-mass rows consume no randomness.
    """
    if s in model.terminals:
        raise TerminalState(f"state {s} is terminal")
    nxt, cum = model.successors[model.flat(s, a1, a2)]
    if len(nxt) == 1:
        s_next = nxt[0]
    else:
        u = rng.random()
        s_next = nxt[-1]
        for state, c in zip(nxt, cum):
            if u < c:
                s_next = state
                break
    return s_next, float(model.reward_1[s, a1, a2]), float(model.reward_2[s, a1, a2])


def _as_known_mask(model: GameModel, known) -> np.ndarray:
    if isinstance(known, np.ndarray) and known.dtype == bool:
        if known.shape != model.shape:
            raise ValueError("known mask has the wrong shape")
        return known
    mask = np.zeros(model.shape, dtype=bool)
    for s, a1, a2 in known:
        mask[s, a1, a2] = True
    return mask


def build_known_game(model: GameModel, known, q: QTables) -> GameModel:
    """Surrogate game that freezes every unknown profile at its current Q.

    Each unknown ``(s, a1, a2)`` jumps to its own absorbing state, which pays
    ``(1 - gamma) * Q^i(s, a1, a2)`` on entry and on every later step, so its
    discounted value is exactly the frozen Q. Known rows are copied unchanged.
    Profiles at terminal states keep their absorbing zero-reward rows.
    """
    known = _as_known_mask(model, known).copy()
    known[model.terminal_mask] = True
    unknown = np.flatnonzero(~known.ravel())
    n_old = model.n_states
    n_new = n_old + unknown.size
    k = model.n_actions_1 * model.n_actions_2
    scale = 1.0 - model.gamma

    z_of_row = np.full(model.n_profiles, -1)
    z_of_row[unknown] = n_old + np.arange(unknown.size)

    t = model.transition
    keep = known.ravel()
    # original rows: copy known entries verbatim, reroute unknown rows
    t_known = sp.diags(keep.astype(float)) @ t
    t_known = sp.csr_matrix((t_known.data, t_known.indices, t_known.indptr), shape=(model.n_profiles, n_new))
    t_known.eliminate_zeros()
    reroute = sp.csr_matrix(
        (np.ones(unknown.size), (unknown, z_of_row[unknown])), shape=(model.n_profiles, n_new)
    )
    z_states = np.repeat(n_old + np.arange(unknown.size), k)
    z_rows = sp.csr_matrix(
        (np.ones(z_states.size), (np.arange(z_states.size), z_states)), shape=(z_states.size, n_new)
    )
    transition = sp.vstack([t_known + reroute, z_rows], format="csr")

    r1 = np.zeros((n_new, model.n_actions_1, model.n_actions_2))
    r2 = np.zeros_like(r1)
    r1[:n_old] = np.where(known, model.reward_1, scale * q.q_1)
    r2[:n_old] = np.where(known, model.reward_2, scale * q.q_2)
    frozen_1 = scale * q.q_1.ravel()[unknown]
    frozen_2 = scale * q.q_2.ravel()[unknown]
    r1[n_old:] = frozen_1[:, None, None]
    r2[n_old:] = frozen_2[:, None, None]

    labels = None
    if model.labels is not None:
        labels = tuple(model.labels) + tuple(("z",) + model.unflatten(int(row)) for row in unknown)
    return GameModel(
        n_new, model.n_actions_1, model.n_actions_2, transition, r1, r2, model.gamma,
        model.terminals, model.initial, labels, bounded_rewards=False,
    )


def _policy_operator(model: GameModel, policy: JointPolicy):
    """Expected rewards ``(S, 2)`` and transition matrix under a joint policy."""
    w = policy.joint_weights()
    if w.shape != (model.n_states, model.n_actions_1 * model.n_actions_2):
        raise ValueError("policy does not match the model dimensions")
    live = (~model.terminal_mask).astype(float)
    w = w * live[:, None]
    rewards = np.stack([
        (w * model.reward_1.reshape(model.n_states, -1)).sum(axis=1),
        (w * model.reward_2.reshape(model.n_states, -1)).sum(axis=1),
    ], axis=1)
    k = w.shape[1]
    rows = np.repeat(np.arange(model.n_states), k)
    spread = sp.csr_matrix((w.ravel(), (rows, np.arange(model.n_profiles))),
                           shape=(model.n_states, model.n_profiles))
    return rewards, (spread @ model.transition).tocsr()


def iteration_cap(gamma: float, tol: float) -> int:
    if gamma <= 0.0:
        return 65
    return math.ceil(math.log(tol * (1.0 - gamma)) / math.log(gamma)) + 64


def policy_evaluation(model: GameModel, policy: JointPolicy, tol: float = 1e-9) -> Tuple[np.ndarray, np.ndarray]:
    """Both players' values under a stationary joint policy.

    Iterates the policy Bellman operator from zero until successive iterates
    differ by at most ``tol``; the returned vector's residual is then at most
    ``gamma * tol``.
    """
    policy.validate(model)
    rewards, p = _policy_operator(model, policy)
    v = np.zeros_like(rewards)
    residual = np.inf
    for _ in range(iteration_cap(model.gamma, tol)):
        v_new = rewards + model.gamma * (p @ v)
        residual = float(np.abs(v_new - v).max()) if v.size else 0.0
        v = v_new
        if residual <= tol:
            return v[:, 0].copy(), v[:, 1].copy()
    raise NonConvergence(f"policy evaluation residual {residual:.3g} > {tol:.3g}", residual, (v[:, 0], v[:, 1]))


def bellman_residual(model: GameModel, policy: JointPolicy, v1: np.ndarray, v2: np.ndarray) -> float:
    rewards, p = _policy_operator(model, policy)
    v = np.stack([v1, v2], axis=1)
    return float(np.abs(rewards + model.gamma * (p @ v) - v).max())


def h_step_values(model: GameModel, policy: JointPolicy, horizon: int) -> Tuple[np.ndarray, np.ndarray]:
    """Expected discounted reward over steps ``0..horizon`` from every state."""
    if horizon < 0:
        raise ValueError("horizon must be non-negative")
    rewards, p = _policy_operator(model, policy)
    v = rewards.copy()
    for _ in range(horizon):
        v = rewards + model.gamma * (p @ v)
    return v[:, 0].copy(), v[:, 1].copy()


def h_step_value(model: GameModel, policy: JointPolicy, s: int, horizon: int) -> Tuple[float, float]:
    v1, v2 = h_step_values(model, policy, horizon)
    return float(v1[s]), float(v2[s])


def h_step_horizon(gamma: float, epsilon: float) -> int:
    """Horizon after which truncating the discounted sum costs at most epsilon."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    horizon = math.log(1.0 / ((1.0 - gamma) * epsilon)) / (1.0 - gamma)
    return max(0, math.ceil(horizon))


def reachable_states(model: GameModel, policy: JointPolicy, start: Optional[int] = None) -> list:
    """States reachable from ``start`` with positive probability, sorted."""
    start = model.initial if start is None else start
    seen = {start}
    stack = [start]
    while stack:
        s = stack.pop()
        if s in model.terminals:
            continue
        for a1 in np.flatnonzero(policy.pi_1[s] > 0):
            for a2 in np.flatnonzero(policy.pi_2[s] > 0):
                for s_next in model.successors[model.flat(s, int(a1), int(a2))][0]:
                    if s_next not in seen:
                        seen.add(s_next)
                        stack.append(s_next)
    return sorted(seen)


def parse_game(text: str) -> GameModel:
    """Read the line-per-transition game format.

    Header: ``states N actions1 K1 actions2 K2 gamma G initial I terminals t1,t2``
    then one ``s a1 a2 s' prob r1 r2`` line per transition. A profile's reward is
    the probability-weighted mean of its lines. Terminal rows are implicit.
    """
    lines = [ln.split("#", 1)[0].strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln]
    if not lines:
        raise ValueError("empty game file")
    head = lines[0].split()
    fields = dict(zip(head[0::2], head[1::2]))
    try:
        n = int(fields["states"])
        k1 = int(fields["actions1"])
        k2 = int(fields["actions2"])
        gamma = float(fields["gamma"])
    except KeyError as exc:
        raise ValueError(f"game header is missing {exc}") from None
    initial = int(fields.get("initial", 0))
    term_field = fields.get("terminals", "")
    terminals = {int(x) for x in term_field.split(",") if x.strip()}

    shape = (n, k1, k2)
    rows, cols, probs = [], [], []
    r1 = np.zeros(shape)
    r2 = np.zeros(shape)
    seen = np.zeros(shape, dtype=bool)
    for lineno, ln in enumerate(lines[1:], start=2):
        parts = ln.split()
        if len(parts) != 7:
            raise ValueError(f"line {lineno}: expected 's a1 a2 s_next prob r1 r2'")
        s, a1, a2, s_next = (int(x) for x in parts[:4])
        prob, rew1, rew2 = (float(x) for x in parts[4:])
        if s in terminals:
            raise ValueError(f"line {lineno}: terminal state {s} cannot have transitions")
        rows.append((s * k1 + a1) * k2 + a2)
        cols.append(s_next)
        probs.append(prob)
        r1[s, a1, a2] += prob * rew1
        r2[s, a1, a2] += prob * rew2
        seen[s, a1, a2] = True
    for s in sorted(terminals):
        for a1 in range(k1):
            for a2 in range(k2):
                rows.append((s * k1 + a1) * k2 + a2)
                cols.append(s)
                probs.append(1.0)
                seen[s, a1, a2] = True
    if not seen.all():
        missing = tuple(int(x) for x in np.argwhere(~seen)[0])
        raise ValueError(f"no transitions given for profile {missing}")
    t = sp.csr_matrix((probs, (rows, cols)), shape=(n * k1 * k2, n))
    return GameModel(n, k1, k2, t, r1, r2, gamma, frozenset(terminals), initial)
