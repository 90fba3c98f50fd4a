"""Two-player normal-form (stage) games.

Equilibria are found by support enumeration over equal-size support pairs,
which is exact and fast enough for the small stage games that arise from
Q-tables (at most 4x4 here). Each equilibrium is classified as globally
optimal, a saddle point, or plain, and :func:`select_equilibrium` applies a
fixed total order so that two players who hold identical tables always pick
the same equilibrium.
"""

from __future__ import annotations

import enum
import itertools
import logging
from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional

import numpy as np

from .errors import NoEquilibriumFound

logger = logging.getLogger(__name__)

BR_TOL = 1e-9
CLASSIFY_TOL = 1e-7
# Indifference systems with a worse condition number are treated as singular.
_MAX_CONDITION = 1e12


class EqClass(str, enum.Enum):
    GLOBAL_OPTIMAL = "GlobalOptimal"
    SADDLE = "Saddle"
    PLAIN = "Plain"


@dataclass(frozen=True)
class BimatrixGame:
    """Payoff matrices indexed ``[a1][a2]`` for the row and column player."""

    payoff_1: np.ndarray
    payoff_2: np.ndarray

    def __post_init__(self):
        p1 = np.array(self.payoff_1, dtype=float)
        p2 = np.array(self.payoff_2, dtype=float)
        if p1.ndim != 2 or p1.shape != p2.shape:
            raise ValueError(f"payoff shapes differ or are not 2-D: {p1.shape} vs {p2.shape}")
        if min(p1.shape) < 1:
            raise ValueError("each player needs at least one action")
        if not (np.all(np.isfinite(p1)) and np.all(np.isfinite(p2))):
            raise ValueError("payoffs must be finite")
        p1.flags.writeable = False
        p2.flags.writeable = False
        object.__setattr__(self, "payoff_1", p1)
        object.__setattr__(self, "payoff_2", p2)

    @property
    def shape(self):
        return self.payoff_1.shape


@dataclass(frozen=True)
class EquilibriumProfile:
    strategy_1: np.ndarray
    strategy_2: np.ndarray
    value_1: float
    value_2: float
    klass: Optional[EqClass] = None
    support_1: tuple = field(default=(), compare=False)
    support_2: tuple = field(default=(), compare=False)

    @property
    def is_pure(self) -> bool:
        return len(self.support_1) == 1 and len(self.support_2) == 1

    def with_class(self, klass: EqClass) -> "EquilibriumProfile":
        return EquilibriumProfile(
            self.strategy_1, self.strategy_2, self.value_1, self.value_2,
            klass, self.support_1, self.support_2,
        )


class Enumeration(NamedTuple):
    equilibria: List[EquilibriumProfile]
    degenerate: bool


def is_mixed_strategy(probs, tol: float = 1e-12) -> bool:
    probs = np.asarray(probs, dtype=float)
    return bool(probs.ndim == 1 and np.all(probs >= 0) and abs(probs.sum() - 1.0) <= tol)


def best_response_gain(game: BimatrixGame, x: np.ndarray, y: np.ndarray):
    """Largest payoff gain either player gets from a pure deviation."""
    a, b = game.payoff_1, game.payoff_2
    v1 = float(x @ a @ y)
    v2 = float(x @ b @ y)
    return float((a @ y).max() - v1), float((x @ b).max() - v2)


def _pure_profile(game: BimatrixGame, i: int, j: int) -> EquilibriumProfile:
    n1, n2 = game.shape
    x = np.zeros(n1)
    y = np.zeros(n2)
    x[i] = 1.0
    y[j] = 1.0
    return EquilibriumProfile(
        x, y, float(game.payoff_1[i, j]), float(game.payoff_2[i, j]),
        support_1=(i,), support_2=(j,),
    )


def enumerate_pure_equilibria(game: BimatrixGame, tol: float = BR_TOL) -> List[EquilibriumProfile]:
    """All pure equilibria in lexicographic ``(a1, a2)`` order."""
    a, b = game.payoff_1, game.payoff_2
    row_ok = a >= a.max(axis=0, keepdims=True) - tol
    col_ok = b >= b.max(axis=1, keepdims=True) - tol
    cells = np.argwhere(row_ok & col_ok)
    return [_pure_profile(game, int(i), int(j)) for i, j in cells]


def _indifference(blocks: np.ndarray):
    """Solve ``B @ p = v * 1`` with ``sum(p) = 1`` for a stack of square blocks.

    Returns the stacked solutions and a mask of the systems that are
    numerically singular (their solutions are garbage and must be ignored).
    """
    n, k, _ = blocks.shape
    system = np.zeros((n, k + 1, k + 1))
    system[:, :k, :k] = blocks
    system[:, :k, k] = -1.0
    system[:, k, :k] = 1.0
    singular = np.linalg.cond(system) > _MAX_CONDITION
    system[singular] = np.eye(k + 1)
    rhs = np.zeros((n, k + 1, 1))
    rhs[:, k, 0] = 1.0
    sol = np.linalg.solve(system, rhs)[:, :k, 0]
    return sol, singular


def _support_index(n: int, k: int) -> np.ndarray:
    return np.array(list(itertools.combinations(range(n), k)), dtype=int)


def support_enumeration(
    game: BimatrixGame, max_support: Optional[int] = None, tol: float = BR_TOL
) -> Enumeration:
    """Equilibria over equal-size supports, plus a degenerate-game flag.

    Supports are visited by size and then lexicographically, so singleton
    supports (the pure equilibria) always come first. A support pair whose
    indifference system is singular is skipped and sets ``degenerate``.
    """
    n1, n2 = game.shape
    limit = min(n1, n2)
    if max_support is None:
        max_support = limit
    if not 1 <= max_support <= limit:
        raise ValueError(f"max_support must lie in [1, {limit}], got {max_support}")

    a, b = game.payoff_1, game.payoff_2
    found = enumerate_pure_equilibria(game, tol)
    degenerate = False
    for k in range(2, max_support + 1):
        rows = _support_index(n1, k)
        cols = _support_index(n2, k)
        # all (row support, column support) pairs in lexicographic order
        ri = np.repeat(np.arange(len(rows)), len(cols))
        ci = np.tile(np.arange(len(cols)), len(rows))
        r_sel = rows[ri][:, :, None]
        c_sel = cols[ci][:, None, :]
        # column player's mix makes the row player indifferent, and vice versa
        y_s, bad_y = _indifference(a[r_sel, c_sel])
        x_s, bad_x = _indifference(np.swapaxes(b[r_sel, c_sel], 1, 2))
        bad = bad_x | bad_y
        degenerate = degenerate or bool(bad.any())
        # strictly positive on the support, else it duplicates a smaller support
        ok = ~bad & (y_s.min(axis=1) > tol) & (x_s.min(axis=1) > tol)
        for idx in np.flatnonzero(ok):
            x = np.zeros(n1)
            y = np.zeros(n2)
            x[rows[ri[idx]]] = x_s[idx] / x_s[idx].sum()
            y[cols[ci[idx]]] = y_s[idx] / y_s[idx].sum()
            gain_1, gain_2 = best_response_gain(game, x, y)
            if gain_1 > tol or gain_2 > tol:
                continue
            found.append(EquilibriumProfile(
                x, y, float(x @ a @ y), float(x @ b @ y),
                support_1=tuple(rows[ri[idx]].tolist()), support_2=tuple(cols[ci[idx]].tolist()),
            ))
    if degenerate:
        logger.debug("degenerate stage game %s: singular support systems skipped", game.shape)
    return Enumeration(found, degenerate)


def support_enumeration_equilibria(
    game: BimatrixGame, max_support: Optional[int] = None, tol: float = BR_TOL
) -> List[EquilibriumProfile]:
    return support_enumeration(game, max_support, tol).equilibria


def classify_equilibrium(game: BimatrixGame, eq: EquilibriumProfile, tol: float = CLASSIFY_TOL) -> EqClass:
    """Globally optimal beats saddle; anything else is plain.

    Pure opponent deviations suffice for the saddle test because the
    non-deviating player's payoff is linear in the opponent's mix.
    """
    a, b = game.payoff_1, game.payoff_2
    if eq.value_1 >= a.max() - tol and eq.value_2 >= b.max() - tol:
        return EqClass.GLOBAL_OPTIMAL
    own_1 = eq.strategy_1 @ a  # player 1's payoff per column deviation of player 2
    own_2 = b @ eq.strategy_2
    if own_1.min() >= eq.value_1 - tol and own_2.min() >= eq.value_2 - tol:
        return EqClass.SADDLE
    return EqClass.PLAIN


_RANK = {EqClass.GLOBAL_OPTIMAL: 0, EqClass.SADDLE: 1, EqClass.PLAIN: 2}
_KEY_DIGITS = 9


def selection_key(eq: EquilibriumProfile, klass: EqClass, position: int):
    """Sort key of the selection order; smaller is preferred.

    Globally optimal first, then the larger minimum of the two values, then
    the larger value sum, then saddle before plain, then enumeration order.
    The value criteria treat both players alike, which keeps the selected
    values stable across value-iteration sweeps.
    """
    v1 = round(eq.value_1, _KEY_DIGITS)
    v2 = round(eq.value_2, _KEY_DIGITS)
    return (klass is not EqClass.GLOBAL_OPTIMAL, -min(v1, v2), -(v1 + v2), _RANK[klass], position)


def select_equilibrium(
    game: BimatrixGame, tol: float = BR_TOL, classify_tol: float = CLASSIFY_TOL
) -> EquilibriumProfile:
    """Deterministically pick one equilibrium of the stage game.

    A mixed globally optimal equilibrium only mixes over cells that are
    themselves pure global optima, and pure profiles precede mixed ones in
    enumeration order, so a pure globally optimal hit settles the answer
    without running the mixed-support search.
    """
    for eq in enumerate_pure_equilibria(game, tol):
        klass = classify_equilibrium(game, eq, classify_tol)
        if klass is EqClass.GLOBAL_OPTIMAL:
            return eq.with_class(klass)

    candidates = support_enumeration(game, tol=tol).equilibria
    if not candidates:
        raise NoEquilibriumFound(f"no equilibrium found for stage game of shape {game.shape}")
    ranked = [(selection_key(eq, k, i), eq, k) for i, eq in enumerate(candidates)
              for k in [classify_equilibrium(game, eq, classify_tol)]]
    ranked.sort(key=lambda item: item[0])
    key, best, klass = ranked[0]
    # The value criteria cannot split two equilibria whose values are swapped
    # images of each other, and enumeration order would then favour one
    # player. Prefer the best equal-value equilibrium in that case.
    tied = {(k[1], k[2], round(e.value_1, _KEY_DIGITS)) for k, e, _ in ranked if k[:3] == key[:3]}
    if len(tied) > 1:
        fair = [r for r in ranked if abs(r[1].value_1 - r[1].value_2) <= classify_tol]
        if fair:
            _, best, klass = fair[0]
    return best.with_class(klass)


def parse_bimatrix(text: str) -> BimatrixGame:
    """Parse ``n1 n2`` followed by two row-major ``n1 x n2`` payoff matrices."""
    tokens = text.split()
    if len(tokens) < 2:
        raise ValueError("stage game text must start with the two dimensions")
    n1, n2 = int(tokens[0]), int(tokens[1])
    values = [float(t) for t in tokens[2:]]
    if len(values) != 2 * n1 * n2:
        raise ValueError(f"expected {2 * n1 * n2} payoff entries, got {len(values)}")
    p1 = np.array(values[: n1 * n2]).reshape(n1, n2)
    p2 = np.array(values[n1 * n2:]).reshape(n1, n2)
    return BimatrixGame(p1, p2)
