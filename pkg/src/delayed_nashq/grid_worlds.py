"""Two-player grid-world games.

Cells are numbered from 1, row-major starting at the bottom-left, so on a
3x3 board ``up`` takes cell c to c + 3. A state is the ordered pair
``(cell of player 1, cell of player 2)``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Dict, Tuple

import numpy as np
import scipy.sparse as sp

from .errors import InvalidSpec
from .markov_game import GameModel

DOWN, LEFT, UP, RIGHT = range(4)
ACTION_NAMES = ("down", "left", "up", "right")
_MOVES = {DOWN: (-1, 0), LEFT: (0, -1), UP: (1, 0), RIGHT: (0, 1)}


@dataclass(frozen=True)
class GridSpec:
    width: int = 3
    height: int = 3
    start_1: int = 1
    start_2: int = 3
    goal_1: int = 9
    goal_2: int = 7
    # (player, cell, success probability) for stochastic `up` moves
    stochastic_up_cells: Tuple[Tuple[int, int, float], ...] = ()
    shared_goal: bool = False
    gamma: float = 0.8

    def validate(self) -> None:
        n = self.width * self.height
        if self.width < 1 or self.height < 1:
            raise InvalidSpec("board must be at least 1x1")
        for name in ("start_1", "start_2", "goal_1", "goal_2"):
            cell = getattr(self, name)
            if not 1 <= cell <= n:
                raise InvalidSpec(f"{name}={cell} outside cells 1..{n}")
        if self.start_1 == self.start_2:
            raise InvalidSpec("players must start in distinct cells")
        if self.shared_goal != (self.goal_1 == self.goal_2):
            raise InvalidSpec("shared_goal must be set exactly when both goals coincide")
        if self.start_1 == self.goal_1 or self.start_2 == self.goal_2:
            raise InvalidSpec("a player cannot start on its own goal")
        for player, cell, prob in self.stochastic_up_cells:
            if player not in (1, 2) or not 1 <= cell <= n:
                raise InvalidSpec(f"bad stochastic cell entry {(player, cell, prob)}")
            if not 0.0 < prob <= 1.0:
                raise InvalidSpec(f"success probability {prob} not in (0, 1]")


GRID1 = GridSpec()
GRID2 = GridSpec(goal_1=8, goal_2=8, shared_goal=True, stochastic_up_cells=((1, 1, 0.5), (2, 3, 0.5)))
PRESETS: Dict[str, GridSpec] = {"grid1": GRID1, "grid2": GRID2}


def move(spec: GridSpec, cell: int, action: int) -> int:
    row, col = divmod(cell - 1, spec.width)
    dr, dc = _MOVES[action]
    row, col = row + dr, col + dc
    if not (0 <= row < spec.height and 0 <= col < spec.width):
        return cell
    return row * spec.width + col + 1


def grid_states(spec: GridSpec):
    cells = range(1, spec.width * spec.height + 1)
    states = [(c1, c2) for c1, c2 in itertools.product(cells, cells) if c1 != c2]
    if spec.shared_goal:
        states.append((spec.goal_1, spec.goal_1))
        states.sort()
    return states


def _intended(spec: GridSpec, player: int, cell: int, action: int):
    target = move(spec, cell, action)
    if action == UP:
        for p, c, prob in spec.stochastic_up_cells:
            if p == player and c == cell and prob < 1.0 and target != cell:
                return [(target, prob), (cell, 1.0 - prob)]
    return [(target, 1.0)]


def _resolve(spec: GridSpec, pos_1: int, pos_2: int, t1: int, t2: int):
    if t1 == t2 and not (spec.shared_goal and t1 == spec.goal_1):
        return pos_1, pos_2  # joint entry into one cell: both bounce
    if t1 == pos_2 and t2 == pos_2:
        return pos_1, pos_2  # player 2 holds its cell, player 1 bounces off it
    if t2 == pos_1 and t1 == pos_1:
        return pos_1, pos_2
    return t1, t2


def is_terminal_cell_pair(spec: GridSpec, pair) -> bool:
    return pair[0] == spec.goal_1 or pair[1] == spec.goal_2


def make_grid_world(spec: GridSpec = GRID1) -> GameModel:
    spec.validate()
    states = grid_states(spec)
    index = {pair: i for i, pair in enumerate(states)}
    n_s, n_a = len(states), len(ACTION_NAMES)
    r1 = np.zeros((n_s, n_a, n_a))
    r2 = np.zeros((n_s, n_a, n_a))
    rows, cols, probs = [], [], []
    terminals = set()
    for s, (p1, p2) in enumerate(states):
        terminal = is_terminal_cell_pair(spec, (p1, p2))
        if terminal:
            terminals.add(s)
        for a1, a2 in itertools.product(range(n_a), range(n_a)):
            row = (s * n_a + a1) * n_a + a2
            if terminal:
                rows.append(row)
                cols.append(s)
                probs.append(1.0)
                continue
            dist: Dict[int, float] = {}
            for (t1, q1), (t2, q2) in itertools.product(_intended(spec, 1, p1, a1), _intended(spec, 2, p2, a2)):
                n1, n2 = _resolve(spec, p1, p2, t1, t2)
                nxt = index[(n1, n2)]
                dist[nxt] = dist.get(nxt, 0.0) + q1 * q2
                r1[s, a1, a2] += q1 * q2 * (n1 == spec.goal_1)
                r2[s, a1, a2] += q1 * q2 * (n2 == spec.goal_2)
            for nxt in sorted(dist):
                rows.append(row)
                cols.append(nxt)
                probs.append(dist[nxt])
    t = sp.csr_matrix((probs, (rows, cols)), shape=(n_s * n_a * n_a, n_s))
    return GameModel(
        n_s, n_a, n_a, t, r1, r2, spec.gamma, frozenset(terminals),
        index[(spec.start_1, spec.start_2)], tuple(states),
    )


def preset(name: str, gamma: float = None) -> GameModel:
    try:
        spec = PRESETS[name]
    except KeyError:
        raise InvalidSpec(f"unknown grid preset {name!r}; choose from {sorted(PRESETS)}") from None
    if gamma is not None:
        spec = GridSpec(**{**spec.__dict__, "gamma": gamma})
    return make_grid_world(spec)


def reflect_cell(spec: GridSpec, cell: int) -> int:
    row, col = divmod(cell - 1, spec.width)
    return row * spec.width + (spec.width - 1 - col) + 1


def mirror_state_index(spec: GridSpec, model: GameModel, s: int) -> int:
    """Left-right reflection of the board combined with swapping the players."""
    p1, p2 = model.labels[s]
    return model.labels.index((reflect_cell(spec, p2), reflect_cell(spec, p1)))


def mirror_action(action: int) -> int:
    return {LEFT: RIGHT, RIGHT: LEFT}.get(action, action)
