import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from delayed_nashq.errors import NoEquilibriumFound
from delayed_nashq.stage_game import (
    BimatrixGame,
    EqClass,
    best_response_gain,
    classify_equilibrium,
    enumerate_pure_equilibria,
    is_mixed_strategy,
    parse_bimatrix,
    select_equilibrium,
    support_enumeration,
    support_enumeration_equilibria,
)

PD = BimatrixGame([[3, 0], [5, 1]], [[3, 5], [0, 1]])
COORD = BimatrixGame([[2, 0], [0, 1]], [[2, 0], [0, 1]])
PENNIES = BimatrixGame([[1, -1], [-1, 1]], [[-1, 1], [1, -1]])
BOS = BimatrixGame([[2, 0], [0, 1]], [[1, 0], [0, 2]])


def test_rejects_mismatched_shapes():
    with pytest.raises(ValueError):
        BimatrixGame([[1, 2]], [[1], [2]])


def test_rejects_non_finite():
    with pytest.raises(ValueError):
        BimatrixGame([[np.nan]], [[0.0]])


def test_payoffs_are_read_only():
    with pytest.raises(ValueError):
        COORD.payoff_1[0, 0] = 9


def test_prisoners_dilemma_pure():
    eqs = enumerate_pure_equilibria(PD)
    assert [(e.support_1, e.support_2) for e in eqs] == [((1,), (1,))]
    assert (eqs[0].value_1, eqs[0].value_2) == (1.0, 1.0)


def test_coordination_pure():
    eqs = enumerate_pure_equilibria(COORD)
    assert [(e.support_1[0], e.support_2[0], e.value_1, e.value_2) for e in eqs] == [
        (0, 0, 2.0, 2.0), (1, 1, 1.0, 1.0)]


def test_matching_pennies_has_no_pure():
    assert enumerate_pure_equilibria(PENNIES) == []


def test_matching_pennies_mixed():
    eqs = support_enumeration_equilibria(PENNIES)
    assert len(eqs) == 1
    np.testing.assert_allclose(eqs[0].strategy_1, [0.5, 0.5], atol=1e-12)
    np.testing.assert_allclose(eqs[0].strategy_2, [0.5, 0.5], atol=1e-12)
    assert abs(eqs[0].value_1) < 1e-12 and abs(eqs[0].value_2) < 1e-12


def test_battle_of_sexes_three_equilibria():
    eqs = support_enumeration_equilibria(BOS)
    assert len(eqs) == 3
    assert eqs[0].support_1 == (0,) and eqs[0].support_2 == (0,)
    assert eqs[1].support_1 == (1,) and eqs[1].support_2 == (1,)
    np.testing.assert_allclose(eqs[2].strategy_1, [2 / 3, 1 / 3], atol=1e-12)
    np.testing.assert_allclose(eqs[2].strategy_2, [1 / 3, 2 / 3], atol=1e-12)
    np.testing.assert_allclose([eqs[2].value_1, eqs[2].value_2], [2 / 3, 2 / 3], atol=1e-12)


@pytest.mark.parametrize("game", [PD, COORD, PENNIES, BOS])
def test_max_support_one_is_pure(game):
    pure = enumerate_pure_equilibria(game)
    one = support_enumeration_equilibria(game, max_support=1)
    assert [(e.support_1, e.support_2) for e in one] == [(e.support_1, e.support_2) for e in pure]


def test_bad_max_support():
    with pytest.raises(ValueError):
        support_enumeration(COORD, max_support=3)


def test_classification_examples():
    go = enumerate_pure_equilibria(COORD)[0]
    assert classify_equilibrium(COORD, go) is EqClass.GLOBAL_OPTIMAL
    mp = support_enumeration_equilibria(PENNIES)[0]
    assert classify_equilibrium(PENNIES, mp) is EqClass.SADDLE
    bos = enumerate_pure_equilibria(BOS)[0]
    assert classify_equilibrium(BOS, bos) is EqClass.PLAIN


def test_selection_examples():
    sel = select_equilibrium(COORD)
    assert sel.support_1 == (0,) and sel.support_2 == (0,) and sel.klass is EqClass.GLOBAL_OPTIMAL
    sel = select_equilibrium(PENNIES)
    assert sel.klass is EqClass.SADDLE
    np.testing.assert_allclose(sel.strategy_1, [0.5, 0.5])
    # the two pure equilibria have swapped values, so the equal-value mixed one wins
    sel = select_equilibrium(BOS)
    assert sel.support_1 == (0, 1) and sel.support_2 == (0, 1)
    assert sel.value_1 == pytest.approx(sel.value_2)


def test_constant_game_selects_first_cell():
    game = BimatrixGame(np.full((4, 4), 5.0), np.full((4, 4), 5.0))
    sel = select_equilibrium(game)
    assert (sel.support_1, sel.support_2) == ((0,), (0,))


def test_selection_prefers_welfare_among_plain():
    # (1,1) pays both players more than (0,0); neither is a saddle or global optimum
    game = BimatrixGame([[1, 0, 3], [0, 2, 0]], [[1, 0, 0], [0, 2, 0]])
    sel = select_equilibrium(game)
    assert (sel.support_1, sel.support_2) == ((1,), (1,))


def test_degenerate_flag():
    # all-equal rows make the 2x2 indifference system singular
    game = BimatrixGame(np.ones((2, 2)), np.ones((2, 2)))
    assert support_enumeration(game).degenerate


def test_no_equilibrium_error(monkeypatch):
    from delayed_nashq import stage_game

    monkeypatch.setattr(stage_game, "enumerate_pure_equilibria", lambda game, tol=0: [])
    monkeypatch.setattr(stage_game, "support_enumeration",
                        lambda game, max_support=None, tol=0: stage_game.Enumeration([], False))
    with pytest.raises(NoEquilibriumFound):
        stage_game.select_equilibrium(PENNIES)


def test_parse_bimatrix_roundtrip():
    game = parse_bimatrix("2 2\n2 0\n0 1\n1 0\n0 2\n")
    np.testing.assert_array_equal(game.payoff_1, BOS.payoff_1)
    np.testing.assert_array_equal(game.payoff_2, BOS.payoff_2)
    with pytest.raises(ValueError):
        parse_bimatrix("2 2 1 2 3")


def test_is_mixed_strategy():
    assert is_mixed_strategy([0.25, 0.75])
    assert not is_mixed_strategy([0.5, 0.6])
    assert not is_mixed_strategy([-0.1, 1.1])


payoffs = st.integers(-5, 5)


@st.composite
def games(draw):
    n1 = draw(st.integers(1, 4))
    n2 = draw(st.integers(1, 4))
    a = draw(st.lists(payoffs, min_size=n1 * n2, max_size=n1 * n2))
    b = draw(st.lists(payoffs, min_size=n1 * n2, max_size=n1 * n2))
    return BimatrixGame(np.reshape(a, (n1, n2)), np.reshape(b, (n1, n2)))


@settings(max_examples=300, deadline=None)
@given(games())
def test_every_profile_is_a_best_response(game):
    for eq in support_enumeration_equilibria(game):
        g1, g2 = best_response_gain(game, eq.strategy_1, eq.strategy_2)
        assert g1 <= 1e-9 and g2 <= 1e-9
        assert abs(eq.value_1 - eq.strategy_1 @ game.payoff_1 @ eq.strategy_2) <= 1e-9
        assert is_mixed_strategy(eq.strategy_1) and is_mixed_strategy(eq.strategy_2)


@settings(max_examples=300, deadline=None)
@given(games())
def test_selection_is_deterministic_and_sound(game):
    first = select_equilibrium(game)
    second = select_equilibrium(game)
    assert first.strategy_1.tobytes() == second.strategy_1.tobytes()
    assert first.strategy_2.tobytes() == second.strategy_2.tobytes()
    klass = classify_equilibrium(game, first)
    assert klass is first.klass
    if klass is EqClass.GLOBAL_OPTIMAL:
        assert first.value_1 >= game.payoff_1.max() - 1e-7
        assert first.value_2 >= game.payoff_2.max() - 1e-7
    if klass is EqClass.SADDLE:
        assert (first.strategy_1 @ game.payoff_1).min() >= first.value_1 - 1e-7
        assert (game.payoff_2 @ first.strategy_2).min() >= first.value_2 - 1e-7


@settings(max_examples=200, deadline=None)
@given(games())
def test_singleton_supports_match_pure(game):
    pure = [(e.support_1, e.support_2) for e in enumerate_pure_equilibria(game)]
    found = [(e.support_1, e.support_2) for e in support_enumeration_equilibria(game) if e.is_pure]
    assert found == pure
