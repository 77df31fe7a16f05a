from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kcprune.errors import ValidationError
from kcprune.schedule import (PruneState, RegrowFraction, Schedule, layer_sparsity, make_policy,
                              quantile_threshold, regrow, regrow_on_saturation, should_prune)

POOL = [0.1, 0.2, 0.3, 0.4]


def cdf_oracle(pool, s):
    """inf{g in pool : #{x <= g} / n >= s}, by scanning distinct values."""
    n = len(pool)
    s = Fraction(repr(s)) if isinstance(s, float) else Fraction(s)
    for g in sorted(set(pool)):
        if Fraction(sum(x <= g for x in pool), n) >= s:
            return g


def test_quantile_examples():
    assert quantile_threshold(POOL, 0.5) == 0.2
    assert quantile_threshold(POOL, 0.75) == 0.3
    assert quantile_threshold(POOL, 0.9) == 0.4
    assert quantile_threshold(POOL, 0) is None
    with pytest.raises(ValidationError):
        quantile_threshold([], 0.5)
    with pytest.raises(ValidationError):
        quantile_threshold(POOL, 1.0)


@given(st.lists(st.integers(0, 6), min_size=1, max_size=40),
       st.floats(0.0, 0.999, allow_nan=False))
@settings(max_examples=300, deadline=None)
def test_quantile_matches_oracle(values, s):
    pool = [v / 8 for v in values]
    got = quantile_threshold(pool, s)
    if s == 0:
        assert got is None
        return
    assert got == cdf_oracle(pool, s)
    n = len(pool)
    assert Fraction(sum(x <= got for x in pool), n) >= Fraction(repr(s))
    assert all(Fraction(sum(y <= x for y in pool), n) < Fraction(repr(s))
               for x in pool if x < got)


def test_layer_sparsity_examples():
    assert layer_sparsity([0.05, 0.15, 0.25, 0.35], 0.2) == Fraction(1, 2)
    assert layer_sparsity([0.5, 0.6], 0.2) == 0
    assert layer_sparsity([0.1, 0.2], 0.2) == 1
    assert layer_sparsity([0.1, 0.2], None) == 0


def test_layer_sparsity_monotone_and_weighted(rng):
    layers = [rng.random(int(rng.integers(1, 9))) for _ in range(5)]
    pool = np.concatenate(layers)
    previous = [Fraction(0)] * 5
    for s in np.linspace(0.05, 0.95, 10):
        t = quantile_threshold(pool, float(s))
        sl = [layer_sparsity(g, t) for g in layers]
        assert all(a >= b for a, b in zip(sl, previous))
        weighted = sum(x * len(g) for x, g in zip(sl, layers)) / len(pool)
        assert weighted == Fraction(int((pool <= t).sum()), len(pool))
        previous = sl


def test_should_prune():
    sched = Schedule(0.5, t_prune=6, delta_t=2)
    assert [t for t in range(1, 10) if should_prune(t, sched)] == [2, 4, 6]
    assert not should_prune(7, sched)
    assert should_prune(1, Schedule(0.5, 1, 1))
    with pytest.raises(ValidationError):
        Schedule(0.5, 4, 0)
    with pytest.raises(ValidationError):
        Schedule(1.0, 4, 2)


def _state():
    state = PruneState({"a": np.ones(4, dtype=bool)})
    state.prune("a", np.array([True, False, True, False]), [0.9, 0.3, 0.8, 0.1])
    return state


def test_regrow_highest_gamma_first():
    state = _state()
    assert regrow(state, "a", 1) == [1]
    assert state.masks["a"].tolist() == [True, True, True, False]
    assert state.pruned_gammas["a"] == {3: 0.1}


def test_regrow_zero_is_identity():
    state = _state()
    before = state.masks["a"].copy()
    assert regrow(state, "a", 0) == []
    np.testing.assert_array_equal(state.masks["a"], before)


def test_regrow_too_many():
    with pytest.raises(ValidationError):
        regrow(_state(), "a", 3)


def test_prune_cannot_revive():
    state = _state()
    with pytest.raises(ValidationError):
        state.prune("a", np.ones(4, dtype=bool), [0] * 4)


def test_policies():
    state = _state()
    assert regrow_on_saturation(state, "a", False) == []
    assert regrow_on_saturation(state, "a", True) == [1]
    state = _state()
    frac = RegrowFraction(0.5)
    assert frac(state, "a", False, final=True) == []
    assert frac(state, "a", False) == [1]
    assert make_policy("none")(state, "a", True) == []
    with pytest.raises(ValidationError):
        make_policy("chex")
