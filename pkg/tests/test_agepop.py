import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from agesir.agepop import AgeMeasure, PopulationState, h_biased_inverse, measure_apply
from agesir.model import DurationDistribution

ages_st = st.lists(st.floats(0.0, 20.0, allow_nan=False), min_size=1, max_size=40)


def brute_inverse(ages, ids, h, w):
    # walk atoms in (age, id) order and stop at the first cumulative share >= w
    order = sorted(range(len(ages)), key=lambda i: (ages[i], ids[i]))
    total = sum(h(ages[i]) for i in order)
    acc = 0.0
    for i in order:
        acc += h(ages[i])
        if h(ages[i]) > 0 and acc / total >= w:
            return ages[i], ids[i]
    last = [i for i in order if h(ages[i]) > 0][-1]
    return ages[last], ids[last]


@settings(max_examples=200, deadline=None)
@given(ages=ages_st, w=st.floats(0.0, 1.0))
def test_h_biased_inverse_matches_brute_force(ages, w):
    h = lambda a: 0.5 + np.asarray(a) * 0.1
    mu = AgeMeasure(ages, hazard=h)
    ids = list(range(len(ages)))
    assert mu.h_biased_inverse(w, return_id=True) == brute_inverse(ages, ids, lambda a: float(h(a)), w)


@settings(max_examples=100, deadline=None)
@given(ages=ages_st, w1=st.floats(0.0, 1.0), w2=st.floats(0.0, 1.0))
def test_h_biased_inverse_is_monotone(ages, w1, w2):
    mu = AgeMeasure(ages, hazard=DurationDistribution.gamma(2.0, 1.0).hazard)
    if mu.total_hazard() == 0:
        return
    lo, hi = sorted((w1, w2))
    assert mu.h_biased_inverse(lo) <= mu.h_biased_inverse(hi)


def test_h_biased_selection_frequencies():
    ages = np.array([0.5, 1.0, 2.0, 4.0])
    h = lambda a: np.asarray(a)  # h(a) = a
    mu = AgeMeasure(ages, hazard=h)
    rng = np.random.default_rng(0)
    picks = np.array([mu.h_biased_inverse(rng.random()) for _ in range(20_000)])
    expected = ages / ages.sum()
    freq = np.array([np.mean(picks == a) for a in ages])
    assert np.allclose(freq, expected, atol=0.015)


def test_ties_resolved_by_id():
    mu = AgeMeasure([1.0, 1.0, 1.0], ids=[7, 3, 5], hazard=lambda a: np.ones_like(a))
    assert mu.h_biased_inverse(0.2, return_id=True) == (1.0, 3)
    assert mu.h_biased_inverse(0.5, return_id=True) == (1.0, 5)
    assert mu.h_biased_inverse(1.0, return_id=True) == (1.0, 7)


def test_zero_hazard_atoms_never_selected():
    mu = AgeMeasure([0.0, 1.0, 2.0], hazard=lambda a: np.where(np.asarray(a) > 0.5, 1.0, 0.0))
    assert mu.h_biased_inverse(0.0) == 1.0


def test_empty_and_null_hazard_rejected():
    with pytest.raises(ValueError):
        AgeMeasure([], hazard=lambda a: a).h_biased_inverse(0.5)
    with pytest.raises(ValueError):
        AgeMeasure([1.0], hazard=lambda a: 0 * a).h_biased_inverse(0.5)
    with pytest.raises(ValueError):
        AgeMeasure([1.0], hazard=lambda a: 1 + 0 * a).h_biased_inverse(1.5)


def test_measure_apply_and_updates():
    mu = AgeMeasure([0.2, 1.5], ids=[0, 1])
    assert measure_apply(mu, lambda a: np.ones_like(a)) == 2.0
    assert mu.advance(1.0).apply(lambda a: a) == pytest.approx(3.7)
    mu2 = mu.add(0.0, 2).remove(0)
    assert sorted(mu2.ids.tolist()) == [1, 2]
    with pytest.raises(KeyError):
        mu.remove(9)
    assert AgeMeasure([]).apply(lambda a: a) == 0.0


def test_free_function_inverse():
    mu = AgeMeasure([1.0, 2.0], hazard=lambda a: np.ones_like(np.asarray(a, dtype=float)))
    assert h_biased_inverse(mu, 0.9) == 2.0


def test_population_state_check():
    st_ = PopulationState(10, 5, 2, 3, AgeMeasure([0.1, 0.2]))
    st_.check()
    with pytest.raises(AssertionError):
        PopulationState(10, 5, 3, 3, AgeMeasure([0.1, 0.2])).check()
