import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dyngal.basis import BasisDescriptor, DualVector
from dyngal.index import IndexSet, Window
from dyngal.marking import (
    MarkingParams,
    certified_c0,
    compute_J,
    dorfler,
    dynamic_slack,
    dynamic_theta,
    e_dorfler,
    mark,
    slack_to_theta,
    theta_to_slack,
)
from dyngal.operator import DecayEstimate
from oracles import dorfler_exhaustive

F1 = BasisDescriptor.fourier(1)


def mp_with(c, eta, alo=0.5, ahi=1.5, **kw):
    return MarkingParams(certified_c0(alo, ahi), DecayEstimate.override(c, eta), alo, ahi, **kw)


def dual_from_weighted(mods, phases=None):
    """Dual vector whose weighted moduli |f_k| d_k^(-1/2) equal ``mods`` on k = 0, 1, ..."""
    phases = np.ones(len(mods)) if phases is None else phases
    return DualVector({(k,): m * math.sqrt(1 + k * k) * ph for k, (m, ph) in enumerate(zip(mods, phases))}, F1)


@settings(max_examples=80)
@given(st.lists(st.floats(1e-3, 10.0), min_size=1, max_size=10),
       st.sampled_from([0.1, 0.3, 0.5, 0.7, 0.9, 0.95]))
def test_greedy_is_minimal(mods, theta):
    r = dual_from_weighted(mods)
    assert len(dorfler(r, theta)) == dorfler_exhaustive(r.weighted_moduli(), theta)


def test_dorfler_edge_cases():
    r = dual_from_weighted([3.0, 1.0, 2.0])
    assert dorfler(r, 0.0) == IndexSet()
    assert dorfler(r, 1.0) == IndexSet([(0,), (1,), (2,)])
    assert dorfler(DualVector({}, F1), 0.5) == IndexSet()
    # 9 of 14 is enough for theta^2 = 0.6
    assert dorfler(r, math.sqrt(0.6)) == IndexSet([(0,)])
    assert dorfler(r, slack=math.sqrt(0.4)) == IndexSet([(0,)])
    with pytest.raises(ValueError):
        dorfler(r, 1.5)


def test_dorfler_ties_go_to_smaller_index():
    r = DualVector({(-3,): 1.0, (3,): 1.0, (0,): 0.1}, F1)
    assert dorfler(r, 0.5) == IndexSet([(-3,)])


def test_single_mode_marks_only_that_mode():
    r = DualVector({(7,): 2.0}, F1)
    assert dorfler(r, 0.3) == IndexSet([(7,)])


def test_theta_slack_conversions():
    for th in (0.0, 0.3, 0.9, 0.999999):
        assert slack_to_theta(theta_to_slack(th)) == pytest.approx(th, abs=1e-9)
    # near 1 the slack keeps information that theta has lost
    assert slack_to_theta(1e-12) == 1.0


def brute_J(c, eta, slack, alo, ahi):
    J = 0
    while c * math.exp(-eta * J) > slack / math.sqrt(alo * ahi):
        J += 1
    return J


@given(st.floats(0.01, 50), st.floats(0.05, 5), st.floats(1e-14, 0.999))
def test_compute_J_against_brute_force(c, eta, slack):
    mp = mp_with(c, eta)
    assert compute_J(None, mp, slack=slack) == brute_J(c, eta, slack, 0.5, 1.5)


def test_compute_J_edge_cases():
    mp = mp_with(1.0, 1.0)
    with pytest.raises(ValueError):
        compute_J(1.0, mp)
    diag = MarkingParams(0.1, DecayEstimate(1.0, math.inf, "inverse", label="diagonal"), 1, 1)
    assert compute_J(0.99, diag) == 0
    Js = [compute_J(th, mp) for th in (0.1, 0.5, 0.9, 0.99, 0.9999)]
    assert Js == sorted(Js)


def test_dynamic_theta_rule():
    mp = mp_with(1.0, 1.0, sigma_mark=1.0)
    c0 = mp.c0
    assert c0 == pytest.approx(0.25 * math.sqrt(1 / 3))
    assert dynamic_slack(1.0, 1.0, mp) == pytest.approx(c0)
    assert dynamic_theta(1.0, 1.0, mp) == pytest.approx(math.sqrt(1 - c0 ** 2))
    assert dynamic_slack(1e-3, 1.0, mp) == pytest.approx(c0 * 1e-3)
    assert dynamic_slack(1e-30, 1.0, mp) == mp.slack_floor
    mp2 = mp_with(1.0, 1.0, sigma_mark=2.0)
    assert dynamic_slack(0.1, 1.0, mp2) == pytest.approx(c0 * 0.01)
    assert mp.certified
    with pytest.raises(ValueError):
        dynamic_slack(1.0, 0.0, mp)


def test_mark_enriches_and_bounds_cardinality():
    w = Window(64)
    mp = mp_with(1.0, 1.0)
    r = dual_from_weighted([0.0, 5.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 4.9])
    mk = mark(r, 0.2, mp, w)
    assert mk.marked == IndexSet([(1,), (10,)])
    assert mk.J == brute_J(1.0, 1.0, 0.2, 0.5, 1.5)
    assert mk.marked <= mk.enriched
    assert len(mk.enriched) <= mk.card_bound
    assert e_dorfler(r, None, mp, w, slack=0.2) == mk.enriched
    plain = mark(r, 0.2, None, w, enrich=False)
    assert plain.enriched == plain.marked and plain.J == 0
