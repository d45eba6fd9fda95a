import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dyngal.basis import BasisDescriptor, CoeffVector, DualVector
from dyngal.sparsity import (
    GevreyClass,
    best_n_term,
    cardinality_bound,
    fit_decay_model,
    function_class_norm,
    gevrey_norm,
    omega,
    rate_bound,
    rearrange,
    write_curve_csv,
)
from oracles import best_n_term_exhaustive

F1 = BasisDescriptor.fourier(1)
moduli = st.lists(st.floats(0.0, 100.0), max_size=30)


def test_rearrange_examples():
    assert len(rearrange(CoeffVector({}, F1))) == 0
    assert rearrange([1.0, 3.0, 2.0]).tolist() == [3.0, 2.0, 1.0]
    v = CoeffVector({(0,): 1.0, (3,): 1.0}, F1)
    assert rearrange(v) == pytest.approx([math.sqrt(10), 1.0])
    f = DualVector({(0,): 1.0, (3,): 10.0}, F1)
    assert rearrange(f) == pytest.approx([math.sqrt(10), 1.0])


def test_best_n_term_examples():
    assert best_n_term([3.0, 2.0, 1.0]) == pytest.approx([math.sqrt(14), math.sqrt(5), 1.0, 0.0])
    assert best_n_term([-4.0]).tolist() == [4.0, 0.0]


@settings(max_examples=40)
@given(st.lists(st.floats(0.0, 10.0), min_size=1, max_size=9))
def test_greedy_best_n_term_is_optimal(m):
    E = best_n_term(m)
    for N in range(len(m) + 1):
        assert E[N] == pytest.approx(best_n_term_exhaustive(m, N), rel=1e-12, abs=1e-12)


@given(moduli, st.randoms())
def test_best_n_term_invariants(m, rnd):
    E = best_n_term(m)
    assert np.all(np.diff(E) <= 1e-12)
    assert E[0] == pytest.approx(math.sqrt(sum(x * x for x in m)), rel=1e-12, abs=1e-300)
    assert E[-1] == 0
    vs = rearrange(m)
    for N in range(len(m) + 1):
        assert E[N] ** 2 + np.sum(vs[:N] ** 2) == pytest.approx(E[0] ** 2, rel=1e-12, abs=1e-12)
    shuffled = list(m)
    rnd.shuffle(shuffled)
    assert np.array_equal(rearrange(shuffled), rearrange(m))


def test_gevrey_class_validation():
    assert GevreyClass(1.0, 2.0, 2).omega_d == math.pi
    assert omega(1) == 2.0
    with pytest.raises(ValueError):
        GevreyClass(1.0, 1.5, 1)
    with pytest.raises(ValueError):
        GevreyClass(-1.0, 1.0, 1)


def test_gevrey_norm_examples():
    g = GevreyClass(2.0, 1.0, 1)
    assert gevrey_norm([], g) == 0.0
    v = np.exp(-np.arange(1, 200))
    assert gevrey_norm(v, g) == pytest.approx(1.0, rel=1e-12)
    big = GevreyClass(4.0, 1.0, 1)
    norms = [gevrey_norm(v[:n], big) for n in (10, 50, 150)]
    assert norms[0] < norms[1] < norms[2] and norms[2] > 1e30


@given(moduli, st.floats(-5, 5), st.randoms())
def test_gevrey_norm_homogeneous_and_permutation_invariant(m, c, rnd):
    g = GevreyClass(0.7, 0.6, 1)
    base = gevrey_norm(m, g)
    assert gevrey_norm([c * x for x in m], g) == pytest.approx(abs(c) * base, rel=1e-12, abs=1e-300)
    s = list(m)
    rnd.shuffle(s)
    assert gevrey_norm(s, g) == base


@settings(max_examples=50)
@given(st.lists(st.floats(1e-6, 10.0), min_size=1, max_size=40), st.floats(0.05, 3.0))
def test_tail_bound_for_t_equal_d(m, eta):
    """E_N <= S exp(-aN) / sqrt(e^(2a) - 1) with S the sequence-class norm, a = eta / omega_1."""
    g = GevreyClass(eta, 1.0, 1)
    a = g.rate
    S = gevrey_norm(m, g)
    E = best_n_term(m)
    N = np.arange(len(E))
    assert np.all(E <= S * np.exp(-a * N) / math.sqrt(math.expm1(2 * a)) * (1 + 1e-10))


def test_function_and_sequence_norms_two_sided_t_less_than_d():
    g = GevreyClass(1.0, 0.5, 1)
    n = np.arange(1, 400)
    v = np.exp(-g.rate * n ** 0.5) * n ** -0.25
    fn, sq = function_class_norm(v, g), gevrey_norm(v, g)
    ratios = []
    for m in (100, 200, 399):
        ratios.append(function_class_norm(v[:m], g) / gevrey_norm(v[:m], g))
    assert max(ratios) / min(ratios) < 1.5
    assert 0.1 < fn / sq < 20


def test_fit_gevrey_synthetic():
    N = np.arange(0, 60)
    rep = fit_decay_model(np.exp(-0.8 * N), 1, "gevrey")
    assert rep.t == pytest.approx(1.0, abs=0.05)
    assert rep.eta == pytest.approx(0.8 * 2, rel=0.05)
    assert rep.r_squared == pytest.approx(1.0)
    rep2 = fit_decay_model(np.exp(-1.5 * N ** 0.5), 1, "gevrey")
    assert rep2.t == pytest.approx(0.5, abs=0.05)
    assert rep2.rate == pytest.approx(1.5, rel=0.05)


def test_fit_algebraic_and_degenerate():
    N = np.arange(1, 200, dtype=float)
    rep = fit_decay_model(N ** -2.0, 1, "algebraic", N=N)
    assert rep.s == pytest.approx(2.0, rel=0.02)
    rep2 = fit_decay_model(N ** -2.0, 2, "algebraic", N=N)
    assert rep2.s == pytest.approx(4.0, rel=0.02)
    flat = fit_decay_model(np.ones(20), 1, "gevrey")
    assert flat.r_squared == pytest.approx(0.0) and flat.degenerate
    with pytest.raises(ValueError):
        fit_decay_model([1.0, 0.5, 0.2, 0.0, 0.0], 1)
    with pytest.raises(ValueError):
        fit_decay_model(np.ones(10), 1, "spline")


def test_cardinality_bound_examples():
    g = GevreyClass(1.0, 1.0, 1, class_norm=math.exp(5))
    assert cardinality_bound(1.0, g) == pytest.approx(11.0)
    assert cardinality_bound(math.exp(5), g) == 1.0
    assert cardinality_bound(math.exp(4.999999), g) == pytest.approx(1.0, abs=1e-5)
    eps = np.logspace(-10, 2, 40)
    vals = [cardinality_bound(e, g) for e in eps]
    assert all(b <= a for a, b in zip(vals, vals[1:]))
    with pytest.raises(ValueError):
        cardinality_bound(1.0, GevreyClass(1.0, 1.0, 1))


def test_cardinality_bound_dominates_greedy_count():
    g = GevreyClass(1.0, 1.0, 1)
    v = np.exp(-g.rate * np.arange(1, 300))
    g = GevreyClass(1.0, 1.0, 1, class_norm=function_class_norm(v, g))
    E = best_n_term(v)
    for eps in (1e-2, 1e-5, 1e-9):
        n_min = int(np.argmax(E <= eps))
        assert n_min <= cardinality_bound(eps, g)


def test_rate_bound():
    assert rate_bound(math.exp(-5), 1.0, 1.0, 1, 1.0) == pytest.approx(10.0)
    assert rate_bound(2.0, 1.0, 1.0, 1, 1.0) == 0.0


def test_curve_csv():
    buf = io.StringIO()
    write_curve_csv([2.0, 1.0, 0.0], buf)
    assert buf.getvalue().splitlines() == ["N,E_N", "0,2.0", "1,1.0", "2,0.0"]


def test_residual_class_not_better_than_solution(bundled_run):
    """Fitted t of the load (dual residual r_0 = f) does not exceed that of u."""
    u = bundled_run.u_exact
    f = bundled_run.problem.rhs
    Eu = best_n_term(u)
    Ef = best_n_term(f)
    ru = fit_decay_model(Eu[Eu > 1e-14 * Eu[0]], 1)
    rf = fit_decay_model(Ef[Ef > 1e-14 * Ef[0]], 1)
    assert rf.t <= ru.t + 1e-12
