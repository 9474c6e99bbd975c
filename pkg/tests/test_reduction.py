import random
from fractions import Fraction
from itertools import product

import pytest
from hypothesis import given, settings, strategies as st

from kmodel import catalog
from kmodel.errors import CutoffMismatch, NotCyclic, NotHomogeneous, NotResidualDegreeZero, TruncationWarning
from kmodel.feynman import free_energy
from kmodel.reduction import (ClusterCombination, DiffOperator, Reducer, SContext, apply_operator,
                              bounds_violations, cluster_from_raw, cluster_monomial_to_operator,
                              combination_expectation, cyclic_decompose, cyclic_symmetrize, derive_D_k,
                              holes_to_clusters, parse_eval_at, parse_operator, reduce_cluster,
                              render_cluster, u_of, vertex_key)
from kmodel.enumeration import enumerate_hole_types
from kmodel.symbolic import G, GPolynomial, I, ONE, ZERO, TruncatedSeries, parse_polynomial, series_exp, var_index

S2_POINT = SContext(2, (G(0), G(0), None))


def deco(text, n):
    from kmodel.reduction import deco_from_polynomial
    return deco_from_polynomial(parse_polynomial(text), n)


def double_bracket(comb):
    return {render_cluster(cl): c.render() for cl, c in comb.to_double_bracket()}


# ------------------------------------------------------ cyclic structure

def test_symmetrize_constant():
    assert cyclic_symmetrize(deco("1", 3), 3) == deco("3", 3)


def test_decompose_odd_valence_has_no_residual():
    r, psi = cyclic_decompose(deco("th1^2 + th2^2 + th3^2", 3), 3)
    assert r == {}
    assert cyclic_symmetrize(u_of(psi, 3), 3) == deco("th1^2 + th2^2 + th3^2", 3)


def test_alternative_decomposition_also_valid():
    # (th1 + th2 - th3)/2 with corners counted from the corner before leg 1
    psi = deco("1/2*th1 - 1/2*th2 + 1/2*th3", 3)
    assert cyclic_symmetrize(u_of(psi, 3), 3) == deco("th1^2 + th2^2 + th3^2", 3)


def test_even_power_sum_is_residual():
    phi = deco("th1^2 + th2^2 + th3^2 + th4^2", 4)
    r, psi = cyclic_decompose(phi, 4)
    assert r == phi and psi == {}


def test_decompose_errors():
    with pytest.raises(NotHomogeneous):
        cyclic_decompose(deco("th1 + th2 + th1^2 + th2^2", 2), 2)
    with pytest.raises(NotCyclic):
        cyclic_decompose(deco("th1", 3), 3)


@st.composite
def cyclic_polys(draw):
    n = draw(st.integers(1, 5))
    d = draw(st.integers(0, 3))
    terms = {}
    for _ in range(draw(st.integers(1, 4))):
        e = [0] * n
        for _ in range(d):
            e[draw(st.integers(0, n - 1))] += 1
        terms[tuple(e)] = G(draw(st.fractions(-4, 4, max_denominator=4)), draw(st.integers(-2, 2)))
    return n, {k: v for k, v in cyclic_symmetrize(terms, n).items() if v}


@given(cyclic_polys())
def test_decompose_reexpansion(arg):
    n, phi = arg
    r, psi = cyclic_decompose(phi, n)
    back = cyclic_symmetrize(u_of(psi, n), n) if psi else {}
    for k, v in r.items():
        back[k] = back.get(k, ZERO) + v
    assert {k: v for k, v in back.items() if v} == phi


# ---------------------------------------------------------- contraction

def test_v1_theta_gives_v4():
    res = reduce_cluster([(1, deco("th1", 1))], S2_POINT)
    assert double_bracket(res) == {"v4": "-i*s2"}


def test_v6_half_u_expansion():
    u = deco("1/2*th1 + 1/2*th6", 6)
    res = reduce_cluster([(6, u)], S2_POINT)
    assert double_bracket(res) == {"v9": "-9/4*i*s2", "v4": "8*p0", "v1 + v3": "6", "v2 + v2": "8"}


def test_v3_power_sum_fully_reduced():
    res = reduce_cluster([(3, deco("th1^2 + th2^2 + th3^2", 3))], S2_POINT)
    assert double_bracket(res) == {"v1": "6*p1", "v4": "-6*i*s2*p0", "v9": "-27/16*s2^2",
                                   "v1 + v3": "-9/2*i*s2", "v2 + v2": "-6*i*s2"}


@pytest.mark.parametrize("raw", [[(9, {(0,) * 9: ONE})], [(4, deco("th1^2 + th2^2 + th3^2 + th4^2", 4))],
                                 [(3, {(0,) * 3: ONE}), (1, {(0,): ONE})]])
def test_residual_is_fixed_point(raw):
    res = reduce_cluster(raw, SContext(4))
    (cl, coef), = res.items()
    assert coef == GPolynomial.const(1)


def random_raw(rnd):
    raw = []
    for _ in range(rnd.randint(1, 2)):
        n = rnd.randint(1, 4)
        d = {}
        for _ in range(rnd.randint(1, 3)):
            e = [0] * n
            for _ in range(rnd.randint(0, 2)):
                e[rnd.randrange(n)] += 1
            d[tuple(e)] = d.get(tuple(e), ZERO) + G(Fraction(rnd.randint(-3, 3), rnd.randint(1, 3)), rnd.choice([0, 0, 1]))
        raw.append((n, {k: v for k, v in d.items() if v} or {(0,) * n: ONE}))
    return raw


def monomials_up_to_edges(valences, E, J):
    out = []
    for m in product(range(2 * E + 1), repeat=J + 1):
        he = sum(valences) + sum((2 * j + 1) * k for j, k in enumerate(m))
        if he % 2 == 0 and he // 2 <= E:
            out.append(m)
    return out


def preserved(raw, N, E=3, J=3):
    lam = [G(Fraction(3, 2)), G(Fraction(5, 7))][:N]
    start = ClusterCombination()
    for s, cl in cluster_from_raw(raw):
        start.add(cl, GPolynomial.const(s))
    red = Reducer(SContext(J)).reduce(start)
    ms = monomials_up_to_edges([n for n, _ in raw], E, J)
    return combination_expectation(start, lam, ms) == combination_expectation(red, lam, ms)


@settings(max_examples=25)
@given(st.randoms(use_true_random=False), st.integers(1, 2))
def test_reduction_preserves_expectations(rnd, N):
    assert preserved(random_raw(rnd), N)


def test_preservation_beyond_three_edges():
    assert preserved([(3, deco("th1^2 + th2^2 + th3^2", 3))], 2, E=5, J=4)


# ------------------------------------------------------------ hole types

def test_hole_a_clusters():
    ht = catalog.example("hole-a")
    ctx = SContext(4)
    assert double_bracket(holes_to_clusters(ht, 3, ctx)) == {"v3": "-i*s1^3"}
    assert double_bracket(holes_to_clusters(ht, 4, ctx)) == {"v3[th1 + th2 + th3]": "i*s1^3"}


def test_dumbbell_cluster():
    comb = holes_to_clusters(catalog.example("dumbbell"), 1, SContext(4))
    assert double_bracket(comb) == {"empty": "-1/2*s0^2"}


@pytest.mark.parametrize("k", [1, 2, 3, 4, 5])
def test_bounds_hold(k):
    for ht in enumerate_hole_types(min(k, 4), 5):
        assert bounds_violations(holes_to_clusters(ht, k, SContext(2)), k) == []


# ------------------------------------------------------------- operators

def test_cluster_operators():
    for m in range(4):
        key = vertex_key(2 * m + 1, {(0,) * (2 * m + 1): ONE})
        op = cluster_monomial_to_operator((key,))
        assert op == DiffOperator({((), tuple([0] * m + [1])): I * G(-2) ** m})
    assert cluster_monomial_to_operator(()) == DiffOperator({((), ()): ONE})
    v1, v3 = vertex_key(1, {(0,): ONE}), vertex_key(3, {(0, 0, 0): ONE})
    assert cluster_monomial_to_operator((v1, v3)) == DiffOperator({((), (1, 1)): G(2)})
    with pytest.raises(NotResidualDegreeZero):
        cluster_monomial_to_operator((vertex_key(3, deco("th1 + th2 + th3", 3)),))


small_exps = st.lists(st.integers(0, 2), max_size=3)
ops = st.dictionaries(st.tuples(small_exps.map(tuple), small_exps.map(tuple)),
                      st.builds(G, st.fractions(-3, 3, max_denominator=5), st.integers(-1, 1)),
                      max_size=4).map(DiffOperator)


@given(ops)
def test_operator_render_parse_roundtrip(op):
    assert parse_operator(op.render()) == op


@settings(max_examples=30)
@given(ops, ops)
def test_composition_matches_successive_application(a, b):
    f = TruncatedSeries(parse_polynomial("1 + s0 + 2*s1*s0 + s2^2*s0 - 3*s1^3 + s0^2*s1*s2"), {"s": 12})
    assert (a @ b).apply(f) == a.apply(b.apply(f))


@pytest.mark.parametrize("M", [0, 1, 2, 3])
def test_string_operator(M):
    want = "s0^2/2 + " + " + ".join(f"{2 * m + 1}*s{m + 1}*d/ds{m}" for m in range(M + 1))
    d = derive_D_k(0, 2 * M + 3)
    assert d.operator.render() == want
    assert d.diagnostics["triangular"] and d.leading == ONE


def test_first_operator_diagnostics():
    d = derive_D_k(1, 7)
    assert d.diagnostics == {"traces_cancel": True, "even_valent_cancel": True, "triangular": True,
                             "leading_coefficient": "1/2"}
    assert not d.leftovers


def test_first_operator_at_unit_point():
    d = derive_D_k(1, eval_at=(G(0), G(1), G(0)))
    assert d.operator.render() == "1/24 + d/ds1/2"
    assert d.diagnostics["triangular"]


def test_dilaton_route_for_first_operator():
    # on the slice s0 = s2 = ... = 0, dF/dt1 = s1^2/24 + s1^3/2 dF/ds1 (dilaton equation)
    d = derive_D_k(1, 5, eval_at=(G(0), None))
    F = free_energy(4, 1, 4)
    Z = series_exp(TruncatedSeries(F.poly.subs({"s0": ZERO}), {"s": 4, "t": 4}))
    lhs, rhs = Z.derivative("t1"), d.operator.apply(Z)
    keep = lambda m: sum(e for v, e in m if v[0] == "s") <= 4 and sum(e for v, e in m if v[0] == "t") <= 3
    assert lhs.poly.truncate(keep) == rhs.poly.truncate(keep)
    assert d.operator == DiffOperator({((0, 2), ()): G(Fraction(1, 24)), ((0, 3), (0, 1)): G(Fraction(1, 2))})


def test_apply_operator_base_and_square():
    D0 = derive_D_k(0, 5).operator
    assert apply_operator([0], {0: D0}) == D0
    with pytest.raises(CutoffMismatch):
        apply_operator([1], {0: D0})
    # (d/dt0)^2 Z against D0 o D0 Z on a truncated Z
    F = free_energy(3, 2, 4)
    Z = series_exp(F)
    D00 = apply_operator([0, 0], {0: D0})
    keep = lambda m: (sum(e for v, e in m if v[0] == "s") <= 3 and sum(e for v, e in m if v[0] == "t") <= 2
                      and all(var_index(v) <= 2 for v, e in m if v[0] == "s"))
    lhs = Z.derivative("t0").derivative("t0")
    assert lhs.poly.truncate(keep) == D00.apply(Z).poly.truncate(keep)


def test_truncation_warning_and_cutoff_mismatch():
    with pytest.warns(TruncationWarning):
        derive_D_k(0, 3, s_index_max=3)
    with pytest.raises(CutoffMismatch):
        derive_D_k(0, 3, eval_at=(G(0), G(1), G(0), G(1)))


def test_parse_eval_at():
    assert parse_eval_at("(0,0,s2)") == (G(0), G(0), None)
    assert parse_eval_at("0, 1/2, i") == (G(0), G(Fraction(1, 2)), I)
    with pytest.raises(ValueError):
        parse_eval_at("0,s0")


def test_parallel_matches_serial():
    a = derive_D_k(1, 5)
    b = derive_D_k(1, 5, jobs=2)
    assert a.operator == b.operator
