from fractions import Fraction
from itertools import product

import pytest

from kmodel import catalog
from kmodel.enumeration import enumerate_closed, enumerate_hole_types
from kmodel.errors import EvenVertex, MultipleZHoles
from kmodel.feynman import (amplitude_closed, amplitude_z, expectation_truncated, extract_intersections,
                            kmi_by_expansion, kmi_check, sign_lemma_holds, vertex_coefficient,
                            z_equals_partition)
from kmodel.ribbon_core import RibbonGraph, combinatorial_type
from kmodel.symbolic import G, GPolynomial, I, ONE, ZERO, parse_polynomial

S_VALUES = {"s0": G(Fraction(2, 3)), "s1": G(Fraction(-1, 2)), "s2": G(Fraction(3, 5)), "s3": G(Fraction(1, 7))}


def x_weight(k):
    """-i(-1/2)^r s_r for k = 2r+1, zero for even k."""
    if k % 2 == 0:
        return ZERO
    r = (k - 1) // 2
    return G(0, -1) * G(Fraction(-1, 2)) ** r * S_VALUES[f"s{r}"]


def test_vertex_coefficients():
    assert vertex_coefficient(1) == G(0, -1)
    assert vertex_coefficient(3) == G(0, Fraction(1, 2))
    assert vertex_coefficient(4) == ZERO


# ---------------------------------------------------- z-hole amplitudes

def direct_laurent(g, K, face_values, lam):
    """Coefficients of 1/z^k, k <= K, by expanding every propagator numerically.

    face_values: open face -> value; closed faces are summed over lam.
    """
    lab = dict(g.hole_labels)
    hof = g.hole_of()
    holes = g.holes
    zf = next(k for k, c in enumerate(holes) if lab.get(min(c)) == "z")
    closed = [k for k, c in enumerate(holes) if k != zf and all(g.alpha[h] != h for h in c)]
    pref = ONE
    for cyc in g.vertices:
        pref = pref * x_weight(len(cyc))
    total = [ZERO] * (K + 1)
    for cols in product(lam, repeat=len(closed)):
        val = dict(face_values)
        val.update(zip(closed, cols))
        ser = [ZERO] * (K + 1)
        ser[0] = pref
        for a, b in g.edges:
            fa, fb = hof[a], hof[b]
            fac = [ZERO] * (K + 1)
            if fa == zf and fb == zf:
                fac[1] = ONE
            else:
                x = val[fb if fa == zf else fa]
                for k in range(1, K + 1):
                    fac[k] = G(2) * (-x) ** (k - 1)
            ser = [sum((ser[i] * fac[k - i] for i in range(k + 1)), ZERO) for k in range(K + 1)]
        total = [t + s for t, s in zip(total, ser)]
    return total


def bind(amp, g, poly, face_values, lam):
    hof = g.hole_of()
    values = dict(S_VALUES)
    for leg, (vi, slot) in amp.leg_slots.items():
        # the corner after a leg lies on the face containing that leg
        values[amp.vertices[vi][slot]] = face_values[hof[leg]]
    for e in range(0, 12):
        tr = ZERO
        for x in lam:
            tr = tr + x ** e
        values[f"p{e}"] = tr
    return poly.evaluate(values)


@pytest.mark.parametrize("N", [1, 2])
def test_amplitude_z_matches_direct_expansion(N):
    lam = [G(Fraction(3, 2)), G(Fraction(5, 7))][:N]
    K = 5
    for ht in enumerate_hole_types(3, 5):
        g = ht.graph
        if sum(len(c) for c in g.vertices) > 11:
            continue
        amp = amplitude_z(ht, K)
        hof = g.hole_of()
        open_faces = sorted({hof[h] for h in g.legs})
        fv = {f: G(Fraction(2 + k, 3 + 2 * k)) for k, f in enumerate(open_faces)}
        want = direct_laurent(g, K, fv, lam)
        for k in range(1, K + 1):
            assert bind(amp, g, amp.series[k], fv, lam) == want[k]


def test_hole_a():
    amp = amplitude_z(catalog.example("hole-a"), 4)
    assert amp.series[3] == parse_polynomial("-i*s1^3")
    assert amp.series[4] == parse_polynomial("i*s1^3*th1 + i*s1^3*th2 + i*s1^3*th3")


def test_hole_b_only_three_corners():
    amp = amplitude_z(catalog.example("hole-b"), 4)
    c4 = amp.series[4]
    names = amp.vertices[0]
    assert c4 == parse_polynomial("-1/2*i*s1^2*s2") * sum(
        (GPolynomial.var(v) for v in names[2:]), GPolynomial())
    (coef, labels), = amp.clusters(4)
    assert labels[0].ciliation == 0


def test_hole_e_non_cyclic_vertex():
    amp = amplitude_z(catalog.example("hole-e"), 8)
    assert amp.series[7] == parse_polynomial("-s1^6")
    decos = sorted((lab.polynomial.render(), lab.ciliation) for _, labels in amp.clusters(8) for lab in labels)
    assert ("2*th1 + th2", 0) in decos


def test_hole_f_trace_symbols():
    amp = amplitude_z(catalog.example("hole-f"), 5)
    assert amp.series[4] == parse_polynomial("-i*s1^3*p0")
    assert amp.series[5] == parse_polynomial("i*s1^3*p1 + 2*i*s1^3*p0*th1")


def test_dumbbell_coefficient():
    ht = catalog.example("dumbbell")
    assert amplitude_z(ht, 1).series[1] * G(Fraction(1, ht.aut)) == parse_polynomial("-1/2*s0^2")


def test_two_z_holes_rejected():
    g = RibbonGraph.from_cycles([[0], [1]], [(0, 1)])
    g2 = RibbonGraph.from_cycles([[0, 1, 2], [3, 4, 5]], [(0, 3), (1, 5), (2, 4)])
    holes = g2.holes
    with pytest.raises(MultipleZHoles):
        amplitude_z(g2.with_(hole_labels={min(holes[0]): "z", min(holes[1]): "z"}), 2)
    with pytest.raises(MultipleZHoles):
        amplitude_z(g, 2)


def test_even_vertex_rejected():
    with pytest.raises(EvenVertex):
        amplitude_closed(RibbonGraph.from_cycles([[0, 1], [2, 3]], [(0, 2), (1, 3)]), 1)


# ------------------------------------------------------------ sign lemma

def closed_graphs(max_H):
    out = []

    def types(i, left, cur):
        if cur and sum((2 * j + 1) * k for j, k in enumerate(cur)) % 2 == 0 and cur[-1]:
            out.append(tuple(cur))
        if 2 * i + 1 > left:
            return
        for k in range(left // (2 * i + 1) + 1):
            types(i + 1, left - k * (2 * i + 1), cur + [k])

    types(0, max_H, [])
    return [c.graph for m in out for c in enumerate_closed(m)]


@pytest.mark.parametrize("g", closed_graphs(8), ids=lambda g: str(g.sigma))
def test_sign_lemma(g):
    m = combinatorial_type(g)
    assert sign_lemma_holds(m, len(g.holes))
    assert (len(g.vertices) - len(g.edges) + len(g.holes)) % 2 == 0
    amp = amplitude_closed(g, 1)
    assert amp.prefactor == amp.lemma_prefactor


# -------------------------------------------------------------------- KMI

@pytest.mark.parametrize("m,n,expected", [
    ((0, 2), 3, {(0, 0, 0): 1}),
    ((0, 2), 1, {(1,): Fraction(1, 24)}),
    ((0, 4), 2, {(0, 2): Fraction(1, 24), (1, 1): Fraction(1, 24), (2, 0): Fraction(1, 24)}),
    ((0, 4), 4, {(1, 0, 0, 0): 1, (0, 1, 0, 0): 1, (0, 0, 1, 0): 1, (0, 0, 0, 1): 1}),
])
def test_classical_intersection_numbers(m, n, expected):
    for method in ("classes", "labelled"):
        got = {k: v for k, v in kmi_check(m, n, method=method).extracted.items() if v}
        assert got == expected


@pytest.mark.parametrize("m,n", [((0, 0, 2), 3), ((1, 1), 2), ((0, 0, 2), 1), ((2, 0, 1), 3)])
def test_classes_and_labelled_agree(m, n):
    a = kmi_check(m, n, method="classes")
    b = kmi_check(m, n, method="labelled")
    assert a.laurent == b.laurent


def test_higher_valence_values():
    # frozen from the two independent summation routes above
    assert kmi_check((0, 0, 2), 3).extracted[(1, 0, 0)] == Fraction(3, 2)
    assert kmi_check((1, 1), 2).extracted[(0, 0)] == 1


@pytest.mark.parametrize("order", [(1, 2, 3), (3, 1, 2), (2, 3, 1)])
def test_extraction_independent_of_expansion_order(order):
    res = kmi_check((0, 2), 3)
    lau = kmi_by_expansion(res.rhs_graph_sum, (0, 2), 3, order)
    assert extract_intersections(lau, (0, 2), 3) == res.extracted


@pytest.mark.parametrize("N,smax,order", [(1, 1, 2), (2, 1, 2), (1, 2, 2)])
def test_partition_function_three_routes(N, smax, order):
    rep = z_equals_partition(N, smax, order)
    assert rep.ok, rep.mismatches


def test_expectation_empty_cluster_small():
    # <1> at s = 0 is 1; the s0^2 coefficient is x_1^2/2 * <tr X tr X> = -1/2 * 1/L for N = 1
    e = expectation_truncated([], [G(3)], s_degree=2, s_index=0)
    assert e[(2,)] == G(Fraction(-1, 6))
