"""One test per acceptance criterion; each prints a single PASS/FAIL line."""

import io
import json
import random
import time
from fractions import Fraction
from itertools import product

import pytest

from kmodel import catalog
from kmodel.cli import run
from kmodel.enumeration import enumerate_hole_types, labelled_closed
from kmodel.feynman import amplitude_z, free_energy, kmi_check, sign_lemma_holds
from kmodel.reduction import (ClusterCombination, Reducer, SContext, bounds_violations, cluster_from_raw,
                              combination_expectation, derive_D_k, holes_to_clusters, rotate)
from kmodel.ribbon_core import RibbonGraph, norm_minus, norm_plus
from kmodel.symbolic import G, GPolynomial, ONE, ZERO, parse_polynomial, series_exp, var_index


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\n[acceptance] criterion {n}: {'PASS' if ok else 'FAIL'}: {detail}")
        assert ok, detail
    return emit


def cli(argv):
    out, err = io.StringIO(), io.StringIO()
    code = run(argv, out, err)
    return code, out.getvalue()


# 1 --------------------------------------------------------------------------

def test_criterion_1_string_operator(report):
    t = time.perf_counter()
    bad = []
    for M in range(4):
        want = "s0^2/2 + " + " + ".join(f"{2 * m + 1}*s{m + 1}*d/ds{m}" for m in range(M + 1))
        code, out = cli(["derive", "--k", "0", "--vmax", str(2 * M + 3)])
        if code != 0 or out.strip() != want:
            bad.append((M, out.strip()))
    dt = time.perf_counter() - t
    report(1, not bad and dt < 10, f"D0 exact for M = 0..3 in {dt:.1f} s" + (f"; mismatches {bad}" if bad else ""))


# 2 --------------------------------------------------------------------------

def test_criterion_2_worked_example(report):
    t = time.perf_counter()
    code, out = cli(["derive", "--k", "1", "--eval-at", "(0,0,s2)", "--format", "json"])
    dt = time.perf_counter() - t
    obj = json.loads(out)
    clusters = {e["cluster"]: e["coefficient"] for e in obj["expansion"]}
    inserts = {e["traces"]: e["coefficient"] for e in obj["insertions"]}
    checks = {
        "v9 cluster -3/32*i*s2^3": clusters.get("v9") == "-3/32*i*s2^3",
        "trX^9 insertion -1/96*i*s2^3": inserts.get("trX^9") == "-1/96*i*s2^3",
        "v1+v3 cluster -3/4*s2^2": clusters.get("v1 + v3") == "-3/4*s2^2",
        "trX^3*trX insertion -1/4*s2^2": inserts.get("trX^3*trX") == "-1/4*s2^2",
        "even-valent clusters cancel": obj["diagnostics"]["even_valent_cancel"]
        and not any("v2" in c for c in clusters),
        "under 60 s": dt < 60,
    }
    failed = [k for k, ok in checks.items() if not ok]
    detail = (f"expansion {clusters}; " + ("all checks hold" if not failed else
              "failed: " + ", ".join(failed) + " (see the ledger: an independent intersection-number"
              " route gives +3/2*s2^2*d/ds0*d/ds1, i.e. +3/4 on v1+v3)"))
    report(2, code == 0 and not failed, detail)


# 3 --------------------------------------------------------------------------

def test_criterion_3_tau0_cubed(report):
    t = time.perf_counter()
    res = kmi_check((0, 2), 3)
    dt = time.perf_counter() - t
    val = res.extracted.get((0, 0, 0))
    report(3, val == 1 and dt < 10, f"<tau0^3> = {val} in {dt:.2f} s")


# 4 --------------------------------------------------------------------------

def rotations_of(poly, n):
    from kmodel.reduction import deco_from_polynomial
    d = deco_from_polynomial(poly, n)
    return [rotate(d, r) for r in range(n)]


def test_criterion_4_laurent_examples(report):
    from kmodel.reduction import deco_from_polynomial
    checks = {}
    a = amplitude_z(catalog.example("hole-a"), 4)
    checks["hole-a c3"] = a.series[3] == parse_polynomial("-i*s1^3")
    checks["hole-a c4"] = a.series[4] == parse_polynomial("i*s1^3*th1 + i*s1^3*th2 + i*s1^3*th3")

    b = amplitude_z(catalog.example("hole-b"), 4)
    (coef, labels), = b.clusters(4)
    full = coef * labels[0].polynomial
    want = deco_from_polynomial(parse_polynomial("th1 + th4 + th5"), 5)
    unit = labels[0].polynomial * GPolynomial.const(G(0, 2))
    checks["hole-b c4 on three corners, ciliated"] = (
        b.series[4] == parse_polynomial("-1/2*i*s1^2*s2*th3 - 1/2*i*s1^2*s2*th4 - 1/2*i*s1^2*s2*th5")
        and full == b.series[4] and labels[0].ciliation is not None
        and want in rotations_of(unit, 5))

    e = amplitude_z(catalog.example("hole-e"), 8)
    target = deco_from_polynomial(parse_polynomial("2*th1 + th2"), 2)
    found = [lab for _, labs in e.clusters(8) for lab in labs
             if lab.valence == 2 and deco_from_polynomial(lab.polynomial, 2) == target]
    checks["hole-e 2*th1 + th2 with ciliation"] = bool(found) and all(l.ciliation is not None for l in found)

    f = amplitude_z(catalog.example("hole-f"), 5)
    checks["hole-f c4, c5 with p0, p1"] = (f.series[4] == parse_polynomial("-i*s1^3*p0") and
                                           f.series[5] == parse_polynomial("i*s1^3*p1 + 2*i*s1^3*p0*th1"))
    failed = [k for k, ok in checks.items() if not ok]
    report(4, not failed, "all examples match" if not failed else f"failed: {failed}")


# 5 --------------------------------------------------------------------------

def test_criterion_5_sign_lemma(report):
    t = time.perf_counter()
    count = 0
    bad = []
    for H in (2, 4, 6, 8):
        for m in _types_with_half_edges(H):
            for sigma, alpha in labelled_closed(m, connected=True):
                g = RibbonGraph(sigma, alpha)
                nh = len(g.holes)
                count += 1
                if not sign_lemma_holds(m, nh) or (len(g.vertices) - len(g.edges) + nh) % 2:
                    bad.append((m, sigma, alpha))
    dt = time.perf_counter() - t
    report(5, not bad and dt < 30, f"{count} labelled connected graphs, {len(bad)} violations, {dt:.1f} s")


def _types_with_half_edges(H):
    out = []

    def rec(i, left, cur):
        if left == 0:
            if cur and cur[-1]:
                out.append(tuple(cur))
            return
        if 2 * i + 1 > left:
            return
        for k in range(left // (2 * i + 1) + 1):
            rec(i + 1, left - k * (2 * i + 1), cur + [k])

    rec(0, H, [])
    return out


# 6 --------------------------------------------------------------------------

def _random_cluster(rnd):
    raw = []
    for _ in range(rnd.randint(1, 2)):
        n = rnd.randint(1, 4)
        d = {}
        for _ in range(rnd.randint(1, 3)):
            e = [0] * n
            for _ in range(rnd.randint(0, 2)):
                e[rnd.randrange(n)] += 1
            d[tuple(e)] = d.get(tuple(e), ZERO) + G(Fraction(rnd.randint(-3, 3), rnd.randint(1, 3)),
                                                    rnd.choice([0, 0, 1]))
        raw.append((n, {k: v for k, v in d.items() if v} or {(0,) * n: ONE}))
    return raw


def test_criterion_6_semantic_preservation(report):
    t = time.perf_counter()
    rnd = random.Random(20261019)
    E, J = 3, 3
    lams = {1: [G(Fraction(3, 2))], 2: [G(Fraction(3, 2)), G(Fraction(5, 7))]}
    bad, checked = [], 0
    for trial in range(120):
        raw = _random_cluster(rnd)
        N = rnd.randint(1, 2)
        start = ClusterCombination()
        for s, cl in cluster_from_raw(raw):
            start.add(cl, GPolynomial.const(s))
        red = Reducer(SContext(J)).reduce(start)
        val = sum(n for n, _ in raw)
        monos = [m for m in product(range(2 * E + 1), repeat=J + 1)
                 if (val + sum((2 * j + 1) * k for j, k in enumerate(m))) % 2 == 0
                 and (val + sum((2 * j + 1) * k for j, k in enumerate(m))) // 2 <= E]
        a = combination_expectation(start, lams[N], monos)
        b = combination_expectation(red, lams[N], monos)
        checked += 1
        if a != b:
            bad.append(raw)
    dt = time.perf_counter() - t
    report(6, not bad and checked >= 100 and dt < 300,
           f"{checked} random clusters, {len(bad)} mismatches, exact equality, {dt:.1f} s")


# 7 --------------------------------------------------------------------------

def test_criterion_7_bounds(report):
    t = time.perf_counter()
    types = enumerate_hole_types(5, 7)
    ctx = SContext(3)
    bad, outputs = [], 0
    for k in range(1, 6):
        for ht in types:
            if ht.boundary_length > k:
                continue
            comb = holes_to_clusters(ht, k, ctx)
            outputs += len(comb.terms)
            bad += bounds_violations(comb, k)
    dt = time.perf_counter() - t
    report(7, not bad, f"{len(types)} hole types, {outputs} cluster terms, {len(bad)} violations, {dt:.1f} s")


# 8 --------------------------------------------------------------------------

def test_criterion_8_triangularity(report):
    ops = {0: derive_D_k(0, 9).operator, 1: derive_D_k(1, 9).operator}
    tri = all(norm_plus(n) <= norm_minus(m) for op in ops.values() for m, n in op.terms)
    unit = (G(0), G(1))
    diag, offending = {}, []
    for a, b in [(1, 0), (0, 1), (2, 0), (1, 1), (0, 2), (3, 0)]:
        P = [0] * a + [1] * b
        D = DiffOp_identity()
        for k in P:
            D = D @ ops[k]
        D = D.evaluate_at(unit)
        kstar = (a, b) if b else (a,)
        top = norm_plus(kstar)
        for (m, n), c in D.terms.items():
            if tuple(n) == kstar:
                diag[kstar] = c
            elif norm_plus(n) >= top:
                offending.append((kstar, n))
    lower_ok = not offending and all(diag.get(k, ZERO) for k in [(1,), (0, 1), (2,), (1, 1), (0, 2), (3,)])
    unitri = all(c == ONE for c in diag.values())
    shown = {k: f"{c.re}" for k, c in diag.items()}
    detail = (f"symbolic |n|_+ <= |m|_- for all terms: {tri}; at s=(0,1,0) lower terms strictly below: "
              f"{lower_ok}; diagonal entries {shown}")
    if not unitri:
        detail += "; not unitriangular: c_1 = 1/2, as the dilaton equation dF/dt1 = 1/24 + (1/2) s1 dF/ds1 requires"
    report(8, tri and lower_ok and unitri, detail)


def DiffOp_identity():
    from kmodel.reduction import DiffOperator
    return DiffOperator({((), ()): ONE})


# 9 --------------------------------------------------------------------------

def test_criterion_9_string_equation_dual_route(report):
    t = time.perf_counter()
    I = 3
    F = free_energy(3, I, 4)
    Z = series_exp(F)
    D0 = derive_D_k(0, 2 * I + 1).operator

    def keep(m):
        s = sum(e for v, e in m if v[0] == "s")
        tt = sum(e for v, e in m if v[0] == "t")
        return s <= 3 and tt <= 3 and all(var_index(v) <= I for v, e in m if v[0] == "s")

    lhs = Z.derivative("t0").poly.truncate(keep)
    rhs = D0.apply(Z).poly.truncate(keep)
    dt = time.perf_counter() - t
    report(9, lhs == rhs and bool(lhs.terms),
           f"dZ/dt0 = D0 Z on {len(lhs.terms)} coefficients (s-degree <= 3, t-degree <= 3, s-index <= {I}), {dt:.1f} s")
