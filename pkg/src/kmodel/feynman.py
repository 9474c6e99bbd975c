"""Feynman rules of the N and (N+1)-dimensional models, amplitudes and KMI checks."""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from itertools import permutations, product
from math import factorial
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

from .enumeration import (HoleType, centralizer_order, count_cycles, enumerate_numbered,
                          labelled_closed)
from .errors import EvenVertex, MultipleZHoles, ShapeMismatch
from .ribbon_core import DecoratedVertexLabel, RibbonGraph, combinatorial_type, cycles_of
from .symbolic import (G, GPolynomial, GRationalFunction, I, ONE, ONE_POLY, ZERO,
                       ZLaurentSeries, TruncatedSeries, double_factorial, factor_key,
                       laurent_of_factor, mono_degree, series_exp, var_index)


# ------------------------------------------------------------------ weights

def vertex_coefficient(k: int) -> G:
    """Numeric factor of the weight of a k-valent vertex (0 for even k)."""
    if k % 2 == 0:
        return ZERO
    r = (k - 1) // 2
    return -I * G(Fraction(-1, 2)) ** r


def vertex_weight(k: int) -> GPolynomial:
    """x_k = -i (-1/2)^r s_r for k = 2r+1, and 0 for even k."""
    if k < 1:
        raise ValueError("valence must be positive")
    c = vertex_coefficient(k)
    if not c:
        return GPolynomial()
    return GPolynomial.var(f"s{(k - 1) // 2}") * c


def s_monomial(m: Sequence[int]) -> GPolynomial:
    return GPolynomial.monomial({f"s{i}": k for i, k in enumerate(m) if k})


# ------------------------------------------------------------------ closed graphs

@dataclass(frozen=True)
class Amplitude:
    prefactor: GPolynomial                 # product of vertex weights
    coloring_sum: GRationalFunction        # sum over hole colorings of propagators
    lemma_prefactor: GPolynomial           # (-1)^n prod (s_r/2^r)^{m_r}

    def total(self) -> GRationalFunction:
        return self.coloring_sum * self.prefactor


def sign_lemma_holds(m: Sequence[int], n_holes: int) -> bool:
    """(-i)^{|V|} (-1)^{sum j m_j} == (-1)^n."""
    V = sum(m)
    lhs = (-I) ** V * (-1) ** sum(j * k for j, k in enumerate(m))
    return lhs == G((-1) ** n_holes)


def coloring_sum(g: RibbonGraph, N: int, prefix: str = "L") -> GRationalFunction:
    """sum over c: Holes -> {1..N} of prod over edges 2/(L_c(l+) + L_c(l-))."""
    hof = g.hole_of()
    n = len(g.holes)
    edge_faces = [(hof[a], hof[b]) for a, b in g.edges]
    total = GRationalFunction(GPolynomial())
    for colors in product(range(1, N + 1), repeat=n):
        term = GRationalFunction(ONE_POLY)
        for fa, fb in edge_faces:
            term = term * GRationalFunction.propagator(f"{prefix}{colors[fa]}", f"{prefix}{colors[fb]}")
        total = total + term
    return total


def amplitude_closed(g: RibbonGraph, N: int) -> Amplitude:
    if not g.is_closed():
        raise ValueError("graph has legs")
    pref = ONE_POLY
    for cyc in g.vertices:
        if len(cyc) % 2 == 0:
            raise EvenVertex(f"vertex of valence {len(cyc)}")
        pref = pref * vertex_weight(len(cyc))
    m = combinatorial_type(g)
    n = len(g.holes)
    lemma = s_monomial(m) * G((-1) ** n * Fraction(1, 2 ** sum(j * k for j, k in enumerate(m))))
    return Amplitude(pref, coloring_sum(g, N), lemma)


# ------------------------------------------------------------------ hole types

@dataclass
class ZAmplitude:
    """Laurent expansion of a hole type with the cluster skeleton it induces.

    ``vertices`` lists, for each open face, the theta variable of the corner
    following each leg (legs in face order).  ``series`` has coefficients in
    s_*, p_* and those theta variables.
    """

    series: ZLaurentSeries
    vertices: List[List[str]]
    leg_slots: Dict[int, Tuple[int, int]]   # leg half-edge -> (vertex, slot)
    closed_faces: int

    def clusters(self, k: int) -> List[Tuple[GPolynomial, List[DecoratedVertexLabel]]]:
        """c_k as (coefficient, decorated vertices) before any symmetrization.

        Monomials that decorate at most one vertex are collected into a single
        polynomial on that vertex; the rest stay one monomial per term.  A
        vertex whose polynomial is not cyclic gets the ciliation at its first leg.
        """
        local = {}
        for vi, names in enumerate(self.vertices):
            for si, v in enumerate(names):
                local[v] = (vi, f"th{si + 1}")
        groups: Dict[tuple, Dict[int, GPolynomial]] = {}
        for mono, c in self.series[k].terms.items():
            outer = tuple((v, e) for v, e in mono if not v.startswith("th"))
            per: Dict[int, Dict[str, int]] = {}
            for v, e in mono:
                if v.startswith("th"):
                    vi, name = local[v]
                    per.setdefault(vi, {})[name] = e
            if len(per) <= 1:
                vi = next(iter(per), None)
                slot = groups.setdefault((outer, vi), {})
                target = -1 if vi is None else vi
                slot[target] = slot.get(target, GPolynomial()) + GPolynomial.monomial(per.get(vi, {}), c)
            else:
                polys = {vi: GPolynomial.monomial(d) for vi, d in per.items()}
                first = min(polys)
                polys[first] = polys[first] * c
                groups[(outer, tuple(sorted(mono)))] = polys
        out = []
        for (outer, _), polys in sorted(groups.items(), key=lambda kv: repr(kv[0])):
            labels = []
            for vi, names in enumerate(self.vertices):
                poly = polys.get(vi, GPolynomial.const(1))
                cyclic = _is_cyclic_poly(poly, len(names))
                labels.append(DecoratedVertexLabel(len(names), poly, None if cyclic else 0))
            coef = GPolynomial.monomial(dict(outer)) * polys.get(-1, GPolynomial.const(1))
            out.append((coef, labels))
        return out


def _is_cyclic_poly(p: GPolynomial, n: int) -> bool:
    rot = p.rename({f"th{l + 1}": f"th{(l + 1) % n + 1}" for l in range(n)})
    return rot == p


def hole_structure(g: RibbonGraph):
    """Classify faces: z face, open faces split into leg-to-leg segments, closed faces."""
    lab = dict(g.hole_labels)
    holes = g.holes
    z_faces = [c for c in holes if lab.get(min(c)) == "z"]
    if len(z_faces) != 1:
        raise MultipleZHoles(f"{len(z_faces)} z-decorated holes")
    z = set(z_faces[0])
    phi = g.phi
    side: Dict[int, object] = {}
    vertices: List[List[str]] = []
    leg_slots: Dict[int, Tuple[int, int]] = {}
    closed = 0
    counter = 0
    for cyc in holes:
        if set(cyc) == z:
            for h in cyc:
                side[h] = "z"
            continue
        legs = [h for h in cyc if g.alpha[h] == h]
        if not legs:
            for h in cyc:
                side[h] = ("closed", closed)
            closed += 1
            continue
        # start at the smallest leg; walk in phi order
        start = min(legs)
        order = [start]
        h = phi[start]
        while h != start:
            order.append(h)
            h = phi[h]
        vid = len(vertices)
        names: List[str] = []
        cur = None
        for h in order:
            if g.alpha[h] == h:
                counter += 1
                cur = f"th{counter}"
                leg_slots[h] = (vid, len(names))
                names.append(cur)
            else:
                side[h] = cur
        vertices.append(names)
    return side, vertices, leg_slots, closed


def amplitude_z(ht: HoleType | RibbonGraph, K: int) -> ZAmplitude:
    g = ht.graph if isinstance(ht, HoleType) else ht
    side, vertices, leg_slots, closed = hole_structure(g)
    series = ZLaurentSeries(K, {0: ONE_POLY})
    for cyc in g.vertices:
        w = vertex_weight(len(cyc))
        series = series * w
    for a, b in g.edges:
        sa, sb = side[a], side[b]
        if sa == "z" and sb == "z":
            f = "1/z"
        elif sa == "z" or sb == "z":
            other = sb if sa == "z" else sa
            name = f"L{other[1] + 1}" if isinstance(other, tuple) else other
            f = ("prop", name)
        else:
            raise ValueError("edge without a z side in a hole type")
        series = series * laurent_of_factor(f, K)
    if closed:
        coeffs = {k: _sum_closed_faces(c, closed) for k, c in series.coeffs.items()}
        series = ZLaurentSeries(K, coeffs)
    return ZAmplitude(series, vertices, leg_slots, closed)


def _sum_closed_faces(p: GPolynomial, closed: int) -> GPolynomial:
    out = GPolynomial()
    for m, c in p.terms.items():
        d = dict(m)
        rest = {}
        trace = {}
        for v, e in d.items():
            if v.startswith("L"):
                continue
            rest[v] = e
        for f in range(1, closed + 1):
            e = d.get(f"L{f}", 0)
            trace[f"p{e}"] = trace.get(f"p{e}", 0) + 1
        rest.update({k: rest.get(k, 0) + v for k, v in trace.items()})
        out = out + GPolynomial.monomial(rest, c)
    return out


# ----------------------------------------------- Gaussian expectation oracle

def _mat_poly_mul(a: Dict[tuple, G], b: Dict[tuple, G]) -> Dict[tuple, G]:
    out: Dict[tuple, G] = {}
    for ka, ca in a.items():
        for kb, cb in b.items():
            k = _merge_counts(ka, kb)
            out[k] = out.get(k, ZERO) + ca * cb
    return {k: v for k, v in out.items() if v}


def _merge_counts(a: tuple, b: tuple) -> tuple:
    d = dict(a)
    for x, e in b:
        d[x] = d.get(x, 0) + e
    return tuple(sorted(d.items()))


def trace_word(N: int, n: int, deco: Mapping[tuple, G] | None, lam: Sequence[G]) -> Dict[tuple, G]:
    """sum_i deco(L_i1..L_in) X[i_n,i_1] X[i_1,i_2] ... X[i_{n-1},i_n] as entry polynomial."""
    out: Dict[tuple, G] = {}
    for idx in product(range(N), repeat=n):
        if deco is None:
            w = ONE
        else:
            w = ZERO
            for exps, c in deco.items():
                t = c
                for e, i in zip(exps, idx):
                    if e:
                        t = t * lam[i] ** e
                w = w + t
        if not w:
            continue
        d: Dict[tuple, int] = {}
        for l in range(n):
            ent = (idx[l - 1], idx[l])
            d[ent] = d.get(ent, 0) + 1
        key = tuple(sorted(d.items()))
        out[key] = out.get(key, ZERO) + w
    return {k: v for k, v in out.items() if v}


def gaussian_moment(entries: tuple, lam: Sequence[G]) -> G:
    """E[prod X_ab^e] for the measure with <X_ab X_ba> = 2/(L_a + L_b)."""
    d = dict(entries)
    val = ONE
    done = set()
    for (a, b), e in d.items():
        if (a, b) in done:
            continue
        if a == b:
            if e % 2:
                return ZERO
            val = val * G(double_factorial(e - 1)) * (ONE / lam[a]) ** (e // 2)
            done.add((a, b))
        else:
            f = d.get((b, a), 0)
            if e != f:
                return ZERO
            val = val * G(factorial(e)) * (G(2) / (lam[a] + lam[b])) ** e
            done.add((a, b))
            done.add((b, a))
    return val


def _s_types(max_degree: int, max_index: int, max_half_edges: Optional[int] = None):
    """All s-exponent vectors with total degree <= max_degree."""
    out = []

    def rec(i, left, cur):
        if i > max_index:
            m = tuple(cur)
            if max_half_edges is None or sum((2 * j + 1) * k for j, k in enumerate(m)) <= max_half_edges:
                out.append(m)
            return
        for k in range(left + 1):
            rec(i + 1, left - k, cur + [k])

    rec(0, max_degree, [])
    return out


def _trim(m: Sequence[int]) -> tuple:
    m = list(m)
    while m and not m[-1]:
        m.pop()
    return tuple(m)


def expectation_of_words(words: Sequence[Dict[tuple, G]], m: Sequence[int], lam: Sequence[G]) -> G:
    """Coefficient of s^m in < prod(words) exp S >, S = sum x_k tr X^k / k."""
    N = len(lam)
    poly: Dict[tuple, G] = {(): ONE}
    for w in words:
        poly = _mat_poly_mul(poly, w)
    coef = ONE
    for j, k in enumerate(m):
        if not k:
            continue
        tr = trace_word(N, 2 * j + 1, None, lam)
        for _ in range(k):
            poly = _mat_poly_mul(poly, tr)
        coef = coef * (vertex_coefficient(2 * j + 1) / (2 * j + 1)) ** k / factorial(k)
    total = ZERO
    for ent, c in poly.items():
        total = total + c * gaussian_moment(ent, lam)
    return total * coef


def expectation_truncated(cluster, lam: Sequence, *, max_edges: Optional[int] = None,
                          s_degree: Optional[int] = None, s_index: Optional[int] = None) -> Dict[tuple, G]:
    """Truncated Gaussian expectation of a cluster (or the empty cluster).

    ``cluster`` is a sequence of (valence, decoration) with decoration a dict
    exponent-tuple -> coefficient (None means constant 1); the value is the
    unnormalized <prod W> (divide by |Aut| for the double-bracket value).
    Result: s-exponent vector -> exact value at the numeric eigenvalues.
    Graded either by edge count (``max_edges``) or by s-degree/index.
    """
    lam = [G.coerce(x) for x in lam]
    N = len(lam)
    words = [trace_word(N, n, deco, lam) for n, deco in cluster]
    legs = sum(n for n, _ in cluster)
    if max_edges is not None:
        idx = max_edges * 2
        types = _s_types(2 * max_edges, idx, 2 * max_edges - legs if 2 * max_edges >= legs else -1)
    else:
        types = _s_types(s_degree, s_index)
    out: Dict[tuple, G] = {}
    for m in types:
        m = _trim(m)
        if m in out:
            continue
        half = legs + sum((2 * j + 1) * k for j, k in enumerate(m))
        if half % 2:
            out[m] = ZERO
            continue
        out[m] = expectation_of_words(words, m, lam)
    return {m: v for m, v in out.items() if v}


def empty_expectation_by_graphs(lam: Sequence, max_edges: int) -> Dict[tuple, G]:
    """<<empty>> by summing Z(Gamma)/|Aut| over all closed graphs (labelled route)."""
    lam = [G.coerce(x) for x in lam]
    N = len(lam)
    out = {(): ONE}
    for m in _s_types(2 * max_edges, 2 * max_edges, 2 * max_edges):
        m = _trim(m)
        if not m or m in out:
            continue
        H = sum((2 * j + 1) * k for j, k in enumerate(m))
        if H % 2:
            continue
        total = ZERO
        wt = ONE
        for j, k in enumerate(m):
            wt = wt * vertex_coefficient(2 * j + 1) ** k
        for sigma, alpha in labelled_closed(m, connected=False):
            total = total + _numeric_coloring_sum(sigma, alpha, lam)
        val = total * wt / centralizer_order(m)
        if val:
            out[m] = val
    return out


def _numeric_coloring_sum(sigma, alpha, lam) -> G:
    H = len(sigma)
    phi = [sigma[alpha[h]] for h in range(H)]
    faces = cycles_of(phi)
    fof = {}
    for k, c in enumerate(faces):
        for h in c:
            fof[h] = k
    edges = [(fof[a], fof[b]) for a, b in ((h, alpha[h]) for h in range(H)) if a < b]
    total = ZERO
    for colors in product(range(len(lam)), repeat=len(faces)):
        t = ONE
        for fa, fb in edges:
            t = t * (G(2) / (lam[colors[fa]] + lam[colors[fb]]))
        total = total + t
    return total


# ----------------------------------------------------------------------- KMI

@dataclass
class KMIResult:
    m: Tuple[int, ...]
    n: int
    rhs_graph_sum: GRationalFunction
    laurent: GPolynomial
    extracted: Dict[Tuple[int, ...], Fraction]   # ordered nu -> <tau_nu>_{m,n}


def _lam(i: int) -> str:
    return f"L{i}"


def kmi_rhs_classes(m: Sequence[int], n: int, cache_dir=None) -> GRationalFunction:
    scale = G(Fraction(1, 2 ** sum(j * k for j, k in enumerate(m))))
    total = GRationalFunction(GPolynomial())
    for item in enumerate_numbered(m, n, cache_dir=cache_dir):
        g = item.graph
        labels = g.hole_label_map()
        hof = g.hole_of()
        term = GRationalFunction(GPolynomial.const(scale / item.aut))
        for a, b in g.edges:
            term = term * GRationalFunction.propagator(_lam(labels[hof[a]]), _lam(labels[hof[b]]))
        total = total + term
    return total


def kmi_rhs_labelled(m: Sequence[int], n: int) -> GRationalFunction:
    """Same sum by orbit counting over all involutions and all numberings."""
    groups: Dict[tuple, int] = {}
    for sigma, alpha in labelled_closed(m, True, n):
        H = len(sigma)
        phi = [sigma[alpha[h]] for h in range(H)]
        faces = cycles_of(phi)
        fof = {h: k for k, c in enumerate(faces) for h in c}
        pairs = tuple(sorted(tuple(sorted((fof[h], fof[alpha[h]]))) for h in range(H) if h < alpha[h]))
        key = min(tuple(sorted(tuple(sorted((p[a], p[b]))) for a, b in pairs))
                  for p in permutations(range(n)))
        groups[key] = groups.get(key, 0) + 1
    scale = Fraction(1, 2 ** sum(j * k for j, k in enumerate(m)) * centralizer_order(m))
    total = GRationalFunction(GPolynomial())
    for pairs, count in sorted(groups.items()):
        for p in permutations(range(n)):
            term = GRationalFunction(GPolynomial.const(G(scale * count)))
            for a, b in pairs:
                term = term * GRationalFunction.propagator(_lam(p[a] + 1), _lam(p[b] + 1))
            total = total + term
    return total


def extract_intersections(laurent: GPolynomial, m: Sequence[int], n: int) -> Dict[Tuple[int, ...], Fraction]:
    E = sum((2 * j + 1) * k for j, k in enumerate(m)) // 2
    out: Dict[Tuple[int, ...], Fraction] = {}
    for mono, c in laurent.terms.items():
        d = dict(mono)
        if any(var_index(v) > n or v[0] != "L" for v in d):
            raise ShapeMismatch(f"unexpected variable in {mono}")
        exps = [d.get(_lam(i), 0) for i in range(1, n + 1)]
        if any(e >= 0 or e % 2 == 0 for e in exps) or -sum(exps) != E:
            raise ShapeMismatch(f"term outside the odd-power basis: {mono}")
        nu = tuple((-e - 1) // 2 for e in exps)
        norm = 1
        for v in nu:
            norm *= double_factorial(2 * v - 1)
        if c.im:
            raise ShapeMismatch("non-real coefficient")
        out[nu] = c.re / norm
    return out


def kmi_check(m: Sequence[int], n: int, *, method: str = "classes", cache_dir=None) -> KMIResult:
    m = _trim(m)
    if method == "classes":
        rhs = kmi_rhs_classes(m, n, cache_dir)
    else:
        rhs = kmi_rhs_labelled(m, n)
    laurent = rhs.to_laurent()
    return KMIResult(m, n, rhs, laurent, extract_intersections(laurent, m, n))


def kmi_by_expansion(rhs: GRationalFunction, m: Sequence[int], n: int, order: Sequence[int] | None = None) -> GPolynomial:
    """Independent route: nested expansion at infinity in the given variable order."""
    E = sum((2 * j + 1) * k for j, k in enumerate(m)) // 2
    names = [_lam(i) for i in (order or range(1, n + 1))]
    cap = E - (n - 1)
    caps = {v: cap for v in names}
    exp = expand_at_infinity_window(rhs, names, caps)
    return exp


def expand_at_infinity_window(rhs, names, caps):
    from .symbolic import expand_at_infinity

    return expand_at_infinity(rhs, names, caps)


# ---------------------------------------------------- free energy and Z

def free_energy(s_degree: int, s_index: int, t_degree: int, *, method: str = "labelled") -> TruncatedSeries:
    """F(s;t) = sum (1/n!) s^m <tau_nu>_{m,n} t_nu from KMI extraction."""
    caps = {"s": s_degree, "t": t_degree}
    total = GPolynomial()
    for m in _s_types(s_degree, s_index):
        m = _trim(m)
        if not m:
            continue
        H = sum((2 * j + 1) * k for j, k in enumerate(m))
        if H % 2:
            continue
        V, E = sum(m), H // 2
        for n in range(1, min(t_degree, E - V + 2) + 1):
            if (V - E + n) % 2:
                continue
            res = kmi_check(m, n, method=method)
            for nu, val in res.extracted.items():
                if not val:
                    continue
                t = GPolynomial.monomial({**{f"s{j}": k for j, k in enumerate(m) if k}}, G(val / factorial(n)))
                for v in nu:
                    t = t * GPolynomial.var(f"t{v}")
                total = total + t
    return TruncatedSeries(total, caps, {"s": s_index})


def miwa(k: int, lam: Sequence[G]) -> G:
    """t_k(L) = -(2k-1)!! tr L^{-(2k+1)}."""
    tr = ZERO
    for x in lam:
        tr = tr + G.coerce(x) ** (-(2 * k + 1))
    return -G(double_factorial(2 * k - 1)) * tr


@dataclass
class ZCheckReport:
    N: int
    lam: List[G]
    by_kmi: Dict[tuple, G]
    by_graphs: Dict[tuple, G]
    by_gaussian: Dict[tuple, G]
    mismatches: List[tuple] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.mismatches


def _poly_to_types(p: GPolynomial) -> Dict[tuple, G]:
    out = {}
    for mono, c in p.terms.items():
        d = dict(mono)
        top = max((var_index(v) for v in d), default=-1)
        out[_trim([d.get(f"s{j}", 0) for j in range(top + 1)])] = c
    return out


def z_equals_partition(N: int, s_index: int, order: int, lam: Sequence | None = None) -> ZCheckReport:
    """Compare Z(s;t(L)) from KMI numbers with <<empty>> from graph sums, by s-monomial."""
    if lam is None:
        lam = [G(k + 1, 0) * G(Fraction(1, 1)) + G(Fraction(k, 3)) for k in range(N)]
    lam = [G.coerce(x) for x in lam]
    # t-degree needed: at most the number of holes, bounded by E - V + 2
    max_E = order * (2 * s_index + 1) // 2
    F = free_energy(order, s_index, max_E + 2)
    values = {f"t{k}": miwa(k, lam) for k in range(max_E + 2)}
    F_num = F.poly.subs(values)
    Z = series_exp(TruncatedSeries(F_num, {"s": order}, {"s": s_index}))
    by_kmi = _poly_to_types(Z.poly)
    graphs = {m: v for m, v in empty_expectation_by_graphs(lam, max_E).items()
              if sum(m) <= order and len(m) <= s_index + 1}
    gauss = expectation_truncated([], lam, s_degree=order, s_index=s_index)
    gauss[()] = ONE
    keys = set(by_kmi) | set(graphs) | set(gauss)
    bad = [k for k in sorted(keys) if not (by_kmi.get(k, ZERO) == graphs.get(k, ZERO) == gauss.get(k, ZERO))]
    return ZCheckReport(N, lam, by_kmi, graphs, gauss, bad)
