"""Reduction of decorated clusters to residual form and the derived operators D_k."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from math import comb, factorial
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

from .enumeration import HoleType, enumerate_hole_types
from .errors import (CancellationFailure, CutoffMismatch, NonTermination, NotCyclic, NotHomogeneous,
                     NotResidualDegreeZero, TruncationWarning)
from .feynman import amplitude_z, vertex_coefficient
from .ribbon_core import norm_minus, norm_plus
from .symbolic import (G, GPolynomial, I, ONE, ONE_POLY, ZERO, TruncatedSeries,
                       double_factorial, gaussian_solve, render_coefficient, var_family,
                       var_index)

Exps = Tuple[int, ...]
Deco = Dict[Exps, G]
# a vertex key is (valence, ((exps, re, im), ...)) with a monic cyclic homogeneous decoration
VertexKey = Tuple[int, tuple]
Cluster = Tuple[VertexKey, ...]


# ------------------------------------------------------------ decorations

def _clean(d: Deco) -> Deco:
    return {k: v for k, v in d.items() if v}


def deco_add(a: Deco, b: Deco, scale: G = ONE) -> Deco:
    out = dict(a)
    for k, v in b.items():
        out[k] = out.get(k, ZERO) + v * scale
    return _clean(out)


def rotate(d: Deco, r: int) -> Deco:
    """f(theta_{1+r}, ..., theta_{n+r}); exponents move right by r."""
    out: Deco = {}
    for e, c in d.items():
        n = len(e)
        new = tuple(e[(l - r) % n] for l in range(n))
        out[new] = out.get(new, ZERO) + c
    return _clean(out)


def cyclic_symmetrize(d: Deco, n: int) -> Deco:
    """Sum over the n rotations."""
    out: Deco = {}
    for r in range(n):
        out = deco_add(out, rotate(d, r))
    return out


def is_cyclic(d: Deco, n: int) -> bool:
    return n == 0 or rotate(d, 1) == _clean(d)


def degree_of(d: Deco) -> int:
    degs = {sum(e) for e in d}
    if len(degs) > 1:
        raise NotHomogeneous(f"degrees {sorted(degs)}")
    return degs.pop() if degs else 0


def vertex_key(n: int, d: Deco) -> VertexKey:
    return (n, tuple(sorted((e, c.re, c.im) for e, c in d.items())))


def key_deco(key: VertexKey) -> Deco:
    return {e: G(re, im) for e, re, im in key[1]}


def normalize_vertex(n: int, d: Deco) -> List[Tuple[G, VertexKey]]:
    """Cyclic average split into homogeneous pieces, each made monic."""
    avg = cyclic_symmetrize(d, n)
    pieces: Dict[int, Deco] = {}
    for e, c in avg.items():
        pieces.setdefault(sum(e), {})[e] = c / n
    out = []
    for deg in sorted(pieces):
        p = pieces[deg]
        lead = p[max(p)]
        out.append((lead, vertex_key(n, {e: c / lead for e, c in p.items()})))
    return out


def power_sum(n: int, d: int) -> Deco:
    out: Deco = {}
    for l in range(n):
        e = [0] * n
        e[l] = d
        out[tuple(e)] = out.get(tuple(e), ZERO) + ONE
    return out


def alternating_value(d: Deco) -> G:
    total = ZERO
    for e, c in d.items():
        sign = (-1) ** sum(x for l, x in enumerate(e) if l % 2)
        total = total + c * sign
    return total


def residual_part(d: Deco, n: int) -> Deco:
    """Component of a cyclic homogeneous polynomial outside the decomposable image."""
    deg = degree_of(d)
    if deg == 0:
        return dict(d)
    if n % 2 or deg % 2:
        return {}
    c = alternating_value(d) / n
    if not c:
        return {}
    return {e: v * c for e, v in power_sum(n, deg).items()}


def is_residual_vertex(key: VertexKey) -> bool:
    n = key[0]
    d = key_deco(key)
    return residual_part(d, n) == d


def _monomials(n: int, deg: int) -> List[Exps]:
    out: List[Exps] = []

    def rec(i, left, cur):
        if i == n - 1:
            out.append(tuple(cur + [left]))
            return
        for k in range(left, -1, -1):
            rec(i + 1, left - k, cur + [k])

    if n == 0:
        return [()] if deg == 0 else []
    rec(0, deg, [])
    return out


def _orbit_rep(e: Exps) -> Exps:
    return min(e[r:] + e[:r] for r in range(len(e)))


def u_of(psi: Deco, n: int) -> Deco:
    """(theta_n + theta_1) psi."""
    out: Deco = {}
    for e, c in psi.items():
        for l in (0, n - 1):
            f = list(e)
            f[l] += 1
            f = tuple(f)
            out[f] = out.get(f, ZERO) + c
    return _clean(out)


def cyclic_decompose(d: Deco, n: int) -> Tuple[Deco, Deco]:
    """Split a cyclic homogeneous polynomial as residual + sum_r rot_r(u_psi).

    Returns (residual, psi).  Free variables of the linear system are set to 0.
    """
    if not is_cyclic(d, n):
        raise NotCyclic("decoration is not invariant under rotation")
    deg = degree_of(d)
    res = residual_part(d, n)
    if deg == 0:
        return res, {}
    target = deco_add(d, res, G(-1))
    if not target:
        return res, {}
    cols = _monomials(n, deg - 1)
    col_of = {e: i for i, e in enumerate(cols)}
    reps: Dict[Exps, int] = {}
    orbit_size: Dict[Exps, int] = {}
    for e in _monomials(n, deg):
        r = _orbit_rep(e)
        if r not in reps:
            reps[r] = len(reps)
            orbit_size[r] = len({e[k:] + e[:k] for k in range(n)})
    rows: List[Dict[int, G]] = [dict() for _ in reps]
    for e, j in col_of.items():
        for f, c in u_of({e: ONE}, n).items():
            r = _orbit_rep(f)
            i = reps[r]
            rows[i][j] = rows[i].get(j, ZERO) + c * Fraction(n, orbit_size[r])
    rhs = [target.get(r, ZERO) for r in reps]
    sol = gaussian_solve(rows, rhs, len(cols))
    if sol is None:
        raise NonTermination(f"no cyclic decomposition for valence {n}, degree {deg}")
    psi = _clean({cols[j]: v for j, v in sol.items()})
    if deco_add(cyclic_symmetrize(u_of(psi, n), n), target, G(-1)):
        raise NonTermination("decomposition check failed")
    return res, psi


# ------------------------------------------------------- s-context

@dataclass(frozen=True)
class SContext:
    """Cutoff on s indices, optionally evaluated at a point s°.

    ``values[j]`` is a GaussianRational or None (kept symbolic); indices past
    the end of ``values`` are set to zero.
    """

    J: int
    values: Optional[Tuple[Optional[G], ...]] = None

    def s(self, j: int) -> GPolynomial:
        if j > self.J:
            return GPolynomial()
        if self.values is None:
            return GPolynomial.var(f"s{j}")
        if j >= len(self.values):
            return GPolynomial()
        v = self.values[j]
        return GPolynomial.var(f"s{j}") if v is None else GPolynomial.const(v)

    def weight(self, k: int) -> GPolynomial:
        """Vertex weight x_k under the context."""
        c = vertex_coefficient(k)
        if not c:
            return GPolynomial()
        return self.s((k - 1) // 2) * c

    def apply(self, p: GPolynomial) -> GPolynomial:
        mapping = {}
        for v in p.variables():
            if var_family(v) == "s":
                mapping[v] = self.s(var_index(v))
        return p.subs(mapping) if mapping else p

    @property
    def key(self):
        return (self.J, None if self.values is None else tuple(
            None if v is None else (v.re, v.im) for v in self.values))


# ---------------------------------------------------------- combinations

class ClusterCombination:
    """Linear combination of clusters in the <prod W> normalization.

    Coefficients are polynomials in s_* and trace symbols p_*.
    """

    def __init__(self, terms: Mapping[Cluster, GPolynomial] | None = None):
        self.terms: Dict[Cluster, GPolynomial] = {}
        for k, v in (terms or {}).items():
            self.add(k, v)

    def add(self, cluster: Cluster, coef: GPolynomial):
        if coef.is_zero():
            return
        cluster = tuple(sorted(cluster))
        new = self.terms.get(cluster, GPolynomial()) + coef
        if new.is_zero():
            self.terms.pop(cluster, None)
        else:
            self.terms[cluster] = new

    def add_scaled(self, other: "ClusterCombination", coef: GPolynomial):
        for k, v in other.terms.items():
            self.add(k, v * coef)

    def __add__(self, other):
        out = ClusterCombination(self.terms)
        out.add_scaled(other, ONE_POLY)
        return out

    def __eq__(self, other):
        return isinstance(other, ClusterCombination) and self.terms == other.terms

    def __bool__(self):
        return bool(self.terms)

    def items(self):
        return sorted(self.terms.items(), key=lambda kv: cluster_sort_key(kv[0]))

    def render(self) -> str:
        if not self.terms:
            return "0"
        return "\n".join(f"({c.render()}) * {render_cluster(k)}" for k, c in self.items())

    def to_double_bracket(self) -> List[Tuple[Cluster, GPolynomial]]:
        """Coefficients against <<Xi>> = <prod W>/|Aut Xi|."""
        return [(k, c * aut_order(k)) for k, c in self.items()]


def cluster_sort_key(c: Cluster):
    return (len(c), tuple(v[0] for v in c), c)


def aut_order(c: Cluster) -> int:
    out = 1
    counts: Dict[VertexKey, int] = {}
    for v in c:
        out *= v[0]
        counts[v] = counts.get(v, 0) + 1
    for m in counts.values():
        out *= factorial(m)
    return out


def render_vertex(key: VertexKey) -> str:
    n = key[0]
    d = key_deco(key)
    if d == {(0,) * n: ONE}:
        return f"v{n}"
    terms = []
    for e, c in sorted(d.items(), reverse=True):
        mono = "*".join(f"th{l + 1}" + (f"^{x}" if x > 1 else "") for l, x in enumerate(e) if x)
        terms.append((mono, c))
    from .symbolic import render_terms

    return f"v{n}[{render_terms(terms)}]"


def render_cluster(c: Cluster) -> str:
    return " + ".join(render_vertex(v) for v in c) if c else "empty"


def cluster_from_raw(raw: Sequence[Tuple[int, Deco]]) -> List[Tuple[G, Cluster]]:
    """Normalize raw vertices (any decorations) into monic clusters with scalars."""
    acc: List[Tuple[G, List[VertexKey]]] = [(ONE, [])]
    for n, d in raw:
        if not d:
            return []
        pieces = normalize_vertex(n, d)
        acc = [(s * c, ks + [k]) for s, ks in acc for c, k in pieces]
    return [(s, tuple(sorted(ks))) for s, ks in acc if s]


# ------------------------------------------------------------ contraction

class _UF:
    def __init__(self):
        self.parent = {}

    def find(self, x):
        self.parent.setdefault(x, x)
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[ra] = rb


def _assemble(new_vertices: List[List[tuple]], idents: List[Tuple[tuple, tuple]],
              sources: List[Tuple[Deco, List[tuple]]], extra_symbols: Iterable[tuple]):
    """Push decorations through index identifications.

    Returns a list of (p-monomial dict, [ (valence, deco), ... ]) terms.
    """
    uf = _UF()
    for vs in new_vertices:
        for s in vs:
            uf.find(s)
    for _, syms in sources:
        for s in syms:
            uf.find(s)
    for s in extra_symbols:
        uf.find(s)
    for a, b in idents:
        uf.union(a, b)
    slot_of: Dict[tuple, Tuple[int, int]] = {}
    for vi, vs in enumerate(new_vertices):
        for si, s in enumerate(vs):
            r = uf.find(s)
            if r in slot_of:
                raise ValueError("index class appears twice")
            slot_of[r] = (vi, si)
    classes = {uf.find(s) for s in list(uf.parent)}
    free = sorted((c for c in classes if c not in slot_of), key=repr)
    # distribute monomials
    combos: List[Tuple[Dict[tuple, int], G]] = [({}, ONE)]
    for deco, syms in sources:
        nxt = []
        for acc, c in combos:
            for e, v in deco.items():
                a = dict(acc)
                for s, x in zip(syms, e):
                    if x:
                        r = uf.find(s)
                        a[r] = a.get(r, 0) + x
                nxt.append((a, c * v))
        combos = nxt
    grouped: Dict[tuple, Deco] = {}
    for acc, c in combos:
        exps = [[0] * len(vs) for vs in new_vertices]
        p: Dict[str, int] = {}
        for f in free:
            name = f"p{acc.get(f, 0)}"
            p[name] = p.get(name, 0) + 1
        for r, x in acc.items():
            if r in slot_of:
                vi, si = slot_of[r]
                exps[vi][si] += x
        head = tuple(exps[0]) if new_vertices else ()
        rest = tuple(tuple(e) for e in exps[1:])
        key = (tuple(sorted(p.items())), rest)
        d = grouped.setdefault(key, {})
        d[head] = d.get(head, ZERO) + c
    out = []
    for (p, rest), d0 in grouped.items():
        d0 = _clean(d0)
        if not d0:
            continue
        verts = []
        if new_vertices:
            verts.append((len(new_vertices[0]), d0))
            for vs, e in zip(new_vertices[1:], rest):
                verts.append((len(vs), {e: ONE}))
            out.append((dict(p), verts))
        else:
            out.append((dict(p), [], d0[()]))
    return out


def contract_step(psi: Deco, n: int, rest: Sequence[VertexKey], ctx: SContext) -> ClusterCombination:
    """<W^{u_psi} prod rest> rewritten by removing the edge at leg 1."""
    out = ClusterCombination()
    isym = [("i", l) for l in range(1, n + 1)]

    def push(coef: GPolynomial, terms, others: Sequence[VertexKey]):
        for item in terms:
            if len(item) == 3:
                p, _, c = item
                verts = []
            else:
                p, verts = item
                c = ONE
            pm = GPolynomial.monomial(p, c)
            raw = [(k, d) for k, d in verts if k > 0]
            for s, cl in cluster_from_raw(raw):
                out.add(cl + tuple(others), coef * pm * s)

    # C1: derivative of the action, new vertex of valence n-1+2j
    for j in range(ctx.J + 1):
        w = ctx.weight(2 * j + 1)
        if w.is_zero():
            continue
        new = [("n", r) for r in range(1, 2 * j)]
        corners = isym[1:] + new + ([isym[0]] if j else [])
        idents = [] if j else [(isym[-1], isym[0])]
        terms = _assemble([corners] if corners else [], idents, [(psi, isym)], [])
        push(w * 2, terms, rest)
    # loops at leg l = 2..n
    for l in range(2, n + 1):
        A = isym[1:l - 1]
        B = isym[l:]
        idents = [(isym[l - 2], isym[0]), (isym[l - 1], isym[-1])]
        verts = [v for v in (A, B) if v]
        terms = _assemble(verts, idents, [(psi, isym)], [])
        push(GPolynomial.const(G(2)), terms, rest)
    # edge to another vertex of the cluster
    for pos, zeta_key in enumerate(rest):
        n2 = zeta_key[0]
        ksym = [("k", l) for l in range(1, n2 + 1)]
        corners = isym[1:] + ksym[1:]
        idents = [(ksym[-1], isym[0]), (ksym[0], isym[-1])]
        terms = _assemble([corners] if corners else [], idents,
                          [(psi, isym), (key_deco(zeta_key), ksym)], [])
        others = tuple(rest[:pos]) + tuple(rest[pos + 1:])
        push(GPolynomial.const(G(2 * n2)), terms, others)
    return out


# ---------------------------------------------------------------- reduce

class Reducer:
    """Memoized reduction to residual clusters under a fixed s-context."""

    def __init__(self, ctx: SContext, max_steps: int = 10 ** 6):
        self.ctx = ctx
        self.memo: Dict[Cluster, ClusterCombination] = {}
        self.steps = 0
        self.max_steps = max_steps

    def measure(self, c: Cluster) -> int:
        return sum(degree_of(key_deco(v)) for v in c)

    def reduce_cluster(self, c: Cluster) -> ClusterCombination:
        c = tuple(sorted(c))
        if c in self.memo:
            return self.memo[c]
        bad = [i for i, v in enumerate(c) if not is_residual_vertex(v)]
        if not bad:
            res = ClusterCombination({c: ONE_POLY})
            self.memo[c] = res
            return res
        self.steps += 1
        if self.steps > self.max_steps:
            raise NonTermination("step budget exhausted")
        i = bad[0]
        key = c[i]
        n = key[0]
        rest = c[:i] + c[i + 1:]
        r, psi = cyclic_decompose(key_deco(key), n)
        out = ClusterCombination()
        if r:
            for s, k in normalize_vertex(n, r):
                out.add(tuple(sorted(rest + (k,))), GPolynomial.const(s))
        if psi:
            before = self.measure(c)
            step = contract_step(psi, n, rest, self.ctx)
            for child, coef in step.terms.items():
                if self.measure(child) >= before:
                    raise NonTermination("theta-degree did not decrease")
                out.add_scaled(self.reduce_cluster(child), coef * G(Fraction(n)))
        self.memo[c] = out
        return out

    def reduce(self, comb: ClusterCombination) -> ClusterCombination:
        out = ClusterCombination()
        for c, coef in comb.terms.items():
            out.add_scaled(self.reduce_cluster(c), coef)
        return out


def reduce_cluster(cluster: Sequence[Tuple[int, Deco]], ctx: SContext | None = None,
                   coef: GPolynomial | None = None) -> ClusterCombination:
    """Reduce a raw cluster (vertices with arbitrary decorations)."""
    ctx = ctx or SContext(J=4)
    start = ClusterCombination()
    for s, cl in cluster_from_raw(list(cluster)):
        start.add(cl, (coef or ONE_POLY) * s)
    return Reducer(ctx).reduce(start)


def deco_from_polynomial(poly: GPolynomial, n: int) -> Deco:
    """th1..thn polynomial -> exponent-tuple decoration."""
    out: Deco = {}
    for mono, c in poly.terms.items():
        e = [0] * n
        for v, x in mono:
            if var_family(v) != "th" or not 1 <= var_index(v) <= n:
                raise ValueError(f"variable {v} is not one of th1..th{n}")
            e[var_index(v) - 1] = x
        out[tuple(e)] = out.get(tuple(e), ZERO) + c
    return _clean(out)


# ------------------------------------------------------- hole types

def holes_to_clusters(ht: HoleType, k: int, ctx: SContext | None = None) -> ClusterCombination:
    """Coeff_z^{-k} of the hole type, divided by |Aut|, as clusters."""
    amp = amplitude_z(ht, k)
    ck = amp.series[k] / G(ht.aut)
    if ctx is not None:
        ck = ctx.apply(ck)
    out = ClusterCombination()
    names = [v for vs in amp.vertices for v in vs]
    for mono, c in ck.terms.items():
        d = dict(mono)
        th = {v: e for v, e in d.items() if var_family(v) == "th"}
        other = {v: e for v, e in d.items() if var_family(v) != "th"}
        raw = []
        for vs in amp.vertices:
            raw.append((len(vs), {tuple(th.get(v, 0) for v in vs): ONE}))
        for s, cl in cluster_from_raw(raw):
            out.add(cl, GPolynomial.monomial(other, c * s))
    return out


def bounds_violations(comb: ClusterCombination, k: int) -> List[str]:
    """Clusters breaking the valence/degree bounds at Coeff_z^{-k}; m is read per term."""
    bad = []
    for cl, coef in comb.terms.items():
        val = sum(v[0] for v in cl)
        deg = sum(degree_of(key_deco(v)) for v in cl)
        for mono in coef.terms:
            m = {var_index(v): e for v, e in mono if var_family(v) == "s"}
            mv = [m.get(j, 0) for j in range(max(m) + 1)] if m else []
            size, m1 = sum(mv), m.get(1, 0)
            ok = val <= norm_minus(mv) and deg + size <= 2 * k and deg + m1 <= k
            if ok and deg + m1 == k:
                ok = len(cl) == 1 and cl[0][0] == k - deg
            if not ok:
                bad.append(f"{render_cluster(cl)} with s-monomial {mv}")
    return bad


# ------------------------------------------------------------ operators

def _mono_key(m: Sequence[int]) -> tuple:
    m = list(m)
    while m and not m[-1]:
        m.pop()
    return tuple(m)


def _add_vec(a, b, sign=1):
    n = max(len(a), len(b))
    return _mono_key([(a[i] if i < len(a) else 0) + sign * (b[i] if i < len(b) else 0) for i in range(n)])


class DiffOperator:
    """Finite sum of c * s^m d^n with Gaussian-rational c."""

    def __init__(self, terms: Mapping[Tuple[tuple, tuple], G] | None = None):
        self.terms: Dict[Tuple[tuple, tuple], G] = {}
        for (m, n), c in (terms or {}).items():
            self._add(_mono_key(m), _mono_key(n), c)

    def _add(self, m, n, c):
        if not c:
            return
        v = self.terms.get((m, n), ZERO) + c
        if v:
            self.terms[(m, n)] = v
        else:
            self.terms.pop((m, n), None)

    def __add__(self, other):
        out = DiffOperator(self.terms)
        for (m, n), c in other.terms.items():
            out._add(m, n, c)
        return out

    def scale(self, c) -> "DiffOperator":
        c = G.coerce(c)
        return DiffOperator({k: v * c for k, v in self.terms.items()})

    def __eq__(self, other):
        return isinstance(other, DiffOperator) and self.terms == other.terms

    def __matmul__(self, other: "DiffOperator") -> "DiffOperator":
        """Composition self o other (Leibniz rule)."""
        out = DiffOperator()
        for (a, b), c1 in self.terms.items():
            for (cm, d), c2 in other.terms.items():
                L = max(len(b), len(cm))
                bb = list(b) + [0] * (L - len(b))
                cc = list(cm) + [0] * (L - len(cm))
                choices = [range(min(bb[i], cc[i]) + 1) for i in range(L)]
                from itertools import product as _prod

                for kk in _prod(*choices):
                    coef = c1 * c2
                    for i, k in enumerate(kk):
                        coef = coef * (comb(bb[i], k) * factorial(cc[i]) // factorial(cc[i] - k))
                    m = _add_vec(_add_vec(a, cc), kk, -1)
                    n = _add_vec(_add_vec(bb, kk, -1), d)
                    out._add(m, n, coef)
        return out

    def apply(self, f: TruncatedSeries) -> TruncatedSeries:
        total = GPolynomial()
        for (m, n), c in self.terms.items():
            g = f.poly
            for j, e in enumerate(n):
                for _ in range(e):
                    g = g.derivative(f"s{j}")
            g = g * GPolynomial.monomial({f"s{j}": e for j, e in enumerate(m) if e}, c)
            total = total + g
        return TruncatedSeries(total, f.caps, f.index_caps)

    def evaluate_at(self, values: Sequence[Optional[G]]) -> "DiffOperator":
        """Substitute s_j -> values[j] (None keeps s_j; past the end -> 0)."""
        out = DiffOperator()
        for (m, n), c in self.terms.items():
            mm = list(m)
            coef = c
            for j, e in enumerate(m):
                if not e:
                    continue
                v = values[j] if j < len(values) else ZERO
                if v is None:
                    continue
                coef = coef * v ** e
                mm[j] = 0
            out._add(_mono_key(mm), n, coef)
        return out

    def is_triangular(self) -> bool:
        return all(norm_plus(n) <= norm_minus(m) for m, n in self.terms)

    def is_graded_triangular(self, k: int) -> bool:
        """At a point: every d^n has |n|_+ <= 2k+1, with equality only for d/ds_k."""
        top = 2 * k + 1
        ek = _mono_key([0] * k + [1])
        return all(norm_plus(n) < top or (norm_plus(n) == top and n == ek) for _, n in self.terms)

    def sorted_terms(self):
        return sorted(self.terms.items(), key=lambda kv: (
            sum(kv[0][1]), _expand(kv[0][1]), sum(kv[0][0]), _expand(kv[0][0])))

    def render(self) -> str:
        if not self.terms:
            return "0"
        parts = []
        for (m, n), c in self.sorted_terms():
            body = []
            for j, e in enumerate(m):
                if e:
                    body.append(f"s{j}" + (f"^{e}" if e > 1 else ""))
            for j, e in enumerate(n):
                if e:
                    body.append(f"d/ds{j}" if e == 1 else f"d^{e}/ds{j}^{e}")
            parts.append(_render_term(c, "*".join(body)))
        text = parts[0]
        for p in parts[1:]:
            text += " - " + p[1:] if p.startswith("-") else " + " + p
        return text

    def to_json(self):
        return [{"m": list(m), "n": list(n), "coefficient": render_coefficient(c)}
                for (m, n), c in self.sorted_terms()]


def _expand(v: Sequence[int]) -> tuple:
    return tuple(j for j, e in enumerate(v) for _ in range(e))


def _frac_parts(q: Fraction):
    return q.numerator, q.denominator


def _render_real(q: Fraction, body: str, unit: str = "") -> str:
    sign = "-" if q < 0 else ""
    p, d = _frac_parts(abs(q))
    factors = [f for f in (unit, body) if f]
    tail = "*".join(factors)
    if not tail:
        return sign + (str(p) if d == 1 else f"{p}/{d}")
    if d == 1:
        return f"{sign}{p}*{tail}"
    if p == 1:
        return f"{sign}{tail}/{d}"
    return f"{sign}{p}/{d}*{tail}"


def _render_term(c: G, body: str) -> str:
    if c.im == 0:
        return _render_real(c.re, body)
    if c.re == 0:
        return _render_real(c.im, body, "i")
    inner = render_coefficient(c)
    return f"{inner}*{body}" if body else inner


def parse_operator(text: str) -> DiffOperator:
    """Inverse of DiffOperator.render."""
    import re

    out = DiffOperator()
    text = text.replace(" - ", " + -").strip()
    for raw in text.split(" + "):
        t = raw.strip()
        if not t:
            continue
        sign = 1
        if t.startswith("-"):
            sign, t = -1, t[1:]
        coef = G(sign)
        denom = 1
        factors = re.split(r"\*(?![^()]*\))", t)
        m: Dict[int, int] = {}
        n: Dict[int, int] = {}
        for f in factors:
            if not f:
                continue
            g = re.fullmatch(r"d(?:\^(\d+))?/ds(\d+)(?:\^\d+)?(?:/(\d+))?", f)
            if g:
                n[int(g.group(2))] = n.get(int(g.group(2)), 0) + int(g.group(1) or 1)
                if g.group(3):
                    denom *= int(g.group(3))
                continue
            g = re.fullmatch(r"s(\d+)(?:\^(\d+))?(?:/(\d+))?", f)
            if g:
                m[int(g.group(1))] = m.get(int(g.group(1)), 0) + int(g.group(2) or 1)
                if g.group(3):
                    denom *= int(g.group(3))
                continue
            g = re.fullmatch(r"i(?:/(\d+))?", f)
            if g:
                coef = coef * I
                if g.group(1):
                    denom *= int(g.group(1))
                continue
            g = re.fullmatch(r"(\d+)(?:/(\d+))?", f)
            if g:
                coef = coef * Fraction(int(g.group(1)), int(g.group(2) or 1))
                continue
            if f.startswith("(") and f.endswith(")"):
                from .symbolic import parse_polynomial

                p = parse_polynomial(f[1:-1])
                if p.is_constant():
                    coef = coef * p.constant_term()
                    continue
            raise ValueError(f"cannot parse factor {f!r}")
        mv = [m.get(j, 0) for j in range(max(m) + 1)] if m else []
        nv = [n.get(j, 0) for j in range(max(n) + 1)] if n else []
        out._add(_mono_key(mv), _mono_key(nv), coef / denom)
    return out


# ------------------------------------------------------------ D_k

def insertion_factor(cluster: Cluster) -> Tuple[G, tuple]:
    """<prod tr X^{2j+1}> = factor * d^n Z."""
    f = ONE
    n: Dict[int, int] = {}
    for v in cluster:
        k = v[0]
        j = (k - 1) // 2
        f = f * G(k) * I * G(-2) ** j
        n[j] = n.get(j, 0) + 1
    return f, _mono_key([n.get(j, 0) for j in range(max(n) + 1)] if n else [])


def is_operator_cluster(cluster: Cluster) -> bool:
    return all(v[0] % 2 == 1 and key_deco(v) == {(0,) * v[0]: ONE} for v in cluster)


def cluster_monomial_to_operator(cl: Cluster) -> DiffOperator:
    """<<Xi>> for Xi a union of undecorated odd vertices, as an operator on Z."""
    if not is_operator_cluster(cl):
        raise NotResidualDegreeZero(f"not a union of undecorated odd vertices: {render_cluster(cl)}")
    f, n = insertion_factor(cl)
    return DiffOperator({((), n): f / aut_order(cl)})


def cluster_to_operator(comb: ClusterCombination) -> DiffOperator:
    out = DiffOperator()
    for cl, coef in comb.terms.items():
        if not is_operator_cluster(cl):
            raise CancellationFailure(f"non-operator cluster {render_cluster(cl)}")
        f, n = insertion_factor(cl)
        for mono, c in coef.terms.items():
            d = dict(mono)
            if any(var_family(v) != "s" for v in d):
                raise CancellationFailure(f"trace symbol in coefficient {coef.render()}")
            top = max((var_index(v) for v in d), default=-1)
            m = _mono_key([d.get(f"s{j}", 0) for j in range(top + 1)])
            out._add(m, n, c * f)
    return out


@dataclass
class Derivation:
    k: int
    v_max: int
    J: int
    hole_types: int
    input: ClusterCombination
    residual: ClusterCombination
    operator: DiffOperator
    leftovers: ClusterCombination
    steps: int
    leading: Optional[G] = None
    diagnostics: Dict[str, object] = field(default_factory=dict)


def derivative_expansion(d: Derivation) -> List[Tuple[Cluster, GPolynomial]]:
    """d<<empty>>/dt_k as a combination of <<Xi>>."""
    scale = G(Fraction(-1, double_factorial(2 * d.k - 1)))
    return [(cl, c * scale) for cl, c in d.residual.to_double_bracket()]


def trace_label(cl: Cluster) -> str:
    """Undecorated cluster as a product of traces, e.g. trX^3*trX."""
    parts = []
    for v in sorted(cl, key=lambda v: -v[0]):
        if key_deco(v) != {(0,) * v[0]: ONE}:
            return render_cluster(cl)
        parts.append("trX" if v[0] == 1 else f"trX^{v[0]}")
    return "*".join(parts) or "1"


def insertion_expansion(d: Derivation) -> List[Tuple[str, GPolynomial]]:
    """d<<empty>>/dt_k as sum of coefficient * <prod tr X^n>."""
    scale = G(Fraction(-1, double_factorial(2 * d.k - 1)))
    return [(trace_label(cl), c * scale) for cl, c in d.residual.items()]


def effective_cutoff(v_max: int, s_index_max: Optional[int]) -> int:
    J = (v_max - 1) // 2
    return J if s_index_max is None else min(J, s_index_max)


def parse_eval_at(text: str) -> Tuple[Optional[G], ...]:
    """"(0,0,s2)" -> (0, 0, None); numbers may be rationals or contain i."""
    from .symbolic import parse_polynomial

    body = text.strip().strip("()[]")
    out: List[Optional[G]] = []
    for j, tok in enumerate(x.strip() for x in body.split(",")):
        if not tok:
            continue
        if tok in (f"s{j}", f"s_{j}", "*"):
            out.append(None)
            continue
        p = parse_polynomial(tok)
        if not p.is_constant():
            raise ValueError(f"entry {j} must be a number or s{j}")
        out.append(p.constant_term())
    return tuple(out)


def _reduce_hole_types(args):
    types, K, ctx = args
    red = Reducer(ctx)
    total = ClusterCombination()
    residual = ClusterCombination()
    for ht in types:
        comb = holes_to_clusters(ht, K, ctx)
        total = total + comb
        residual = residual + red.reduce(comb)
    return total, residual, red.steps


def derive_D_k(k: int, v_max: Optional[int] = None, s_index_max: Optional[int] = None,
               eval_at: Optional[Sequence[Optional[G]]] = None, *, cache_dir=None,
               strict: bool = True, jobs: int = 1) -> Derivation:
    """D_k from hole types with boundary <= 2k+1 and valences <= v_max.

    ``eval_at`` restricts to s° (None entries stay symbolic, missing entries
    are 0).  With ``jobs > 1`` hole types are reduced in worker processes.
    """
    if v_max is None:
        v_max = 2 * k + 3 if eval_at is None else max(2 * len(eval_at) - 1, 1)
    if v_max < 1:
        raise ValueError("v_max must be >= 1")
    if s_index_max is not None and s_index_max > (v_max - 1) // 2:
        warnings.warn(f"s-index cutoff {s_index_max} exceeds what v_max={v_max} supports; "
                      f"terms with s_j, j > {(v_max - 1) // 2}, are absent", TruncationWarning)
    J = effective_cutoff(v_max, s_index_max)
    values = tuple(eval_at) if eval_at is not None else None
    if values is not None:
        for j, v in enumerate(values):
            if j > J and (v is None or v):
                raise CutoffMismatch(f"s{j} is nonzero at the evaluation point but above the cutoff {J}")
    ctx = SContext(J, values)
    K = 2 * k + 1
    types = enumerate_hole_types(K, 2 * J + 1, cache_dir=cache_dir)
    if jobs > 1 and len(types) > 1:
        from concurrent.futures import ProcessPoolExecutor

        chunks = [types[i::jobs] for i in range(jobs)]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(_reduce_hole_types, [(c, K, ctx) for c in chunks if c]))
    else:
        parts = [_reduce_hole_types((types, K, ctx))]
    total, residual, steps = ClusterCombination(), ClusterCombination(), 0
    for t, r, n in parts:
        total, residual, steps = total + t, residual + r, steps + n
    good = ClusterCombination()
    left = ClusterCombination()
    for cl, coef in residual.terms.items():
        if is_operator_cluster(cl) and all(var_family(v) == "s" for v in coef.variables()):
            good.add(cl, coef)
        else:
            left.add(cl, coef)
    if left and strict:
        raise CancellationFailure("uncancelled terms:\n" + left.render())
    op = cluster_to_operator(good).scale(Fraction(-1, double_factorial(2 * k - 1)))
    dk = _mono_key([0] * k + [1])
    if values is None:
        lead = op.terms.get((_mono_key([0, 2 * k + 1]), dk), ZERO)
    else:
        lead = op.terms.get(((), dk), ZERO)
    diagnostics = {
        "traces_cancel": not any(var_family(v) == "p" for c in residual.terms.values() for v in c.variables()),
        "even_valent_cancel": not any(v[0] % 2 == 0 for cl in residual.terms for v in cl),
        "triangular": op.is_triangular() if values is None else op.is_graded_triangular(k),
        "leading_coefficient": render_coefficient(lead),
    }
    return Derivation(k, v_max, J, len(types), total, residual, op, left, steps, lead, diagnostics)


def apply_operator(ks: Sequence[int], operators: Mapping[int, DiffOperator]) -> DiffOperator:
    """D_P for P = d/dt_{k1} ... d/dt_{kn}: composition D_{k1} o ... o D_{kn}."""
    missing = [k for k in ks if k not in operators]
    if missing:
        raise CutoffMismatch(f"no operator for k = {missing}")
    out = DiffOperator({((), ()): ONE})
    for k in ks:
        out = out @ operators[k]
    return out


def combination_expectation(comb: ClusterCombination, lam: Sequence, monomials: Iterable[tuple]) -> Dict[tuple, G]:
    """Exact <sum coef * prod W> at numeric eigenvalues for the given s-monomials."""
    from .feynman import expectation_of_words, trace_word

    lam = [G.coerce(x) for x in lam]
    wanted = [_mono_key(m) for m in monomials]
    out: Dict[tuple, G] = {m: ZERO for m in wanted}
    for cl, coef in comb.terms.items():
        words = None
        cache: Dict[tuple, G] = {}
        for mono, c in coef.terms.items():
            pv = c
            a: Dict[int, int] = {}
            for v, e in mono:
                if var_family(v) == "p":
                    k = var_index(v)
                    tr = ZERO
                    for x in lam:
                        tr = tr + x ** k
                    pv = pv * tr ** e
                else:
                    a[var_index(v)] = e
            for m in wanted:
                rest = [x - a.get(j, 0) for j, x in enumerate(m)]
                if any(x < 0 for x in rest) or any(j >= len(m) for j in a if a[j]):
                    continue
                rest = _mono_key(rest)
                half = sum(v[0] for v in cl) + sum((2 * j + 1) * x for j, x in enumerate(rest))
                if half % 2:
                    continue
                if rest not in cache:
                    if words is None:
                        words = [trace_word(len(lam), v[0], key_deco(v), lam) for v in cl]
                    cache[rest] = expectation_of_words(words, rest, lam)
                out[m] = out[m] + pv * cache[rest]
    return out
