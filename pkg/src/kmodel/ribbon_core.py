"""Ribbon graphs as permutation pairs.

A graph on half-edges ``0..H-1`` is a vertex rotation ``sigma`` and an
involution ``alpha``; fixed points of ``alpha`` are legs.  Holes are the
cycles of ``phi = sigma o alpha``, i.e. ``phi[h] = sigma[alpha[h]]``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from math import factorial
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

from .errors import EvenValence, NonIntegerGenus
from .symbolic import GPolynomial, parse_polynomial


@dataclass(frozen=True)
class DecoratedVertexLabel:
    """Special vertex: valence, polynomial in th1..th<valence>, optional ciliation.

    ``ciliation`` is the position (0-based, in the vertex's cyclic order
    starting at its smallest half-edge) of the half-edge carrying the mark.
    """

    valence: int
    polynomial: GPolynomial = field(default_factory=lambda: GPolynomial.const(1))
    ciliation: Optional[int] = None

    def key(self) -> str:
        return f"{self.valence}|{self.polynomial.render()}|{self.ciliation}"

    def to_json(self):
        return {"valence": self.valence, "polynomial": self.polynomial.render(),
                "ciliation": self.ciliation}

    @staticmethod
    def from_json(d) -> "DecoratedVertexLabel":
        return DecoratedVertexLabel(d["valence"], parse_polynomial(d.get("polynomial", "1")),
                                    d.get("ciliation"))


def cycles_of(perm: Sequence[int]) -> List[List[int]]:
    seen = [False] * len(perm)
    out = []
    for start in range(len(perm)):
        if seen[start]:
            continue
        cyc, h = [], start
        while not seen[h]:
            seen[h] = True
            cyc.append(h)
            h = perm[h]
        out.append(cyc)
    return out


@dataclass(frozen=True)
class RibbonGraph:
    sigma: Tuple[int, ...]
    alpha: Tuple[int, ...]
    # per vertex (ordered by smallest half-edge): None = ordinary
    marks: Tuple[Optional[DecoratedVertexLabel], ...] = ()
    leg_order: Tuple[int, ...] = ()
    # face label keyed by the smallest half-edge of the face: int or "z"
    hole_labels: Tuple[Tuple[int, object], ...] = ()

    def __post_init__(self):
        H = len(self.sigma)
        if len(self.alpha) != H or sorted(self.sigma) != list(range(H)) or sorted(self.alpha) != list(range(H)):
            raise NonIntegerGenus("sigma and alpha must be permutations of the same set")
        if any(self.alpha[self.alpha[h]] != h for h in range(H)):
            raise NonIntegerGenus("alpha is not an involution")
        if not self.marks:
            object.__setattr__(self, "marks", tuple(None for _ in self.vertices))
        if not self.leg_order:
            object.__setattr__(self, "leg_order", tuple(h for h in range(H) if self.alpha[h] == h))

    # --- constructors
    @staticmethod
    def from_cycles(vertices: Sequence[Sequence[int]], edges: Sequence[Tuple[int, int]],
                    marks=None, leg_order=None, hole_labels=None) -> "RibbonGraph":
        H = sum(len(v) for v in vertices)
        sigma = list(range(H))
        for cyc in vertices:
            for k, h in enumerate(cyc):
                sigma[h] = cyc[(k + 1) % len(cyc)]
        alpha = list(range(H))
        for a, b in edges:
            alpha[a], alpha[b] = b, a
        g = RibbonGraph(tuple(sigma), tuple(alpha))
        return g.with_(marks=marks, leg_order=leg_order, hole_labels=hole_labels)

    def with_(self, marks=None, leg_order=None, hole_labels=None) -> "RibbonGraph":
        hl = self.hole_labels
        if hole_labels is not None:
            hl = tuple(sorted(hole_labels.items() if isinstance(hole_labels, Mapping) else hole_labels))
        return RibbonGraph(self.sigma, self.alpha,
                           tuple(marks) if marks is not None else self.marks,
                           tuple(leg_order) if leg_order is not None else self.leg_order, hl)

    # --- structure
    @property
    def H(self) -> int:
        return len(self.sigma)

    @property
    def phi(self) -> Tuple[int, ...]:
        return tuple(self.sigma[self.alpha[h]] for h in range(self.H))

    @property
    def vertices(self) -> List[List[int]]:
        return cycles_of(self.sigma)

    @property
    def holes(self) -> List[List[int]]:
        return cycles_of(self.phi)

    @property
    def edges(self) -> List[Tuple[int, int]]:
        return [(h, self.alpha[h]) for h in range(self.H) if h < self.alpha[h]]

    @property
    def legs(self) -> List[int]:
        return [h for h in range(self.H) if self.alpha[h] == h]

    def vertex_of(self) -> List[int]:
        out = [0] * self.H
        for k, cyc in enumerate(self.vertices):
            for h in cyc:
                out[h] = k
        return out

    def hole_of(self) -> List[int]:
        out = [0] * self.H
        for k, cyc in enumerate(self.holes):
            for h in cyc:
                out[h] = k
        return out

    def hole_label_map(self) -> Dict[int, object]:
        """face index -> label."""
        lab = dict(self.hole_labels)
        return {k: lab[min(c)] for k, c in enumerate(self.holes) if min(c) in lab}

    def components(self) -> List[List[int]]:
        parent = list(range(self.H))

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for h in range(self.H):
            for o in (self.sigma[h], self.alpha[h]):
                a, b = find(h), find(o)
                if a != b:
                    parent[a] = b
        comps: Dict[int, List[int]] = {}
        for h in range(self.H):
            comps.setdefault(find(h), []).append(h)
        return sorted(comps.values())

    def is_closed(self) -> bool:
        return all(self.alpha[h] != h for h in range(self.H))

    def relabel(self, perm: Sequence[int]) -> "RibbonGraph":
        """Graph with half-edge h renamed perm[h]."""
        H = self.H
        inv = [0] * H
        for h, p in enumerate(perm):
            inv[p] = h
        sigma = tuple(perm[self.sigma[inv[k]]] for k in range(H))
        alpha = tuple(perm[self.alpha[inv[k]]] for k in range(H))
        new = RibbonGraph(sigma, alpha)
        # carry marks by vertex, ciliation positions by half-edge identity
        old_marks = {}
        for cyc, mk in zip(self.vertices, self.marks):
            old_marks[frozenset(cyc)] = (cyc, mk)
        marks = []
        for cyc in new.vertices:
            oc, mk = old_marks[frozenset(inv[h] for h in cyc)]
            if mk is not None and mk.ciliation is not None:
                cil_half = oc[mk.ciliation]
                mk = DecoratedVertexLabel(mk.valence, mk.polynomial, cyc.index(perm[cil_half]))
            marks.append(mk)
        # labels keyed by the smallest half-edge of each face
        faces_new = {}
        for cyc in new.holes:
            for h in cyc:
                faces_new[h] = min(cyc)
        hl = {faces_new[perm[h]]: lab for h, lab in self.hole_labels}
        return new.with_(marks=marks, leg_order=[perm[h] for h in self.leg_order], hole_labels=hl)

    # --- JSON
    def to_json(self) -> dict:
        return {
            "sigma": list(self.sigma),
            "alpha": list(self.alpha),
            "marks": [None if m is None else m.to_json() for m in self.marks],
            "legs": list(self.leg_order),
            "numbering": {str(h): lab for h, lab in self.hole_labels},
        }

    @staticmethod
    def from_json(d: dict) -> "RibbonGraph":
        g = RibbonGraph(tuple(d["sigma"]), tuple(d["alpha"]))
        marks = d.get("marks")
        if marks:
            marks = [None if m is None else DecoratedVertexLabel.from_json(m) for m in marks]
        num = d.get("numbering") or {}
        return g.with_(marks=marks or None, leg_order=d.get("legs") or None,
                       hole_labels={int(k): v for k, v in num.items()})

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)


# ------------------------------------------------------------------ analysis

@dataclass(frozen=True)
class Analysis:
    holes: List[List[int]]
    genus: int
    combinatorial_type: Optional[Tuple[int, ...]]
    type_error: Optional[str]
    components: int
    genera: Tuple[int, ...]


def combinatorial_type(g: RibbonGraph) -> Tuple[int, ...]:
    """m with m[i] = number of (2i+1)-valent vertices (legs excluded)."""
    m: Dict[int, int] = {}
    for cyc, mk in zip(g.vertices, g.marks):
        if mk is not None:
            raise EvenValence("decorated vertex has no combinatorial type")
        if len(cyc) % 2 == 0:
            raise EvenValence(f"vertex of even valence {len(cyc)}")
        i = (len(cyc) - 1) // 2
        m[i] = m.get(i, 0) + 1
    top = max(m) if m else -1
    return tuple(m.get(i, 0) for i in range(top + 1))


def analyze(g: RibbonGraph) -> Analysis:
    holes = g.holes
    vof, hof = g.vertex_of(), g.hole_of()
    genera = []
    for comp in g.components():
        cs = set(comp)
        V = len({vof[h] for h in cs})
        E = sum(1 for h in cs if g.alpha[h] > h)
        F = len({hof[h] for h in cs})
        chi = V - E + F
        if chi % 2 or chi > 2:
            raise NonIntegerGenus(f"Euler characteristic {chi}")
        genera.append((2 - chi) // 2)
    try:
        mt, err = combinatorial_type(g), None
    except EvenValence as e:
        mt, err = None, str(e)
    return Analysis(holes, sum(genera), mt, err, len(genera), tuple(genera))


def norm_minus(m: Sequence[int]) -> int:
    """sum_{i>=1} (2i-1) m_i; s_0 does not count."""
    return sum((2 * i - 1) * k for i, k in enumerate(m) if i >= 1)


def norm_plus(m: Sequence[int]) -> int:
    return sum((2 * i + 1) * k for i, k in enumerate(m))


def type_sigma(m: Sequence[int]) -> Tuple[Tuple[int, ...], List[List[int]]]:
    """Vertex rotation for type m: vertices in increasing valence, consecutive labels."""
    cycles, h = [], 0
    for i, k in enumerate(m):
        for _ in range(k):
            cycles.append(list(range(h, h + 2 * i + 1)))
            h += 2 * i + 1
    sigma = list(range(h))
    for cyc in cycles:
        for j, x in enumerate(cyc):
            sigma[x] = cyc[(j + 1) % len(cyc)]
    return tuple(sigma), cycles


# ------------------------------------------------------------ canonical form

def _dart_colors(g: RibbonGraph, rigid_legs: bool) -> List[str]:
    vertices = g.vertices
    colors = [""] * g.H
    for cyc, mk in zip(vertices, g.marks):
        for pos, h in enumerate(cyc):
            if mk is None:
                c = "o"
            else:
                c = "x" + mk.key() + ("*" if mk.ciliation == pos else "")
            colors[h] = c
    leg_index = {h: k for k, h in enumerate(g.leg_order)}
    for h in range(g.H):
        if g.alpha[h] == h:
            colors[h] += "|L" + (str(leg_index.get(h, "")) if rigid_legs else "")
    labels = g.hole_label_map()
    if labels:
        hof = g.hole_of()
        for h in range(g.H):
            if hof[h] in labels:
                colors[h] += "|F" + str(labels[hof[h]])
    return colors


def _bfs_code(g: RibbonGraph, start: int, colors: Sequence[str]):
    lab = {start: 0}
    order = [start]
    i = 0
    sigma, alpha = g.sigma, g.alpha
    while i < len(order):
        d = order[i]
        for nb in (sigma[d], alpha[d]):
            if nb not in lab:
                lab[nb] = len(order)
                order.append(nb)
        i += 1
    code = tuple((lab[sigma[d]], lab[alpha[d]], colors[d]) for d in order)
    return code, order


def _component_canon(g: RibbonGraph, comp: Sequence[int], colors):
    vlen = {}
    for cyc in g.vertices:
        for h in cyc:
            vlen[h] = len(cyc)
    inv = {h: (colors[h], vlen[h]) for h in comp}
    best_inv = min(inv.values())
    starts = [h for h in comp if inv[h] == best_inv]
    best, best_order, count = None, None, 0
    for s in starts:
        code, order = _bfs_code(g, s, colors)
        if best is None or code < best:
            best, best_order, count = code, order, 1
        elif code == best:
            count += 1
    return best, best_order, count


@dataclass(frozen=True)
class CanonicalForm:
    code: tuple
    relabeling: Tuple[int, ...]  # old half-edge -> canonical label
    automorphism_order: int

    def key(self) -> str:
        return repr(self.code)


def canonical_form(g: RibbonGraph, rigid_legs: bool = True) -> CanonicalForm:
    """Canonical code, relabeling and |Aut| of g (orientation-preserving).

    Vertex marks, ciliations and hole labels refine the search.  With
    ``rigid_legs`` the legs are individually fixed by automorphisms.
    """
    colors = _dart_colors(g, rigid_legs)
    comps = []
    for comp in g.components():
        code, order, aut = _component_canon(g, comp, colors)
        comps.append((code, order, aut))
    comps.sort(key=lambda t: t[0])
    relabel = [0] * g.H
    off = 0
    aut = 1
    mult: Dict[tuple, int] = {}
    for code, order, a in comps:
        for k, h in enumerate(order):
            relabel[h] = off + k
        off += len(order)
        aut *= a
        mult[code] = mult.get(code, 0) + 1
    for k in mult.values():
        aut *= factorial(k)
    return CanonicalForm(tuple(c for c, _, _ in comps), tuple(relabel), aut)


def is_isomorphic(g1: RibbonGraph, g2: RibbonGraph, rigid_legs: bool = True) -> bool:
    return canonical_form(g1, rigid_legs).code == canonical_form(g2, rigid_legs).code


def brute_force_automorphisms(g: RibbonGraph, rigid_legs: bool = True) -> int:
    """Count label permutations fixing (sigma, alpha, colors). For small H only."""
    from itertools import permutations

    colors = _dart_colors(g, rigid_legs)
    n = 0
    for p in permutations(range(g.H)):
        if all(colors[p[h]] == colors[h] and p[g.sigma[h]] == g.sigma[p[h]] and p[g.alpha[h]] == g.alpha[p[h]]
               for h in range(g.H)):
            n += 1
    return n
