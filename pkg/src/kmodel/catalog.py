"""Named hole types used in documentation, tests and the CLI."""

from __future__ import annotations

from typing import Dict, List, Sequence, Tuple

from .enumeration import HoleType
from .ribbon_core import RibbonGraph, canonical_form


def make_hole_type(vertices: Sequence[Sequence[int]], edges: Sequence[Tuple[int, int]]) -> HoleType:
    """Label as z the unique leg-free face touching every edge."""
    g = RibbonGraph.from_cycles(vertices, edges)
    cands = [c for c in g.holes
             if all(g.alpha[h] != h for h in c) and all(a in c or b in c for a, b in g.edges)]
    if len(cands) != 1:
        raise ValueError(f"expected one candidate z face, found {len(cands)}")
    z = set(cands[0])
    g = g.with_(hole_labels={min(z): "z"})
    boundary = sum(1 for a, b in g.edges if a in z or b in z)
    return HoleType(g, boundary, canonical_form(g, rigid_legs=False).automorphism_order)


_SPECS: Dict[str, Tuple[List[List[int]], List[Tuple[int, int]]]] = {
    # triangle of trivalent vertices, one leg each
    "hole-a": ([[0, 1, 2], [3, 4, 5], [6, 7, 8]], [(1, 3), (4, 6), (7, 0)]),
    # triangle with a 5-valent corner carrying three legs
    "hole-b": ([[0, 1, 2, 3, 4], [5, 6, 7], [8, 9, 10]], [(1, 5), (6, 8), (9, 0)]),
    # two digons, each enclosing one leg, joined by a z-z edge
    "hole-d": ([[0, 1, 2], [5, 4, 3], [6, 7, 8], [11, 10, 9]],
               [(0, 4), (1, 3), (5, 6), (7, 10), (8, 9)]),
    # two triangles, each enclosing two legs, joined by a z-z edge
    "hole-e": ([[0, 1, 2], [3, 4, 5], [6, 7, 8], [9, 10, 11], [12, 13, 14], [15, 16, 17]],
               [(0, 3), (4, 6), (7, 1), (2, 9), (10, 12), (13, 15), (16, 11)]),
    # a digon enclosing one leg, joined to a loop around a closed face
    "hole-f": ([[0, 1, 2], [5, 4, 3], [6, 7, 8]], [(0, 4), (1, 3), (5, 6), (7, 8)]),
    # two univalent vertices joined by a z-z edge
    "dumbbell": ([[0], [1]], [(0, 1)]),
}

EXAMPLES = tuple(sorted(_SPECS))


def example(name: str) -> HoleType:
    if name not in _SPECS:
        raise KeyError(f"unknown example {name!r}; choose from {', '.join(EXAMPLES)}")
    return make_hole_type(*_SPECS[name])
