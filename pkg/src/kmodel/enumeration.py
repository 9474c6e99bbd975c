"""Exhaustive generation of closed ribbon graphs and z-hole types, up to isomorphism."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass
from itertools import permutations, product
from math import factorial
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

from .errors import BudgetExceeded
from .ribbon_core import RibbonGraph, canonical_form, cycles_of, type_sigma

CACHE_VERSION = 1
CACHE_ENV = "KMODEL_CACHE_DIR"
DEFAULT_HALF_EDGE_CAP = 16
# counts of cache hits and misses in this process, for diagnostics
CACHE_STATS = {"hits": 0, "misses": 0}


# ------------------------------------------------------------------ matchings

def perfect_matchings(points: Sequence[int]) -> Iterator[List[Tuple[int, int]]]:
    if not points:
        yield []
        return
    a = points[0]
    for k in range(1, len(points)):
        b = points[k]
        rest = points[1:k] + points[k + 1:]
        for m in perfect_matchings(rest):
            yield [(a, b)] + m


def involutions_from_matchings(H: int) -> Iterator[Tuple[int, ...]]:
    for m in perfect_matchings(list(range(H))):
        alpha = [0] * H
        for a, b in m:
            alpha[a], alpha[b] = b, a
        yield tuple(alpha)


def _connected(sigma, alpha) -> bool:
    H = len(sigma)
    if H == 0:
        return True
    seen = {0}
    stack = [0]
    while stack:
        d = stack.pop()
        for nb in (sigma[d], alpha[d]):
            if nb not in seen:
                seen.add(nb)
                stack.append(nb)
    return len(seen) == H


def count_cycles(perm) -> int:
    seen = [False] * len(perm)
    n = 0
    for s in range(len(perm)):
        if not seen[s]:
            n += 1
            h = s
            while not seen[h]:
                seen[h] = True
                h = perm[h]
    return n


def centralizer_order(m: Sequence[int]) -> int:
    """Number of relabelings preserving the vertex rotation of type m."""
    r = 1
    for i, k in enumerate(m):
        r *= (2 * i + 1) ** k * factorial(k)
    return r


def labelled_closed(m: Sequence[int], connected: bool = True, n_holes: Optional[int] = None):
    """Yield (sigma, alpha) for every involution alpha on the type-m half-edges.

    Summing f over these and dividing by ``centralizer_order(m)`` equals the
    sum of f/|Aut| over isomorphism classes.
    """
    sigma, _ = type_sigma(m)
    H = len(sigma)
    if H % 2:
        return
    for alpha in involutions_from_matchings(H):
        if connected and not _connected(sigma, alpha):
            continue
        if n_holes is not None:
            phi = [sigma[alpha[h]] for h in range(H)]
            if count_cycles(phi) != n_holes:
                continue
        yield sigma, alpha


# ------------------------------------------------------------------- caching

def _cache_path(cache_dir, kind: str, query: dict) -> Optional[Path]:
    d = cache_dir if cache_dir is not None else os.environ.get(CACHE_ENV)
    if not d:
        return None
    blob = json.dumps({"v": CACHE_VERSION, "kind": kind, "q": query}, sort_keys=True)
    digest = hashlib.sha256(blob.encode()).hexdigest()[:24]
    return Path(d) / f"{kind}-{digest}.json"


def _cached(cache_dir, kind: str, query: dict, compute):
    path = _cache_path(cache_dir, kind, query)
    if path is not None and path.exists():
        try:
            data = json.loads(path.read_text())
            if data.get("version") == CACHE_VERSION and data.get("query") == query:
                CACHE_STATS["hits"] += 1
                return data["items"], True
        except (OSError, ValueError):
            pass
    items = compute()
    CACHE_STATS["misses"] += 1
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps({"version": CACHE_VERSION, "query": query, "items": items}, sort_keys=True))
        tmp.replace(path)
    return items, False


# ------------------------------------------------------------- closed graphs

@dataclass(frozen=True)
class Enumerated:
    graph: RibbonGraph
    aut: int


def _check_budget(H: int, cap: int):
    if H > cap:
        raise BudgetExceeded(f"{H} half-edges exceeds the cap {cap}")


def _closed_classes(m, n_holes, connected=True) -> List[Tuple[str, RibbonGraph, int]]:
    seen: Dict[tuple, Tuple[RibbonGraph, int]] = {}
    for sigma, alpha in labelled_closed(m, connected, n_holes):
        g = RibbonGraph(sigma, alpha)
        cf = canonical_form(g)
        if cf.code not in seen:
            seen[cf.code] = (g, cf.automorphism_order)
    return [(repr(k),) + v for k, v in sorted(seen.items(), key=lambda kv: repr(kv[0]))]


def enumerate_closed(m: Sequence[int], n: Optional[int] = None, *, connected: bool = True,
                     half_edge_cap: int = DEFAULT_HALF_EDGE_CAP, cache_dir=None) -> List[Enumerated]:
    """One representative per isomorphism class of closed graphs of type m."""
    m = tuple(m)
    H = sum((2 * i + 1) * k for i, k in enumerate(m))
    _check_budget(H, half_edge_cap)

    def compute():
        return [{"graph": g.to_json(), "aut": a} for _, g, a in _closed_classes(m, n, connected)]

    items, _ = _cached(cache_dir, "closed", {"m": list(m), "n": n, "connected": connected}, compute)
    return [Enumerated(RibbonGraph.from_json(it["graph"]), it["aut"]) for it in items]


def numberings(g: RibbonGraph) -> Iterator[RibbonGraph]:
    holes = g.holes
    n = len(holes)
    for perm in permutations(range(1, n + 1)):
        yield g.with_(hole_labels={min(c): perm[k] for k, c in enumerate(holes)})


def enumerate_numbered(m: Sequence[int], n: int, *, half_edge_cap: int = DEFAULT_HALF_EDGE_CAP,
                       cache_dir=None) -> List[Enumerated]:
    """One representative per isomorphism class of numbered graphs (Gamma, h)."""
    m = tuple(m)

    def compute():
        out = []
        for base in enumerate_closed(m, n, half_edge_cap=half_edge_cap):
            seen: Dict[tuple, Tuple[RibbonGraph, int]] = {}
            for gh in numberings(base.graph):
                cf = canonical_form(gh)
                if cf.code not in seen:
                    seen[cf.code] = (gh, cf.automorphism_order)
            total = sum(base.aut // a for _, a in seen.values())
            if total != factorial(n):
                raise AssertionError("orbit-stabilizer consistency failed")
            for code in sorted(seen, key=repr):
                gh, a = seen[code]
                out.append({"graph": gh.to_json(), "aut": a})
        return out

    items, _ = _cached(cache_dir, "numbered", {"m": list(m), "n": n}, compute)
    return [Enumerated(RibbonGraph.from_json(it["graph"]), it["aut"]) for it in items]


# ---------------------------------------------------------------- hole types

@dataclass(frozen=True)
class HoleType:
    graph: RibbonGraph  # z-face labelled "z"; legs are alpha fixed points
    boundary_length: int
    aut: int

    @property
    def z_face(self) -> List[int]:
        g = self.graph
        lab = dict(g.hole_labels)
        for cyc in g.holes:
            if lab.get(min(cyc)) == "z":
                return cyc
        raise ValueError("no z face")

    def vertex_valences(self) -> List[int]:
        return sorted(len(c) for c in self.graph.vertices)

    def combinatorial_type(self) -> Tuple[int, ...]:
        vals = [len(c) for c in self.graph.vertices]
        top = max((v - 1) // 2 for v in vals)
        return tuple(sum(1 for v in vals if v == 2 * i + 1) for i in range(top + 1))


def _partial_matchings(points: List[int]) -> Iterator[Tuple[List[Tuple[int, int]], List[int]]]:
    """All (pairs, singles) decompositions of points."""
    if not points:
        yield [], []
        return
    a, rest = points[0], points[1:]
    for pairs, singles in _partial_matchings(rest):
        yield pairs, [a] + singles
    for k in range(len(rest)):
        b = rest[k]
        for pairs, singles in _partial_matchings(rest[:k] + rest[k + 1:]):
            yield [(a, b)] + pairs, singles


def _compositions(total: int, parts: int) -> Iterator[Tuple[int, ...]]:
    if parts == 0:
        if total == 0:
            yield ()
        return
    if parts == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


def _hole_type_candidates(h_max: int, v_max: int) -> Iterator[Tuple[RibbonGraph, int]]:
    """Graphs built from a z-boundary word; duplicates are removed by the caller.

    The z-face is z_0 .. z_{L-1} with phi(z_i) = z_{i+1}.  Sides z_i are
    either glued to each other (z-z edges) or to a fresh half-edge y_i.
    sigma(alpha(z_i)) = z_{i+1} is forced; after each z_i with a fresh partner
    a run of legs follows and then some y_j, chosen by a bijection.
    """
    for L in range(1, 2 * h_max + 1):
        for pairs, singles in _partial_matchings(list(range(L))):
            n_edges = len(pairs) + len(singles)
            if n_edges > h_max:
                continue
            partner = {}
            for a, b in pairs:
                partner[a], partner[b] = b, a
            for pi in permutations(singles):
                # half-edges: z_i -> i, y_i -> L + index in singles
                y_of = {i: L + k for k, i in enumerate(singles)}
                base_H = L + len(singles)
                sigma_core = [None] * base_H
                for i in range(L):
                    nxt = (i + 1) % L
                    if i in partner:
                        sigma_core[partner[i]] = nxt
                    else:
                        sigma_core[y_of[i]] = nxt
                for i, j in zip(singles, pi):
                    sigma_core[i] = y_of[j]
                core_cycles = cycles_of(sigma_core)
                # corners that accept legs: after z_i for i in singles
                slot_vertex = {}
                for vk, cyc in enumerate(core_cycles):
                    for h in cyc:
                        if h < L and h not in partner:
                            slot_vertex[h] = vk
                per_vertex_slots = [[h for h in cyc if h in slot_vertex] for cyc in core_cycles]
                leg_choices = []
                ok = True
                for cyc, slots in zip(core_cycles, per_vertex_slots):
                    d = len(cyc)
                    opts = []
                    for val in range(d, v_max + 1):
                        if val % 2 == 0:
                            continue
                        if val > d and not slots:
                            continue
                        opts.append(val - d)
                    if not opts:
                        ok = False
                        break
                    leg_choices.append(opts)
                if not ok:
                    continue
                for leg_totals in product(*leg_choices):
                    per_vertex_comps = [list(_compositions(t, len(s))) for t, s in zip(leg_totals, per_vertex_slots)]
                    for comps in product(*per_vertex_comps):
                        counts = {}
                        for slots, comp in zip(per_vertex_slots, comps):
                            for h, c in zip(slots, comp):
                                counts[h] = c
                        yield _assemble(L, partner, singles, y_of, pi, sigma_core, counts), n_edges


def _assemble(L, partner, singles, y_of, pi, sigma_core, counts) -> RibbonGraph:
    H = len(sigma_core) + sum(counts.values())
    sigma = list(sigma_core) + [0] * (H - len(sigma_core))
    alpha = list(range(H))
    for i in range(L):
        if i in partner:
            alpha[i] = partner[i]
        else:
            alpha[i], alpha[y_of[i]] = y_of[i], i
    nxt = len(sigma_core)
    for i, j in zip(singles, pi):
        target = y_of[j]
        prev = i
        for _ in range(counts.get(i, 0)):
            sigma[prev] = nxt
            prev = nxt
            nxt += 1
        sigma[prev] = target
    g = RibbonGraph(tuple(sigma), tuple(alpha))
    return g.with_(hole_labels={0: "z"})


def _hole_type_key(ht_graph: RibbonGraph):
    return canonical_form(ht_graph, rigid_legs=False)


def enumerate_hole_types(h_max: int, v_max: int, *, cache_dir=None) -> List[HoleType]:
    """All z-hole types with at most h_max boundary edges and valences <= v_max (odd)."""
    if h_max < 1 or v_max < 1:
        raise ValueError("h_max and v_max must be >= 1")

    def compute():
        seen: Dict[tuple, Tuple[RibbonGraph, int, int]] = {}
        for g, n_edges in _hole_type_candidates(h_max, v_max):
            cf = _hole_type_key(g)
            if cf.code not in seen:
                canon = g.relabel(cf.relabeling)
                seen[cf.code] = (canon, n_edges, cf.automorphism_order)
        rows = sorted(seen.values(), key=lambda t: (t[1], t[0].H, repr(canonical_form(t[0], False).code)))
        return [{"graph": g.to_json(), "boundary": b, "aut": a} for g, b, a in rows]

    items, _ = _cached(cache_dir, "holetypes", {"h_max": h_max, "v_max": v_max}, compute)
    return [HoleType(RibbonGraph.from_json(it["graph"]), it["boundary"], it["aut"]) for it in items]


def is_minimal_hole_type(g: RibbonGraph) -> bool:
    """Every internal edge has at least one side on the z-face, which has no legs."""
    lab = dict(g.hole_labels)
    zf = [c for c in g.holes if lab.get(min(c)) == "z"]
    if len(zf) != 1:
        return False
    z = set(zf[0])
    if any(g.alpha[h] == h for h in z):
        return False
    return all(a in z or b in z for a, b in g.edges)
