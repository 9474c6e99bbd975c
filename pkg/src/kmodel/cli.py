"""Command-line front end: kmodel <subcommand> [flags]."""

from __future__ import annotations

import argparse
import json
import os
import sys
import warnings
from collections import Counter
from fractions import Fraction
from typing import List, Optional, Sequence

from . import catalog
from .enumeration import CACHE_ENV, CACHE_STATS, enumerate_closed, enumerate_hole_types, enumerate_numbered
from .errors import KModelError
from .feynman import amplitude_closed, amplitude_z, kmi_check, z_equals_partition
from .reduction import (SContext, deco_from_polynomial, derivative_expansion, derive_D_k,
                        insertion_expansion, parse_eval_at, reduce_cluster, render_cluster)
from .ribbon_core import RibbonGraph, analyze
from .symbolic import parse_polynomial, render_coefficient


class UsageError(Exception):
    pass


def _ints(text: str) -> List[int]:
    try:
        out = [int(x) for x in text.strip("()[] ").split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"expected comma-separated integers, got {text!r}")
    if any(x < 0 for x in out):
        raise UsageError("entries must be non-negative")
    return out


def _positive(name: str, v: Optional[int]):
    if v is not None and v < 1:
        raise UsageError(f"--{name} must be positive")


def _frac(q: Fraction) -> str:
    return str(q.numerator) if q.denominator == 1 else f"{q.numerator}/{q.denominator}"


def _emit(out, fmt: str, obj, text: str):
    if fmt == "json":
        out.write(json.dumps(obj, sort_keys=True) + "\n")
    else:
        out.write(text.rstrip("\n") + "\n")


def _load_json(path: str):
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as e:
        raise UsageError(f"cannot read {path}: {e.strerror}")
    except ValueError as e:
        raise UsageError(f"{path} is not valid JSON: {e}")


# ---------------------------------------------------------------- commands

def cmd_enumerate(a, out) -> int:
    if a.hole_types:
        _positive("hmax", a.hmax)
        _positive("vmax", a.vmax)
        for ht in enumerate_hole_types(a.hmax, a.vmax, cache_dir=a.cache_dir):
            row = {"graph": ht.graph.to_json(), "boundary": ht.boundary_length, "aut": ht.aut,
                   "valences": ht.vertex_valences()}
            out.write(json.dumps(row, sort_keys=True) + "\n")
        return 0
    if a.type is None:
        raise UsageError("enumerate needs --type or --hole-types")
    m = _ints(a.type)
    if a.numbered:
        if a.holes is None:
            raise UsageError("--numbered needs --holes")
        items = enumerate_numbered(m, a.holes, cache_dir=a.cache_dir)
    else:
        items = enumerate_closed(m, a.holes, cache_dir=a.cache_dir)
    for it in items:
        an = analyze(it.graph)
        row = {"graph": it.graph.to_json(), "aut": it.aut, "holes": len(an.holes), "genus": an.genus}
        out.write(json.dumps(row, sort_keys=True) + "\n")
    return 0


def cmd_amplitude(a, out) -> int:
    if (a.graph is None) == (a.example is None):
        raise UsageError("amplitude needs exactly one of --graph, --example")
    if a.example is not None:
        try:
            target = catalog.example(a.example)
        except KeyError as e:
            raise UsageError(str(e.args[0]))
        g = target.graph
    else:
        g = RibbonGraph.from_json(_load_json(a.graph))
        target = g
    if "z" in {lab for _, lab in g.hole_labels}:
        if a.order is None:
            raise UsageError("a graph with a z hole needs --order")
        _positive("order", a.order)
        amp = amplitude_z(target, a.order)
        aut = getattr(target, "aut", 1)
        coeffs = [{"k": k, "coefficient": amp.series[k].render()} for k in range(1, a.order + 1)]
        obj = {"kind": "hole-type", "aut": aut, "legs_per_vertex": [len(v) for v in amp.vertices],
               "coefficients": coeffs}
        text = "\n".join(f"z^-{c['k']}: {c['coefficient']}" for c in coeffs)
        _emit(out, a.format or "json", obj, text)
        return 0
    if a.N is None:
        raise UsageError("a closed graph needs --N")
    _positive("N", a.N)
    amp = amplitude_closed(g, a.N)
    obj = {"kind": "closed", "N": a.N, "prefactor": amp.prefactor.render(),
           "coloring_sum": amp.coloring_sum.render(), "sign_lemma_prefactor": amp.lemma_prefactor.render()}
    text = f"({obj['prefactor']}) * ({obj['coloring_sum']})"
    _emit(out, a.format or "json", obj, text)
    return 0


def _intersections(res):
    table = {}
    for nu, val in res.extracted.items():
        key = tuple(sorted(nu))
        if key in table and table[key] != val:
            raise KModelError(f"extraction not symmetric at {key}")
        table[key] = val
    return sorted(table.items())


def _tau(nu) -> str:
    c = Counter(nu)
    return "⟨" + " ".join(f"τ{j}" if c[j] == 1 else f"τ{j}^{c[j]}" for j in sorted(c)) + "⟩"


def cmd_kmi(a, out) -> int:
    m = _ints(a.type)
    _positive("holes", a.holes)
    res = kmi_check(m, a.holes, method=a.method, cache_dir=a.cache_dir)
    rows = _intersections(res)
    obj = {"m": list(res.m), "n": res.n, "rhs": res.rhs_graph_sum.render(), "laurent": res.laurent.render(),
           "intersections": [{"nu": list(nu), "value": _frac(v)} for nu, v in rows]}
    text = f"rhs = {obj['rhs']}\nlaurent = {obj['laurent']}\n" + "\n".join(
        f"{_tau(nu)} = {_frac(v)}" for nu, v in rows)
    _emit(out, a.format or "json", obj, text)
    return 0


def cmd_intersect(a, out) -> int:
    m = _ints(a.type)
    _positive("holes", a.holes)
    res = kmi_check(m, a.holes, method=a.method, cache_dir=a.cache_dir)
    rows = [(nu, v) for nu, v in _intersections(res) if v]
    obj = {"m": list(res.m), "n": res.n,
           "intersections": [{"nu": list(nu), "value": _frac(v)} for nu, v in rows]}
    text = "\n".join(f"{_tau(nu)} = {_frac(v)}" for nu, v in rows) or "(no nonzero intersection numbers)"
    _emit(out, a.format or "text", obj, text)
    return 0


def cmd_zcheck(a, out) -> int:
    for name in ("N", "smax", "order"):
        _positive(name, getattr(a, name))
    rep = z_equals_partition(a.N, a.smax, a.order)

    def table(d):
        return {",".join(map(str, k)) or "1": render_coefficient(v) for k, v in sorted(d.items()) if v}

    obj = {"N": a.N, "lambda": [render_coefficient(x) for x in rep.lam], "ok": rep.ok,
           "by_kmi": table(rep.by_kmi), "by_graphs": table(rep.by_graphs), "by_gaussian": table(rep.by_gaussian),
           "mismatches": [list(k) for k in rep.mismatches]}
    text = f"N={a.N} ok={rep.ok}\n" + "\n".join(f"s^({k}): {v}" for k, v in obj["by_kmi"].items())
    _emit(out, a.format or "json", obj, text)
    return 0 if rep.ok else 1


def cmd_derive(a, out) -> int:
    if a.k < 0:
        raise UsageError("--k must be >= 0")
    _positive("vmax", a.vmax)
    if a.smax is not None and a.smax < 0:
        raise UsageError("--smax must be >= 0")
    try:
        ev = parse_eval_at(a.eval_at) if a.eval_at else None
    except ValueError as e:
        raise UsageError(f"--eval-at: {e}")
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        d = derive_D_k(a.k, a.vmax, a.smax, ev, cache_dir=a.cache_dir, jobs=a.jobs)
    for w in caught:
        a.err.write(f"warning: {w.message}\n")
    obj = {"k": d.k, "v_max": d.v_max, "s_index_max": d.J, "hole_types": d.hole_types,
           "operator": d.operator.render(), "terms": d.operator.to_json(),
           "expansion": [{"cluster": render_cluster(c), "coefficient": p.render()} for c, p in derivative_expansion(d)],
           "insertions": [{"traces": t, "coefficient": p.render()} for t, p in insertion_expansion(d)],
           "diagnostics": d.diagnostics}
    _emit(out, a.format or "text", obj, d.operator.render())
    return 0


def cmd_reduce(a, out) -> int:
    data = _load_json(a.cluster)
    try:
        raw = []
        for v in data["vertices"]:
            n = int(v["valence"])
            raw.append((n, deco_from_polynomial(parse_polynomial(str(v.get("polynomial", "1"))), n)))
        coef = parse_polynomial(str(data.get("coefficient", "1")))
        J = int(data.get("s_index_max", a.smax if a.smax is not None else 4))
        ev = data.get("eval_at")
        ev = parse_eval_at(ev) if isinstance(ev, str) else None
    except (KeyError, TypeError, ValueError) as e:
        raise UsageError(f"bad cluster file: {e}")
    res = reduce_cluster(raw, SContext(J, ev), coef)
    obj = {"terms": [{"cluster": render_cluster(c), "coefficient": p.render()} for c, p in res.items()]}
    _emit(out, a.format or "text", obj, res.render())
    return 0


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--format", choices=("json", "text"), default=None)
    common.add_argument("--cache-dir", default=None, help=f"enumeration cache (default: ${CACHE_ENV})")
    common.add_argument("--jobs", type=int, default=1, help="worker processes")

    p = argparse.ArgumentParser(prog="kmodel", description="Ribbon graphs, Kontsevich model amplitudes "
                                "and the operators D_k.")
    sub = p.add_subparsers(dest="command", required=True)

    e = sub.add_parser("enumerate", parents=[common], help="closed graphs or hole types, JSON lines")
    e.add_argument("--type", help="combinatorial type m, e.g. 0,2")
    e.add_argument("--holes", type=int)
    e.add_argument("--numbered", action="store_true")
    e.add_argument("--hole-types", action="store_true")
    e.add_argument("--hmax", type=int, default=3)
    e.add_argument("--vmax", type=int, default=5)
    e.set_defaults(func=cmd_enumerate)

    am = sub.add_parser("amplitude", parents=[common], help="amplitude of a graph or named hole type")
    am.add_argument("--graph")
    am.add_argument("--example", help=", ".join(catalog.EXAMPLES))
    am.add_argument("--N", type=int)
    am.add_argument("--order", type=int)
    am.set_defaults(func=cmd_amplitude)

    for name, func, hlp in (("kmi", cmd_kmi, "graph sum and its Laurent expansion"),
                            ("intersect", cmd_intersect, "intersection number table")):
        k = sub.add_parser(name, parents=[common], help=hlp)
        k.add_argument("--type", required=True)
        k.add_argument("--holes", type=int, required=True)
        k.add_argument("--method", choices=("classes", "labelled"), default="classes")
        k.set_defaults(func=func)

    z = sub.add_parser("zcheck", parents=[common], help="Z from intersection numbers vs graph sums")
    z.add_argument("--N", type=int, required=True)
    z.add_argument("--smax", type=int, required=True)
    z.add_argument("--order", type=int, required=True)
    z.set_defaults(func=cmd_zcheck)

    d = sub.add_parser("derive", parents=[common], help="derive the operator D_k")
    d.add_argument("--k", type=int, required=True)
    d.add_argument("--vmax", type=int)
    d.add_argument("--smax", type=int)
    d.add_argument("--eval-at", help="point s°, e.g. 0,0,s2")
    d.set_defaults(func=cmd_derive)

    r = sub.add_parser("reduce", parents=[common], help="reduce a decorated cluster")
    r.add_argument("--cluster", required=True)
    r.add_argument("--smax", type=int)
    r.set_defaults(func=cmd_reduce)
    return p


def run(argv: Optional[Sequence[str]] = None, out=None, err=None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    parser = build_parser()
    try:
        a = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code in (0, None) else 2
    if a.jobs < 1:
        err.write("kmodel: error: --jobs must be positive\n")
        return 2
    if a.cache_dir is None:
        a.cache_dir = os.environ.get(CACHE_ENV) or None
    a.err = err
    hits = CACHE_STATS["hits"]
    try:
        code = a.func(a, out)
    except UsageError as e:
        err.write(f"kmodel: error: {e}\n")
        return 2
    except KModelError as e:
        err.write(f"kmodel: {type(e).__name__}: {e}\n")
        return 1
    if a.cache_dir and CACHE_STATS["hits"] > hits:
        err.write("kmodel: served from cache\n")
    return code


def main() -> None:
    sys.exit(run())
