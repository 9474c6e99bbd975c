"""Exact arithmetic over the Gaussian rationals.

Variables are plain strings from a fixed alphabet of families::

    s<j>   vertex couplings            t<j>   times
    p<k>   trace symbols tr L^k        L<i>   eigenvalues (also used for lambda_i)
    th<i>  hole slots around a vertex  z      extra eigenvalue

``pm<k>`` stands for tr L^(-k), used by the Miwa substitution.
"""

from __future__ import annotations

import re
from collections import Counter
from fractions import Fraction
from functools import lru_cache
from itertools import product as _iproduct
from typing import Callable, Dict, Iterable, Iterator, Mapping, Sequence, Tuple, Union

from .errors import BadConstantTerm, ShapeMismatch

Rat = Union[int, Fraction]


class GaussianRational:
    """An element a + b*i of Q(i)."""

    __slots__ = ("re", "im")

    def __init__(self, re: Rat = 0, im: Rat = 0):
        self.re = Fraction(re)
        self.im = Fraction(im)

    @staticmethod
    def coerce(x) -> "GaussianRational":
        if isinstance(x, GaussianRational):
            return x
        if isinstance(x, (int, Fraction)):
            return GaussianRational(x)
        if isinstance(x, complex):
            return GaussianRational(Fraction(x.real), Fraction(x.imag))
        raise TypeError(f"cannot coerce {x!r}")

    def __add__(self, other):
        o = _g(other)
        if o is None:
            return NotImplemented
        return GaussianRational(self.re + o.re, self.im + o.im)

    __radd__ = __add__

    def __sub__(self, other):
        o = _g(other)
        if o is None:
            return NotImplemented
        return GaussianRational(self.re - o.re, self.im - o.im)

    def __rsub__(self, other):
        return _g(other) - self

    def __mul__(self, other):
        o = _g(other)
        if o is None:
            return NotImplemented
        if not self.im and not o.im:
            return GaussianRational(self.re * o.re)
        return GaussianRational(self.re * o.re - self.im * o.im,
                                self.re * o.im + self.im * o.re)

    __rmul__ = __mul__

    def __neg__(self):
        return GaussianRational(-self.re, -self.im)

    def conjugate(self):
        return GaussianRational(self.re, -self.im)

    def norm(self) -> Fraction:
        return self.re * self.re + self.im * self.im

    def inverse(self):
        n = self.norm()
        if not n:
            raise ZeroDivisionError("Gaussian rational division by zero")
        return GaussianRational(self.re / n, -self.im / n)

    def __truediv__(self, other):
        o = _g(other)
        if o is None:
            return NotImplemented
        if not o.im:
            if not o.re:
                raise ZeroDivisionError("Gaussian rational division by zero")
            return GaussianRational(self.re / o.re, self.im / o.re)
        return self * o.inverse()

    def __rtruediv__(self, other):
        return _g(other) / self

    def __pow__(self, e: int):
        if e < 0:
            return self.inverse() ** (-e)
        r, b = ONE, self
        while e:
            if e & 1:
                r = r * b
            b = b * b
            e >>= 1
        return r

    def __eq__(self, other):
        o = _g(other)
        if o is None:
            return NotImplemented
        return self.re == o.re and self.im == o.im

    def __hash__(self):
        if not self.im:
            return hash(self.re)
        return hash((self.re, self.im))

    def __bool__(self):
        return bool(self.re) or bool(self.im)

    def __repr__(self):
        return f"G({render_coefficient(self)})"

    def is_real(self) -> bool:
        return not self.im


def _g(x):
    if isinstance(x, GaussianRational):
        return x
    if isinstance(x, (int, Fraction)):
        return GaussianRational(x)
    return None


G = GaussianRational
ZERO = GaussianRational(0)
ONE = GaussianRational(1)
I = GaussianRational(0, 1)


def _frac_str(q: Fraction) -> str:
    return str(q.numerator) if q.denominator == 1 else f"{q.numerator}/{q.denominator}"


def render_coefficient(c: GaussianRational) -> str:
    """Plain rendering: ``3/2``, ``-i``, ``2/3*i``, ``(1+2*i)``."""
    if not c.im:
        return _frac_str(c.re)
    if not c.re:
        if c.im == 1:
            return "i"
        if c.im == -1:
            return "-i"
        return f"{_frac_str(c.im)}*i"
    sign = "+" if c.im > 0 else "-"
    mag = abs(c.im)
    im = "i" if mag == 1 else f"{_frac_str(mag)}*i"
    return f"({_frac_str(c.re)}{sign}{im})"


# ---------------------------------------------------------------- variables

_FAMILY_ORDER = {"s": 0, "t": 1, "p": 2, "pm": 3, "L": 4, "th": 5, "z": 6}
_VAR_RE = re.compile(r"^(s|t|pm|p|L|th|z)(\d*)$")


@lru_cache(maxsize=None)
def var_key(name: str) -> Tuple[int, int, str]:
    m = _VAR_RE.match(name)
    if not m:
        return (9, 0, name)
    fam, idx = m.group(1), m.group(2)
    return (_FAMILY_ORDER[fam], int(idx) if idx else 0, name)


@lru_cache(maxsize=None)
def var_family(name: str) -> str:
    m = _VAR_RE.match(name)
    return m.group(1) if m else name


def var_index(name: str) -> int:
    return var_key(name)[1]


Monomial = Tuple[Tuple[str, int], ...]


def mono_mul(a: Monomial, b: Monomial) -> Monomial:
    if not a:
        return b
    if not b:
        return a
    d = dict(a)
    for v, e in b:
        e2 = d.get(v, 0) + e
        if e2:
            d[v] = e2
        else:
            d.pop(v, None)
    return tuple(sorted(d.items(), key=lambda ve: var_key(ve[0])))


def mono_from(d: Mapping[str, int]) -> Monomial:
    return tuple(sorted(((v, e) for v, e in d.items() if e), key=lambda ve: var_key(ve[0])))


def mono_degree(m: Monomial, family: str | None = None) -> int:
    if family is None:
        return sum(e for _, e in m)
    return sum(e for v, e in m if var_family(v) == family)


def mono_sort_key(m: Monomial):
    return (sum(e for _, e in m), tuple((var_key(v), e) for v, e in m))


def render_monomial(m: Monomial) -> str:
    parts = []
    for v, e in m:
        parts.append(v if e == 1 else f"{v}^{e}")
    return "*".join(parts)


# -------------------------------------------------------------- polynomials

class GPolynomial:
    """Sparse multivariate (Laurent) polynomial with Gaussian-rational coefficients.

    Negative exponents are allowed so that Laurent polynomials in 1/L
    share the same container.
    """

    __slots__ = ("terms", "_hash")

    def __init__(self, terms: Mapping[Monomial, GaussianRational] | None = None, *, _clean=False):
        if terms is None:
            self.terms: Dict[Monomial, GaussianRational] = {}
        elif _clean:
            self.terms = dict(terms)
        else:
            self.terms = {m: G.coerce(c) for m, c in terms.items() if c}
        self._hash = None

    # constructors
    @staticmethod
    def const(c) -> "GPolynomial":
        c = G.coerce(c)
        return GPolynomial({(): c}, _clean=True) if c else GPolynomial()

    @staticmethod
    def var(name: str, exp: int = 1) -> "GPolynomial":
        return GPolynomial({((name, exp),): ONE}, _clean=True)

    @staticmethod
    def monomial(m: Mapping[str, int] | Monomial, c=1) -> "GPolynomial":
        mono = mono_from(dict(m)) if not isinstance(m, tuple) else m
        c = G.coerce(c)
        return GPolynomial({mono: c}, _clean=True) if c else GPolynomial()

    # arithmetic
    def __add__(self, other):
        o = _p(other)
        if o is None:
            return NotImplemented
        t = dict(self.terms)
        for m, c in o.terms.items():
            v = t.get(m)
            v = c if v is None else v + c
            if v:
                t[m] = v
            else:
                t.pop(m, None)
        return GPolynomial(t, _clean=True)

    __radd__ = __add__

    def __neg__(self):
        return GPolynomial({m: -c for m, c in self.terms.items()}, _clean=True)

    def __sub__(self, other):
        o = _p(other)
        if o is None:
            return NotImplemented
        return self + (-o)

    def __rsub__(self, other):
        return _p(other) - self

    def __mul__(self, other):
        if isinstance(other, (int, Fraction, GaussianRational)):
            c = G.coerce(other)
            if not c:
                return GPolynomial()
            return GPolynomial({m: v * c for m, v in self.terms.items()}, _clean=True)
        o = _p(other)
        if o is None:
            return NotImplemented
        t: Dict[Monomial, GaussianRational] = {}
        for m1, c1 in self.terms.items():
            for m2, c2 in o.terms.items():
                m = mono_mul(m1, m2)
                v = t.get(m)
                v = c1 * c2 if v is None else v + c1 * c2
                t[m] = v
        return GPolynomial({m: c for m, c in t.items() if c}, _clean=True)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, (int, Fraction, GaussianRational)):
            return self * (ONE / G.coerce(other))
        return NotImplemented

    def __pow__(self, e: int):
        if e < 0:
            if len(self.terms) == 1:
                (m, c), = self.terms.items()
                return GPolynomial({tuple((v, -k) for v, k in m): ONE / c}, _clean=True) ** (-e)
            raise ValueError("negative power of a non-monomial")
        r, b = ONE_POLY, self
        while e:
            if e & 1:
                r = r * b
            b = b * b
            e >>= 1
        return r

    def __eq__(self, other):
        o = _p(other)
        if o is None:
            return NotImplemented
        return self.terms == o.terms

    def __hash__(self):
        if self._hash is None:
            self._hash = hash(frozenset(self.terms.items()))
        return self._hash

    def __bool__(self):
        return bool(self.terms)

    def __repr__(self):
        return f"GPolynomial({self.render()})"

    # queries
    def is_zero(self) -> bool:
        return not self.terms

    def constant_term(self) -> GaussianRational:
        return self.terms.get((), ZERO)

    def is_constant(self) -> bool:
        return all(not m for m in self.terms)

    def variables(self) -> set:
        return {v for m in self.terms for v, _ in m}

    def degree(self, family: str | None = None) -> int:
        if not self.terms:
            return -1
        return max(mono_degree(m, family) for m in self.terms)

    def degree_in(self, var: str) -> int:
        if not self.terms:
            return -1
        return max((dict(m).get(var, 0) for m in self.terms), default=0)

    def is_homogeneous(self, family: str | None = None) -> bool:
        return len({mono_degree(m, family) for m in self.terms}) <= 1

    def coefficient(self, mono: Mapping[str, int] | Monomial) -> GaussianRational:
        key = mono_from(dict(mono)) if not isinstance(mono, tuple) else mono
        return self.terms.get(key, ZERO)

    def collect(self, families: Iterable[str]) -> Dict[Monomial, "GPolynomial"]:
        """Split into {monomial in the given families: coefficient polynomial}."""
        fams = set(families)
        out: Dict[Monomial, Dict[Monomial, GaussianRational]] = {}
        for m, c in self.terms.items():
            a = tuple((v, e) for v, e in m if var_family(v) in fams)
            b = tuple((v, e) for v, e in m if var_family(v) not in fams)
            out.setdefault(a, {})[b] = c
        return {a: GPolynomial(t, _clean=True) for a, t in out.items()}

    def map_coefficients(self, f: Callable[[GaussianRational], GaussianRational]):
        return GPolynomial({m: f(c) for m, c in self.terms.items()})

    def rename(self, mapping: Mapping[str, str]) -> "GPolynomial":
        out = GPolynomial()
        t: Dict[Monomial, GaussianRational] = {}
        for m, c in self.terms.items():
            d: Dict[str, int] = {}
            for v, e in m:
                w = mapping.get(v, v)
                d[w] = d.get(w, 0) + e
            key = mono_from(d)
            t[key] = t.get(key, ZERO) + c
        out.terms = {m: c for m, c in t.items() if c}
        return out

    def subs(self, mapping: Mapping[str, "GPolynomial | GaussianRational | int | Fraction"]) -> "GPolynomial":
        """Substitute polynomials (or numbers) for variables."""
        result = GPolynomial()
        cache: Dict[Tuple[str, int], GPolynomial] = {}
        for m, c in self.terms.items():
            rest = []
            acc = GPolynomial.const(c)
            for v, e in m:
                if v in mapping:
                    key = (v, e)
                    if key not in cache:
                        cache[key] = _p(mapping[v]) ** e
                    acc = acc * cache[key]
                else:
                    rest.append((v, e))
            if rest:
                acc = acc * GPolynomial.monomial(tuple(rest))
            result = result + acc
        return result

    def evaluate(self, values: Mapping[str, object]) -> GaussianRational:
        total = ZERO
        for m, c in self.terms.items():
            x = c
            for v, e in m:
                x = x * (G.coerce(values[v]) ** e)
            total = total + x
        return total

    def derivative(self, var: str) -> "GPolynomial":
        t: Dict[Monomial, GaussianRational] = {}
        for m, c in self.terms.items():
            d = dict(m)
            e = d.get(var, 0)
            if not e:
                continue
            d[var] = e - 1
            key = mono_from(d)
            t[key] = t.get(key, ZERO) + c * e
        return GPolynomial({m: c for m, c in t.items() if c}, _clean=True)

    def truncate(self, keep: Callable[[Monomial], bool]) -> "GPolynomial":
        return GPolynomial({m: c for m, c in self.terms.items() if keep(m)}, _clean=True)

    def sorted_terms(self):
        return sorted(self.terms.items(), key=lambda mc: mono_sort_key(mc[0]))

    def render(self) -> str:
        return render_terms([(render_monomial(m), c) for m, c in self.sorted_terms()])


ONE_POLY = GPolynomial({(): ONE}, _clean=True)
ZERO_POLY = GPolynomial()


def _p(x):
    if isinstance(x, GPolynomial):
        return x
    if isinstance(x, (int, Fraction, GaussianRational)):
        return GPolynomial.const(x)
    return None


def render_terms(items: Sequence[Tuple[str, GaussianRational]]) -> str:
    """Join ``(body, coefficient)`` pairs into ``a*x + b*y - ...``."""
    if not items:
        return "0"
    out = []
    for k, (body, c) in enumerate(items):
        neg = False
        if not c.im and c.re < 0:
            neg, c = True, -c
        elif not c.re and c.im < 0:
            neg, c = True, -c
        cs = render_coefficient(c)
        if body:
            txt = body if cs == "1" else f"{cs}*{body}"
        else:
            txt = cs
        if k == 0:
            out.append(("-" if neg else "") + txt)
        else:
            out.append((" - " if neg else " + ") + txt)
    return "".join(out)


_TERM_RE = re.compile(r"\s*([+-])?\s*([^+-]+|\([^)]*\)[^+-]*)")


def parse_polynomial(text: str) -> GPolynomial:
    """Parse the canonical rendering produced by ``render`` (and simple variants)."""
    text = text.strip()
    if text in ("", "0"):
        return GPolynomial()
    result = GPolynomial()
    tokens = _split_signed(text)
    for sign, body in tokens:
        term = ONE_POLY
        for factor in _split_factors(body):
            term = term * _parse_factor(factor)
        result = result + (term if sign > 0 else -term)
    return result


def _split_signed(text: str):
    out, depth, cur, sign = [], 0, "", 1
    i = 0
    while i < len(text):
        ch = text[i]
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        if depth == 0 and ch in "+-" and cur.strip() and not cur.rstrip().endswith(("^", "*", "/")):
            out.append((sign, cur.strip()))
            sign, cur = (1 if ch == "+" else -1), ""
        elif depth == 0 and ch in "+-" and not cur.strip():
            sign = sign * (1 if ch == "+" else -1)
        else:
            cur += ch
        i += 1
    if cur.strip():
        out.append((sign, cur.strip()))
    return out


def _split_factors(body: str):
    out, depth, cur = [], 0, ""
    for ch in body:
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        if ch == "*" and depth == 0:
            out.append(cur)
            cur = ""
        else:
            cur += ch
    out.append(cur)
    return [f.strip() for f in out if f.strip()]


def _parse_factor(f: str) -> GPolynomial:
    if f.startswith("("):
        return parse_polynomial(f[1:-1])
    if f == "i":
        return GPolynomial.const(I)
    if re.fullmatch(r"-?\d+(/\d+)?", f):
        return GPolynomial.const(Fraction(f))
    if "^" in f:
        v, e = f.split("^")
        return GPolynomial.var(v, int(e))
    return GPolynomial.var(f)


# --------------------------------------------------------- rational functions

Factor = Tuple[str, ...]  # ("x",) for x, ("x", "y") for x + y


def factor_key(*names: str) -> Factor:
    if len(names) == 2 and names[0] == names[1]:
        return (names[0],)
    return tuple(sorted(names, key=var_key))


def factor_poly(f: Factor) -> GPolynomial:
    if len(f) == 1:
        return GPolynomial.var(f[0])
    return GPolynomial.var(f[0]) + GPolynomial.var(f[1])


class GRationalFunction:
    """numerator / product of linear factors (x or x+y), kept factored."""

    __slots__ = ("num", "den")

    def __init__(self, num: GPolynomial, den: Mapping[Factor, int] | None = None):
        self.num = num
        self.den: Counter = Counter({f: k for f, k in (den or {}).items() if k})

    @staticmethod
    def from_poly(p: GPolynomial) -> "GRationalFunction":
        return GRationalFunction(p)

    @staticmethod
    def propagator(a: str, b: str) -> "GRationalFunction":
        """2/(a+b); for a == b this is 1/a."""
        if a == b:
            return GRationalFunction(ONE_POLY, {(a,): 1})
        return GRationalFunction(GPolynomial.const(2), {factor_key(a, b): 1})

    def denominator_poly(self) -> GPolynomial:
        d = ONE_POLY
        for f, k in self.den.items():
            d = d * factor_poly(f) ** k
        return d

    def __add__(self, other: "GRationalFunction"):
        if isinstance(other, GPolynomial):
            other = GRationalFunction(other)
        lcm = self.den | other.den
        a = self.num * _den_quotient(lcm, self.den)
        b = other.num * _den_quotient(lcm, other.den)
        return GRationalFunction(a + b, lcm)

    def __neg__(self):
        return GRationalFunction(-self.num, self.den)

    def __sub__(self, other):
        return self + (-other)

    def __mul__(self, other):
        if isinstance(other, (int, Fraction, GaussianRational, GPolynomial)):
            return GRationalFunction(self.num * other, self.den)
        return GRationalFunction(self.num * other.num, self.den + other.den)

    __rmul__ = __mul__

    def __eq__(self, other):
        if isinstance(other, GPolynomial):
            other = GRationalFunction(other)
        if not isinstance(other, GRationalFunction):
            return NotImplemented
        return self.num * other.denominator_poly() == other.num * self.denominator_poly()

    __hash__ = None

    def is_zero(self) -> bool:
        return self.num.is_zero()

    def evaluate(self, values: Mapping[str, object]) -> GaussianRational:
        d = ONE
        for f, k in self.den.items():
            d = d * factor_poly(f).evaluate(values) ** k
        return self.num.evaluate(values) / d

    def cancel(self) -> "GRationalFunction":
        """Divide out binomial factors that divide the numerator exactly."""
        num, den = self.num, Counter(self.den)
        for f in sorted(den, key=lambda f: tuple(var_key(v) for v in f)):
            if len(f) != 2:
                continue
            while den[f] and not num.is_zero():
                q = divide_by_sum(num, f[0], f[1])
                if q is None:
                    break
                num, den[f] = q, den[f] - 1
        return GRationalFunction(num, +den)

    def to_laurent(self) -> GPolynomial:
        """Exact Laurent polynomial when the denominator cancels to a monomial."""
        r = self.cancel()
        if any(len(f) == 2 for f, k in r.den.items() if k):
            raise ShapeMismatch("denominator does not reduce to a monomial")
        mono = {f[0]: -k for f, k in r.den.items() if k}
        return r.num * GPolynomial.monomial(mono)

    def render(self) -> str:
        if not self.den:
            return self.num.render()
        fs = []
        for f in sorted(self.den, key=lambda f: tuple(var_key(v) for v in f)):
            k = self.den[f]
            base = f[0] if len(f) == 1 else f"({f[0]}+{f[1]})"
            fs.append(base if k == 1 else f"{base}^{k}")
        return f"({self.num.render()})/({'*'.join(fs)})"

    def __repr__(self):
        return f"GRationalFunction({self.render()})"


def _den_quotient(big: Counter, small: Counter) -> GPolynomial:
    d = ONE_POLY
    for f, k in big.items():
        e = k - small.get(f, 0)
        if e:
            d = d * factor_poly(f) ** e
    return d


def divide_by_sum(p: GPolynomial, x: str, y: str) -> GPolynomial | None:
    """Exact quotient p / (x + y), or None if the division leaves a remainder."""
    # Horner division in x with coefficients polynomials in the other variables.
    by_x: Dict[int, Dict[Monomial, GaussianRational]] = {}
    for m, c in p.terms.items():
        d = dict(m)
        e = d.pop(x, 0)
        by_x.setdefault(e, {})[mono_from(d)] = c
    if not by_x:
        return GPolynomial()
    lo, hi = min(by_x), max(by_x)
    coeff = {e: GPolynomial(t, _clean=True) for e, t in by_x.items()}
    yp = GPolynomial.var(y)
    q: Dict[int, GPolynomial] = {}
    carry = GPolynomial()
    for e in range(hi, lo - 1, -1):
        cur = coeff.get(e, ZERO_POLY) - yp * carry if e < hi else coeff.get(e, ZERO_POLY)
        if e == lo:
            if not cur.is_zero():
                return None
            break
        q[e - 1] = cur
        carry = cur
    out = GPolynomial()
    for e, c in q.items():
        out = out + c * GPolynomial.var(x, e) if e else out + c
    return out


def expand_at_infinity(r: GRationalFunction, order: Sequence[str], caps: Mapping[str, int]) -> GPolynomial:
    """Nested expansion at infinity (order[0] >> order[1] >> ...).

    Returns the Laurent polynomial of all terms whose exponent in each capped
    variable is >= -cap.  Each returned coefficient is exact.
    """
    rank = {v: k for k, v in enumerate(order)}
    groups: Dict[str, list] = {v: [] for v in order}
    for f, k in r.den.items():
        outer = min(f, key=lambda v: rank[v])
        groups[outer].append((f, k))

    def keep_for(v):
        cap = caps.get(v)
        if cap is None:
            return lambda m: True
        return lambda m: dict(m).get(v, 0) >= -cap

    acc = r.num
    for v in order:
        keep = keep_for(v)
        acc = acc.truncate(keep)
        for f, k in groups[v]:
            for _ in range(k):
                acc = _times_inverse_factor(acc, f, v, keep)
    return acc


def _times_inverse_factor(acc: GPolynomial, f: Factor, outer: str, keep) -> GPolynomial:
    if len(f) == 1:
        return (acc * GPolynomial.var(outer, -1)).truncate(keep)
    inner = f[1] if f[0] == outer else f[0]
    out = GPolynomial()
    j = 0
    term = acc * GPolynomial.var(outer, -1)
    ratio = GPolynomial.monomial({inner: 1, outer: -1}, -1)
    while True:
        term = term.truncate(keep)
        if term.is_zero():
            break
        out = out + term
        term = term * ratio
        j += 1
    return out


# ----------------------------------------------------------- Laurent series in 1/z

class ZLaurentSeries:
    """Truncated series sum_{k=0}^{K} c_k z^{-k} with polynomial coefficients."""

    __slots__ = ("K", "coeffs")

    def __init__(self, K: int, coeffs: Mapping[int, GPolynomial] | None = None):
        self.K = K
        self.coeffs: Dict[int, GPolynomial] = {
            k: c for k, c in (coeffs or {}).items() if 0 <= k <= K and not c.is_zero()}

    def __getitem__(self, k: int) -> GPolynomial:
        return self.coeffs.get(k, ZERO_POLY)

    def __mul__(self, other):
        if isinstance(other, (int, Fraction, GaussianRational, GPolynomial)):
            return ZLaurentSeries(self.K, {k: c * other for k, c in self.coeffs.items()})
        K = min(self.K, other.K)
        out: Dict[int, GPolynomial] = {}
        for a, ca in self.coeffs.items():
            for b, cb in other.coeffs.items():
                if a + b <= K:
                    out[a + b] = out.get(a + b, ZERO_POLY) + ca * cb
        return ZLaurentSeries(K, out)

    __rmul__ = __mul__

    def __add__(self, other):
        K = min(self.K, other.K)
        out = dict((k, c) for k, c in self.coeffs.items() if k <= K)
        for k, c in other.coeffs.items():
            if k <= K:
                out[k] = out.get(k, ZERO_POLY) + c
        return ZLaurentSeries(K, out)

    def __eq__(self, other):
        return isinstance(other, ZLaurentSeries) and self.K == other.K and self.coeffs == other.coeffs

    def as_list(self, start: int = 1):
        return [self[k] for k in range(start, self.K + 1)]

    def __repr__(self):
        return "ZLaurentSeries(" + ", ".join(f"z^-{k}: {c.render()}" for k, c in sorted(self.coeffs.items())) + ")"


def laurent_of_factor(factor, K: int) -> ZLaurentSeries:
    """Expansion of ``"1/z"``, ``("prop", x)`` meaning 2/(z+x), or a constant."""
    if factor == "1/z":
        return ZLaurentSeries(K, {1: ONE_POLY})
    if isinstance(factor, tuple) and factor[0] == "prop":
        x = GPolynomial.var(factor[1]) if isinstance(factor[1], str) else factor[1]
        out, pw = {}, ONE_POLY
        for j in range(K):
            out[j + 1] = pw * (2 if j % 2 == 0 else -2)
            pw = pw * x
        return ZLaurentSeries(K, out)
    return ZLaurentSeries(K, {0: _p(factor)})


# -------------------------------------------------------- truncated series

class TruncatedSeries:
    """Formal series in s_*, t_* kept up to degree caps.

    ``caps`` maps a family (``"s"``, ``"t"``) to the largest total degree kept
    in that family; ``index_caps`` optionally bounds variable indices.
    """

    __slots__ = ("poly", "caps", "index_caps")

    def __init__(self, poly: GPolynomial, caps: Mapping[str, int], index_caps: Mapping[str, int] | None = None):
        self.caps = dict(caps)
        self.index_caps = dict(index_caps or {})
        self.poly = poly.truncate(self._keep)

    def _keep(self, m: Monomial) -> bool:
        for fam, cap in self.caps.items():
            if mono_degree(m, fam) > cap:
                return False
        for v, _ in m:
            cap = self.index_caps.get(var_family(v))
            if cap is not None and var_index(v) > cap:
                return False
        return True

    def _like(self, p: GPolynomial) -> "TruncatedSeries":
        return TruncatedSeries(p, self.caps, self.index_caps)

    def __add__(self, other):
        return self._like(self.poly + _as_poly(other))

    def __sub__(self, other):
        return self._like(self.poly - _as_poly(other))

    def __mul__(self, other):
        o = _as_poly(other)
        t: Dict[Monomial, GaussianRational] = {}
        for m1, c1 in self.poly.terms.items():
            for m2, c2 in o.terms.items():
                m = mono_mul(m1, m2)
                if self._keep(m):
                    t[m] = t.get(m, ZERO) + c1 * c2
        return self._like(GPolynomial({m: c for m, c in t.items() if c}, _clean=True))

    __rmul__ = __mul__

    def __eq__(self, other):
        return self.poly == _as_poly(other)

    __hash__ = None

    def constant_term(self):
        return self.poly.constant_term()

    def derivative(self, var: str) -> "TruncatedSeries":
        return self._like(self.poly.derivative(var))

    def __repr__(self):
        return f"TruncatedSeries({self.poly.render()})"


def _as_poly(x):
    return x.poly if isinstance(x, TruncatedSeries) else _p(x)


def _max_total_degree(f: TruncatedSeries) -> int:
    return sum(f.caps.values()) if f.caps else 0


def series_exp(f: TruncatedSeries) -> TruncatedSeries:
    if f.constant_term():
        raise BadConstantTerm("exp requires zero constant term")
    result = f._like(ONE_POLY)
    term = f._like(ONE_POLY)
    k = 1
    while True:
        term = term * f * Fraction(1, k)
        if term.poly.is_zero():
            break
        result = result + term
        k += 1
    return result


def series_log(z: TruncatedSeries) -> TruncatedSeries:
    if z.constant_term() != ONE:
        raise BadConstantTerm("log requires constant term 1")
    g = z - ONE_POLY
    result = z._like(ZERO_POLY)
    power = z._like(ONE_POLY)
    k = 1
    while True:
        power = power * g
        if power.poly.is_zero():
            break
        result = result + power * Fraction((-1) ** (k + 1), k)
        k += 1
    return result


def double_factorial(n: int) -> int:
    """n!! with (-1)!! = 1."""
    r = 1
    while n > 1:
        r *= n
        n -= 2
    return r


def gaussian_solve(rows: Sequence[Dict[int, GaussianRational]], rhs: Sequence[GaussianRational], ncols: int):
    """Solve a sparse linear system exactly; free variables set to zero.

    Returns a dict col -> value, or None if inconsistent.
    """
    mat = [dict(r) for r in rows]
    b = list(rhs)
    pivots: list = []
    r = 0
    for col in range(ncols):
        piv = next((i for i in range(r, len(mat)) if mat[i].get(col)), None)
        if piv is None:
            continue
        mat[r], mat[piv] = mat[piv], mat[r]
        b[r], b[piv] = b[piv], b[r]
        inv = ONE / mat[r][col]
        mat[r] = {c: v * inv for c, v in mat[r].items()}
        b[r] = b[r] * inv
        for i in range(len(mat)):
            if i != r and mat[i].get(col):
                f = mat[i][col]
                row = mat[i]
                for c, v in mat[r].items():
                    nv = row.get(c, ZERO) - f * v
                    if nv:
                        row[c] = nv
                    else:
                        row.pop(c, None)
                b[i] = b[i] - f * b[r]
        pivots.append(col)
        r += 1
        if r == len(mat):
            break
    for i in range(r, len(mat)):
        if b[i]:
            return None
    return {col: b[i] for i, col in enumerate(pivots) if b[i]}
