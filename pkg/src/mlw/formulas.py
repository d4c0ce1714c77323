"""Formula syntax: terms, [0,1]-valued formulas, parsing, printing,
derived moduli, substitution, and prenex normal form.

Connectives are the piecewise-linear family max, min, neg (u -> 1-u),
monus (u,v -> u ∸ v), cut_m (u -> u ∸ 1/m), and clamp-affine
(u -> clamp01(a*u + b)).
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from fractions import Fraction

from .moduli import Modulus
from .values import ONE, ZERO, as_value, parse_rational, show_rational


# --------------------------------------------------------------------------
# Terms

@dataclass(frozen=True)
class Var:
    name: str
    sort: str | None = None


@dataclass(frozen=True)
class Const:
    name: str
    sort: str | None = None


@dataclass(frozen=True)
class App:
    fn: str
    args: tuple


Term = Var | Const | App


# --------------------------------------------------------------------------
# Formulas

@dataclass(frozen=True)
class Rat:
    value: Fraction

    def __post_init__(self):
        as_value(self.value)


@dataclass(frozen=True)
class Dist:
    left: Term
    right: Term


@dataclass(frozen=True)
class Pred:
    name: str
    args: tuple


@dataclass(frozen=True)
class Conn:
    op: str  # max | min | neg | monus | cut | affine
    args: tuple
    params: tuple = ()


@dataclass(frozen=True)
class Quant:
    kind: str  # sup | inf
    var: str
    sort: str | None
    body: "Formula"


Formula = Rat | Dist | Pred | Conn | Quant


# --------------------------------------------------------------------------
# Builders

def fmax(*args) -> Formula:
    return args[0] if len(args) == 1 else Conn("max", tuple(args))


def fmin(*args) -> Formula:
    return args[0] if len(args) == 1 else Conn("min", tuple(args))


def neg(u) -> Formula:
    return Conn("neg", (u,))


def fmonus(u, v) -> Formula:
    return Conn("monus", (u, v))


def cut(m: int, u) -> Formula:
    if m < 1:
        raise ValueError("cut index must be >= 1")
    return Conn("cut", (u,), (m,))


def affine(a, b, u) -> Formula:
    return Conn("affine", (u,), (Fraction(a), Fraction(b)))


def ftsum(u, v) -> Formula:
    """Truncated sum min(1, u+v) = 1 - ((1-u) ∸ v)."""
    return neg(fmonus(neg(u), v))


def absdiff(u, v) -> Formula:
    """|u - v| = max(u ∸ v, v ∸ u)."""
    return fmax(fmonus(u, v), fmonus(v, u))


def sup(var, body, sort=None) -> Formula:
    name, s = (var.name, var.sort) if isinstance(var, Var) else (var, sort)
    return Quant("sup", name, s if sort is None else sort, body)


def inf(var, body, sort=None) -> Formula:
    name, s = (var.name, var.sort) if isinstance(var, Var) else (var, sort)
    return Quant("inf", name, s if sort is None else sort, body)


# --------------------------------------------------------------------------
# Structural helpers

def term_vars(t: Term) -> set[str]:
    if isinstance(t, Var):
        return {t.name}
    if isinstance(t, App):
        out: set[str] = set()
        for a in t.args:
            out |= term_vars(a)
        return out
    return set()


def free_vars(f: Formula) -> set[str]:
    if isinstance(f, Rat):
        return set()
    if isinstance(f, Dist):
        return term_vars(f.left) | term_vars(f.right)
    if isinstance(f, Pred):
        out: set[str] = set()
        for a in f.args:
            out |= term_vars(a)
        return out
    if isinstance(f, Conn):
        out = set()
        for a in f.args:
            out |= free_vars(a)
        return out
    if isinstance(f, Quant):
        return free_vars(f.body) - {f.var}
    raise TypeError(f)


def var_sorts(f: Formula, default: str | None = None) -> dict[str, str | None]:
    """Sort annotation of every free variable (first annotation wins)."""
    out: dict[str, str | None] = {}

    def visit_term(t, bound):
        if isinstance(t, Var) and t.name not in bound:
            if t.name not in out or out[t.name] is None:
                out[t.name] = t.sort if t.sort is not None else default
        elif isinstance(t, App):
            for a in t.args:
                visit_term(a, bound)

    def visit(g, bound):
        if isinstance(g, Dist):
            visit_term(g.left, bound)
            visit_term(g.right, bound)
        elif isinstance(g, Pred):
            for a in g.args:
                visit_term(a, bound)
        elif isinstance(g, Conn):
            for a in g.args:
                visit(a, bound)
        elif isinstance(g, Quant):
            visit(g.body, bound | {g.var})

    visit(f, set())
    return out


def subst_term(t: Term, name: str, repl: Term) -> Term:
    if isinstance(t, Var):
        return repl if t.name == name else t
    if isinstance(t, App):
        return App(t.fn, tuple(subst_term(a, name, repl) for a in t.args))
    return t


def subst(f: Formula, name: str, repl: Term) -> Formula:
    """Capture-avoiding substitution of a term for a free variable."""
    if isinstance(f, (Rat,)):
        return f
    if isinstance(f, Dist):
        return Dist(subst_term(f.left, name, repl), subst_term(f.right, name, repl))
    if isinstance(f, Pred):
        return Pred(f.name, tuple(subst_term(a, name, repl) for a in f.args))
    if isinstance(f, Conn):
        return Conn(f.op, tuple(subst(a, name, repl) for a in f.args), f.params)
    if isinstance(f, Quant):
        if f.var == name:
            return f
        if f.var in term_vars(repl):
            fresh = _fresh(f.var, free_vars(f.body) | term_vars(repl) | {name})
            body = subst(f.body, f.var, Var(fresh, f.sort))
            return Quant(f.kind, fresh, f.sort, subst(body, name, repl))
        return Quant(f.kind, f.var, f.sort, subst(f.body, name, repl))
    raise TypeError(f)


def rename_var(f: Formula, old: str, new: str) -> Formula:
    sorts = var_sorts(f)
    return subst(f, old, Var(new, sorts.get(old)))


def _fresh(base: str, taken: set[str]) -> str:
    i = 0
    while f"{base}_{i}" in taken:
        i += 1
    return f"{base}_{i}"


# --------------------------------------------------------------------------
# Pretty-printing (round-trips through parse_formula)

def show_term(t: Term) -> str:
    if isinstance(t, Var):
        return t.name if t.sort is None else f"{t.name}:{t.sort}"
    if isinstance(t, Const):
        return t.name
    return f"{t.fn}({', '.join(show_term(a) for a in t.args)})"


def show(f: Formula) -> str:
    if isinstance(f, Rat):
        return show_rational(f.value)
    if isinstance(f, Dist):
        return f"d({show_term(f.left)}, {show_term(f.right)})"
    if isinstance(f, Pred):
        return f"{f.name}({', '.join(show_term(a) for a in f.args)})"
    if isinstance(f, Conn):
        inner = ", ".join(show(a) for a in f.args)
        if f.op == "cut":
            return f"cut{f.params[0]}({inner})"
        if f.op == "affine":
            a, b = f.params
            return f"affine({show_rational(a)}, {show_rational(b)}, {inner})"
        return f"{f.op}({inner})"
    if isinstance(f, Quant):
        v = f.var if f.sort is None else f"{f.var}:{f.sort}"
        return f"{f.kind} {v} . {show(f.body)}"
    raise TypeError(f)


# --------------------------------------------------------------------------
# Parser

class SyntaxErrorAt(ValueError):
    def __init__(self, msg, pos, text):
        line = text.count("\n", 0, pos) + 1
        col = pos - (text.rfind("\n", 0, pos) + 1) + 1
        super().__init__(f"{msg} at line {line}, column {col}")
        self.pos = pos


_TOKEN = re.compile(
    r"\s*(?:(?P<num>\d+(?:/\d+)?)|(?P<id>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<node><[0-9, ]*>)|(?P<punct>[(),.:\-]))"
)

_VAR = re.compile(r"^x\d+$")
_CUT = re.compile(r"^cut(\d+)$")


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0
        self.toks: list[tuple[str, str, int]] = []
        pos = 0
        while pos < len(text):
            m = _TOKEN.match(text, pos)
            if not m or m.end() == pos:
                if text[pos:].strip():
                    raise SyntaxErrorAt("unexpected character", pos, text)
                break
            for kind in ("num", "id", "node", "punct"):
                if m.group(kind) is not None:
                    self.toks.append((kind, m.group(kind), m.start(kind)))
                    break
            pos = m.end()
        self.i = 0

    def peek(self):
        return self.toks[self.i] if self.i < len(self.toks) else ("eof", "", len(self.text))

    def next(self):
        tok = self.peek()
        self.i += 1
        return tok

    def expect(self, value):
        kind, val, pos = self.next()
        if val != value:
            raise SyntaxErrorAt(f"expected {value!r}, found {val!r}", pos, self.text)

    def formula(self) -> Formula:
        kind, val, pos = self.peek()
        if kind == "num":
            self.next()
            return Rat(parse_rational(val))
        if kind != "id":
            raise SyntaxErrorAt(f"expected formula, found {val!r}", pos, self.text)
        if val in ("sup", "inf"):
            self.next()
            vkind, vname, vpos = self.next()
            if vkind != "id" or not _VAR.match(vname):
                raise SyntaxErrorAt("expected variable after quantifier", vpos, self.text)
            sort = None
            if self.peek()[1] == ":":
                self.next()
                sort = self.next()[1]
            self.expect(".")
            return Quant(val, vname, sort, self.formula())
        if val in ("max", "min"):
            self.next()
            args = self.arglist(self.formula)
            if len(args) < 2:
                raise SyntaxErrorAt(f"{val} needs >= 2 arguments", pos, self.text)
            return Conn(val, tuple(args))
        if val == "neg":
            self.next()
            (arg,) = self.arglist(self.formula, exactly=1)
            return Conn("neg", (arg,))
        if val == "monus":
            self.next()
            args = self.arglist(self.formula, exactly=2)
            return Conn("monus", tuple(args))
        if val == "tsum":
            self.next()
            args = self.arglist(self.formula, exactly=2)
            return ftsum(args[0], args[1])
        if val == "absdiff":
            self.next()
            args = self.arglist(self.formula, exactly=2)
            return absdiff(args[0], args[1])
        m = _CUT.match(val)
        if m:
            self.next()
            (arg,) = self.arglist(self.formula, exactly=1)
            return cut(int(m.group(1)), arg)
        if val == "affine":
            self.next()
            self.expect("(")
            a = self.signed_rational()
            self.expect(",")
            b = self.signed_rational()
            self.expect(",")
            body = self.formula()
            self.expect(")")
            return Conn("affine", (body,), (a, b))
        if val == "d":
            self.next()
            args = self.arglist(self.term, exactly=2)
            return Dist(args[0], args[1])
        # predicate atom
        self.next()
        args = self.arglist(self.term)
        return Pred(val, tuple(args))

    def signed_rational(self) -> Fraction:
        if self.peek()[1] == "-":
            self.next()
            return -parse_rational(self.next()[1])
        return parse_rational(self.next()[1])

    def term(self) -> Term:
        kind, val, pos = self.next()
        if kind == "node":
            return Const(val.replace(" ", ""))
        if kind != "id":
            raise SyntaxErrorAt(f"expected term, found {val!r}", pos, self.text)
        if _VAR.match(val):
            sort = None
            if self.peek()[1] == ":":
                self.next()
                sort = self.next()[1]
            return Var(val, sort)
        if self.peek()[1] == "(":
            return App(val, tuple(self.arglist(self.term)))
        return Const(val)

    def arglist(self, sub, exactly=None):
        self.expect("(")
        args = [sub()]
        while self.peek()[1] == ",":
            self.next()
            args.append(sub())
        self.expect(")")
        if exactly is not None and len(args) != exactly:
            raise SyntaxErrorAt(f"expected {exactly} arguments", self.peek()[2], self.text)
        return args


def parse_formula(text: str) -> Formula:
    p = _Parser(text)
    f = p.formula()
    kind, val, pos = p.peek()
    if kind != "eof":
        raise SyntaxErrorAt(f"trailing input {val!r}", pos, text)
    return f


def parse_term(text: str) -> Term:
    p = _Parser(text)
    t = p.term()
    kind, val, pos = p.peek()
    if kind != "eof":
        raise SyntaxErrorAt(f"trailing input {val!r}", pos, text)
    return t


# --------------------------------------------------------------------------
# Moduli

class SymbolModuli:
    """Declared per-argument moduli for function and predicate symbols."""

    def __init__(self, functions=None, predicates=None):
        self.functions = dict(functions or {})
        self.predicates = dict(predicates or {})

    def fn(self, name: str) -> Modulus:
        if name not in self.functions:
            raise KeyError(f"function symbol {name!r} has no declared modulus")
        return self.functions[name]

    def pred(self, name: str) -> Modulus:
        if name not in self.predicates:
            raise KeyError(f"predicate symbol {name!r} has no declared modulus")
        return self.predicates[name]


def _term_modulus(t: Term, v: str, sym: SymbolModuli) -> Modulus | None:
    """Value-change modulus of a [0,1]-bounded path... for terms we track the
    metric displacement of the term when variable v moves; None if v absent."""
    if isinstance(t, Var):
        return Modulus.lipschitz(1) if t.name == v else None
    if isinstance(t, Const):
        return None
    mods = [m for m in (_term_modulus(a, v, sym) for a in t.args) if m is not None]
    if not mods:
        return None
    inner = mods[0]
    for m in mods[1:]:
        inner = inner.plus(m)
    return sym.fn(t.fn).compose(inner)


def _modulus_for_var(f: Formula, v: str, sym: SymbolModuli) -> Modulus:
    if isinstance(f, Rat):
        return Modulus.constant()
    if isinstance(f, Dist):
        out = Modulus.constant()
        for t in (f.left, f.right):
            m = _term_modulus(t, v, sym)
            if m is not None:
                out = out.plus(m)
        return out
    if isinstance(f, Pred):
        out = Modulus.constant()
        pm = sym.pred(f.name)
        for t in f.args:
            m = _term_modulus(t, v, sym)
            if m is not None:
                out = out.plus(pm.compose(m))
        return out
    if isinstance(f, Conn):
        mods = [_modulus_for_var(a, v, sym) for a in f.args]
        if f.op in ("max", "min", "neg", "cut"):
            out = mods[0]
            for m in mods[1:]:
                out = out.maxwith(m)
            return out
        if f.op == "monus":
            return mods[0].plus(mods[1])
        if f.op == "affine":
            return mods[0].scale(f.params[0])
        raise ValueError(f.op)
    if isinstance(f, Quant):
        # quantifiers preserve the matrix modulus
        return _modulus_for_var(f.body, v, sym) if f.var != v else Modulus.constant()
    raise TypeError(f)


def formula_modulus(f: Formula, sym: SymbolModuli | None = None) -> Modulus:
    """Modulus valid for perturbing any single free-variable assignment."""
    sym = sym or SymbolModuli()
    out = Modulus.constant()
    for v in sorted(free_vars(f)):
        out = out.maxwith(_modulus_for_var(f, v, sym))
    return out


# --------------------------------------------------------------------------
# Prenex normal form

_PRENEX_MONOTONE = {"max", "min", "cut"}


class PrenexUnsupported(ValueError):
    pass


def prenex(f: Formula) -> Formula:
    """Pull all quantifiers to the front.  Exact for the lattice fragment:
    max/min, neg, monus with quantifier-free second argument, cut, and
    clamp-affine with nonnegative slope.  Requires nonempty sorts."""
    used = set(free_vars(f))
    counter = [_max_var_index(_all_vars(f) | used) + 1]

    def claim(v: str) -> str:
        """Register a prefix variable, renaming on clash (grammar-conforming)."""
        if v not in used:
            used.add(v)
            return v
        nv = f"x{counter[0]}"
        counter[0] += 1
        used.add(nv)
        return nv

    def go(g: Formula) -> tuple[list[tuple[str, str, str | None]], Formula]:
        if isinstance(g, (Rat, Dist, Pred)):
            return [], g
        if isinstance(g, Quant):
            v = claim(g.var)
            body = g.body if v == g.var else rename_var(g.body, g.var, v)
            prefix, body = go(body)
            return [(g.kind, v, g.sort)] + prefix, body
        if isinstance(g, Conn):
            if g.op == "neg":
                prefix, body = go(g.args[0])
                flipped = [("inf" if k == "sup" else "sup", v, s) for k, v, s in prefix]
                return flipped, Conn("neg", (body,))
            if g.op == "affine":
                a = g.params[0]
                prefix, body = go(g.args[0])
                if a < 0 and prefix:
                    prefix = [("inf" if k == "sup" else "sup", v, s) for k, v, s in prefix]
                return prefix, Conn("affine", (body,), g.params)
            if g.op == "monus":
                pre2, body2 = go(g.args[1])
                if pre2:
                    raise PrenexUnsupported(
                        f"monus second argument is quantified: {show(g)}")
                prefix, body = go(g.args[0])
                return prefix, Conn("monus", (body, body2))
            if g.op in _PRENEX_MONOTONE:
                prefix = []
                bodies = []
                for a in g.args:
                    p, b = go(a)
                    prefix.extend(p)
                    bodies.append(b)
                return prefix, Conn(g.op, tuple(bodies), g.params)
            raise PrenexUnsupported(f"connective {g.op} not in the lattice fragment")
        raise TypeError(g)

    prefix, body = go(f)
    out = body
    for kind, var, sort in reversed(prefix):
        out = Quant(kind, var, sort, out)
    return out


def _max_var_index(names) -> int:
    out = -1
    for v in names:
        if v.startswith("x") and v[1:].isdigit():
            out = max(out, int(v[1:]))
    return out


def _all_vars(f: Formula) -> set[str]:
    if isinstance(f, Quant):
        return {f.var} | _all_vars(f.body)
    if isinstance(f, Conn):
        out: set[str] = set()
        for a in f.args:
            out |= _all_vars(a)
        return out
    return free_vars(f)


def is_prenex(f: Formula) -> bool:
    while isinstance(f, Quant):
        f = f.body
    return not _has_quant(f)


def _has_quant(f: Formula) -> bool:
    if isinstance(f, Quant):
        return True
    if isinstance(f, Conn):
        return any(_has_quant(a) for a in f.args)
    return False
