"""Finite metric structures with exact rational tables.

Metric and predicate tables are stored as integer numpy arrays together
with a common denominator per table, so validation and evaluation are
vectorized yet exact.  A structure may carry truncation metadata: the
depth/branching bounds of the cut and, per sort, a density radius toward
the intended infinite model (or None when the finite part is not dense,
as in branching directions)."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import product

import numpy as np

from .formulas import (App, Conn, Const, Dist, Formula, Pred, Quant, Rat,
                       SymbolModuli, Var, free_vars, is_prenex, show)
from .moduli import Modulus
from .values import ONE, ZERO, parse_rational, show_rational

_MAX_DEN = 2**40  # guard against int64 overflow in scaled arithmetic


@dataclass(frozen=True)
class SortData:
    points: tuple[str, ...]
    den: int
    dmat: np.ndarray  # shape (n, n), int64, entries = den * d(i, j)
    index: dict[str, int] = field(compare=False)

    @property
    def size(self) -> int:
        return len(self.points)

    def dist(self, i: int, j: int) -> Fraction:
        return Fraction(int(self.dmat[i, j]), self.den)


@dataclass(frozen=True)
class FnTable:
    arg_sorts: tuple[str, ...]
    out_sort: str
    table: np.ndarray  # int point indices, shape = arg sort sizes; () if 0-ary


@dataclass(frozen=True)
class PredTable:
    arg_sorts: tuple[str, ...]
    den: int
    table: np.ndarray  # int64, entries = den * value

    def value(self, *idx) -> Fraction:
        return Fraction(int(self.table[idx]), self.den)


@dataclass(frozen=True)
class FiniteStructure:
    sorts: dict[str, SortData]
    functions: dict[str, FnTable] = field(default_factory=dict)
    predicates: dict[str, PredTable] = field(default_factory=dict)
    moduli: dict[str, Modulus] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    # -- construction ------------------------------------------------------

    @staticmethod
    def build(points, metric, functions=None, predicates=None,
              moduli=None, meta=None) -> "FiniteStructure":
        """Build from name-level data.

        points: {sort: [names]};  metric: {sort: callable(a, b) -> Fraction
        or (den, int ndarray)};  functions: {name: (arg_sorts, out_sort,
        callable(*names) -> name)};  predicates: {name: (arg_sorts,
        callable(*names) -> Fraction or (den, int ndarray))}."""
        sorts: dict[str, SortData] = {}
        for s, names in points.items():
            names = tuple(names)
            idx = {a: i for i, a in enumerate(names)}
            if len(idx) != len(names):
                raise ValueError(f"duplicate point names in sort {s}")
            spec = metric[s]
            if isinstance(spec, tuple):
                den, dmat = spec
                dmat = np.asarray(dmat, dtype=np.int64)
            else:
                n = len(names)
                vals = [[spec(a, b) for b in names] for a in names]
                den = 1
                for row in vals:
                    for q in row:
                        den = den * q.denominator // math.gcd(den, q.denominator)
                dmat = np.array(
                    [[int(q * den) for q in row] for row in vals], dtype=np.int64)
            if den >= _MAX_DEN:
                raise ValueError(f"metric denominator too large for sort {s}")
            sorts[s] = SortData(names, den, dmat, idx)

        fns: dict[str, FnTable] = {}
        for name, (arg_sorts, out_sort, fn) in (functions or {}).items():
            arg_sorts = tuple(arg_sorts)
            shape = tuple(sorts[s].size for s in arg_sorts)
            out = sorts[out_sort]
            table = np.empty(shape, dtype=np.int64)
            for combo in product(*(range(k) for k in shape)):
                names_in = tuple(sorts[s].points[i] for s, i in zip(arg_sorts, combo))
                table[combo] = out.index[fn(*names_in)]
            fns[name] = FnTable(arg_sorts, out_sort, table)

        preds: dict[str, PredTable] = {}
        for name, (arg_sorts, fn) in (predicates or {}).items():
            arg_sorts = tuple(arg_sorts)
            shape = tuple(sorts[s].size for s in arg_sorts)
            if isinstance(fn, tuple):
                den, table = fn
                table = np.asarray(table, dtype=np.int64)
                if table.shape != shape:
                    raise ValueError(f"predicate {name} table shape mismatch")
                if table.min() < 0 or table.max() > den:
                    raise ValueError(
                        f"predicate {name} value outside [0,1]")
                preds[name] = PredTable(arg_sorts, den, table)
                continue
            vals = np.empty(shape, dtype=object)
            den = 1
            for combo in product(*(range(k) for k in shape)):
                names_in = tuple(sorts[s].points[i] for s, i in zip(arg_sorts, combo))
                q = Fraction(fn(*names_in))
                if not (0 <= q <= 1):
                    raise ValueError(f"predicate {name} value {q} outside [0,1]")
                vals[combo] = q
                den = den * q.denominator // math.gcd(den, q.denominator)
            if den >= _MAX_DEN:
                raise ValueError(f"predicate denominator too large for {name}")
            table = np.empty(shape, dtype=np.int64)
            for combo in product(*(range(k) for k in shape)):
                table[combo] = int(vals[combo] * den)
            preds[name] = PredTable(arg_sorts, den, table)

        return FiniteStructure(sorts, fns, preds, dict(moduli or {}),
                               dict(meta or {}))

    # -- lookups -----------------------------------------------------------

    def only_sort(self) -> str:
        if len(self.sorts) != 1:
            raise ValueError("sort annotation required in a multi-sort structure")
        return next(iter(self.sorts))

    def point(self, sort: str, name: str) -> int:
        return self.sorts[sort].index[name]

    def constant(self, name: str) -> tuple[str, int]:
        """Resolve a 0-ary function symbol or a globally unique point name."""
        fn = self.functions.get(name)
        if fn is not None and fn.arg_sorts == ():
            return fn.out_sort, int(fn.table[()])
        hits = [(s, sd.index[name]) for s, sd in self.sorts.items()
                if name in sd.index]
        if len(hits) == 1:
            return hits[0]
        raise KeyError(f"unknown constant {name!r}"
                       if not hits else f"ambiguous point name {name!r}")

    def symbol_moduli(self) -> SymbolModuli:
        return SymbolModuli(
            functions={n: m for n, m in self.moduli.items() if n in self.functions},
            predicates={n: m for n, m in self.moduli.items() if n in self.predicates})

    def total_points(self) -> int:
        return sum(sd.size for sd in self.sorts.values())


# --------------------------------------------------------------------------
# Validation

def _pair_name(sd: SortData, i, j) -> str:
    return f"({sd.points[i]}, {sd.points[j]})"


def _check_symbol_modulus(M: FiniteStructure, name: str, arg_sorts, mod: Modulus,
                          kind: str, table, outdat, report: list[str]):
    """Exhaustive per-argument modulus check, blockwise: for each argument
    position, flatten the remaining axes and bound the worst table change
    over them against the modulus of the input distance.  kind "fn" takes
    the output SortData, kind "pred" the value denominator."""
    for pos, s in enumerate(arg_sorts):
        sd = M.sorts[s]
        n = sd.size
        V = np.moveaxis(table, pos, 0).reshape(n, -1)
        if kind == "fn":
            out, dden = outdat.dmat, outdat.den
        else:
            dden = outdat
        bounds = {int(u): mod.omega(Fraction(int(u), sd.den))
                  for u in np.unique(sd.dmat)}
        done = False
        for i in range(n - 1):
            rest = V[i + 1:]
            if kind == "fn":
                dout = out[rest, V[i]]
            else:
                dout = np.abs(rest - V[i])
            dmax = dout.max(axis=1)
            dv = sd.dmat[i, i + 1:]
            for u, bound in bounds.items():
                mask = dv == u
                if not mask.any():
                    continue
                bad = dmax[mask] * bound.denominator > bound.numerator * dden
                if bad.any():
                    j = i + 1 + int(np.flatnonzero(mask)[np.flatnonzero(bad)[0]])
                    report.append(
                        f"modulus violation: {name} argument {pos} at pair "
                        f"{_pair_name(sd, i, j)}: input distance "
                        f"{show_rational(Fraction(u, sd.den))} allows change "
                        f"{show_rational(bound)}, table changes by "
                        f"{show_rational(Fraction(int(dmax[j - i - 1]), dden))}")
                    done = True  # one offending pair per (symbol, argument)
                    break
            if done:
                break


def check_structure(M: FiniteStructure) -> list[str]:
    """Exhaustive validation; returns one line per violation (empty = valid)."""
    report: list[str] = []
    for s, sd in M.sorts.items():
        D = sd.dmat
        n = sd.size
        if (np.diag(D) != 0).any():
            i = int(np.flatnonzero(np.diag(D))[0])
            report.append(f"metric: nonzero diagonal at {sd.points[i]} in sort {s}")
        if (D != D.T).any():
            i, j = np.argwhere(D != D.T)[0]
            report.append(f"metric: asymmetry at {_pair_name(sd, i, j)} in sort {s}")
        if (D < 0).any() or (D > sd.den).any():
            report.append(f"metric: entry outside [0,1] in sort {s}")
        off = D + np.eye(n, dtype=np.int64) * (sd.den + 1)
        zero = np.argwhere(off == 0)
        if len(zero):
            i, j = zero[0]
            report.append(
                f"metric: identity of indiscernibles fails at "
                f"{_pair_name(sd, i, j)} in sort {s}")
        for k in range(n):
            viol = D > D[:, k:k + 1] + D[k:k + 1, :]
            if viol.any():
                i, j = np.argwhere(viol)[0]
                report.append(
                    f"metric: triangle inequality fails for "
                    f"{_pair_name(sd, i, j)} via {sd.points[k]} in sort {s}")
                break
    for name, fn in M.functions.items():
        if not fn.arg_sorts:
            continue
        mod = M.moduli.get(name)
        if mod is None:
            report.append(f"function {name} has no declared modulus")
            continue
        _check_symbol_modulus(M, name, fn.arg_sorts, mod, "fn", fn.table,
                              M.sorts[fn.out_sort], report)
    for name, pr in M.predicates.items():
        mod = M.moduli.get(name)
        if mod is None:
            report.append(f"predicate {name} has no declared modulus")
            continue
        _check_symbol_modulus(M, name, pr.arg_sorts, mod, "pred", pr.table,
                              pr.den, report)
    return report


# --------------------------------------------------------------------------
# Exact evaluation (vectorized over quantifier axes)

def _qdepth(f: Formula) -> int:
    if isinstance(f, Quant):
        return 1 + _qdepth(f.body)
    if isinstance(f, Conn):
        return max((_qdepth(a) for a in f.args), default=0)
    return 0


def _lcm(a: int, b: int) -> int:
    return a * b // math.gcd(a, b)


def _align(a, b):
    (da, va), (db, vb) = a, b
    L = _lcm(da, db)
    if L >= _MAX_DEN:
        raise ValueError("denominator overflow during evaluation")
    return L, va * (L // da), vb * (L // db)


def _ev_term(t, M: FiniteStructure, env):
    """Index array (broadcastable) plus the sort of the term."""
    if isinstance(t, Var):
        if t.name not in env:
            raise ValueError(f"unbound variable {t.name}")
        return env[t.name]
    if isinstance(t, Const):
        s, i = M.constant(t.name)
        return s, i
    if isinstance(t, App):
        fn = M.functions.get(t.fn)
        if fn is None:
            raise ValueError(f"unknown function symbol {t.fn}")
        args = []
        for a, s in zip(t.args, fn.arg_sorts):
            sa, ia = _ev_term(a, M, env)
            if sa != s:
                raise ValueError(f"sort mismatch in argument of {t.fn}: "
                                 f"{sa} where {s} expected")
            args.append(ia)
        return fn.out_sort, fn.table[tuple(args)]
    raise TypeError(t)


def _ev(f: Formula, M: FiniteStructure, env, depth: int, total: int):
    """Returns (den, value) with value an int or int ndarray scaled by den."""
    if isinstance(f, Rat):
        return f.value.denominator, f.value.numerator
    if isinstance(f, Dist):
        (s1, i1), (s2, i2) = _ev_term(f.left, M, env), _ev_term(f.right, M, env)
        if s1 != s2:
            raise ValueError(f"d across sorts {s1} and {s2}")
        sd = M.sorts[s1]
        return sd.den, sd.dmat[i1, i2]
    if isinstance(f, Pred):
        pr = M.predicates.get(f.name)
        if pr is None:
            raise ValueError(f"unknown predicate symbol {f.name}")
        if len(f.args) != len(pr.arg_sorts):
            raise ValueError(f"arity mismatch for {f.name}")
        args = []
        for a, s in zip(f.args, pr.arg_sorts):
            sa, ia = _ev_term(a, M, env)
            if sa != s:
                raise ValueError(f"sort mismatch in argument of {f.name}")
            args.append(ia)
        return pr.den, pr.table[tuple(args)]
    if isinstance(f, Conn):
        vals = [_ev(a, M, env, depth, total) for a in f.args]
        if f.op in ("max", "min"):
            den, out = vals[0]
            npop = np.maximum if f.op == "max" else np.minimum
            for v in vals[1:]:
                den, a, b = _align((den, out), v)
                out = npop(a, b)
            return den, out
        if f.op == "neg":
            den, v = vals[0]
            return den, den - v
        if f.op == "monus":
            den, a, b = _align(vals[0], vals[1])
            return den, np.maximum(a - b, 0)
        if f.op == "cut":
            m = f.params[0]
            den, a, b = _align(vals[0], (m, 1))
            return den, np.maximum(a - b, 0)
        if f.op == "affine":
            a, b = f.params
            den, v = vals[0]
            nden = den * a.denominator * b.denominator
            if nden >= _MAX_DEN:
                raise ValueError("denominator overflow in affine connective")
            nv = (a.numerator * b.denominator) * v \
                + (b.numerator * a.denominator) * den
            nv = np.clip(nv, 0, nden)
            g = math.gcd(int(np.gcd.reduce(np.ravel(nv))) if isinstance(nv, np.ndarray)
                         else int(nv), nden)
            return nden // g, nv // g
        raise ValueError(f.op)
    if isinstance(f, Quant):
        sort = f.sort or M.only_sort()
        n = M.sorts[sort].size
        if n == 0:
            raise ValueError(f"quantifier over empty sort {sort}")
        shape = (1,) * depth + (n,) + (1,) * (total - depth - 1)
        sub = dict(env)
        sub[f.var] = (sort, np.arange(n).reshape(shape))
        den, v = _ev(f.body, M, sub, depth + 1, total)
        if isinstance(v, np.ndarray) and v.ndim > depth and v.shape[depth] > 1:
            red = np.max if f.kind == "sup" else np.min
            v = red(v, axis=depth, keepdims=True)
        return den, v
    raise TypeError(f)


def eval_formula(f: Formula, M: FiniteStructure, assignment=None) -> Fraction:
    """Exact value of f on M.  assignment maps free variable names to point
    names (sort resolved from annotations, or the unique sort)."""
    env = _bind(f, M, assignment)
    den, v = _ev(f, M, env, 0, max(_qdepth(f), 1))
    if isinstance(v, np.ndarray):
        v = int(v.reshape(-1)[0])
    return Fraction(int(v), den)


def eval_table(f: Formula, M: FiniteStructure, variables,
               assignment=None) -> tuple[int, np.ndarray]:
    """Exact values of f for all point combinations of the listed free
    variables at once.  variables: [(name, sort)], one numpy axis each in
    order; remaining free variables come from assignment.  Returns
    (den, table) with table integer-valued, scaled by den."""
    variables = [(v, s or M.only_sort()) for v, s in variables]
    fixed = {}
    listed = {v for v, _ in variables}
    if assignment:
        from .formulas import var_sorts
        sorts = var_sorts(f)
        for v, name in assignment.items():
            if v not in listed:
                s = sorts.get(v) or M.only_sort()
                fixed[v] = (s, M.point(s, name))
    missing = free_vars(f) - listed - set(fixed)
    if missing:
        raise ValueError(f"unbound variables {sorted(missing)}")
    r = len(variables)
    total = max(r + _qdepth(f), 1)
    env = dict(fixed)
    for j, (name, sort) in enumerate(variables):
        n = M.sorts[sort].size
        shape = (1,) * j + (n,) + (1,) * (total - j - 1)
        env[name] = (sort, np.arange(n).reshape(shape))
    den, v = _ev(f, M, env, r, total)
    dims = tuple(M.sorts[s].size for _, s in variables)
    out = np.broadcast_to(np.asarray(v), dims + (1,) * (total - r)).reshape(dims)
    return den, out


def _bind(f: Formula, M: FiniteStructure, assignment):
    from .formulas import var_sorts
    assignment = assignment or {}
    sorts = var_sorts(f)
    env = {}
    for v in free_vars(f):
        if v not in assignment:
            raise ValueError(f"unbound variable {v}")
        s = sorts.get(v) or M.only_sort()
        env[v] = (s, M.point(s, assignment[v]))
    return env


# --------------------------------------------------------------------------
# Witnessed bounds toward the intended infinite model

@dataclass(frozen=True)
class EvalResult:
    lo: Fraction
    hi: Fraction
    lo_witness: dict
    hi_witness: dict
    notes: tuple[str, ...] = ()

    @property
    def kind(self) -> str:
        if self.lo == self.hi:
            return "exact"
        if self.lo == ZERO:
            return "upper"
        if self.hi == ONE:
            return "lower"
        return "interval"

    @property
    def value(self) -> Fraction:
        if self.lo != self.hi:
            raise ValueError("not an exact result")
        return self.lo


def eval_bounds(f: Formula, M: FiniteStructure, assignment=None,
                two_sided: bool = False) -> EvalResult:
    """Bounds on f's value in the intended infinite model.

    f must be prenex (or quantifier-free).  Each finite sup yields a lower
    bound with its best witness, each finite inf an upper bound.  A bound
    becomes two-sided only when the quantified sort declares a density
    radius r: the true extremum then differs from the finite one by at most
    the formula's value change over radius r."""
    if not is_prenex(f):
        raise ValueError("eval_bounds requires a prenex formula")
    prefix = []
    g = f
    while isinstance(g, Quant):
        prefix.append(g)
        g = g.body
    density = M.meta.get("density", {})
    sym = M.symbol_moduli()
    from .formulas import _modulus_for_var

    def slack(q: Quant) -> tuple[Fraction | None, str]:
        sort = q.sort or M.only_sort()
        r = density.get(sort)
        if r is None:
            if two_sided:
                raise ValueError(
                    f"no density radius declared for sort {sort}; "
                    "only one-sided bounds are available")
            return None, f"sort {sort}: no density radius, {q.kind} bound one-sided"
        return _modulus_for_var(g, q.var, sym).omega(r), ""

    def go(k: int, env: dict, names: dict) -> EvalResult:
        if k == len(prefix):
            den, v = _ev(g, M, env, 0, max(_qdepth(g), 1))
            if isinstance(v, np.ndarray):
                v = int(v.reshape(-1)[0])
            q = Fraction(int(v), den)
            return EvalResult(q, q, dict(names), dict(names))
        q = prefix[k]
        sort = q.sort or M.only_sort()
        sd = M.sorts[sort]
        best: EvalResult | None = None
        for i in range(sd.size):
            sub = dict(env)
            sub[q.var] = (sort, i)
            nm = dict(names)
            nm[q.var] = sd.points[i]
            r = go(k + 1, sub, nm)
            if best is None:
                best = r
            elif q.kind == "sup":
                best = EvalResult(max(best.lo, r.lo), max(best.hi, r.hi),
                                  r.lo_witness if r.lo > best.lo else best.lo_witness,
                                  r.hi_witness if r.hi > best.hi else best.hi_witness,
                                  best.notes + r.notes)
            else:
                best = EvalResult(min(best.lo, r.lo), min(best.hi, r.hi),
                                  r.lo_witness if r.lo < best.lo else best.lo_witness,
                                  r.hi_witness if r.hi < best.hi else best.hi_witness,
                                  best.notes + r.notes)
        eps, note = slack(q)
        notes = tuple(dict.fromkeys(best.notes + ((note,) if note else ())))
        if q.kind == "sup":
            hi = min(ONE, best.hi + eps) if eps is not None else ONE
            return EvalResult(best.lo, hi, best.lo_witness, best.hi_witness, notes)
        lo = max(ZERO, best.lo - eps) if eps is not None else ZERO
        return EvalResult(lo, best.hi, best.lo_witness, best.hi_witness, notes)

    env = _bind(f, M, assignment)
    names = dict(assignment or {})
    return go(0, env, names)


# --------------------------------------------------------------------------
# Model file format

_SECTION = re.compile(r"^\[([a-zA-Z]+)(?:\s+([^\]:]+?))?(?:\s*:\s*([^\]]*))?\]$")


def save_structure(M: FiniteStructure, path: str):
    lines = ["[sorts]"]
    lines.extend(M.sorts)
    lines.append("[points]")
    for s, sd in M.sorts.items():
        lines.extend(f"{s} {a}" for a in sd.points)
    lines.append("[metric]")
    for s, sd in M.sorts.items():
        for i in range(sd.size):
            for j in range(i + 1, sd.size):
                lines.append(f"{s} {sd.points[i]} {sd.points[j]} "
                             f"{show_rational(sd.dist(i, j))}")
    for name, fn in M.functions.items():
        sig = " ".join(fn.arg_sorts) + " -> " + fn.out_sort
        lines.append(f"[fn {name} : {sig}]")
        sizes = [range(M.sorts[s].size) for s in fn.arg_sorts]
        for combo in product(*sizes):
            args = " ".join(M.sorts[s].points[i] for s, i in zip(fn.arg_sorts, combo))
            out = M.sorts[fn.out_sort].points[int(fn.table[combo])]
            lines.append((args + " " if args else "") + out)
    for name, pr in M.predicates.items():
        lines.append(f"[pred {name} : {' '.join(pr.arg_sorts)}]")
        sizes = [range(M.sorts[s].size) for s in pr.arg_sorts]
        for combo in product(*sizes):
            args = " ".join(M.sorts[s].points[i] for s, i in zip(pr.arg_sorts, combo))
            lines.append(f"{args} {show_rational(pr.value(*combo))}")
    lines.append("[moduli]")
    for name, mod in M.moduli.items():
        pts = " ".join(f"{show_rational(r)}:{show_rational(w)}" for r, w in mod.points)
        lines.append(f"{name} points {pts}")
    lines.append("[meta]")
    for k, v in M.meta.items():
        if k == "density":
            for s, r in v.items():
                lines.append(f"density {s} {'none' if r is None else show_rational(r)}")
        else:
            lines.append(f"{k} {v}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_structure(path: str, validate: bool = True) -> FiniteStructure:
    section = None
    header: tuple = ()
    sort_names: list[str] = []
    points: dict[str, list[str]] = {}
    metric_entries: dict[str, dict[tuple[str, str], Fraction]] = {}
    fn_specs: dict[str, tuple] = {}
    pred_specs: dict[str, tuple] = {}
    moduli: dict[str, Modulus] = {}
    meta: dict = {}
    density: dict[str, Fraction | None] = {}

    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            m = _SECTION.match(line)
            if m:
                section = m.group(1)
                header = (m.group(2) or "", m.group(3) or "")
                if section == "fn":
                    name = header[0].strip()
                    left, _, out = header[1].partition("->")
                    fn_specs[name] = (tuple(left.split()), out.strip(), {})
                elif section == "pred":
                    name = header[0].strip()
                    pred_specs[name] = (tuple(header[1].split()), {})
                continue
            toks = line.split()
            try:
                if section == "sorts":
                    sort_names.append(toks[0])
                    points.setdefault(toks[0], [])
                    metric_entries.setdefault(toks[0], {})
                elif section == "points":
                    points[toks[0]].append(toks[1])
                elif section == "metric":
                    s, a, b, q = toks
                    metric_entries[s][(a, b)] = parse_rational(q)
                elif section == "fn":
                    name = header[0].strip()
                    arg_sorts, out, table = fn_specs[name]
                    table[tuple(toks[:-1])] = toks[-1]
                elif section == "pred":
                    name = header[0].strip()
                    arg_sorts, table = pred_specs[name]
                    table[tuple(toks[:-1])] = parse_rational(toks[-1])
                elif section == "moduli":
                    name, kind = toks[0], toks[1]
                    if kind == "lipschitz":
                        moduli[name] = Modulus.lipschitz(parse_rational(toks[2]))
                    elif kind == "points":
                        pts = tuple(
                            (parse_rational(p.split(":")[0]),
                             parse_rational(p.split(":")[1])) for p in toks[2:])
                        moduli[name] = Modulus(pts)
                    else:
                        raise ValueError(f"unknown modulus form {kind!r}")
                elif section == "meta":
                    if toks[0] == "density":
                        density[toks[1]] = (None if toks[2] == "none"
                                            else parse_rational(toks[2]))
                    elif toks[0] in ("depth", "branch"):
                        meta[toks[0]] = int(toks[1])
                    else:
                        meta[toks[0]] = " ".join(toks[1:])
                else:
                    raise ValueError("content before any section header")
            except (KeyError, IndexError, ValueError) as e:
                raise ValueError(f"{path}:{lineno}: malformed line: {e}") from e
    if density:
        meta["density"] = density

    def metric_fn(s):
        entries = metric_entries[s]

        def d(a, b):
            if a == b:
                return ZERO
            if (a, b) in entries:
                return entries[(a, b)]
            if (b, a) in entries:
                return entries[(b, a)]
            raise ValueError(f"missing metric entry for {a}, {b} in sort {s}")
        return d

    functions = {
        name: (arg_sorts, out, (lambda t: (lambda *a: t[a]))(table))
        for name, (arg_sorts, out, table) in fn_specs.items()}
    predicates = {
        name: (arg_sorts, (lambda t: (lambda *a: t[a]))(table))
        for name, (arg_sorts, table) in pred_specs.items()}
    M = FiniteStructure.build({s: points[s] for s in sort_names},
                              {s: metric_fn(s) for s in sort_names},
                              functions, predicates, moduli, meta)
    if validate:
        report = check_structure(M)
        if report:
            raise ValueError(f"{path}: invalid structure:\n" + "\n".join(report))
    return M
