"""Realization search, realization trees, theory tables, isomorphism
search, and elementary-equivalence / omission / separation evidence over
finite structures."""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from itertools import permutations, product

import numpy as np

from .conditions import Condition, PartialType, UniformSequence, normalize_condition
from .formulas import (Formula, Quant, _modulus_for_var, free_vars, is_prenex,
                       show, var_sorts)
from .structures import (EvalResult, FiniteStructure, eval_bounds, eval_formula,
                         eval_table)
from .values import ONE, ZERO


def _closed_formula(c: Condition) -> Formula:
    n = normalize_condition(c)
    if n.kind != "closed":
        raise ValueError("expected a closed condition")
    return n.formula


def _resolve_vars(t: PartialType, M: FiniteStructure):
    return [(v, s or M.only_sort()) for v, s in t.variables]


# --------------------------------------------------------------------------
# Realization

def realizes(M: FiniteStructure, t: PartialType, n: int | None = None,
             tol: Fraction = ZERO) -> list[tuple[str, ...]]:
    """All tuples whose every fragment condition evaluates ≤ tol, in
    lexicographic point-index order."""
    variables = _resolve_vars(t, M)
    conds = t.conds if n is None else t.fragment(n)
    dims = tuple(M.sorts[s].size for _, s in variables)
    mask = np.ones(dims, dtype=bool)
    for c in conds:
        if not mask.any():
            break
        den, table = eval_table(_closed_formula(c), M, variables)
        mask &= table * tol.denominator <= tol.numerator * den
    out = []
    for combo in np.argwhere(mask):
        out.append(tuple(M.sorts[s].points[i]
                         for (_, s), i in zip(variables, combo)))
    return out


@dataclass(frozen=True)
class TreeReport:
    level_counts: tuple[int, ...]  # nodes per level, root = level 0
    died_at: int | None  # first empty level, None if the tree reaches depth
    depth: int

    @property
    def has_full_path(self) -> bool:
        return self.died_at is None


def realization_tree(M: FiniteStructure, t: PartialType, depth: int,
                     chain_sort: str | None = None) -> TreeReport:
    """Levels of the chain-realization tree for a unary type: a level-k node
    is a k-tuple satisfying the k-th chain fragment (values within 1/i at
    stage i, consecutive points within 2^{1-i}).  Counts are computed by
    last-point dynamics, so wide levels stay cheap."""
    if len(t.variables) != 1:
        raise ValueError("realization_tree requires a unary type")
    v, sort = t.variables[0]
    sort = sort or M.only_sort()
    sd = M.sorts[sort]
    n = sd.size

    phis = []
    j = 0
    while True:
        try:
            c = t.condition(j)
        except IndexError:
            break
        den, vec = eval_table(_closed_formula(c), M, [(v, sort)])
        phis.append((den, vec))
        j += 1
        if t.generator is not None and j > depth:
            break

    counts = [1]
    alive = np.ones(n, dtype=object)  # tuples of length 1 ending at each point
    # stage k = 1: no value or chain constraints yet
    died = None
    for k in range(1, depth + 1):
        if k == 1:
            current = alive.copy()
        else:
            # chain step: d(x_{k-2}, x_{k-1}) <= 2^{2-k}
            thr = Fraction(1, 2 ** (k - 2))
            adj = sd.dmat * thr.denominator <= thr.numerator * sd.den
            current = np.array(
                [int((alive * adj[:, i]).sum()) for i in range(n)], dtype=object)
        # value constraints at stage k-1 (1-indexed stage k-1 >= 1)
        stage = k - 1
        if stage >= 1:
            ok = np.ones(n, dtype=bool)
            for j, (den, vec) in enumerate(phis):
                if j > stage:
                    break
                ok &= vec * stage <= den
            current = current * ok
        total = int(np.sum(current))
        counts.append(total)
        if total == 0 and died is None:
            died = k
            break
        alive = current
    return TreeReport(tuple(counts), died, depth)


def theory_fragment(M: FiniteStructure, sentences) -> list[dict]:
    """Exact value of each closed formula on M, plus intended-model bounds
    where the sentence is prenex."""
    rows = []
    for f in sentences:
        if free_vars(f):
            raise ValueError(f"open formula in theory fragment: {show(f)}")
        row = {"sentence": show(f), "value": eval_formula(f, M)}
        try:
            row["bounds"] = eval_bounds(f, M)
        except ValueError as e:
            row["bounds"] = None
            row["note"] = str(e)
        rows.append(row)
    return rows


def sup_norm_lower(f: Formula, bank) -> Fraction:
    """Certified lower bound of the sup-norm: max |value| over the bank."""
    bank = list(bank)
    if not bank:
        raise ValueError("empty structure bank")
    best = ZERO
    for M in bank:
        sorts = var_sorts(f)
        variables = [(v, sorts.get(v) or M.only_sort())
                     for v in sorted(free_vars(f))]
        den, table = eval_table(f, M, variables)
        if table.size:
            best = max(best, Fraction(int(np.max(table)), den))
    return best


# --------------------------------------------------------------------------
# Isomorphism witnesses

@dataclass(frozen=True)
class Sublanguage:
    functions: frozenset = frozenset()
    predicates: frozenset = frozenset()

    @staticmethod
    def full(M: FiniteStructure) -> "Sublanguage":
        return Sublanguage(frozenset(M.functions), frozenset(M.predicates))


@dataclass(frozen=True)
class IsoWitness:
    mapping: dict  # sort -> dict point name of A -> point name of B


@dataclass(frozen=True)
class Refusal:
    reason: str
    detail: str = ""


def verify_iso(A: FiniteStructure, B: FiniteStructure, L0: Sublanguage,
               w: IsoWitness) -> list[str]:
    """Exactness check of a witness, table by table."""
    out: list[str] = []
    idx: dict[str, dict[int, int]] = {}
    for s in A.sorts:
        m = w.mapping.get(s, {})
        if set(m) != set(A.sorts[s].points) or \
                set(m.values()) != set(B.sorts[s].points):
            out.append(f"mapping is not a bijection on sort {s}")
            return out
        idx[s] = {A.sorts[s].index[a]: B.sorts[s].index[b] for a, b in m.items()}
    for s, sa in A.sorts.items():
        sb = B.sorts[s]
        perm = np.array([idx[s][i] for i in range(sa.size)])
        da = sa.dmat * sb.den
        db = sb.dmat[np.ix_(perm, perm)] * sa.den
        if (da != db).any():
            i, j = np.argwhere(da != db)[0]
            out.append(f"metric not preserved at ({sa.points[i]}, {sa.points[j]})")
    for name in sorted(L0.functions):
        fa, fb = A.functions[name], B.functions[name]
        for combo in product(*(range(A.sorts[s].size) for s in fa.arg_sorts)):
            mapped = tuple(idx[s][i] for s, i in zip(fa.arg_sorts, combo))
            if idx[fa.out_sort][int(fa.table[combo])] != int(fb.table[mapped]):
                args = ", ".join(A.sorts[s].points[i]
                                 for s, i in zip(fa.arg_sorts, combo))
                out.append(f"function {name} not preserved at ({args})")
                break
    for name in sorted(L0.predicates):
        pa, pb = A.predicates[name], B.predicates[name]
        for combo in product(*(range(A.sorts[s].size) for s in pa.arg_sorts)):
            mapped = tuple(idx[s][i] for s, i in zip(pa.arg_sorts, combo))
            if int(pa.table[combo]) * pb.den != int(pb.table[mapped]) * pa.den:
                args = ", ".join(A.sorts[s].points[i]
                                 for s, i in zip(pa.arg_sorts, combo))
                out.append(f"predicate {name} not preserved at ({args})")
                break
    return out


def find_iso(A: FiniteStructure, B: FiniteStructure,
             L0: Sublanguage | None = None):
    """Backtracking isomorphism search with invariant pruning.

    Returns an IsoWitness (re-verified table by table) or a Refusal naming
    a distinguishing invariant."""
    if L0 is None:
        L0 = Sublanguage(frozenset(A.functions) & frozenset(B.functions),
                         frozenset(A.predicates) & frozenset(B.predicates))
    if set(A.sorts) != set(B.sorts):
        return Refusal("sort mismatch", f"{sorted(A.sorts)} vs {sorted(B.sorts)}")
    for s in A.sorts:
        if A.sorts[s].size != B.sorts[s].size:
            return Refusal("point-count invariant",
                           f"sort {s}: {A.sorts[s].size} vs {B.sorts[s].size}")
    joint = _joint_colours(A, B, L0)
    if isinstance(joint, Refusal):
        return joint
    col_a, col_b = joint

    order = []
    for s in A.sorts:
        hist: dict[int, int] = {}
        for c in col_a[s]:
            hist[c] = hist.get(c, 0) + 1
        idxs = sorted(range(A.sorts[s].size),
                      key=lambda i, s=s: (hist[col_a[s][i]], col_a[s][i], i))
        order.extend((s, i) for i in idxs)
    cand = {}
    for s in A.sorts:
        for i in range(A.sorts[s].size):
            cand[(s, i)] = [j for j in range(B.sorts[s].size)
                            if col_b[s][j] == col_a[s][i]]

    unary_fns = [(name, A.functions[name], B.functions[name])
                 for name in sorted(L0.functions)
                 if len(A.functions[name].arg_sorts) == 1]
    assigned: dict[tuple[str, int], int] = {}
    used: dict[str, set[int]] = {s: set() for s in A.sorts}

    def consistent(s, i, j):
        sa, sb = A.sorts[s], B.sorts[s]
        for (s2, i2), j2 in assigned.items():
            if s2 == s and int(sa.dmat[i, i2]) * sb.den != int(sb.dmat[j, j2]) * sa.den:
                return False
        for name, fa, fb in unary_fns:
            if fa.arg_sorts == (s,):
                img = (fa.out_sort, int(fa.table[i]))
                if img in assigned and assigned[img] != int(fb.table[j]):
                    return False
                if img == (s, i) and int(fb.table[j]) != j:
                    return False
            for (s2, i2), j2 in assigned.items():
                if fa.arg_sorts == (s2,) and (fa.out_sort, int(fa.table[i2])) == (s, i):
                    if int(fb.table[j2]) != j:
                        return False
        return True

    def search(k):
        if k == len(order):
            return True
        s, i = order[k]
        for j in cand[(s, i)]:
            if j in used[s]:
                continue
            if consistent(s, i, j):
                assigned[(s, i)] = j
                used[s].add(j)
                if search(k + 1):
                    return True
                del assigned[(s, i)]
                used[s].remove(j)
        return False

    if not search(0):
        return Refusal("backtracking exhausted",
                       "no bijection preserves the metric and symbol tables")
    mapping = {s: {A.sorts[s].points[i]: B.sorts[s].points[assigned[(s, i)]]
                   for i in range(A.sorts[s].size)} for s in A.sorts}
    w = IsoWitness(mapping)
    bad = verify_iso(A, B, L0, w)
    if bad:
        return Refusal("witness failed re-verification", "; ".join(bad))
    return w


def _joint_colours(A, B, L0):
    """Refine invariant colours over both structures simultaneously so that
    equal colours mean equal invariants; Refusal on histogram mismatch."""
    def init(M):
        out = {}
        for s, sd in M.sorts.items():
            rows = []
            for i in range(sd.size):
                preds = tuple(
                    (name, Fraction(int(M.predicates[name].table[i]),
                                    M.predicates[name].den))
                    for name in sorted(L0.predicates)
                    if M.predicates[name].arg_sorts == (s,))
                consts = tuple(
                    name for name in sorted(L0.functions)
                    if M.functions[name].arg_sorts == ()
                    and M.functions[name].out_sort == s
                    and int(M.functions[name].table[()]) == i)
                row = tuple(sorted(Fraction(int(x), sd.den) for x in sd.dmat[i]))
                rows.append((preds, consts, row))
            out[s] = rows
        return out

    ia, ib = init(A), init(B)
    col_a, col_b = {}, {}
    for s in A.sorts:
        order = {v: k for k, v in enumerate(sorted(set(ia[s]) | set(ib[s])))}
        col_a[s] = [order[v] for v in ia[s]]
        col_b[s] = [order[v] for v in ib[s]]

    unary = [(name, A.functions[name], B.functions[name])
             for name in sorted(L0.functions)
             if len(A.functions[name].arg_sorts) == 1]

    def step(M, col):
        out = {}
        for s, sd in M.sorts.items():
            rows = []
            for i in range(sd.size):
                fimg = tuple((name, col[fa.out_sort if M is A else fb.out_sort]
                              [int((fa if M is A else fb).table[i])])
                             for name, fa, fb in unary
                             if (fa if M is A else fb).arg_sorts == (s,))
                neigh = tuple(sorted(
                    (Fraction(int(sd.dmat[i, j]), sd.den), col[s][j])
                    for j in range(sd.size)))
                rows.append((col[s][i], fimg, neigh))
            out[s] = rows
        return out

    while True:
        ra, rb = step(A, col_a), step(B, col_b)
        na, nb = {}, {}
        changed = False
        for s in A.sorts:
            order = {v: k for k, v in enumerate(sorted(set(ra[s]) | set(rb[s])))}
            na[s] = [order[v] for v in ra[s]]
            nb[s] = [order[v] for v in rb[s]]
            if na[s] != col_a[s] or nb[s] != col_b[s]:
                changed = True
        col_a, col_b = na, nb
        for s in A.sorts:
            ha: dict[int, int] = {}
            hb: dict[int, int] = {}
            for c in col_a[s]:
                ha[c] = ha.get(c, 0) + 1
            for c in col_b[s]:
                hb[c] = hb.get(c, 0) + 1
            if ha != hb:
                diff = next(c for c in sorted(set(ha) | set(hb))
                            if ha.get(c, 0) != hb.get(c, 0))
                return Refusal(
                    "label-count invariant",
                    f"sort {s}: invariant class {diff} has {ha.get(diff, 0)} "
                    f"points in A but {hb.get(diff, 0)} in B")
        if not changed:
            return col_a, col_b


def eq_evidence(A: FiniteStructure, B: FiniteStructure, L0: Sublanguage,
                eps: Fraction, w: IsoWitness, f: Formula) -> Fraction:
    """Bound δ with |f^A − f^B| ≤ δ, from an isomorphism w between ε-dense
    common substructures: moving every variable to the substructure costs at
    most the sum of per-variable value changes at radius ε, on each side."""
    bad = verify_iso_on_domain(A, B, L0, w)
    if bad:
        raise ValueError("witness fails exactness: " + "; ".join(bad))
    _check_symbols(f, L0)
    if not is_prenex(f):
        raise ValueError("eq_evidence requires a prenex formula")
    sym = A.symbol_moduli()
    allv = _all_variable_names(f)
    total = ZERO
    for v in sorted(allv):
        total += _modulus_for_var(_matrix(f), v, sym).omega(eps)
    return min(ONE, 2 * total)


def _matrix(f: Formula) -> Formula:
    while isinstance(f, Quant):
        f = f.body
    return f


def _all_variable_names(f: Formula) -> set[str]:
    out = set(free_vars(f))
    g = f
    while isinstance(g, Quant):
        out.add(g.var)
        g = g.body
    return out


def _check_symbols(f: Formula, L0: Sublanguage):
    from .formulas import App, Conn, Const, Dist, Pred, Rat

    def visit_term(t):
        if isinstance(t, App):
            if t.fn not in L0.functions:
                raise ValueError(f"symbol {t.fn} outside the sublanguage")
            for a in t.args:
                visit_term(a)

    def visit(g):
        if isinstance(g, Dist):
            visit_term(g.left)
            visit_term(g.right)
        elif isinstance(g, Pred):
            if g.name not in L0.predicates:
                raise ValueError(f"symbol {g.name} outside the sublanguage")
            for a in g.args:
                visit_term(a)
        elif isinstance(g, Conn):
            for a in g.args:
                visit(a)
        elif isinstance(g, Quant):
            visit(g.body)
    visit(f)


def verify_iso_on_domain(A, B, L0, w: IsoWitness) -> list[str]:
    """Exactness of w on its (possibly partial) domain: metric, and symbol
    tables whenever all arguments and values stay inside the domain."""
    out: list[str] = []
    idx = {}
    for s, m in w.mapping.items():
        try:
            idx[s] = {A.sorts[s].index[a]: B.sorts[s].index[b]
                      for a, b in m.items()}
        except KeyError as e:
            return [f"unknown point {e} in mapping for sort {s}"]
        if len(set(idx[s].values())) != len(idx[s]):
            return [f"mapping not injective on sort {s}"]
    for s, m in idx.items():
        sa, sb = A.sorts[s], B.sorts[s]
        for i in m:
            for j in m:
                if int(sa.dmat[i, j]) * sb.den != int(sb.dmat[m[i], m[j]]) * sa.den:
                    out.append(
                        f"metric not preserved at ({sa.points[i]}, {sa.points[j]})")
                    return out
    for name in sorted(L0.functions):
        fa, fb = A.functions[name], B.functions[name]
        doms = [idx.get(s, {}) for s in fa.arg_sorts]
        for combo in product(*(sorted(d) for d in doms)):
            val = int(fa.table[combo])
            if val in idx.get(fa.out_sort, {}):
                mapped = tuple(idx[s][i] for s, i in zip(fa.arg_sorts, combo))
                if idx[fa.out_sort][val] != int(fb.table[mapped]):
                    out.append(f"function {name} not preserved on the domain")
                    return out
    for name in sorted(L0.predicates):
        pa, pb = A.predicates[name], B.predicates[name]
        doms = [idx.get(s, {}) for s in pa.arg_sorts]
        for combo in product(*(sorted(d) for d in doms)):
            mapped = tuple(idx[s][i] for s, i in zip(pa.arg_sorts, combo))
            if int(pa.table[combo]) * pb.den != int(pb.table[mapped]) * pa.den:
                out.append(f"predicate {name} not preserved on the domain")
                return out
    return out


# --------------------------------------------------------------------------
# Omission, separation, principality evidence

@dataclass(frozen=True)
class OmissionVerdict:
    realizers: tuple  # tuples realizing t_n
    zero_set: tuple | None  # {ā : inf_i φ_i(ā) = 0}, None when not computable
    notes: tuple[str, ...] = ()

    @property
    def omitted(self) -> bool:
        return not self.realizers


def uniform_omission_check(M: FiniteStructure, u: UniformSequence,
                           cutoff: int, n: int) -> OmissionVerdict:
    """Per-tuple min of the first `cutoff` formulas (plus the declared tail
    bound): t_n is realized exactly where that min is ≥ 2^{-n}."""
    infinite = u.generator is not None
    if infinite and u.tail_lower is None:
        raise ValueError("infinite presentation without a declared tail bound")
    variables = None
    den = 1
    minval = None
    for i in range(cutoff):
        phi = u.formula(i)
        if variables is None:
            sorts = var_sorts(phi)
            variables = [(v, sorts.get(v) or M.only_sort())
                         for v in sorted(free_vars(phi))]
        d, tab = eval_table(phi, M, variables)
        if minval is None:
            den, minval = d, tab
        else:
            L = den * d // np.gcd(den, d)
            minval = np.minimum(minval * (L // den), tab * (L // d))
            den = int(L)
    if minval is None:
        raise ValueError("empty uniform sequence")
    thr = Fraction(1, 2 ** n)
    ok = minval * thr.denominator >= thr.numerator * den
    notes = []
    if infinite:
        if u.tail_lower < thr:
            ok = np.zeros_like(ok)
            notes.append("tail bound below the threshold: nothing certified realized")
    realizers = tuple(
        tuple(M.sorts[s].points[i] for (_, s), i in zip(variables, combo))
        for combo in np.argwhere(ok))
    if not infinite or u.tail_lower > 0:
        zero = tuple(
            tuple(M.sorts[s].points[i] for (_, s), i in zip(variables, combo))
            for combo in np.argwhere(minval == 0))
    else:
        zero = None
        notes.append("zero set not computable: tail bound is 0")
    return OmissionVerdict(realizers, zero, tuple(notes))


@dataclass(frozen=True)
class SeparationEvidence:
    value: Fraction
    model_label: str
    left: tuple
    right: tuple


def type_distance_lower(t: PartialType, s: PartialType, bank,
                        tol: Fraction = ZERO) -> SeparationEvidence:
    """Best separation achieved inside the bank: min over bank models and
    realizing pairs of max_i d(a_i, b_i).  This is an upper bound for the
    infimum distance between the (complete) types; no lower bound on
    cross-model separation is claimed."""
    if len(t.variables) != len(s.variables):
        raise ValueError("types must have equal arity")
    best: SeparationEvidence | None = None
    for M in bank:
        ra = realizes(M, t, tol=tol)
        rb = realizes(M, s, tol=tol)
        if not ra or not rb:
            continue
        label = str(M.meta.get("label", ""))
        sorts = [sr or M.only_sort() for _, sr in t.variables]
        for a in ra:
            for b in rb:
                val = max((M.sorts[sr].dist(M.point(sr, x), M.point(sr, y))
                           for sr, x, y in zip(sorts, a, b)), default=ZERO)
                if best is None or val < best.value:
                    best = SeparationEvidence(val, label, a, b)
    if best is None:
        raise ValueError("no bank model realizes both types")
    return best


@dataclass(frozen=True)
class ProbeVerdict:
    refuted: bool
    witness: tuple | None = None  # (model label, point tuple, formula index)


def uniform_principality_probe(bank, u: UniformSequence, cond: Condition,
                               delta: Fraction) -> ProbeVerdict:
    """Search the bank for ā satisfying the open condition with some
    φ_j(ā) < δ.  Finding one refutes the everywhere-≥-δ clause for this
    bank; finding none proves nothing."""
    if cond.kind != "open":
        raise ValueError("probe requires an open condition")
    norm = normalize_condition(cond)
    for M in bank:
        sorts = var_sorts(norm.formula)
        variables = [(v, sorts.get(v) or M.only_sort())
                     for v in sorted(free_vars(norm.formula))]
        cden, ctab = eval_table(norm.formula, M, variables)
        sat = ctab * norm.bound.denominator < norm.bound.numerator * cden
        if not sat.any():
            continue
        for j in range(len(u.formulas)):
            den, tab = eval_table(u.formula(j), M, variables)
            hit = sat & (tab * delta.denominator < delta.numerator * den)
            if hit.any():
                combo = np.argwhere(hit)[0]
                names = tuple(M.sorts[s].points[i]
                              for (_, s), i in zip(variables, combo))
                return ProbeVerdict(True, (str(M.meta.get("label", "")), names, j))
    return ProbeVerdict(False)


def exhaustive_iso(A: FiniteStructure, B: FiniteStructure,
                   L0: Sublanguage | None = None):
    """Brute-force oracle over all per-sort bijections (tiny structures)."""
    if L0 is None:
        L0 = Sublanguage(frozenset(A.functions) & frozenset(B.functions),
                         frozenset(A.predicates) & frozenset(B.predicates))
    if set(A.sorts) != set(B.sorts):
        return None
    sorts = sorted(A.sorts)
    if any(A.sorts[s].size != B.sorts[s].size for s in sorts):
        return None
    pools = [permutations(range(B.sorts[s].size)) for s in sorts]
    for choice in product(*pools):
        mapping = {
            s: {A.sorts[s].points[i]: B.sorts[s].points[p[i]]
                for i in range(A.sorts[s].size)}
            for s, p in zip(sorts, choice)}
        w = IsoWitness(mapping)
        if not verify_iso(A, B, L0, w):
            return w
    return None
