"""Trees over ω^<ω and ω^<ω × ω^<ω: DSL constructors, ordinal ranks,
well-foundedness, truncation, the three tree metrics, ℓ, projections, and
tree extraction from structures.

Nodes are tuples of "letters".  A letter is a base natural, a pair letter
("p", a, b) for two-coordinate trees, a summand tag ("d", i, letter), or a
graft-copy tag ("g", c, letter).  Tags appear only on the first letter of
the grafted/summed part, so distinct components never collide."""

from __future__ import annotations

import re
from dataclasses import dataclass
from fractions import Fraction
from functools import total_ordering
from itertools import product

from .values import ONE, ZERO

Node = tuple


# --------------------------------------------------------------------------
# Letters and node naming

def letter_key(l):
    if isinstance(l, int):
        return (0, l)
    if l[0] == "p":
        return (1, l[1], l[2])
    if l[0] == "d":
        return (2, l[1]) + letter_key(l[2])
    if l[0] == "g":
        return (3, l[1]) + letter_key(l[2])
    raise TypeError(f"bad letter {l!r}")


def node_key(s: Node):
    return (len(s),) + tuple(k for l in s for k in letter_key(l))


def show_letter(l) -> str:
    if isinstance(l, int):
        return str(l)
    if l[0] == "p":
        return f"{l[1]}.{l[2]}"
    if l[0] == "d":
        return f"d{l[1]}:{show_letter(l[2])}"
    if l[0] == "g":
        return f"g{l[1]}:{show_letter(l[2])}"
    raise TypeError(f"bad letter {l!r}")


def node_name(s: Node) -> str:
    return "<" + ",".join(show_letter(l) for l in s) + ">"


_PAIR_LETTER = re.compile(r"^(\d+)\.(\d+)$")
_TAG_LETTER = re.compile(r"^([dg])(\d+):(.*)$")


def _parse_letter(text: str):
    m = _TAG_LETTER.match(text)
    if m:
        return (m.group(1), int(m.group(2)), _parse_letter(m.group(3)))
    m = _PAIR_LETTER.match(text)
    if m:
        return ("p", int(m.group(1)), int(m.group(2)))
    return int(text)


def parse_node(text: str) -> Node:
    text = text.strip()
    if not (text.startswith("<") and text.endswith(">")):
        raise ValueError(f"node literal must be angle-bracketed: {text!r}")
    inner = text[1:-1].strip()
    if not inner:
        return ()
    return tuple(_parse_letter(p.strip()) for p in inner.split(","))


def _letter_ints(l):
    if isinstance(l, int):
        return (l,)
    if l[0] == "p":
        return (l[1], l[2])
    return (l[1],) + _letter_ints(l[2])


# --------------------------------------------------------------------------
# Finite trees

@dataclass(frozen=True)
class FiniteTree:
    nodes: frozenset

    def __post_init__(self):
        for s in self.nodes:
            if s and s[:-1] not in self.nodes:
                raise ValueError(f"not prefix-closed: missing {node_name(s[:-1])}")

    @staticmethod
    def of(nodes) -> "FiniteTree":
        return FiniteTree(frozenset(tuple(s) for s in nodes))

    def sorted_nodes(self) -> list[Node]:
        return sorted(self.nodes, key=node_key)

    def children(self, s: Node) -> list[Node]:
        n = len(s)
        return sorted((t for t in self.nodes if len(t) == n + 1 and t[:n] == s),
                      key=node_key)

    def depth(self) -> int:
        return max((len(s) for s in self.nodes), default=0)

    def __len__(self):
        return len(self.nodes)

    def __contains__(self, s):
        return tuple(s) in self.nodes


# --------------------------------------------------------------------------
# Ordinals below ω^ω, plus ∞ for ill-founded trees

@total_ordering
@dataclass(frozen=True)
class Ordinal:
    """Cantor normal form Σ ω^k·c with k < ω, or the absorbing symbol ∞."""
    terms: tuple[tuple[int, int], ...] = ()
    infinite: bool = False

    def __post_init__(self):
        ks = [k for k, _ in self.terms]
        if ks != sorted(ks, reverse=True) or len(set(ks)) != len(ks):
            raise ValueError("exponents must be strictly decreasing")
        if any(c < 1 for _, c in self.terms):
            raise ValueError("coefficients must be positive")

    @staticmethod
    def nat(n: int) -> "Ordinal":
        return Ordinal(((0, n),)) if n else Ordinal()

    @staticmethod
    def omega(k: int = 1, c: int = 1) -> "Ordinal":
        return Ordinal(((k, c),))

    @staticmethod
    def infinity() -> "Ordinal":
        return Ordinal((), True)

    def _key(self):
        if self.infinite:
            return (1,)
        return (0,) + tuple(x for t in self.terms for x in t)

    def __lt__(self, other: "Ordinal") -> bool:
        if self.infinite:
            return False
        if other.infinite:
            return True
        # compare CNF term lists positionally; longer list with equal prefix wins
        a, b = self.terms, other.terms
        for (k1, c1), (k2, c2) in zip(a, b):
            if (k1, c1) != (k2, c2):
                return (k1, c1) < (k2, c2)
        return len(a) < len(b)

    def __add__(self, other: "Ordinal") -> "Ordinal":
        """Ordinal (non-commutative) addition."""
        if self.infinite or other.infinite:
            return Ordinal.infinity()
        if not other.terms:
            return self
        e, c = other.terms[0]
        keep = tuple(t for t in self.terms if t[0] > e)
        carry = next((tc for tk, tc in self.terms if tk == e), 0)
        return Ordinal(keep + ((e, c + carry),) + other.terms[1:])

    def succ(self) -> "Ordinal":
        return self + Ordinal.nat(1)

    @property
    def finite(self) -> bool:
        return not self.infinite and all(k == 0 for k, _ in self.terms)

    def to_int(self) -> int:
        if not self.finite:
            raise ValueError(f"{self} is not a natural number")
        return self.terms[0][1] if self.terms else 0

    def __str__(self):
        if self.infinite:
            return "inf"
        if not self.terms:
            return "0"
        parts = []
        for k, c in self.terms:
            if k == 0:
                parts.append(str(c))
            elif k == 1:
                parts.append("w" if c == 1 else f"w*{c}")
            else:
                parts.append(f"w^{k}" if c == 1 else f"w^{k}*{c}")
        return "+".join(parts)


def sup_ordinal(items) -> Ordinal:
    out = Ordinal()
    for x in items:
        if out < x:
            out = x
    return out


# --------------------------------------------------------------------------
# Symbolic tree DSL

@dataclass(frozen=True)
class SymbolicTree:
    kind: str  # finite | t1 | t2 | full | chain | comb | dsum | graft
    finite: FiniteTree | None = None
    n: int | None = None
    parts: tuple["SymbolicTree", ...] = ()
    uniform: bool = False  # dsum over an ω-family of one term

    def __str__(self):
        if self.kind == "finite":
            inner = ";".join(node_name(s) for s in self.finite.sorted_nodes())
            return "finite{" + inner + "}"
        if self.kind == "chain":
            return f"chain({self.n})"
        if self.kind == "dsum":
            return f"dsum({','.join(str(p) for p in self.parts)})"
        if self.kind == "graft":
            return f"graft({self.parts[0]},{self.parts[1]})"
        return {"t1": "T1", "t2": "T2", "full": "full", "comb": "comb"}[self.kind]


_DSL_TOKEN = re.compile(r"\s*(T1|T2|full|chain|comb|finite|dsum|graft"
                        r"|\d+|<[^>]*>|[(){},;])")


class _DslParser:
    def __init__(self, text: str):
        self.text = text
        self.toks: list[str] = []
        pos = 0
        while pos < len(text):
            m = _DSL_TOKEN.match(text, pos)
            if not m:
                if text[pos:].strip():
                    raise ValueError(f"bad tree DSL near {text[pos:pos+20]!r}")
                break
            self.toks.append(m.group(1))
            pos = m.end()
        self.i = 0

    def peek(self):
        return self.toks[self.i] if self.i < len(self.toks) else ""

    def next(self):
        t = self.peek()
        self.i += 1
        return t

    def expect(self, v):
        t = self.next()
        if t != v:
            raise ValueError(f"expected {v!r}, found {t!r} in tree DSL")

    def term(self) -> SymbolicTree:
        t = self.next()
        if t == "T1":
            return SymbolicTree("t1")
        if t == "T2":
            return SymbolicTree("t2")
        if t == "full":
            return SymbolicTree("full")
        if t == "comb":
            return SymbolicTree("comb")
        if t == "chain":
            self.expect("(")
            n = int(self.next())
            self.expect(")")
            return SymbolicTree("chain", n=n)
        if t == "finite":
            self.expect("{")
            nodes = []
            while self.peek() != "}":
                nodes.append(parse_node(self.next()))
                if self.peek() == ";":
                    self.next()
            self.next()
            ft = FiniteTree.of(_prefix_close(nodes))
            return SymbolicTree("finite", finite=ft)
        if t == "dsum":
            self.expect("(")
            parts = [self.term()]
            while self.peek() == ",":
                self.next()
                parts.append(self.term())
            self.expect(")")
            return SymbolicTree("dsum", parts=tuple(parts),
                                uniform=len(parts) == 1)
        if t == "graft":
            self.expect("(")
            a = self.term()
            self.expect(",")
            b = self.term()
            self.expect(")")
            return SymbolicTree("graft", parts=(a, b))
        raise ValueError(f"unexpected token {t!r} in tree DSL")


def _prefix_close(nodes):
    out = set()
    for s in nodes:
        for k in range(len(s) + 1):
            out.add(s[:k])
    return out


def build_tree(text: str) -> SymbolicTree:
    p = _DslParser(text)
    t = p.term()
    if p.peek():
        raise ValueError(f"trailing tree DSL input {p.peek()!r}")
    return t


# --------------------------------------------------------------------------
# Truncation

def _tag_first(s: Node, tag: str, i: int) -> Node:
    return ((tag, i, s[0]),) + s[1:]


def truncate(t: SymbolicTree | FiniteTree, depth: int, branch: int) -> FiniteTree:
    """Nodes of length ≤ depth whose integer components are all < branch
    (copy and summand indices included, so the result is finite)."""
    if depth < 0 or branch < 0:
        raise ValueError("depth and branch must be >= 0")
    if isinstance(t, FiniteTree):
        t = SymbolicTree("finite", finite=t)
    return FiniteTree(frozenset(_trunc(t, depth, branch)))


def _trunc(t: SymbolicTree, depth: int, branch: int) -> set:
    if t.kind == "finite":
        return {s for s in t.finite.nodes
                if len(s) <= depth
                and all(v < branch for l in s for v in _letter_ints(l))}
    if t.kind == "full":
        out = {()}
        for d in range(1, depth + 1):
            out |= set(product(range(branch), repeat=d))
        return out
    if t.kind == "chain":
        return {(0,) * k for k in range(min(t.n, depth) + 1)}
    if t.kind == "comb":
        out = {()}
        for n in range(branch):
            for k in range(min(n, depth - 1) + 1):
                if n < branch:
                    out.add((n,) + (0,) * k)
        return out if depth >= 1 else {()}
    if t.kind == "t1":
        out = {()}
        frontier = [()]
        while frontier:
            nxt = []
            for s in frontier:
                if len(s) >= depth:
                    continue
                top = s[-1] if s else branch
                for v in range(min(top, branch)):
                    node = s + (v,)
                    out.add(node)
                    nxt.append(node)
            frontier = nxt
        return out
    if t.kind == "t2":
        out = {()}
        frontier = [()]
        while frontier:
            nxt = []
            for s in frontier:
                if len(s) >= depth:
                    continue
                top = s[-1][1] if s else branch
                for a in range(min(top, branch)):
                    for b in range(branch):
                        node = s + (("p", a, b),)
                        out.add(node)
                        nxt.append(node)
            frontier = nxt
        return out
    if t.kind == "dsum":
        parts = t.parts * branch if t.uniform else t.parts
        out = {()}
        for i, part in enumerate(parts[:branch] if t.uniform else parts):
            for s in _trunc(part, depth, branch):
                if s:
                    out.add(_tag_first(s, "d", i))
        return out
    if t.kind == "graft":
        S, T = t.parts
        base = _trunc(S, depth, branch)
        out = set(base)
        for s in base:
            room = depth - len(s)
            if room < 1:
                continue
            for u in _trunc(T, room, branch):
                if not u:
                    continue
                for c in range(branch):
                    out.add(s + _tag_first(u, "g", c))
        return out
    raise ValueError(t.kind)


# --------------------------------------------------------------------------
# Rank and well-foundedness

def rank_finite(ft: FiniteTree) -> int:
    """DFS rank: leaves 0, internal nodes 1 + max child rank; empty tree 0."""
    if not ft.nodes:
        return 0
    by_len: dict[int, list[Node]] = {}
    for s in ft.nodes:
        by_len.setdefault(len(s), []).append(s)
    rho: dict[Node, int] = {}
    for d in sorted(by_len, reverse=True):
        for s in by_len[d]:
            kids = [rho[c] for c in ft.children(s)]
            rho[s] = 1 + max(kids) if kids else 0
    return rho[()]


def rank(t: SymbolicTree | FiniteTree) -> Ordinal:
    if isinstance(t, FiniteTree):
        return Ordinal.nat(rank_finite(t))
    if t.kind == "finite":
        return Ordinal.nat(rank_finite(t.finite))
    if t.kind in ("t1", "t2", "comb"):
        return Ordinal.omega()
    if t.kind == "full":
        return Ordinal.infinity()
    if t.kind == "chain":
        return Ordinal.nat(t.n)
    if t.kind == "dsum":
        return sup_ordinal(rank(p) for p in t.parts)
    if t.kind == "graft":
        # end-nodes of the base acquire the grafted rank below them,
        # so ranks add with the grafted tree on the left
        S, T = t.parts
        return rank(T) + rank(S)
    raise ValueError(t.kind)


def well_founded(t: SymbolicTree | FiniteTree) -> bool:
    if isinstance(t, FiniteTree):
        return True
    if t.kind == "full":
        return False
    if t.kind in ("finite", "t1", "t2", "chain", "comb"):
        return True
    return all(well_founded(p) for p in t.parts)


# --------------------------------------------------------------------------
# Metrics and ℓ

def baire_dist(s: Node, t: Node) -> Fraction:
    """1/(Δ+1), Δ the longest common prefix length; 0 iff s = t."""
    s, t = tuple(s), tuple(t)
    if s == t:
        return ZERO
    delta = 0
    for a, b in zip(s, t):
        if a != b:
            break
        delta += 1
    return Fraction(1, delta + 1)


def _alphabet_cut(nodes, k: int):
    """Restriction to k^{≤k}: length ≤ k, integer components < k."""
    return frozenset(s for s in nodes
                     if len(s) <= k
                     and all(v < k for l in s for v in _letter_ints(l)))


def tree_space_dist(a: FiniteTree, b: FiniteTree) -> Fraction:
    """1/(δ+1) with δ = min{k : a∩k^{≤k} ≠ b∩k^{≤k}}; 0 for equal trees."""
    if a.nodes == b.nodes:
        return ZERO
    k = 0
    while _alphabet_cut(a.nodes, k) == _alphabet_cut(b.nodes, k):
        k += 1
    return Fraction(1, k + 1)


@dataclass(frozen=True)
class PairTree:
    """Finite subtree of ω^<ω × ω^<ω in the coordinatewise prefix order."""
    pairs: frozenset  # of (Node, Node)

    def __post_init__(self):
        # closed under simultaneous restriction: shorten whichever
        # coordinate(s) have maximal length by one step
        for s, t in self.pairs:
            m = max(len(s), len(t))
            if m == 0:
                continue
            parent = (s[:m - 1] if len(s) == m else s,
                      t[:m - 1] if len(t) == m else t)
            if parent not in self.pairs:
                raise ValueError(
                    f"pair tree not closed under restriction at "
                    f"({node_name(s)}, {node_name(t)})")

    @staticmethod
    def of(pairs) -> "PairTree":
        return PairTree(frozenset((tuple(s), tuple(t)) for s, t in pairs))

    def sorted_pairs(self):
        return sorted(self.pairs, key=lambda p: (node_key(p[0]), node_key(p[1])))

    def __contains__(self, p):
        s, t = p
        return (tuple(s), tuple(t)) in self.pairs

    def __len__(self):
        return len(self.pairs)


def pair_tree_dist(R: PairTree, S: PairTree) -> Fraction:
    """1/k for the largest k with agreement on (k^{≤k})²; ≤ 1 by convention."""
    if R.pairs == S.pairs:
        return ZERO

    def cut(P, k):
        return frozenset((s, t) for s, t in P.pairs
                         if len(s) <= k and len(t) <= k
                         and all(v < k for l in s + t for v in _letter_ints(l)))

    k = 0
    while cut(R, k + 1) == cut(S, k + 1):
        k += 1
    return Fraction(1, max(k, 1))


def ell(t: Node) -> int:
    """ℓ(t) = max({|t|} ∪ range(t)) for plain integer nodes."""
    if any(not isinstance(l, int) for l in t):
        raise TypeError("ell is defined for integer-entry nodes")
    return max((len(t),) + t) if t else 0


def project(R: PairTree, x) -> FiniteTree:
    """R_x = { s : (s, x↾|s|) ∈ R }."""
    x = tuple(x)
    need = max((len(s) for s, _ in R.pairs), default=0)
    if len(x) < need:
        raise ValueError(f"projection point too short: need length {need}")
    nodes = {s for s, t in R.pairs if t == x[:len(s)]}
    return FiniteTree(frozenset(nodes))


# --------------------------------------------------------------------------
# Tree extraction from structures

@dataclass(frozen=True)
class ExtractedTree:
    tree: FiniteTree
    point_of: dict  # Node -> point name
    node_of: dict  # point name -> Node
    diagnostics: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.diagnostics


def extract_tree(N, sort: str | None = None) -> ExtractedTree:
    """Recover the tree order a ⊑ b iff a = f_k(b) from the f_k tables.

    Points are laid out as nodes by following f-levels; f_k must satisfy
    f_k ∘ f_j = f_k for k ≤ j and yield a unique root, else diagnostics are
    reported and the partial layout returned."""
    fre = re.compile(r"^f(\d+)$")
    levels: dict[int, object] = {}
    for name, fn in N.functions.items():
        m = fre.match(name)
        if m and len(fn.arg_sorts) == 1 and fn.out_sort == fn.arg_sorts[0]:
            if sort is None or fn.arg_sorts[0] == sort:
                levels[int(m.group(1))] = fn
    if not levels:
        raise ValueError("no f_k level functions found")
    s = next(iter(levels.values())).arg_sorts[0]
    sd = N.sorts[s]
    diags: list[str] = []
    ks = sorted(levels)
    for k in ks:
        for j in ks:
            if k <= j:
                tk, tj = levels[k].table, levels[j].table
                bad = tk[tj] != tk
                if bad.any():
                    i = int(bad.nonzero()[0][0])
                    diags.append(f"f{k}(f{j}(x)) != f{k}(x) at x={sd.points[i]}")

    # parent of a = f_k(a) at the largest k where f_k moves a; a point fixed
    # by every level map is a root (requires f0 to see level-1 parents)
    n = sd.size
    parent = {}
    for i in range(n):
        moved = [k for k in ks if int(levels[k].table[i]) != i]
        parent[i] = int(levels[max(moved)].table[i]) if moved else None
    if 0 not in levels and sum(1 for i in range(n) if parent[i] is None) > 1:
        diags.append("no f0 level function: root and height-1 points "
                     "are indistinguishable")
    top = [i for i in range(n) if parent[i] is None]
    if len(top) != 1:
        diags.append(f"expected a unique root, found {len(top)}")
    node_of_idx: dict[int, Node] = {}
    tree_nodes = set()
    if len(top) == 1:
        node_of_idx[top[0]] = ()
        tree_nodes.add(())
        kids: dict[int, list[int]] = {}
        for i in range(n):
            if parent[i] is not None:
                kids.setdefault(parent[i], []).append(i)
        frontier = [top[0]]
        while frontier:
            nxt = []
            for p in frontier:
                for c, i in enumerate(sorted(kids.get(p, []),
                                             key=lambda j: sd.points[j])):
                    node = node_of_idx[p] + (c,)
                    node_of_idx[i] = node
                    tree_nodes.add(node)
                    nxt.append(i)
            frontier = nxt
        if len(node_of_idx) != n:
            diags.append("order is not connected: some points unreachable from root")
    tree = FiniteTree(frozenset(tree_nodes))
    point_of = {v: sd.points[k] for k, v in node_of_idx.items()}
    node_of = {sd.points[k]: v for k, v in node_of_idx.items()}
    return ExtractedTree(tree, point_of, node_of, tuple(diags))
