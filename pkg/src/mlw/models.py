"""Constructors for the concrete example structures at finite truncation.

Builders: the sequence box N with level maps (optionally with the shadow
function h and its witness report), the two-sort extension N2 (tree sort +
membership predicate ee), the three-sort extension N3 (pair-tree sort +
ternary ee3 and a distinguished constant), the x-axis projection structure,
the coloured-tree family M with pruned variant M_l and the discrete-sort
bridge M4, plus class-collapsed canonical truncations for isomorphism
experiments, the partial-type builders that live on these structures, the
height-gap predicates, and the coloured-family file format."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from fractions import Fraction
from itertools import product

import numpy as np

from .conditions import Condition, PartialType, closed
from .formulas import (App, Const, Dist, Formula, Pred, Rat, Var, absdiff,
                       affine, fmax, fmin, fmonus, ftsum, inf, neg, sup)
from .moduli import Modulus
from .structures import FiniteStructure
from .trees import (FiniteTree, PairTree, _letter_ints, ell, node_key,
                    node_name, parse_node)
from .values import ONE, ZERO

POINT_CAP = 1500  # per-sort default cap keeping exact validation feasible


def _cap_check(n: int, cap: int, what: str):
    if n > cap:
        raise ValueError(f"parameter cap exceeded: {what} needs {n} points, "
                         f"cap is {cap}")


def _lcm_upto(n: int) -> int:
    out = 1
    for k in range(2, n + 1):
        out = out * k // math.gcd(out, k)
    return out


# --------------------------------------------------------------------------
# Sequence boxes and their metric tables

def box_nodes(depth: int, branch: int) -> list[tuple]:
    """All sequences of length <= depth with entries < branch, level-major
    lexicographic (the enumeration s_0, s_1, ...)."""
    out: list[tuple] = [()]
    for d in range(1, depth + 1):
        out.extend(product(range(branch), repeat=d))
    return out


def _fk(s: tuple, k: int) -> tuple:
    return s[:k] if k <= len(s) else s


def _prefix_table(nodes) -> tuple[int, np.ndarray]:
    """Scaled distance matrix for the longest-common-prefix metric
    1/(shared+1); identical sequences are at distance 0."""
    nodes = list(nodes)
    depth = max((len(s) for s in nodes), default=0)
    ids: dict = {}
    arr = np.full((len(nodes), max(depth, 1)), -1, dtype=np.int64)
    for i, s in enumerate(nodes):
        for j, letter in enumerate(s):
            arr[i, j] = ids.setdefault(letter, len(ids))
    eq = arr[:, None, :] == arr[None, :, :]
    delta = np.cumprod(eq, axis=2).sum(axis=2)
    den = _lcm_upto(depth + 1)
    dmat = den // (delta + 1)
    dmat[delta == arr.shape[1]] = 0
    np.fill_diagonal(dmat, 0)
    return den, dmat.astype(np.int64)


def _level_maps(nodes, names, depth: int, sort: str):
    by_name = dict(zip(names, nodes))
    fns = {}
    mods = {}
    for k in range(depth + 1):
        fns[f"f{k}"] = ((sort,), sort,
                        lambda a, k=k: node_name(_fk(by_name[a], k)))
        mods[f"f{k}"] = Modulus.lipschitz(1)
    return fns, mods


def build_N(depth: int, branch: int, shadow: bool = False,
            cap: int = POINT_CAP) -> FiniteStructure:
    """Single-sort sequence box: prefix metric, level maps f_0..f_depth and,
    with shadow=True, the 3-Lipschitz function h collapsing the enumeration
    (h(<n>) = s_n, h(x) = f_1(x) elsewhere)."""
    nodes = box_nodes(depth, branch)
    _cap_check(len(nodes), cap, "N box")
    names = [node_name(s) for s in nodes]
    den, dmat = _prefix_table(nodes)
    fns, mods = _level_maps(nodes, names, depth, "D1")
    if shadow:
        by_name = dict(zip(names, nodes))

        def h(a):
            s = by_name[a]
            if len(s) == 1:
                return names[s[0]]
            return node_name(_fk(s, 1))
        fns["h"] = (("D1",), "D1", h)
        mods["h"] = Modulus.lipschitz(3)
    label = f"N(depth={depth},branch={branch}" + (",shadow=1)" if shadow else ")")
    return FiniteStructure.build(
        {"D1": names}, {"D1": (den, dmat)}, fns, {}, mods,
        {"label": label, "depth": depth, "branch": branch,
         "density": {"D1": None}})


def shadow_body() -> Formula:
    """Inner expression of the shadow sentence: the distance to the shadow
    image plus the level-1 displacement of the witness, truncated at 1."""
    x0, x1 = Var("x0", "D1"), Var("x1", "D1")
    return ftsum(Dist(x0, App("h", (x1,))),
                 Dist(App("f1", (x1,)), x1))


def shadow_sentence() -> Formula:
    return sup(Var("x0", "D1"), inf(Var("x1", "D1"), shadow_body()))


@dataclass(frozen=True)
class ShadowRow:
    point: str
    witness: str
    value: Fraction
    mode: str  # "box" when the witness is a point; "extended" when the
    # witness <n> lies outside the box and is certified by the defining
    # rules h(<n>) = s_n, f1(<n>) = <n>


def shadow_report(M: FiniteStructure) -> list[ShadowRow]:
    """Per-point witness for the vanishing inner infimum of the shadow
    sentence.  In-box witnesses are verified by direct evaluation;
    out-of-box witnesses <n> are certified by the rules of the intended
    structure, under which both summands vanish identically."""
    if "h" not in M.functions:
        raise ValueError("structure has no shadow function h")
    from .structures import eval_table
    depth, branch = M.meta["depth"], M.meta["branch"]
    enum = box_nodes(depth, branch)
    den, tab = eval_table(shadow_body(), M, [("x0", "D1"), ("x1", "D1")])
    rows = []
    pts = M.sorts["D1"].points
    for i, s in enumerate(enum):
        j = int(np.argmin(tab[i]))
        if tab[i, j] == 0:
            rows.append(ShadowRow(node_name(s), pts[j], ZERO, "box"))
        else:
            rows.append(ShadowRow(node_name(s), f"<{i}>", ZERO, "extended"))
    return rows


# --------------------------------------------------------------------------
# Tree sort: enumeration and metric table

def _tree_sort_key(t: FiniteTree):
    return (len(t.nodes), tuple(sorted(node_key(s) for s in t.nodes)))


def enumerate_trees(depth: int, branch: int) -> list[FiniteTree]:
    """All nonempty subtrees of the (depth, branch) box, smallest first;
    the order fixes the constant names S_n."""
    def gen(d: int) -> list[frozenset]:
        if d == 0:
            return [frozenset({()})]
        subs = gen(d - 1)
        out = []
        for combo in product(*([[None] + subs] * branch)):
            nodes = {()}
            for a, sub in enumerate(combo):
                if sub is not None:
                    nodes |= {(a,) + s for s in sub}
            out.append(frozenset(nodes))
        return out
    trees = [FiniteTree(ns) for ns in gen(depth)]
    trees.sort(key=_tree_sort_key)
    return trees


def _cut_key(nodes, k):
    return frozenset(s for s in nodes
                     if len(s) <= k
                     and all(v < k for letter in s for v in _letter_ints(letter)))


def _tree_table(trees) -> tuple[int, np.ndarray]:
    """Scaled distance matrix for the agreement metric on trees: 1/(j+1)
    with j the first alphabet cut where the trees differ."""
    kmax = 1
    for t in trees:
        for s in t.nodes:
            kmax = max(kmax, len(s),
                       *(v + 1 for letter in s for v in _letter_ints(letter)))
    sig_ids = []
    for k in range(kmax + 1):
        seen: dict = {}
        sig_ids.append(np.array(
            [seen.setdefault(_cut_key(t.nodes, k), len(seen)) for t in trees],
            dtype=np.int64))
    eq = np.stack([ids[:, None] == ids[None, :] for ids in sig_ids])
    delta = np.cumprod(eq, axis=0).sum(axis=0)
    den = _lcm_upto(kmax + 2)
    dmat = np.where(delta > kmax, 0, den // (delta + 1)).astype(np.int64)
    np.fill_diagonal(dmat, 0)
    return den, dmat


def build_N2(depth: int, branch: int, treedepth: int = 2, treebranch: int = 2,
             extra_trees=(), cap: int = POINT_CAP) -> FiniteStructure:
    """Two-sort box: D1 as in build_N, D2 the enumerated subtrees of the
    (treedepth, treebranch) box (constants S_n) plus any extra trees
    (points E_j), with the membership predicate ee."""
    nodes = box_nodes(depth, branch)
    _cap_check(len(nodes), cap, "N2 node sort")
    names = [node_name(s) for s in nodes]
    den1, dmat1 = _prefix_table(nodes)
    trees = enumerate_trees(treedepth, treebranch)
    n_s = len(trees)
    seen = {t.nodes for t in trees}
    extras = []
    for t in extra_trees:
        t = t if isinstance(t, FiniteTree) else FiniteTree.of(t)
        if t.nodes not in seen:
            seen.add(t.nodes)
            extras.append(t)
    all_trees = trees + extras
    _cap_check(len(all_trees), cap, "N2 tree sort")
    tnames = [f"S{i}" for i in range(n_s)] + [f"E{j}" for j in range(len(extras))]
    den2, dmat2 = _tree_table(all_trees)
    tree_of = dict(zip(tnames, all_trees))
    node_of = dict(zip(names, nodes))

    def ee(a, b):
        t, S = node_of[a], tree_of[b]
        return ZERO if t in S else Fraction(1, ell(t) + 2)

    fns, mods = _level_maps(nodes, names, depth, "D1")
    mods["ee"] = Modulus.lipschitz(1)
    return FiniteStructure.build(
        {"D1": names, "D2": tnames},
        {"D1": (den1, dmat1), "D2": (den2, dmat2)},
        fns, {"ee": (("D1", "D2"), ee)}, mods,
        {"label": f"N2(depth={depth},branch={branch},treedepth={treedepth},"
                  f"treebranch={treebranch})",
         "depth": depth, "branch": branch, "treedepth": treedepth,
         "treebranch": treebranch, "nS": n_s,
         "density": {"D1": None, "D2": None}})


def relabel(t: FiniteTree, branch_cap: int, depth_cap: int) -> FiniteTree:
    """Isomorphic copy of t inside the (depth_cap, branch_cap) integer box:
    at every node the children, in canonical order, receive consecutive
    integer letters.  Fails if t is too wide or deep for the box."""
    t = t if isinstance(t, FiniteTree) else FiniteTree.of(t)
    out = {()}
    frontier = [((), ())]
    while frontier:
        src, dst = frontier.pop()
        if len(dst) >= depth_cap and t.children(src):
            raise ValueError("tree too deep for the box")
        for i, child in enumerate(t.children(src)):
            if i >= branch_cap:
                raise ValueError("tree too wide for the box")
            nd = dst + (i,)
            out.add(nd)
            frontier.append((child, nd))
    return FiniteTree(frozenset(out))


# --------------------------------------------------------------------------
# Pair-tree sort

def enumerate_pair_trees(depth: int, branch: int) -> list[PairTree]:
    """All nonempty subtrees of the (depth, branch) pair box (equal-length
    coordinate pairs), smallest first; the order fixes the constants R_n."""
    letters = list(product(range(branch), range(branch)))

    def gen(d: int) -> list[frozenset]:
        if d == 0:
            return [frozenset({((), ())})]
        subs = gen(d - 1)
        out = []
        for combo in product(*([[None] + subs] * len(letters))):
            pairs = {((), ())}
            for (a, b), sub in zip(letters, combo):
                if sub is not None:
                    pairs |= {((a,) + s, (b,) + t) for s, t in sub}
            out.append(frozenset(pairs))
        return out
    pts = [PairTree(ps) for ps in gen(depth)]
    pts.sort(key=lambda R: (len(R.pairs), tuple(sorted(
        node_key(s) + node_key(t) for s, t in R.pairs))))
    return pts


def _pair_cut_key(pairs, k):
    return frozenset((s, t) for s, t in pairs
                     if len(s) <= k and len(t) <= k
                     and all(v < k for letter in s + t
                             for v in _letter_ints(letter)))


def _pair_table(ptrees) -> tuple[int, np.ndarray]:
    """Distance 1/max(j-1, 1) with j the first cut where the pair trees
    differ (cut 0 never differs: every pair tree holds the root pair)."""
    kmax = 1
    for R in ptrees:
        for s, t in R.pairs:
            kmax = max(kmax, len(s), len(t),
                       *(v + 1 for letter in s + t for v in _letter_ints(letter)))
    sig_ids = []
    for k in range(kmax + 2):
        seen: dict = {}
        sig_ids.append(np.array(
            [seen.setdefault(_pair_cut_key(R.pairs, k), len(seen))
             for R in ptrees], dtype=np.int64))
    eq = np.stack([ids[:, None] == ids[None, :] for ids in sig_ids])
    delta = np.cumprod(eq, axis=0).sum(axis=0)
    den = _lcm_upto(kmax + 1)
    with np.errstate(divide="ignore"):
        dmat = np.where(delta > kmax + 1, 0,
                        den // np.maximum(delta - 1, 1)).astype(np.int64)
    np.fill_diagonal(dmat, 0)
    return den, dmat


def build_N3(depth: int, branch: int, treedepth: int = 2, treebranch: int = 2,
             pairdepth: int = 1, pairbranch: int = 2, c: str | None = "<>",
             extra_pairs=(), cap: int = 600) -> FiniteStructure:
    """Three-sort box: N2 plus the pair-tree sort D3 (constants R_n, extra
    points Q_j), the ternary membership predicate ee3, and a distinguished
    node constant c (None leaves it out).

    The default cap is lower than elsewhere: validating the ternary
    predicate's modulus scales with |D1|^2 * |D1| * |D3|."""
    base = build_N2(depth, branch, treedepth, treebranch, cap=cap)
    ptrees = enumerate_pair_trees(pairdepth, pairbranch)
    n_r = len(ptrees)
    seen = {R.pairs for R in ptrees}
    extras = []
    for R in extra_pairs:
        R = R if isinstance(R, PairTree) else PairTree.of(R)
        if R.pairs not in seen:
            seen.add(R.pairs)
            extras.append(R)
    all_pts = ptrees + extras
    _cap_check(len(all_pts), cap, "N3 pair sort")
    pnames = [f"R{i}" for i in range(n_r)] + [f"Q{j}" for j in range(len(extras))]
    den3, dmat3 = _pair_table(all_pts)
    pair_of = dict(zip(pnames, all_pts))
    nodes = box_nodes(depth, branch)
    names = [node_name(s) for s in nodes]
    node_of = dict(zip(names, nodes))
    tnames = list(base.sorts["D2"].points)
    tree_of = {nm: t for nm, t in zip(
        tnames, enumerate_trees(treedepth, treebranch))}

    def ee(a, b):
        t, S = node_of[a], tree_of[b]
        return ZERO if t in S else Fraction(1, ell(t) + 2)

    # ee3 materialized directly: base value 1/(max(ell(s),ell(t))+2),
    # zeroed on the membership pairs of each pair tree.
    ells = np.array([ell(s) for s in nodes], dtype=np.int64)
    pairmax = np.maximum.outer(ells, ells)
    den_e = _lcm_upto(int(pairmax.max()) + 2)
    ee3_tab = np.repeat((den_e // (pairmax + 2))[:, :, None],
                        len(all_pts), axis=2)
    node_idx = {s: i for i, s in enumerate(nodes)}
    for r_i, R in enumerate(all_pts):
        for s, t in R.pairs:
            if s in node_idx and t in node_idx:
                ee3_tab[node_idx[s], node_idx[t], r_i] = 0

    fns, mods = _level_maps(nodes, names, depth, "D1")
    mods["ee"] = Modulus.lipschitz(1)
    mods["ee3"] = Modulus.lipschitz(1)
    if c is not None:
        if c not in node_of:
            raise ValueError(f"constant c must name a node, got {c!r}")
        fns["c"] = ((), "D1", lambda: c)
    s1 = base.sorts["D1"]
    s2 = base.sorts["D2"]
    return FiniteStructure.build(
        {"D1": names, "D2": tnames, "D3": pnames},
        {"D1": (s1.den, s1.dmat.copy()), "D2": (s2.den, s2.dmat.copy()),
         "D3": (den3, dmat3)},
        fns, {"ee": (("D1", "D2"), ee),
              "ee3": (("D1", "D1", "D3"), (den_e, ee3_tab))},
        mods,
        {"label": f"N3(depth={depth},branch={branch},pairdepth={pairdepth},"
                  f"pairbranch={pairbranch},c={c})",
         "depth": depth, "branch": branch, "nS": base.meta["nS"], "nR": n_r,
         "density": {"D1": None, "D2": None, "D3": None}})


# --------------------------------------------------------------------------
# Projection structure

def enc_value(s: tuple) -> Fraction:
    """First-coordinate code: sum over positions i of the weight 1/(i(i+1))
    scaled by 1 - 2^{-entry}; 1-Lipschitz for the prefix metric because the
    tail weight beyond a shared prefix of length d telescopes to 1/(d+1)."""
    out = ZERO
    for i, v in enumerate(s, start=1):
        out += Fraction(1, i * (i + 1)) * (1 - Fraction(1, 2 ** v))
    return out


def build_Projection(depth: int, branch: int, pairs: PairTree | None = None,
                     cap: int = POINT_CAP) -> FiniteStructure:
    """Pairs of equal-length sequences under the max of the two prefix
    metrics, with the unary predicate f reading off the first-coordinate
    code.  pairs=None takes every pair in the box."""
    if pairs is None:
        # count first so oversized boxes are rejected before enumeration
        _cap_check(sum(branch ** (2 * d) for d in range(depth + 1)), cap,
                   "projection box")
        pts = [(s, t) for d in range(depth + 1)
               for s in product(range(branch), repeat=d)
               for t in product(range(branch), repeat=d)]
    else:
        pts = pairs.sorted_pairs()
    _cap_check(len(pts), cap, "projection box")
    names = [node_name(s) + "|" + node_name(t) for s, t in pts]
    dens, ds = _prefix_table([p[0] for p in pts])
    dent, dt = _prefix_table([p[1] for p in pts])
    den = dens * dent // math.gcd(dens, dent)
    dmat = np.maximum(ds * (den // dens), dt * (den // dent))
    vals = dict(zip(names, (enc_value(s) for s, _ in pts)))
    return FiniteStructure.build(
        {"D1": names}, {"D1": (den, dmat)}, {},
        {"f": (("D1",), lambda a: vals[a])},
        {"f": Modulus.lipschitz(1)},
        {"label": f"Projection(depth={depth},branch={branch})",
         "depth": depth, "branch": branch, "density": {"D1": None}})


# --------------------------------------------------------------------------
# Coloured families

@dataclass(frozen=True)
class KFunction:
    """Finitely supported colour-offset function on two-coordinate nodes."""
    support: tuple = ()  # ((node, value), ...), node a tuple of pair letters
    mult: object = "omega"  # declared multiplicity in the family list

    def value(self, node, base: int) -> int:
        for s, v in self.support:
            if s == node:
                return v
        return base


@dataclass(frozen=True)
class KFamily:
    base: int
    functions: tuple[KFunction, ...] = (KFunction(),)

    def max_value(self) -> int:
        out = self.base
        for f in self.functions:
            for _, v in f.support:
                out = max(out, v)
        return out


def default_kfamily() -> KFamily:
    """Base offset 0 with one raised node: nontrivial yet small colours."""
    return KFamily(0, (KFunction((((("p", 1, 0),), 2),)),))


def parse_kfamily(text: str) -> KFamily:
    base = 0
    fns = []
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("base="):
            base = int(line.split("=", 1)[1])
            continue
        mult: object = "omega"
        entries = []
        for tok in line.split():
            key, _, val = tok.partition("=")
            if key == "mult":
                mult = "omega" if val == "omega" else int(val)
            else:
                entries.append((parse_node(key), int(val)))
        entries.sort(key=lambda e: node_key(e[0]))
        fns.append(KFunction(tuple(entries), mult))
    if not fns:
        fns.append(KFunction())
    return KFamily(base, tuple(fns))


def load_kfamily(path: str) -> KFamily:
    with open(path) as fh:
        return parse_kfamily(fh.read())


def save_kfamily(K: KFamily, path: str):
    lines = [f"base={K.base}"]
    for f in K.functions:
        toks = [f"mult={f.mult}"]
        toks.extend(f"{node_name(s)}={v}" for s, v in f.support)
        lines.append(" ".join(toks))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _t2_box(depth: int, branch: int, pair_branch: int) -> list[tuple]:
    """Two-coordinate nodes with strictly decreasing first coordinates,
    first entries < branch, second entries < pair_branch."""
    out = [()]
    frontier = [()]
    while frontier:
        nxt = []
        for s in frontier:
            if len(s) >= depth:
                continue
            top = s[-1][1] if s else branch
            for a in range(min(top, branch)):
                for b in range(pair_branch):
                    node = s + (("p", a, b),)
                    out.append(node)
                    nxt.append(node)
        frontier = nxt
    out.sort(key=node_key)
    return out


def _strip_tag(letter):
    return letter[2] if isinstance(letter, tuple) and letter[0] in ("d", "g") \
        else letter


def _bottom_identity(s: tuple) -> tuple:
    return tuple(_strip_tag(x) for x in s)


def build_M(depth: int, branch: int, pair_branch: int = 2, top_depth: int = 2,
            top_branch: int = 2, top_pair: int = 1, top_copies: int = 1,
            k: KFamily | None = None, colours: int | None = None,
            l: int | None = None, extend_to: int | None = None,
            x_sort: bool = False, cap: int = POINT_CAP) -> FiniteStructure:
    """Coloured two-coordinate tree with uncoloured grafted top copies.

    Bottom nodes are the two-coordinate box; at every bottom node,
    top_copies tagged copies of the (top_depth, top_branch, top_pair) box
    are grafted, within the total height bound `depth`.  Colours: a bottom
    node t at height i carries P_{i,j} exactly for j = k(parent) + second
    coordinate of its last letter; the root carries P_{0,0}; top nodes are
    uncoloured.  l prunes bottom nodes without room to reach level l;
    extend_to prunes every node lacking a descendant at that height;
    x_sort adds the discrete sort X with the predecessor map g and the
    identity bridge h."""
    K = k or default_kfamily()
    if len(K.functions) > 1:
        raise ValueError("explicit builds take a single colour function; "
                         "use canonical_truncation for whole families")
    kfn = K.functions[0]
    bdepth = min(depth, branch)
    bottom = _t2_box(bdepth, branch, pair_branch)
    if l is not None:
        bottom = [s for s in bottom
                  if not s or s[-1][1] >= l - len(s)]
        kept = set(bottom)
        bottom = [s for s in bottom
                  if all(s[:i] in kept for i in range(len(s)))]
    nodes = list(bottom)
    bottom_set = set(bottom)
    for s in bottom:
        room = min(top_depth, depth - len(s))
        if room < 1:
            continue
        for c in range(top_copies):
            for u in _t2_box(room, top_branch, top_pair):
                if u:
                    nodes.append(s + (("g", c, u[0]),) + u[1:])
    if extend_to is not None:
        reach = {}
        for s in sorted(nodes, key=len, reverse=True):
            best = len(s)
            for t in nodes:
                if len(t) == len(s) + 1 and t[:len(s)] == s:
                    best = max(best, reach[t])
            reach[s] = best
        nodes = [s for s in nodes if reach[s] >= extend_to]
        bottom_set &= set(nodes)
    nodes.sort(key=node_key)
    _cap_check(len(nodes), cap, "M box")
    names = [node_name(s) for s in nodes]
    node_of = dict(zip(names, nodes))
    den, dmat = _prefix_table(nodes)
    fns, mods = _level_maps(nodes, names, depth, "D1")

    jmax = colours if colours is not None else max(
        depth, K.max_value() + pair_branch - 1)

    def colour_of(s):
        if not s:
            return (0, 0)
        if s not in bottom_set:
            return None
        i = len(s)
        kv = kfn.value(_bottom_identity(s[:-1]), K.base)
        return (i, kv + s[-1][2])

    colour = {node_name(s): colour_of(s) for s in nodes}
    preds = {}
    for i in range(depth + 1):
        for j in range(jmax + 1):
            preds[f"P{i}_{j}"] = (
                ("D1",),
                lambda a, ij=(i, j): ZERO if colour[a] == ij else ONE)
            mods[f"P{i}_{j}"] = Modulus.lipschitz(i + 1)

    points = {"D1": names}
    metric = {"D1": (den, dmat)}
    if x_sort:
        xnames = ["X" + nm for nm in names]
        points["X"] = xnames
        nx = len(xnames)
        metric["X"] = (1, np.ones((nx, nx), dtype=np.int64)
                       - np.eye(nx, dtype=np.int64))

        def g(a):
            s = node_of[a[1:]]
            return "X" + node_name(s[:-1] if s else s)
        fns["g"] = (("X",), "X", g)
        fns["h"] = (("X",), "D1", lambda a: a[1:])
        mods["g"] = Modulus.lipschitz(1)
        mods["h"] = Modulus.lipschitz(1)
    sel = "M4" if x_sort else ("M_l" if l is not None else "M")
    meta = {"label": f"{sel}(depth={depth},branch={branch},"
                     f"pair_branch={pair_branch},top_depth={top_depth})",
            "depth": depth, "branch": branch, "colour_max": jmax,
            "density": {"D1": None}}
    if l is not None:
        meta["pruned_to"] = l
    return FiniteStructure.build(points, metric, fns, preds, mods, meta)


def build_M_l(l: int, depth: int, branch: int, **kw) -> FiniteStructure:
    return build_M(depth, branch, l=l, **kw)


def build_M4(depth: int, branch: int, **kw) -> FiniteStructure:
    return build_M(depth, branch, x_sort=True, **kw)


def is_bottom_terminal(name: str, height: int) -> bool:
    """Direct scan: bottom node of the given height whose first coordinate
    ends in 0 (no room for further bottom extensions)."""
    s = parse_node(name)
    if len(s) != height or height == 0:
        return False
    if any(not (isinstance(x, tuple) and x[0] == "p") for x in s):
        return False
    return s[-1][1] == 0


# --------------------------------------------------------------------------
# Canonical class-collapsed truncations

def _merge_children(children):
    """Combine (type id, multiplicity) pairs; unbounded absorbs."""
    acc: dict = {}
    for tid, mult in children:
        cur = acc.get(tid)
        if cur == "omega" or mult == "omega":
            acc[tid] = "omega"
        else:
            acc[tid] = (cur or 0) + mult
    return tuple(sorted(acc.items(),
                        key=lambda e: (e[0], -1 if e[1] == "omega" else e[1])))


class _Canon:
    """Subtree types of the class-collapsed m-level truncation.

    Rooms are stored capped at the remaining depth (larger rooms behave
    identically within the truncation).  Support entries travel down the
    concrete path they name, as singleton child classes; everything else
    is a class child with unbounded multiplicity."""

    def __init__(self, base, m, r, l):
        self.base, self.m, self.r, self.l = base, m, r, l
        self.types: dict = {}
        self.records: list = []
        self.memo: dict = {}

    def intern(self, col, children):
        key = (col, children)
        tid = self.types.get(key)
        if tid is None:
            tid = self.types[key] = len(self.records)
            self.records.append(key)
        return tid

    def top(self, i, room):
        key = ("top", i, room)
        if key in self.memo:
            return self.memo[key]
        rem = self.m - 1 - i
        kids = []
        if rem > 0:
            for c in range(min(room, rem)):
                kids.append((self.top(i + 1, min(c, rem - 1)), "omega"))
        tid = self.intern(None, _merge_children(kids))
        self.memo[key] = tid
        return tid

    def bot(self, i, room, kval, sp, col):
        key = ("bot", i, room, kval, sp, col)
        if key in self.memo:
            return self.memo[key]
        rem = self.m - 1 - i
        kids = []
        if rem > 0:
            for c in range(rem):  # grafted top copies, every room class
                kids.append((self.top(i + 1, c), "omega"))
            rooms = range(min(room, rem))
            for rho in rooms:
                if self.l is not None and i + 1 < self.l and rho < self.l - i - 1:
                    continue
                for j in range(kval, self.r):  # visible colour classes
                    kids.append((self.bot(i + 1, rho, self.base, (), j),
                                 "omega"))
                kids.append((self.bot(i + 1, rho, self.base, (), None),
                             "omega"))
            by_first: dict = {}
            for path, v in sp:
                by_first.setdefault(path[0], []).append((path[1:], v))
            for letter, rest in sorted(by_first.items(),
                                       key=lambda e: node_key((e[0],))):
                a, b = letter[1], letter[2]
                rho = min(a, rem - 1)
                if self.l is not None and i + 1 < self.l and a < self.l - i - 1:
                    continue
                childk = self.base
                deeper = []
                for path, v in rest:
                    if path:
                        deeper.append((path, v))
                    else:
                        childk = v
                j = kval + b
                kids.append((self.bot(i + 1, rho, childk,
                                      tuple(sorted(deeper, key=lambda e:
                                                   node_key(e[0]))),
                                      j if j < self.r else None), 1))
        tid = self.intern(col, _merge_children(kids))
        self.memo[key] = tid
        return tid


def canonical_truncation(family: KFamily, m: int, r: int, mu: int = 2,
                         l: int | None = None, perturb: bool = False,
                         cap: int = POINT_CAP) -> FiniteStructure:
    """Class-collapsed m-level truncation of the summed coloured family
    (pruned below level l when given), rendered with mu points per
    unbounded child class.  perturb=True bumps the first coloured class
    met in build order to mu+1 points, breaking the label counts."""
    if not (0 < m and 0 < r):
        raise ValueError("m and r must be positive")
    canon = _Canon(family.base, m, r, l)
    root_kids = []
    for f in family.functions:
        rootk = family.base
        sp = []
        for node, v in f.support:
            if node:
                sp.append((node, v))
            else:
                rootk = v
        kids_tid = canon.bot(0, m - 1, rootk, tuple(sorted(
            sp, key=lambda e: node_key(e[0]))), None)
        # summand multiplicities are unbounded, so every child class of
        # every summand root recurs unboundedly under the shared root
        col, children = canon.records[kids_tid]
        root_kids.extend((tid, "omega") for tid, _ in children)
    root_tid = canon.intern((0, 0), _merge_children(root_kids))

    names: list[str] = []
    levels: list[int] = []
    cols: list = []
    parents: list[int] = []
    paths: list[tuple] = []
    state = {"armed": perturb}

    def emit(tid, parent, level, path):
        idx = len(names)
        names.append(f"n{idx}")
        col, children = canon.records[tid]
        levels.append(level)
        cols.append((level, col[1]) if isinstance(col, tuple) else
                    ((level, col) if col is not None else None))
        parents.append(parent)
        paths.append(path)
        counts = [(ctid, mu if mult == "omega" else mult, mult == "omega")
                  for ctid, mult in children]
        if state["armed"]:
            # shift one point from an unlabelled class to a labelled sibling
            # class: sizes stay equal, the label counts do not
            coloured = [p for p, (ctid, _, cls) in enumerate(counts)
                        if cls and canon.records[ctid][0] is not None]
            plain = [p for p, (ctid, cnt, cls) in enumerate(counts)
                     if cls and canon.records[ctid][0] is None and cnt > 1]
            if coloured and plain:
                ci, pi = coloured[0], plain[0]
                counts[ci] = (counts[ci][0], counts[ci][1] + 1, True)
                counts[pi] = (counts[pi][0], counts[pi][1] - 1, True)
                state["armed"] = False
        slot = 0
        for ctid, count, _ in counts:
            for _ in range(count):
                emit(ctid, idx, level + 1, path + (slot,))
                slot += 1
        return idx

    emit(root_tid, -1, 0, ())
    _cap_check(len(names), cap, "canonical truncation")
    den, dmat = _prefix_table(paths)
    n = len(names)

    # ancestor index at each level via parent pointers
    anc_of = [[i] * m for i in range(n)]
    for i in range(n):
        j = i
        while j != -1:
            anc_of[i][levels[j]] = j
            j = parents[j]

    fns = {}
    mods = {}
    for k in range(r):
        table = [names[anc_of[i][k]] if levels[i] >= k else names[i]
                 for i in range(n)]
        fns[f"f{k}"] = (("D1",), "D1",
                        (lambda t: (lambda a: t[int(a[1:])]))(table))
        mods[f"f{k}"] = Modulus.lipschitz(1)
    preds = {}
    colarr = cols
    for i in range(r):
        for j in range(r):
            preds[f"P{i}_{j}"] = (
                ("D1",),
                (lambda ij: (lambda a: ZERO if colarr[int(a[1:])] == ij
                             else ONE))((i, j)))
            mods[f"P{i}_{j}"] = Modulus.lipschitz(i + 1)
    return FiniteStructure.build(
        {"D1": names}, {"D1": (den, dmat)}, fns, preds, mods,
        {"label": f"canon(m={m},r={r},mu={mu},l={l},perturb={int(perturb)})",
         "depth": m - 1, "types": len(canon.records),
         "roles": len(canon.memo), "density": {"D1": None}})


def kfamily_check(K: KFamily, l: int, m: int, r: int, mu: int = 2) -> list[dict]:
    """Finite surrogates of the family laws: recurrence and
    variation-closure by annotation counting, pruning-exchange both ways by
    isomorphism search on canonical truncations."""
    from .analysis import IsoWitness, find_iso
    rows = []
    bad = [i for i, f in enumerate(K.functions) if f.mult != "omega"]
    rows.append({"clause": "k1", "ok": not bad,
                 "detail": "every listed function recurs unboundedly" if not bad
                 else f"finite multiplicity at index {bad[0]}"})
    nodes = sorted({s for f in K.functions for s, _ in f.support},
                   key=node_key)
    values = sorted({v for f in K.functions for _, v in f.support} | {K.base})
    have = {tuple(f.value(s, K.base) for s in nodes) for f in K.functions}
    missing = None
    for combo in product(values, repeat=len(nodes)):
        if combo not in have:
            missing = combo
            break
    rows.append({"clause": "k2", "ok": missing is None,
                 "detail": "closed under variation on the support grid"
                 if missing is None else
                 "missing variant " + " ".join(
                     f"{node_name(s)}={v}" for s, v in zip(nodes, missing))})
    for clause, (la, lb) in (("k3", (l, None)), ("k4", (None, l))):
        ok, detail = True, []
        for idx, f in enumerate(K.functions):
            sub = KFamily(K.base, (f,))
            A = canonical_truncation(sub, m, r, mu, l=la)
            B = canonical_truncation(sub, m, r, mu, l=lb)
            res = find_iso(A, B)
            if isinstance(res, IsoWitness):
                detail.append(f"function {idx}: matched (i={idx})")
            else:
                ok = False
                detail.append(f"function {idx}: {res.reason}")
        rows.append({"clause": clause, "ok": ok, "detail": "; ".join(detail)})
    return rows


# --------------------------------------------------------------------------
# Height-gap predicates

def pred_gap(m: int, sort: str | None = None) -> tuple[Formula, Formula]:
    """(low, high) gap pair in the free variable x0: low vanishes exactly on
    nodes of height <= m (given every node of height m+1 in range keeps a
    successor), with minimum 1/((m+1)(m+2)) elsewhere; high is that
    constant shaved by low."""
    if m < 1:
        raise ValueError("gap index must be >= 1")
    x0, x1 = Var("x0", sort), Var("x1", sort)
    d = Dist(x0, x1)
    low = sup(x1, fmin(fmonus(Rat(Fraction(1, m + 1)), d), d), sort)
    high = fmonus(Rat(Fraction(1, (m + 1) * (m + 2))), low)
    return low, high


# --------------------------------------------------------------------------
# Type builders

def _s(j: int) -> Fraction:
    return Fraction(1, j + 1)


def type_branch(sort: str | None = None) -> PartialType:
    """Escaping type: x sits at distance 1/(n+1) from each of its level
    prefixes, as an infinite-branch would."""
    x0 = Var("x0", sort)

    def gen(j):
        return closed(absdiff(Dist(App(f"f{j}", (x0,)), x0), Rat(_s(j))))
    return PartialType((("x0", sort),), (), gen, "s0_branch")


def type_escape(sort: str | None = None) -> PartialType:
    """The level-1 projection avoids every length-1 node."""
    x0 = Var("x0", sort)

    def gen(n):
        return closed(neg(Dist(App("f1", (x0,)), Const(f"<{n}>"))))
    return PartialType((("x0", sort),), (), gen, "s0_escape")


def _chi_succ(m: int, x0, x1) -> Formula:
    """Crisp indicator of x1 being a height-(m+1) point above x0: the error
    sum is quantized away from (0, 1/((m+1)(m+2))), so the clamp is exact."""
    err = ftsum(Dist(App(f"f{m}", (x1,)), x0),
                ftsum(Dist(App(f"f{m+1}", (x1,)), x1),
                      absdiff(Dist(App(f"f{m}", (x1,)), x1), Rat(_s(m)))))
    return affine(-(m + 1) * (m + 2), 1, err)


def type_terminal(m: int, n: int, sort: str | None = None) -> PartialType:
    """Depth-n fragment of the height-m terminal-node type: pinned height,
    unbounded extensions above (strictly between m and n), and no coloured
    height-(m+1) successor with colour index <= n."""
    if m < 1:
        raise ValueError("terminal type needs height >= 1")
    x0, x1 = Var("x0", sort), Var("x1", sort)
    conds = [closed(Dist(App(f"f{m}", (x0,)), x0)),
             closed(absdiff(Dist(App(f"f{m-1}", (x0,)), x0),
                            Rat(Fraction(1, m))))]
    for k in range(m + 1, n):
        conds.append(closed(inf(x1, ftsum(
            Dist(App(f"f{m}", (x1,)), x0),
            absdiff(Dist(App(f"f{k}", (x1,)), x1), Rat(_s(k)))), sort)))
    for j in range(n + 1):
        conds.append(closed(sup(x1, fmin(
            _chi_succ(m, x0, x1),
            fmonus(Rat(ONE), Pred(f"P{m+1}_{j}", (x1,)))), sort)))
    return PartialType((("x0", sort),), tuple(conds), None, f"s_{m}[{n}]")


def _delta_capped(A: FiniteTree, B, cap: int) -> int:
    nodes_b = B.nodes if isinstance(B, FiniteTree) else frozenset(B)
    for j in range(cap):
        if _cut_key(A.nodes, j) != _cut_key(nodes_b, j):
            return j
    return cap


def type_tree_member(S: FiniteTree, k: int, treedepth: int = 2,
                     treebranch: int = 2) -> PartialType:
    """Depth-k fragment of the joint type of a point x escaping along the
    tree y ~ S: level prefixes of x are members of y, y's membership values
    match S on every node of weight < k, y's distances to the enumerated
    tree constants match S's to precision 1/(k+1), and x is pinned strictly
    above level k."""
    S = S if isinstance(S, FiniteTree) else FiniteTree.of(S)
    x0, x1 = Var("x0", "D1"), Var("x1", "D2")
    conds = []
    for j in range(k + 1):
        conds.append(closed(absdiff(Dist(App(f"f{j}", (x0,)), x0),
                                    Rat(_s(j)))))
    for j in range(k + 1):
        conds.append(closed(Pred("ee", (App(f"f{j}", (x0,)), x1))))
    for t in box_nodes(max(k - 1, 0), k):
        if ell(t) >= k:
            continue
        phi = Pred("ee", (Const(node_name(t)), x1))
        if t in S:
            conds.append(closed(phi))
        else:
            conds.append(closed(absdiff(phi, Rat(Fraction(1, ell(t) + 2)))))
    for i, Sn in enumerate(enumerate_trees(treedepth, treebranch)):
        eps = Fraction(1, _delta_capped(Sn, S, k) + 1)
        conds.append(closed(fmonus(
            absdiff(Dist(Const(f"S{i}"), x1), Rat(eps)), Rat(_s(k)))))
    return PartialType((("x0", "D1"), ("x1", "D2")), tuple(conds), None,
                       f"tS[{k}]")


def type_pair_member(k: int, c: str = "c") -> PartialType:
    """Depth-k fragment of the pair-tree analogue: level prefixes of x pair
    with prefixes of the constant inside y, and x is pinned above level k."""
    x0, x1 = Var("x0", "D1"), Var("x1", "D3")
    conds = []
    for j in range(k + 1):
        conds.append(closed(absdiff(Dist(App(f"f{j}", (x0,)), x0),
                                    Rat(_s(j)))))
    for j in range(k + 1):
        conds.append(closed(Pred("ee3", (App(f"f{j}", (x0,)),
                                         App(f"f{j}", (Const(c),)), x1))))
    return PartialType((("x0", "D1"), ("x1", "D3")), tuple(conds), None,
                       f"tR[{k}]")


def _gpow(k: int, t):
    for _ in range(k):
        t = App("g", (t,))
    return t


def type_bridge(m: int, n: int) -> PartialType:
    """Depth-n fragment, matched to type_terminal(m, n), of the discrete
    side of the bridge: x has g-iterate preimages up to depth n - m, and no
    g-predecessor whose image carries a colour with index <= n."""
    x0, x1 = Var("x0", "X"), Var("x1", "X")
    conds = []
    for k in range(1, n - m + 1):
        conds.append(closed(inf(x1, Dist(x0, _gpow(k, x1)), "X")))
    for j in range(n + 1):
        conds.append(closed(fmonus(Rat(ONE), inf(x1, fmax(
            Dist(x0, App("g", (x1,))),
            Pred(f"P{m+1}_{j}", (App("h", (x1,)),))), "X"))))
    return PartialType((("x0", "X"),), tuple(conds), None, f"t_X[{m},{n}]")


_TYPE_BUILDERS = {
    "s0_branch": type_branch,
    "s0_escape": type_escape,
    "s_m": type_terminal,
    "tS": type_tree_member,
    "tR": type_pair_member,
    "t_T2": type_bridge,
}


def build_type(kind: str, *args, **kw) -> PartialType:
    b = _TYPE_BUILDERS.get(kind)
    if b is None:
        raise ValueError(f"unknown type kind {kind!r}; "
                         f"known: {sorted(_TYPE_BUILDERS)}")
    return b(*args, **kw)


# --------------------------------------------------------------------------
# Constructor spec strings

_CTOR = re.compile(r"^\s*(N2|N3|N|Projection|M_l|M4|M)\s*\((.*)\)\s*$",
                   re.DOTALL)

_BUILDERS = {
    "N": (build_N, {"depth": int, "branch": int, "shadow": lambda v: bool(int(v)),
                    "cap": int}),
    "N2": (build_N2, {"depth": int, "branch": int, "treedepth": int,
                      "treebranch": int, "cap": int}),
    "N3": (build_N3, {"depth": int, "branch": int, "treedepth": int,
                      "treebranch": int, "pairdepth": int, "pairbranch": int,
                      "c": str, "cap": int}),
    "Projection": (build_Projection, {"depth": int, "branch": int, "cap": int}),
    "M": (build_M, {"depth": int, "branch": int, "pair_branch": int,
                    "top_depth": int, "top_branch": int, "top_pair": int,
                    "top_copies": int, "k": load_kfamily, "colours": int,
                    "l": int, "extend_to": int, "cap": int}),
}
_BUILDERS["M_l"] = _BUILDERS["M"]
_BUILDERS["M4"] = _BUILDERS["M"]


def parse_ctor(text: str):
    m = _CTOR.match(text)
    if not m:
        raise ValueError(f"bad constructor spec {text!r}")
    sel, body = m.group(1), m.group(2).strip()
    kwargs = {}
    if body:
        # split on commas outside node literals <...>
        parts = re.split(r",(?![^<]*>)", body)
        for part in parts:
            key, eq, val = part.partition("=")
            if not eq:
                raise ValueError(f"constructor arguments must be key=value, "
                                 f"got {part!r}")
            kwargs[key.strip()] = val.strip()
    return sel, kwargs


def build_model(spec: str, cap: int | None = None) -> FiniteStructure:
    sel, raw = parse_ctor(spec)
    builder, schema = _BUILDERS[sel]
    kw = {}
    for key, val in raw.items():
        if key not in schema:
            raise ValueError(f"unknown parameter {key!r} for {sel}")
        kw[key] = schema[key](val)
    if cap is not None:
        kw.setdefault("cap", cap)
    if sel == "M_l" and "l" not in kw:
        raise ValueError("M_l requires l=<level>")
    if sel == "M4":
        kw["x_sort"] = True
    return builder(**kw)
