"""Acceptance suite: one test per criterion, one PASS/FAIL line each.

Run with `pytest tests/test_acceptance.py -s` (or `-rA`) so the verdict
lines are visible.  Every check is exact (Fraction arithmetic); stated
tolerances are 0 unless a criterion says otherwise.
"""

import random
import time
from fractions import Fraction

from mlw.analysis import IsoWitness, Refusal, realizes, find_iso
from mlw.conditions import PartialType, closed, type_and, type_or
from mlw.formulas import parse_formula
from mlw.forge import (WitnessBank, build_generic, extract_premodel,
                       homogeneity_experiment, parse_schedule, verify_run)
from mlw.models import (KFamily, KFunction, build_M, build_M4, build_M_l,
                        build_N, build_N2, build_N3, build_Projection,
                        build_type, canonical_truncation, is_bottom_terminal,
                        kfamily_check, parse_node, pred_gap, relabel,
                        shadow_report)
from mlw.moduli import Modulus
from mlw.structures import FiniteStructure, check_structure, eval_table
from mlw.trees import FiniteTree, build_tree, rank, rank_finite, truncate
from mlw.structures import eval_formula


def _verdict(n, ok, detail, t0, budget):
    dt = time.time() - t0
    line = (f"[criterion {n}] {'PASS' if ok else 'FAIL'} - {detail} "
            f"({dt:.1f}s / budget {budget}s)")
    print(line)
    assert ok, line
    assert dt < budget, line


# --------------------------------------------------------------------------
# 1. Every constructor over the (depth, branch) grid passes validation.

def test_criterion_1_all_constructors_validate():
    t0 = time.time()
    ctors = {
        "N": build_N,
        "N2": build_N2,
        "N3": build_N3,
        "Projection": build_Projection,
        "M": build_M,
        "M_l": lambda d, b: build_M_l(2, d, b),
        "M4": build_M4,
    }
    built = skipped = bad = 0
    for name, ctor in ctors.items():
        for d in range(1, 6):
            for b in range(1, 6):
                try:
                    M = ctor(d, b)
                except ValueError as e:
                    if "cap" in str(e):
                        skipped += 1
                        continue
                    raise
                built += 1
                if check_structure(M):
                    bad += 1
    _verdict(1, bad == 0 and built > 0,
             f"{built} builds valid, {skipped} over documented size caps, "
             f"{bad} violations", t0, 60)


# --------------------------------------------------------------------------
# 2. Witness report: the inner infimum is exactly 0 at every point.

def test_criterion_2_inner_inf_zero_with_witnesses():
    t0 = time.time()
    M = build_N(4, 4, shadow=True)
    rows = shadow_report(M)
    ok = (len(rows) == M.sorts["D1"].size
          and all(r.value == 0 and r.witness for r in rows))
    _verdict(2, ok, f"{len(rows)} points, all inf values 0 with explicit "
             "witnesses", t0, 10)


# --------------------------------------------------------------------------
# 3. Depth-(m+2) fragment realizers = bottom terminal height-m nodes.

def test_criterion_3_fragment_realizers_are_terminal_nodes():
    t0 = time.time()
    details = []
    ok = True
    for m in (1, 2, 3):
        M = build_M(depth=m + 2, branch=4)
        t = build_type("s_m", m, m + 2)
        got = sorted(a[0] for a in realizes(M, t, tol=Fraction(0)))
        want = sorted(p for p in M.sorts["D1"].points
                      if is_bottom_terminal(p, m))
        ok &= got == want and len(got) > 0
        details.append(f"m={m}:{len(got)}")
    _verdict(3, ok, "realizer sets equal direct scans (" +
             ", ".join(details) + ")", t0, 120)


# --------------------------------------------------------------------------
# 4. Tree-membership type dichotomy + fragment locality.

WF_TREES = ["chain(1)", "chain(2)", "chain(3)", "T1",
            "dsum(chain(1),chain(2))", "graft(chain(1),chain(1))", "comb",
            "graft(T1,chain(1))", "dsum(chain(2),T1)",
            "graft(chain(2),chain(2))"]
FULL_TREES = ["full", "dsum(full,chain(1))", "graft(full,chain(2))",
              "dsum(T2,full)", "dsum(full,full)", "graft(full,full)",
              "graft(full,T1)", "dsum(full,T1)", "graft(chain(1),full)",
              "dsum(chain(3),full)"]


def test_criterion_4_membership_dichotomy_and_locality():
    t0 = time.time()
    ok = True
    for txt in WF_TREES + FULL_TREES:
        S = relabel(truncate(build_tree(txt), 4, 2), 8, 4)
        width = 1 + max((max(s) for s in S.nodes if s), default=0)
        M = build_N2(4, max(3, width), extra_trees=[S], cap=2000)
        realized = bool(realizes(M, build_type("tS", S, 3)))
        oracle = any(len(s) == 3 for s in S.nodes)
        ok &= realized == oracle

    # locality: the depth-3 fragment depends only on nodes below level 3
    k = 3
    rng = random.Random(42)
    loc = 0
    for _ in range(50):
        base = {()}
        for a in range(3):
            if rng.random() < 0.7:
                base.add((a,))
                for b in range(3):
                    if rng.random() < 0.5:
                        base.add((a, b))
        leaves = [s for s in base if len(s) == 2]
        ext1, ext2 = set(), set()
        if leaves:
            s = rng.choice(leaves)
            ext1 = {s + (rng.randrange(3),)}
            if rng.random() < 0.5:
                ext2 = {s + (3 + rng.randrange(3),)}
        c1 = [str(c) for c in
              build_type("tS", FiniteTree(frozenset(base | ext1)), k).conds]
        c2 = [str(c) for c in
              build_type("tS", FiniteTree(frozenset(base | ext2)), k).conds]
        loc += c1 == c2
    ok &= loc == 50
    _verdict(4, ok, f"20/20 dichotomy verdicts match the branch oracle, "
             f"{loc}/50 fragment pairs syntactically identical", t0, 120)


# --------------------------------------------------------------------------
# 5. Rank laws and the finite-truncation rank shadow.

def _rand_wf(rng, d=0):
    if d >= 2 or rng.random() < 0.5:
        return rng.choice(["chain(1)", "chain(2)", "chain(3)", "T1", "comb"])
    return f"{rng.choice(['dsum', 'graft'])}({_rand_wf(rng, d + 1)}," \
           f"{_rand_wf(rng, d + 1)})"


def test_criterion_5_rank_laws_and_shadow():
    t0 = time.time()
    rng = random.Random(7)
    laws = shadows = finite = 0
    for _ in range(100):
        a, b = _rand_wf(rng), _rand_wf(rng)
        ra, rb = rank(build_tree(a)), rank(build_tree(b))
        rg = rank(build_tree(f"graft({a},{b})"))
        rd = rank(build_tree(f"dsum({a},{b})"))
        # grafted copies sit below the host, so their rank adds on the left
        laws += (rg == rb + ra) and (rd == max(ra, rb))
        if ra.finite and rb.finite:
            finite += 1
            na, nb = int(str(ra)), int(str(rb))
            box = na + nb + 2
            fg = rank_finite(truncate(build_tree(f"graft({a},{b})"), box, 8))
            fd = rank_finite(truncate(build_tree(f"dsum({a},{b})"), box, 8))
            shadows += (fg == na + nb) and (fd == max(na, nb))
    _verdict(5, laws == 100 and shadows == finite,
             f"100/100 ordinal laws, {shadows}/{finite} finite-rank shadows",
             t0, 30)


# --------------------------------------------------------------------------
# 6. Pairing semantics on random instances.

def _rand_metric_structure(rng, n):
    names = [f"p{i}" for i in range(n)]
    group = {a: rng.randrange(2) for a in names}
    sub = {a: rng.randrange(2) for a in names}

    def metric(a, b):
        if a == b:
            return Fraction(0)
        if group[a] != group[b]:
            return Fraction(1)
        if sub[a] != sub[b]:
            return Fraction(1, 2)
        return Fraction(1, 3)

    pv = {a: min(Fraction(rng.randrange(3), 2), Fraction(1)) for a in names}
    return FiniteStructure.build({"A": names}, {"A": metric}, None,
                                 {"P": (("A",), lambda x: pv[x])},
                                 {"P": Modulus.lipschitz(3)})


def _rand_unary_type(rng, var):
    conds = []
    for _ in range(rng.randrange(1, 5)):
        q = Fraction(rng.randrange(0, 3), 2)
        form = rng.choice([f"monus(P({var}), {q})", f"monus({q}, P({var}))",
                           f"absdiff(P({var}), {q})"])
        conds.append(closed(parse_formula(form)))
    return PartialType(((var, "A"),), tuple(conds), None, f"rt-{var}")


def test_criterion_6_pairing_semantics():
    t0 = time.time()
    rng = random.Random(13)
    good = 0
    for _ in range(50):
        M = _rand_metric_structure(rng, rng.randrange(2, 7))
        t = _rand_unary_type(rng, "x0")
        s = _rand_unary_type(rng, "x0")
        rt = {a[0] for a in realizes(M, t, tol=Fraction(0))}
        rs = {a[0] for a in realizes(M, s, tol=Fraction(0))}
        got_or = {tuple(a) for a in realizes(M, type_or(t, s),
                                             tol=Fraction(0))}
        got_and = {tuple(a) for a in realizes(M, type_and(t, s),
                                              tol=Fraction(0))}
        pts = set(M.sorts["A"].points)
        want_or = {(a, b) for a in pts for b in pts if a in rt and b in rs}
        want_and = {(a, b) for a in pts for b in pts if a in rt or b in rs}
        good += got_or == want_or and got_and == want_and
    _verdict(6, good == 50, f"{good}/50 instances match brute-force "
             "product/union realizer sets", t0, 30)


# --------------------------------------------------------------------------
# 7. Canonical truncation isomorphisms and the perturbation refusal.

def test_criterion_7_truncation_isomorphisms():
    t0 = time.time()
    fam = KFamily(4, (KFunction((((("p", 2, 0), ("p", 1, 0)), 2),)),
                      KFunction()))
    rows = kfamily_check(fam, l=2, m=4, r=4, mu=2)
    ok = all(r["ok"] for r in rows)
    pairs = 0
    for m in range(2, 5):
        for l in range(1, m):
            A = canonical_truncation(fam, m, 4, mu=2)
            B = canonical_truncation(fam, m, 4, mu=2, l=l)
            pairs += 1
            ok &= isinstance(find_iso(A, B), IsoWitness)
    A = canonical_truncation(fam, 4, 4, mu=2)
    P = canonical_truncation(fam, 4, 4, mu=2, l=2, perturb=True)
    r = find_iso(A, P)
    refused = isinstance(r, Refusal) and "label-count" in r.reason
    _verdict(7, ok and refused,
             f"family checks ok, {pairs}/{pairs} truncation pairs "
             "isomorphic, perturbed multiplicity refused with the "
             "label-count invariant", t0, 120)


# --------------------------------------------------------------------------
# 8. Forcing run: metric decisions, witnesses, premodel, homogeneity.

def test_criterion_8_forcing_run():
    t0 = time.time()
    bank = WitnessBank({"a": build_N(3, 3), "b": build_N(2, 2)})
    lines = [f"metric {i} {j} 8" for i in range(5) for j in range(i + 1, 5)]
    for n in range(10):
        lines.append(f"witness absdiff(d(d{n % 5},x{30 + n}),1/2) F={n % 5}")
    run = build_generic(parse_schedule("\n".join(lines)), bank)
    ok = run.ok and all(s.ok for s in run.steps)
    ok &= verify_run(run, bank) == []

    M, report = extract_premodel(run)
    dmat, den = M.sorts["H"].dmat, M.sorts["H"].den
    worst = Fraction(0)
    n = M.sorts["H"].size
    for a in range(n):
        for b in range(n):
            for c in range(n):
                slack = Fraction(int(dmat[a, c]) - int(dmat[a, b])
                                 - int(dmat[b, c]), den)
                worst = max(worst, slack)
    ok &= report == [] and worst <= Fraction(3, 8)

    wins, _ = homogeneity_experiment(bank, pairs=50, seed=20260823)
    ok &= wins >= 45
    _verdict(8, ok, f"all {len(run.steps)} steps re-verified, premodel "
             f"triangle slack {worst} <= 3/8, homogeneity {wins}/50",
             t0, 60)


# --------------------------------------------------------------------------
# 9. Height-gap predicates: exact zero-set and exact minimum elsewhere.

def test_criterion_9_gap_predicates():
    t0 = time.time()
    M = build_M(depth=6, branch=3, top_depth=4, top_branch=4, top_pair=1,
                extend_to=5)
    pts = list(M.sorts["D1"].points)
    height = {p: len(parse_node(p)) for p in pts}
    ok = True
    details = []
    for m in (1, 2, 3):
        low, high = pred_gap(m)
        lv = {p: eval_formula(low, M, {"x0": p}) for p in pts}
        hv = {p: eval_formula(high, M, {"x0": p}) for p in pts}
        zero = {p for p, v in lv.items() if v == 0}
        ok &= zero == {p for p in pts if height[p] <= m}
        off = {v for p, v in lv.items() if p not in zero}
        gap = Fraction(1, (m + 1) * (m + 2))
        ok &= min(off) == gap
        ok &= all(hv[p] == max(Fraction(0), gap - lv[p]) for p in pts)
        details.append(f"m={m}:|zero|={len(zero)}")
    _verdict(9, ok, "zero-sets are exactly the low strata and the "
             "off-set minimum is 1/((m+1)(m+2)) (" + ", ".join(details) + ")",
             t0, 30)


# --------------------------------------------------------------------------
# 10. Four-sort bridge: node-type fragment <-> image-type fragment.

def test_criterion_10_bridge():
    t0 = time.time()
    M = build_M4(depth=5, branch=4)
    pts = list(M.sorts["D1"].points)
    height = {p: len(parse_node(p)) for p in pts}
    ok = True
    counts = []
    for m in (1, 2, 3):
        sm = {a[0] for a in realizes(
            M, build_type("s_m", m, m + 2, sort="D1"), tol=Fraction(0))}
        tb = {a[0] for a in realizes(
            M, build_type("t_T2", m, m + 2), tol=Fraction(0))}
        stratum = {p for p in pts if height[p] == m}
        lhs = {p for p in stratum if "X" + p in tb}
        rhs = sm & stratum
        ok &= lhs == rhs and len(rhs) > 0
        counts.append(f"m={m}:{len(rhs)}")
    _verdict(10, ok, "image-type realizers match node-type realizers on "
             "every stratum (" + ", ".join(counts) + ")", t0, 60)
