"""Concrete structure builders: worked values, pruning, gap predicates,
coloured families, constructor specs."""

from fractions import Fraction

import pytest

from mlw.formulas import parse_formula
from mlw.models import (KFamily, KFunction, box_nodes, build_M, build_M_l,
                        build_model, build_N, build_N2, build_N3, build_type,
                        canonical_truncation, default_kfamily,
                        enumerate_pair_trees, enumerate_trees,
                        is_bottom_terminal, kfamily_check, load_kfamily,
                        parse_ctor, pred_gap, save_kfamily, shadow_report)
from mlw.structures import check_structure, eval_formula
from mlw.trees import parse_node


# --------------------------------------------------------------------------
# sequence boxes

def test_box_enumeration_is_bfs():
    nodes = box_nodes(2, 2)
    assert nodes[0] == ()
    lengths = [len(s) for s in nodes]
    assert lengths == sorted(lengths)
    assert len(nodes) == 7


def test_prefix_maps_and_distances(n33):
    f = parse_formula("d(f1(x0), x0)")
    # f1 maps a node to its length-1 prefix; the prefix of <0,1> is <0>
    assert eval_formula(f, n33, {"x0": "<0,1>"}) == Fraction(1, 2)
    assert eval_formula(f, n33, {"x0": "<0>"}) == 0


def test_shadow_witnesses():
    M = build_N(3, 3, shadow=True)
    rows = shadow_report(M)
    assert all(r.value == 0 for r in rows)
    modes = {r.mode for r in rows}
    assert modes <= {"box", "extended"}
    # in-box witnesses exist exactly for the root and the distinguished
    # length-1 points
    assert sum(1 for r in rows if r.mode == "box") == M.meta["branch"]


def test_tree_sort_membership_values(n2_small):
    # S1 is the one-node tree {<>}: the root is in it, <0> is not
    ee = parse_formula("ee(x0, x1)")
    # direct table lookup through eval on named points
    s1 = n2_small.sorts["D1"].index
    assert "S1" in n2_small.sorts["D2"].index


def test_enumeration_counts():
    assert len(enumerate_trees(2, 2)) == 25
    assert len(enumerate_pair_trees(1, 2)) == 16


# --------------------------------------------------------------------------
# the coloured two-part structure

def test_bottom_terminal_predicate():
    assert is_bottom_terminal("<0.1>", 1)
    assert not is_bottom_terminal("<1.0>", 1)   # s0 does not end at 0
    assert not is_bottom_terminal("<0.1>", 2)   # wrong height
    assert is_bottom_terminal("<1.0,0.1>", 2)


def test_colour_spot_values(m_small):
    # the root carries colour (0,0); tops are uncoloured
    p = parse_formula("P0_0(x0)")
    assert eval_formula(p, m_small, {"x0": "<>"}) == 0


def test_M_pruning_drops_short_branches():
    full = build_M(3, 4)
    pruned = build_M_l(2, 3, 4)
    assert pruned.sorts["D1"].size < full.sorts["D1"].size
    # every surviving non-top point of height 1 keeps room to reach level 2:
    # s0(0) >= l - 1 = 1, so <0.x> is pruned
    assert "<0.0>" not in pruned.sorts["D1"].index
    assert "<1.0>" in pruned.sorts["D1"].index


def test_M4_doubles_with_x_sort():
    M = build_M(3, 4)
    M4 = build_model("M4(depth=3,branch=4)")
    assert M4.sorts["X"].size == M.sorts["D1"].size
    assert "g" in M4.functions and "h" in M4.functions


# --------------------------------------------------------------------------
# gap predicates

def test_pred_gap_zero_sets():
    m = 1
    L = m + 2
    M = build_M(L, 4, extend_to=L)
    low, high = pred_gap(m, sort="D1")
    gap = Fraction(1, (m + 1) * (m + 2))
    for name in M.sorts["D1"].points[:40]:
        h = len(parse_node(name.lstrip("g0123456789t")
                           if not name.startswith("<") else name))
        v = eval_formula(low, M, {"x0": name})
        if h <= m:
            assert v == 0, name
        else:
            assert v == gap, name
        assert eval_formula(high, M, {"x0": name}) == gap - v


# --------------------------------------------------------------------------
# coloured families

def test_kfamily_file_round_trip(tmp_path, star_family):
    path = str(tmp_path / "fam.kf")
    save_kfamily(star_family, path)
    back = load_kfamily(path)
    assert back == star_family


def test_kfamily_check_passes(star_family):
    rows = kfamily_check(star_family, l=2, m=3, r=4, mu=2)
    assert all(row["ok"] for row in rows)
    assert {row["clause"] for row in rows} == {"k1", "k2", "k3", "k4"}


def test_default_family_is_checkable():
    fam = default_kfamily()
    assert any(fn.support for fn in fam.functions)


def test_canonical_truncation_matches_pruned(star_family):
    A = canonical_truncation(star_family, 3, 4, mu=2)
    B = canonical_truncation(star_family, 3, 4, mu=2, l=2)
    assert A.sorts["D1"].size == B.sorts["D1"].size
    assert check_structure(A) == []


# --------------------------------------------------------------------------
# constructor specs

def test_parse_ctor_handles_node_literals():
    sel, kw = parse_ctor("N3(depth=3,branch=3,c=<0,0>)")
    assert sel == "N3" and kw["c"] == "<0,0>"


def test_build_model_round_trip():
    M = build_model("N(depth=2,branch=2)")
    assert M.meta["label"].startswith("N(")
    with pytest.raises(ValueError):
        build_model("M_l(depth=3,branch=4)")  # missing l
    with pytest.raises(ValueError):
        build_model("bogus(depth=1)")


def test_builders_validate(n2_small, n3_small, proj_small, m_small):
    for M in (n2_small, n3_small, proj_small, m_small):
        assert check_structure(M) == []


# --------------------------------------------------------------------------
# type builders

def test_type_registry_kinds():
    for kind, args in [("s0_branch", ()), ("s0_escape", ()),
                       ("s_m", (1, 3)), ("tR", (2, "<1,1>")),
                       ("t_T2", (1, 3))]:
        t = build_type(kind, *args)
        assert t.conds or t.generator


def test_terminal_type_realizers(m_small):
    from mlw.analysis import realizes
    t = build_type("s_m", 1, 3)
    hits = realizes(m_small, t, tol=Fraction(0))
    names = {h[0] for h in hits}
    scan = {p for p in m_small.sorts["D1"].points
            if is_bottom_terminal(p, 1)}
    assert names == scan
