"""Finite structures: evaluation, validity checking, persistence."""

from fractions import Fraction

import numpy as np
import pytest

from mlw.formulas import parse_formula
from mlw.moduli import Modulus
from mlw.structures import (FiniteStructure, check_structure, eval_bounds,
                            eval_formula, eval_table, load_structure,
                            save_structure)


def _two_point(d01=Fraction(1, 2), plip=2, pvals=(Fraction(0), Fraction(1))):
    return FiniteStructure.build(
        {"A": ["a", "b"]},
        {"A": lambda x, y: Fraction(0) if x == y else d01},
        {"swap": (("A",), "A", lambda x: "b" if x == "a" else "a")},
        {"P": (("A",), lambda x: pvals[0] if x == "a" else pvals[1])},
        {"swap": Modulus.lipschitz(1), "P": Modulus.lipschitz(plip)})


def test_eval_table_matches_pointwise_eval(n33):
    f = parse_formula("max(monus(d(x0, x1), 1/3), neg(d(x1, x0)))")
    den, table = eval_table(f, n33, [("x0", "D1"), ("x1", "D1")])
    pts = n33.sorts["D1"].points
    for i in (0, 1, 5, 17):
        for j in (0, 3, 11):
            direct = eval_formula(f, n33, {"x0": pts[i], "x1": pts[j]})
            assert Fraction(int(table[i, j]), den) == direct


def test_quantifier_is_exact_min(n33):
    f = parse_formula("inf x1 . max(d(x0, x1), 1/4)")
    pts = n33.sorts["D1"].points
    for p in pts[:6]:
        inner = min(max(eval_formula(parse_formula("d(x0, x1)"), n33,
                                     {"x0": p, "x1": q}), Fraction(1, 4))
                    for q in pts)
        assert eval_formula(f, n33, {"x0": p}) == inner


def test_check_structure_accepts_valid():
    assert check_structure(_two_point()) == []


def test_check_structure_catches_modulus_violation():
    # P jumps by 1 over distance 1/2: not 1-Lipschitz
    report = check_structure(_two_point(plip=1))
    assert any("P" in line for line in report)


def test_check_structure_catches_triangle_violation():
    M = FiniteStructure.build(
        {"A": ["a", "b", "c"]},
        {"A": lambda x, y: Fraction(0) if x == y else
            (Fraction(1) if {x, y} == {"a", "c"} else Fraction(1, 4))})
    assert any("triangle" in line for line in check_structure(M))


def test_eval_bounds_brackets_value(n33):
    f = parse_formula("inf x1 . d(x0, x1)")
    res = eval_bounds(f, n33, {"x0": "<>"})
    v = eval_formula(f, n33, {"x0": "<>"})
    assert res.lo <= v
    assert v <= res.hi or res.notes  # one-sided without a density radius


def test_save_load_round_trip(tmp_path, n22):
    path = str(tmp_path / "n22.model")
    save_structure(n22, path)
    M = load_structure(path)
    assert M.sorts.keys() == n22.sorts.keys()
    for s in M.sorts:
        a, b = M.sorts[s], n22.sorts[s]
        assert a.points == b.points
        # denominators may be reduced on save; distances must agree exactly
        assert np.array_equal(a.dmat * b.den, b.dmat * a.den)
    for name, fn in n22.functions.items():
        assert np.array_equal(M.functions[name].table, fn.table)
    f = parse_formula("inf x1 . max(d(x0, x1), 1/3)")
    assert eval_formula(f, M, {"x0": "<>"}) == \
        eval_formula(f, n22, {"x0": "<>"})


def test_precomputed_predicate_table_round_trips():
    tab = np.array([[0, 2], [2, 0]], dtype=np.int64)
    M = FiniteStructure.build(
        {"A": ["a", "b"]},
        {"A": lambda x, y: Fraction(0) if x == y else Fraction(1, 2)},
        None,
        {"Q": (("A", "A"), (4, tab))},
        {"Q": Modulus.lipschitz(1)})
    f = parse_formula("Q(x0, x1)")
    assert eval_formula(f, M, {"x0": "a", "x1": "b"}) == Fraction(1, 2)
    assert check_structure(M) == []


def test_predicate_range_enforced():
    with pytest.raises(ValueError):
        FiniteStructure.build(
            {"A": ["a"]}, {"A": lambda x, y: Fraction(0)},
            None, {"P": (("A",), lambda x: Fraction(2))})
