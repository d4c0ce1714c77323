"""Forcing engine: conditions, extension, symmetry, runs, refinement."""

import random
from fractions import Fraction

import pytest

from mlw.forge import (TRIVIAL, BankRefusal, ForcingCondition, Permutation,
                       Witness, WitnessBank, bind_constants, build_generic,
                       compatible, cond_check, conjoin, constant_indices,
                       extends, extract_premodel, homogeneity_experiment,
                       parse_schedule, permute_condition, refine_theory,
                       rename_constants, transcript, verify_run)
from mlw.formulas import parse_formula
from mlw.models import build_N


@pytest.fixture(scope="module")
def bank():
    return WitnessBank({"a": build_N(3, 3), "b": build_N(2, 2)})


def _rand_condition(rng):
    i, j = rng.sample(range(4), 2)
    num = rng.randrange(1, 4)
    f = parse_formula(f"absdiff(d(d{i}, d{j}), {num}/4)")
    return ForcingCondition(f, tuple(sorted((i, j))), Fraction(1, 4))


# --------------------------------------------------------------------------
# condition basics

def test_constant_indices_and_renaming():
    f = parse_formula("max(d(d0, d2), d(d2, d5))")
    assert constant_indices(f) == (0, 2, 5)
    g = rename_constants(f, Permutation.of({0: 1, 1: 0}).apply)
    assert constant_indices(g) == (1, 2, 5)
    assert bind_constants(f) != f


def test_cond_check_finds_first_witness(bank):
    p = ForcingCondition(parse_formula("absdiff(d(d0, d1), 1/2)"),
                         (0, 1), Fraction(1, 4))
    w = cond_check(p, bank)
    assert isinstance(w, Witness)
    assert w.model == "a"  # declaration order
    assert set(w.assignment) == {0, 1}


def test_cond_check_refuses_impossible(bank):
    p = ForcingCondition(parse_formula("neg(d(d0, d0))"),
                         (0,), Fraction(1, 2))
    r = cond_check(p, bank)
    assert isinstance(r, BankRefusal)
    assert "bank" in r.reason


# --------------------------------------------------------------------------
# the extension preorder

def test_conjoin_extends_and_is_transitive(bank):
    rng = random.Random(11)
    for _ in range(20):
        p = TRIVIAL
        q = conjoin(p, *_demand(rng))
        r = conjoin(q, *_demand(rng))
        assert extends(p, q, bank)
        assert extends(q, r, bank)
        assert extends(p, r, bank)  # transitivity along the chain
        assert extends(q, q, bank)  # reflexivity


def _demand(rng):
    i, j = rng.sample(range(3), 2)
    return (parse_formula(f"monus(d(d{i}, d{j}), {rng.randrange(1, 3)}/3)"),
            Fraction(1, 2))


def test_extends_requires_constant_containment(bank):
    p = ForcingCondition(parse_formula("d(d7, d7)"), (7,), Fraction(1, 2))
    assert not extends(p, TRIVIAL, bank)


# --------------------------------------------------------------------------
# symmetry

def test_permutation_is_a_bijection():
    h = Permutation.of({0: 1, 1: 0})
    assert h.apply(0) == 1 and h.apply(2) == 2
    assert h.inverse().apply(1) == 0
    with pytest.raises(ValueError):
        Permutation(((0, 1), (2, 1)))


def test_permutation_commutes_with_extension(bank):
    rng = random.Random(5)
    h = Permutation.of({0: 2, 2: 0, 1: 3, 3: 1})
    for trial in range(200):
        q = conjoin(TRIVIAL, *_demand(rng))
        r = conjoin(q, *_demand(rng))
        hq, hr = permute_condition(h, q), permute_condition(h, r)
        assert extends(q, r, bank) == extends(hq, hr, bank), f"trial {trial}"


def test_compatibility_via_max_construction(bank):
    p = ForcingCondition(parse_formula("monus(d(d0, d1), 1/2)"),
                         (0, 1), Fraction(1, 2))
    q = ForcingCondition(parse_formula("monus(d(d1, d2), 1/2)"),
                         (1, 2), Fraction(1, 2))
    ok, common, w = compatible(p, q, bank)
    assert ok and isinstance(w, Witness)
    assert common.F == (0, 1, 2)
    assert extends(p, common, bank) and extends(q, common, bank)


# --------------------------------------------------------------------------
# generic runs

SCHEDULE = """
metric 0 1 4
witness max(monus(d(d0,x3),1/2),monus(1/2,d(d0,x3))) F=0
axiom monus(d(x8,x9),1/2) F=0,1 k=4
"""


def test_schedule_round(bank):
    run = build_generic(parse_schedule(SCHEDULE), bank)
    assert run.ok
    assert all(s.ok for s in run.steps)
    assert verify_run(run, bank) == []


def test_transcript_is_deterministic(bank):
    sched = parse_schedule(SCHEDULE)
    t1 = transcript(build_generic(sched, bank))
    t2 = transcript(build_generic(sched, bank))
    assert t1 == t2
    assert "verdict=ok" in t1


def test_premodel_triangle(bank):
    sched = parse_schedule("metric 0 1 4\nmetric 0 2 4\nmetric 1 2 4")
    run = build_generic(sched, bank)
    M, report = extract_premodel(run)
    assert M.sorts["H"].size == 3
    assert report == []


def test_refine_theory_halves(bank):
    theta = parse_formula("inf x1 . d(x1, x1)")  # value 0 in every model
    chains = refine_theory([theta], bank, steps=5)
    (lo, hi) = chains[0][-1]
    assert hi - lo == Fraction(1, 32)
    assert lo == 0


def test_homogeneity_experiment_deterministic(bank):
    w1, rows1 = homogeneity_experiment(bank, pairs=10, seed=4)
    w2, rows2 = homogeneity_experiment(bank, pairs=10, seed=4)
    assert (w1, len(rows1)) == (w2, len(rows2))
    assert 0 <= w1 <= 10


def test_parse_schedule_rejects_garbage():
    with pytest.raises(ValueError):
        parse_schedule("frobnicate 1 2 3")
