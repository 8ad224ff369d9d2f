import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pllbench.core import CandidateSet
from pllbench.selection import (CheckpointRecord, Criterion, SelectionError, approximated_accuracy,
                                covering_rate, oracle_accuracy, select_checkpoint, select_config)


def ck(i, cr=0.5, aa=0.5, oa=0.5, test=None):
    return CheckpointRecord(i, cr, aa, oa, test if test is not None else i / 100)


# -- criteria -------------------------------------------------------------------

def test_covering_rate_examples():
    sets = [CandidateSet.from_indices(s, 3) for s in ([0], [0, 2], [2])]
    assert covering_rate([0, 1, 2], sets) == pytest.approx(2 / 3)
    assert covering_rate([0, 0, 2], sets) == 1.0
    full = np.ones((3, 3), bool)
    assert covering_rate([1, 2, 0], full) == 1.0


def test_covering_rate_empty():
    with pytest.raises(SelectionError):
        covering_rate([], np.zeros((0, 3), bool))


def test_aa_examples():
    masks = np.array([[1, 1, 0, 0]], bool)
    assert approximated_accuracy(np.full((1, 4), 0.25), masks) == pytest.approx(0.5)
    onehot = np.eye(4)[[0, 1]]
    assert approximated_accuracy(onehot, np.array([[1, 0, 0, 0], [0, 1, 1, 0]], bool)) == 1.0
    outside = np.array([[0.1, 0.1, 0.8], [0.7, 0.2, 0.1]])
    assert approximated_accuracy(outside, np.array([[1, 1, 0], [0, 1, 1]], bool)) == 0.0


def test_aa_zero_candidate_mass():
    p = np.array([[0.0, 1.0, 0.0]])
    assert approximated_accuracy(p, np.array([[1, 0, 1]], bool)) == 0.0


def test_oracle_accuracy_examples():
    assert oracle_accuracy([0, 1], [0, 1]) == 1.0
    assert oracle_accuracy([1, 0], [0, 1]) == 0.0
    assert oracle_accuracy([0, 1, 2, 2], [0, 1, 2, 0]) == 0.75
    with pytest.raises(SelectionError):
        oracle_accuracy([0], [-1])
    with pytest.raises(SelectionError):
        oracle_accuracy([0], None)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 60), st.integers(2, 6), st.integers(0, 2**32 - 1))
def test_aa_range_and_one_hot_identity(n, q, seed):
    rng = np.random.default_rng(seed)
    masks = rng.random((n, q)) < 0.5
    masks[np.arange(n), rng.integers(0, q, n)] = True
    p = rng.dirichlet(np.ones(q), n)
    assert 0.0 <= approximated_accuracy(p, masks) <= 1.0
    # one-hot predictions inside S score 1; one-hot in general reduces AA to CR
    inside = np.array([rng.choice(np.flatnonzero(m)) for m in masks])
    assert approximated_accuracy(np.eye(q)[inside], masks) == 1.0
    anywhere = rng.integers(0, q, n)
    assert approximated_accuracy(np.eye(q)[anywhere], masks) == covering_rate(anywhere, masks)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 80), st.integers(2, 8), st.integers(0, 2**32 - 1))
def test_cr_equals_oa_for_singletons(n, q, seed):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, q, n)
    masks = np.eye(q, dtype=bool)[y]
    pred = rng.integers(0, q, n)
    assert covering_rate(pred, masks) == oracle_accuracy(pred, y)


# -- checkpoint selection -------------------------------------------------------

def test_oa_takes_last_checkpoint():
    hist = [ck(i, oa=0.9 if i == 3 else 0.1) for i in range(1, 11)]
    assert select_checkpoint("oa", hist).iteration == 10
    assert select_checkpoint("oa-es", hist).iteration == 3


def test_cr_argmax_and_ties():
    hist = [ck(1, cr=0.5), ck(2, cr=0.9), ck(3, cr=0.7)]
    assert select_checkpoint(Criterion.CR, hist).iteration == 2
    assert select_checkpoint("cr", [ck(1, cr=0.9), ck(2, cr=0.9)]).iteration == 1


def test_final_only_switch():
    hist = [ck(1, aa=0.9), ck(2, aa=0.1)]
    assert select_checkpoint("aa", hist, final_only=True).iteration == 2


def test_missing_labels():
    hist = [ck(1, oa=None)]
    with pytest.raises(SelectionError):
        select_checkpoint("oa", hist)
    with pytest.raises(SelectionError):
        select_checkpoint("oa-es", hist)
    assert select_checkpoint("cr", hist).iteration == 1


def test_empty_history():
    with pytest.raises(SelectionError):
        select_checkpoint("cr", [])


def test_criterion_parse():
    assert Criterion.parse("OA_ES") is Criterion.OA_ES
    assert Criterion.OA.needs_labels and not Criterion.AA.needs_labels


# -- config selection -----------------------------------------------------------

def test_select_config_examples():
    a = [ck(1, cr=0.8, test=0.6)]
    b = [ck(1, cr=0.9, test=0.7)]
    assert select_config("cr", [("a", a)]) == ("a", 0.6)
    assert select_config("cr", [("a", a), ("b", b)]) == ("b", 0.7)
    assert select_config("cr", [("a", b), ("b", b)])[0] == "a"


def test_select_config_skips_empty_history():
    good = [ck(1, cr=0.1, test=0.3)]
    assert select_config("cr", [("dead", []), ("ok", good)]) == ("ok", 0.3)
    with pytest.raises(SelectionError):
        select_config("cr", [("dead", [])])
    with pytest.raises(SelectionError):
        select_config("cr", [])


def test_record_json_roundtrip():
    r = CheckpointRecord(1000, 0.5, 0.25, None, 0.75)
    assert r.to_json() == {"iter": 1000, "cr": 0.5, "aa": 0.25, "oa": None, "test_acc": 0.75}
    assert CheckpointRecord.from_json(r.to_json()) == r
