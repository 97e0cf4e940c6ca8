from __future__ import annotations

import itertools

import pytest
from hypothesis import given
from hypothesis import strategies as st
from nltk.translate.bleu_score import corpus_bleu
from oracles import osa_distance, reference_bleu

from d2doc.extractor import OracleEnsemble
from d2doc.metrics import TABLE_HEADER, bleu, co, cs, dld, evaluate_system, rg
from d2doc.records import RecordType as RT, RelationKey
from d2doc.templater import render_summary

seqs = st.lists(st.sampled_from("abcd"), max_size=8)


def test_rg_basic(hh_db):
    inside = RelationKey("Tyler Johnson", 27, RT.PTS)
    outside = RelationKey("Tyler Johnson", 28, RT.PTS)
    assert rg([inside, outside], hh_db) == (50.0, 1)
    assert rg([], hh_db) == (None, 0)
    # duplicates count once
    assert rg([inside, inside], hh_db) == (100.0, 1)


def test_cs():
    a, b, c, d = (RelationKey(x, 1, RT.PTS) for x in "abcd")
    assert cs({a, b}, {a, b}) == (100.0, 100.0)
    assert cs({a}, {b}) == (0.0, 0.0)
    p, r = cs({a, b}, {b, c, d})
    assert p == 50.0 and r == pytest.approx(33.333, abs=1e-3)
    assert cs(set(), {a}) == (None, 0.0)
    assert cs({a}, set()) == (0.0, None)


def test_dld_examples():
    assert dld("AB", "BA") == 1
    assert dld("kitten", "kitten") == 0
    assert dld("", "abc") == 3
    assert dld("CA", "ABC") == 3  # restricted variant: no edits inside a swapped pair


def test_dld_exhaustive_small():
    words = [w for n in range(4) for w in itertools.product("xyz", repeat=n)]
    for a in words:
        for b in words:
            assert dld(a, b) == osa_distance(a, b)


@given(seqs, seqs)
def test_dld_symmetric_and_bounded(a, b):
    d = dld(a, b)
    assert d == dld(b, a)
    assert abs(len(a) - len(b)) <= d <= max(len(a), len(b))
    assert (d == 0) == (a == b)


@given(seqs, seqs, seqs)
def test_dld_prefix_extension(a, b, c):
    # appending a common suffix never increases the distance
    assert dld(a + c, b + c) <= dld(a, b)


def test_co():
    keys = [RelationKey(f"p{i}", i, RT.PTS) for i in range(10)]
    assert co(keys, keys) == 100.0
    other = [RelationKey(f"q{i}", i, RT.PTS) for i in range(10)]
    assert co(other, keys) == 0.0
    swapped = list(keys)
    swapped[3], swapped[4] = swapped[4], swapped[3]
    assert co(swapped, keys) == pytest.approx(90.0)
    assert co([], []) == 100.0
    assert co([], keys) == 0.0


def test_bleu_identity_and_zero():
    corpus = [["the", "cat", "sat", "on", "the", "mat"], ["a", "b", "c", "d", "e"]]
    assert bleu(corpus, corpus) == 100.0
    assert bleu([["x", "y", "z", "w"]], [["x", "y", "q", "w"]]) == 0.0
    with pytest.raises(ValueError):
        bleu([["a"]], [])


TOY_CANDS = [
    "the hawks beat the heat 103 - 95 on wednesday night".split(),
    "tyler johnson scored 27 points off the bench for miami".split(),
    "dwight howard had 23 points and 17 rebounds in the win".split(),
]
TOY_REFS = [
    "the atlanta hawks defeated the heat 103 - 95 on wednesday".split(),
    "tyler johnson scored 27 points for miami off the bench".split(),
    "dwight howard finished with 23 points and 17 rebounds".split(),
]


def test_bleu_matches_references():
    ours = bleu(TOY_CANDS, TOY_REFS)
    assert ours == pytest.approx(reference_bleu(TOY_CANDS, TOY_REFS), abs=1e-9)
    assert ours == pytest.approx(100 * corpus_bleu([[r] for r in TOY_REFS], TOY_CANDS), abs=0.01)
    assert 0 < ours < 100


@given(st.permutations(range(3)))
def test_bleu_corpus_order_invariant(perm):
    c = [TOY_CANDS[i] for i in perm]
    r = [TOY_REFS[i] for i in perm]
    assert bleu(c, r) == pytest.approx(bleu(TOY_CANDS, TOY_REFS))


def test_evaluate_gold_identity(hh_pair):
    out = render_summary(hh_pair.db)
    ens = OracleEnsemble.from_template(out)
    rep = evaluate_system([hh_pair.summary], [hh_pair], ens)
    assert (rep.cs_precision, rep.cs_recall, rep.co_score, rep.bleu) == (100.0, 100.0, 100.0, 100.0)
    assert rep.rg_precision == 100.0 and rep.rg_count == len(set(out.realized))
    assert rep.row("gold").startswith("gold")
    assert len(rep.row()) == len(TABLE_HEADER)


def test_evaluate_empty_generation(hh_pair):
    ens = OracleEnsemble.from_template(render_summary(hh_pair.db))
    rep = evaluate_system([[]], [hh_pair], ens)
    assert rep.rg_count == 0 and rep.rg_precision is None
    assert rep.cs_precision is None and rep.co_score == 0.0
    assert rep.undefined["rg_precision"] == 1
    assert '"n_documents": 1' in rep.to_json()
