from __future__ import annotations

import math

import numpy as np
import pytest

from d2doc.extractor import (
    Classifier, Ensemble, ExtractorConfig, OracleEnsemble, accuracy, blstm_forward, conv_forward,
    dumps_extractions, ensemble_predict, extract_sequence, extractor_recall, ie_vocab, make_batch,
    marginal_loss, split_heldout, train_extractor,
)
from d2doc.nn import grad_check
from d2doc.nn import tensor as T
from d2doc.nn.tensor import Tensor
from d2doc.records import EPS, N_CLASSES, Document, RecordType as RT
from d2doc.spanner import build_ie_examples
from d2doc.templater import render_summary

TINY = ExtractorConfig(word_emb_dim=4, dist_emb_dim=2, conv_widths=(2, 3), conv_filters=3, conv_mlp_dim=5,
                       blstm_units=3, blstm_mlp_dim=5, n_conv_models=1, n_blstm_models=1, epochs=2,
                       batch_size=8, seed=3)


@pytest.fixture(scope="module")
def ie_examples(synth10):
    return [ex for pair, _ in synth10 for ex in build_ie_examples(pair)]


@pytest.fixture(scope="module")
def vocab(ie_examples):
    return ie_vocab(ie_examples)


def _zeroed(clf):
    for p in clf.store.params.values():
        p.data[...] = 0
    return clf


@pytest.mark.parametrize("arch,fwd", [("conv", conv_forward), ("blstm", blstm_forward)])
def test_forward_laws(arch, fwd, ie_examples, vocab):
    clf = Classifier(arch, TINY, vocab, seed=0)
    ex = ie_examples[0]
    lp = fwd(ex, clf)
    assert lp.shape == (N_CLASSES,)
    assert float(np.exp(lp.data.astype(np.float64)).sum()) == pytest.approx(1.0, abs=1e-6)
    again = fwd(ex, Classifier(arch, TINY, vocab, seed=0))
    assert np.array_equal(lp.data, again.data)
    uni = fwd(ex, _zeroed(clf)).data
    assert np.allclose(uni, -math.log(N_CLASSES), atol=1e-6)


def test_forward_checks_arch(ie_examples, vocab):
    with pytest.raises(ValueError):
        conv_forward(ie_examples[0], Classifier("blstm", TINY, vocab))
    with pytest.raises(ValueError):
        Classifier("rnn", TINY, vocab)


def test_single_token_sentence(ie_examples, vocab):
    from dataclasses import replace

    from d2doc.spanner import Span

    ex = ie_examples[0]
    one = replace(ex, tokens=("27",), ent=Span(0, 0, 1, ("27",)), num=Span(0, 0, 1, ("27",)))
    for arch, fwd in (("conv", conv_forward), ("blstm", blstm_forward)):
        lp = fwd(one, Classifier(arch, TINY, vocab, seed=1)).data
        assert np.all(np.isfinite(lp))


def test_blstm_classifier_grad_check(ie_examples, vocab):
    clf = Classifier("blstm", TINY, vocab, seed=2)
    batch = make_batch(ie_examples[:2], vocab)
    rng = np.random.default_rng(0)
    names = [k for k in clf.store.params if k != "word_emb"]
    base = {k: rng.normal(scale=0.5, size=clf.store.params[k].shape) for k in names}
    frozen_emb = Tensor(clf.store.params["word_emb"].data.astype(np.float64))

    def f(p):
        q = dict(p, word_emb=frozen_emb)
        return marginal_loss(clf.log_probs(batch, params=q), batch.labels)

    assert grad_check(f, base, eps=1e-5) < 1e-3


def test_marginal_loss_examples():
    z = np.full(N_CLASSES, -1000.0)
    z[5] = 0.0
    assert float(marginal_loss(T.log_softmax(Tensor(z)), {5}).data) == pytest.approx(0.0, abs=1e-9)
    rnd = Tensor(np.random.default_rng(0).normal(size=N_CLASSES))
    assert float(marginal_loss(T.log_softmax(rnd), set(range(N_CLASSES))).data) == pytest.approx(0.0, abs=1e-9)
    uni = T.log_softmax(Tensor(np.zeros(N_CLASSES)))
    assert float(marginal_loss(uni, {1, 2}).data) == pytest.approx(math.log(20))
    with pytest.raises(ValueError):
        marginal_loss(uni, set())


class _Fixed:
    """Fake ensemble member with a fixed output distribution."""

    def __init__(self, probs, vocab):
        self.p = np.asarray(probs, dtype=np.float64)
        self.vocab = vocab

    def probs(self, batch):
        return np.tile(self.p, (batch.words.shape[0], 1))


def _onehot(c):
    p = np.zeros(N_CLASSES)
    p[c] = 1.0
    return p


def test_ensemble_rules(ie_examples, vocab):
    ex = ie_examples[0]
    single = Classifier("conv", TINY, vocab, seed=4)
    six = Ensemble([single] * 6)
    assert ensemble_predict(six, ex) == ensemble_predict(Ensemble([single]), ex)
    assert six.mean_probs([ex]).sum() == pytest.approx(1.0, abs=1e-6)
    tied = Ensemble([_Fixed(_onehot(7), vocab)] * 3 + [_Fixed(_onehot(2), vocab)] * 3)
    assert ensemble_predict(tied, ex) == 2
    with pytest.raises(ValueError):
        Ensemble([])


def test_ensemble_roundtrip(ie_examples, vocab):
    ens = Ensemble([Classifier("conv", TINY, vocab, seed=1), Classifier("blstm", TINY, vocab, seed=2)])
    blob = ens.dumps()
    assert blob[:4] == b"D2EN"
    back = Ensemble.loads(blob)
    assert back.dumps() == blob
    assert np.allclose(back.mean_probs(ie_examples[:5]), ens.mean_probs(ie_examples[:5]))
    with pytest.raises(ValueError):
        Ensemble.loads(b"nope")


def test_memorize_one_example(ie_examples):
    ex = next(e for e in ie_examples if e.labels != {EPS})
    cfg = ExtractorConfig(word_emb_dim=8, dist_emb_dim=4, conv_widths=(2,), conv_filters=8, conv_mlp_dim=8,
                          n_conv_models=1, n_blstm_models=0, epochs=200, lr=0.5, seed=1)
    ens, history, dev = train_extractor([ex], cfg)
    assert dev == []
    assert accuracy(ens, [ex]) == 1.0
    assert len(history) == 200


def test_train_extractor_deterministic(ie_examples):
    a, ha, _ = train_extractor(ie_examples[:60], TINY)
    b, hb, _ = train_extractor(ie_examples[:60], TINY)
    assert a.dumps() == b.dumps()
    assert ha == hb
    assert len(a) == 2


def test_split_heldout_by_game(ie_examples):
    train, dev = split_heldout(ie_examples, 0.1, 0)
    assert dev and train
    assert not {e.game_id for e in train} & {e.game_id for e in dev}
    assert len(train) + len(dev) == len(ie_examples)


def _oracle(pair):
    out = render_summary(pair.db)
    return out, OracleEnsemble.from_template(out)


def test_extract_sequence_hawks_heat_sentence(hh_db):
    text = "The Atlanta Hawks defeated the Miami Heat , 103 - 95 .".split()
    doc = Document.from_tokens(text)
    ens = OracleEnsemble({(8, 9): ("Atlanta Hawks", 103, RT.TEAM_PTS), (10, 11): ("Miami Heat", 95, RT.TEAM_PTS)})
    from d2doc.records import RelationKey

    ens.alignment = {k: RelationKey(*v) for k, v in ens.alignment.items()}
    keys = {r.key for r in extract_sequence(doc, hh_db, ens)}
    assert ("Miami Heat", 95, RT.TEAM_PTS) in keys
    assert ("Atlanta Hawks", 103, RT.TEAM_PTS) in keys
    assert extract_sequence(Document.from_tokens([]), hh_db, ens) == []


def test_extract_sequence_oracle_equals_realized(synth10):
    for pair, realized in synth10[:4]:
        _, ens = _oracle(pair)
        seq = extract_sequence(pair.summary, pair.db, ens)
        assert {r.key for r in seq} == set(realized)
        assert [r.position for r in seq] == sorted(r.position for r in seq)


def test_extractor_recall(synth10):
    pairs = [p for p, _ in synth10[:3]]
    realized = [r for _, r in synth10[:3]]

    class Joint:
        def __init__(self):
            self.parts = {}
            for p in pairs:
                out, ens = _oracle(p)
                self.parts[p.game_id] = ens

        def predict(self, examples):
            return np.concatenate([self.parts[ex.game_id].predict([ex]) for ex in examples])

    rec = extractor_recall(Joint(), pairs, realized)
    assert rec["realized"] == 1.0
    assert 0 < rec["full_db"] < rec["matchable"] <= 1.0

    class AllEps:
        def predict(self, examples):
            return np.full(len(examples), EPS)

    rec = extractor_recall(AllEps(), pairs, realized)
    assert rec == {"full_db": 0.0, "matchable": 0.0, "realized": 0.0}


def test_dumps_extractions(synth10):
    pair, _ = synth10[0]
    _, ens = _oracle(pair)
    text = dumps_extractions([extract_sequence(pair.summary, pair.db, ens)])
    assert text.count("\n") == 1 and '"t":"TEAM_PTS"' in text
