"""Relation classifiers over candidate (entity, number) pairs and record extraction.

Two architectures share an input layer (word embedding plus two distance
embeddings): a multi-width convolution with max-over-time pooling, and a
bidirectional LSTM with max pooling.  Both end in a one-hidden-layer ReLU MLP
and a linear decoder over the 39 record types plus "no relation".  They are
trained on distantly supervised label *sets* with the marginal loss and
combined by averaging probabilities.
"""
from __future__ import annotations

import io
import logging
import struct
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .nn import ParamStore, TrainingError, sgd_step
from .nn import layers as L
from .nn import tensor as T
from .nn.params import dumps_params, loads_params
from .nn.tensor import Tensor
from .records import EPS, N_CLASSES, RecordType, RelationKey, Vocab
from .spanner import MAX_DIST, candidate_pairs, span_distances, value_index

log = logging.getLogger(__name__)

N_DIST = 2 * MAX_DIST + 1
ENSEMBLE_MAGIC = b"D2EN"


@dataclass
class ExtractorConfig:
    word_emb_dim: int = 200
    dist_emb_dim: int = 100
    conv_widths: tuple = (2, 3, 5)
    conv_filters: int = 200
    conv_mlp_dim: int = 500
    blstm_units: int = 500
    blstm_mlp_dim: int = 700
    n_conv_models: int = 3
    n_blstm_models: int = 3
    epochs: int = 10
    lr: float = 0.7
    clip: float = 5.0
    batch_size: int = 32
    dropout: float = 0.0
    heldout_fraction: float = 0.1
    patience: int | None = None
    seed: int = 1

    def __post_init__(self):
        self.conv_widths = tuple(self.conv_widths)
        for name in ("word_emb_dim", "dist_emb_dim", "conv_filters", "conv_mlp_dim",
                     "blstm_units", "blstm_mlp_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    @property
    def input_dim(self):
        return self.word_emb_dim + 2 * self.dist_emb_dim

    def scaled(self, factor):
        """Same config with every layer width divided by ``factor``."""
        d = lambda v: max(1, int(round(v / factor)))  # noqa: E731
        return replace(self, word_emb_dim=d(self.word_emb_dim), dist_emb_dim=d(self.dist_emb_dim),
                       conv_filters=d(self.conv_filters), conv_mlp_dim=d(self.conv_mlp_dim),
                       blstm_units=d(self.blstm_units), blstm_mlp_dim=d(self.blstm_mlp_dim))


@dataclass(frozen=True)
class ExtractedRecord:
    entity: str
    value: int
    type: RecordType
    position: tuple  # (sentence index, entity span start, number span start)

    @property
    def key(self):
        return RelationKey(self.entity, self.value, self.type)


# -- batching --------------------------------------------------------------
@dataclass
class Batch:
    words: np.ndarray  # (B, T) int
    ent: np.ndarray  # (B, T) int, distance bucket
    num: np.ndarray
    mask: np.ndarray  # (B, T) bool
    labels: list = field(default_factory=list)


def make_batch(examples, vocab):
    L_ = max(len(ex.tokens) for ex in examples)
    B = len(examples)
    words = np.zeros((B, L_), dtype=np.int64)
    ent = np.full((B, L_), MAX_DIST, dtype=np.int64)
    num = np.full((B, L_), MAX_DIST, dtype=np.int64)
    mask = np.zeros((B, L_), dtype=bool)
    for i, ex in enumerate(examples):
        n = len(ex.tokens)
        words[i, :n] = vocab.encode(ex.tokens)
        ent[i, :n] = np.asarray(span_distances(n, ex.ent)) + MAX_DIST
        num[i, :n] = np.asarray(span_distances(n, ex.num)) + MAX_DIST
        mask[i, :n] = True
    return Batch(words, ent, num, mask, [sorted(ex.labels) for ex in examples])


def ie_vocab(examples, min_count=1):
    from collections import Counter

    counts = Counter(t for ex in examples for t in ex.tokens)
    return Vocab(sorted((t for t, c in counts.items() if c >= min_count), key=lambda t: (-counts[t], t)))


# -- classifier ------------------------------------------------------------
class Classifier:
    """One relation classifier (``arch`` is ``"conv"`` or ``"blstm"``)."""

    def __init__(self, arch, cfg, vocab, seed=0):
        if arch not in ("conv", "blstm"):
            raise ValueError(f"unknown architecture {arch!r}")
        self.arch = arch
        self.cfg = cfg
        self.vocab = vocab
        self.store = ParamStore(seed=seed, lr=cfg.lr)
        self.rng = np.random.default_rng(seed + 7919)
        s = self.store
        s.add("word_emb", (len(vocab), cfg.word_emb_dim))
        s.add("ent_emb", (N_DIST, cfg.dist_emb_dim))
        s.add("num_emb", (N_DIST, cfg.dist_emb_dim))
        d = cfg.input_dim
        if arch == "conv":
            for w in cfg.conv_widths:
                s.add(f"conv{w}_W", (w * d, cfg.conv_filters))
                s.add(f"conv{w}_b", (cfg.conv_filters,))
            feat, hid = cfg.conv_filters * len(cfg.conv_widths), cfg.conv_mlp_dim
        else:
            k = cfg.blstm_units
            for direction in ("fwd", "bwd"):
                s.add(f"{direction}_W", (d + k, 4 * k))
                s.add(f"{direction}_b", (4 * k,))
            feat, hid = 2 * k, cfg.blstm_mlp_dim
        s.add("mlp_W", (feat, hid))
        s.add("mlp_b", (hid,))
        s.add("out_W", (hid, N_CLASSES))
        s.add("out_b", (N_CLASSES,))

    def log_probs(self, batch, train=False, params=None):
        """``(B, 40)`` log-probabilities for a :class:`Batch`."""
        p = params or self.store.params
        m = Tensor(batch.mask[:, :, None].astype(p["word_emb"].dtype))
        x = T.concat([
            T.embedding(p["word_emb"], batch.words),
            T.embedding(p["ent_emb"], batch.ent),
            T.embedding(p["num_emb"], batch.num),
        ], axis=-1) * m
        if self.arch == "conv":
            kernels = [(w, p[f"conv{w}_W"], p[f"conv{w}_b"]) for w in self.cfg.conv_widths]
            h = L.conv1d_maxpool(x, kernels, batch.mask)
        else:
            h = L.bilstm_maxpool(x, (p["fwd_W"], p["fwd_b"]), (p["bwd_W"], p["bwd_b"]), batch.mask)
        h = T.relu(L.linear(h, p["mlp_W"], p["mlp_b"]))
        h = T.dropout(h, self.cfg.dropout, self.rng, train)
        return T.log_softmax(L.linear(h, p["out_W"], p["out_b"]), axis=-1)

    def probs(self, batch):
        return np.exp(self.log_probs(batch).data.astype(np.float64))

    def state(self):
        return self.store.state()

    def hyper(self):
        cfg = asdict(self.cfg)
        cfg["conv_widths"] = list(cfg["conv_widths"])
        return {"arch": self.arch, "config": cfg, "vocab": self.vocab.to_list()}

    @classmethod
    def from_state(cls, state, hyper):
        cfg = ExtractorConfig(**hyper["config"])
        clf = cls(hyper["arch"], cfg, Vocab.from_list(hyper["vocab"]))
        clf.store.load_state(state)
        return clf


def _forward_one(arch, ex, clf):
    if clf.arch != arch:
        raise ValueError(f"expected a {arch} classifier, got {clf.arch}")
    return T.reshape(clf.log_probs(make_batch([ex], clf.vocab)), (N_CLASSES,))


def conv_forward(ex, clf):
    """``(40,)`` log-probabilities of one example under a convolutional classifier."""
    return _forward_one("conv", ex, clf)


def blstm_forward(ex, clf):
    """``(40,)`` log-probabilities of one example under a BiLSTM classifier."""
    return _forward_one("blstm", ex, clf)


def marginal_loss(logprobs, label_set):
    """``-log sum_{t in label_set} p(t)`` for one ``(40,)`` log-prob tensor or a batch."""
    if logprobs.ndim == 1:
        if not label_set:
            raise ValueError("marginal_loss: empty label set")
        return L.log_marginal_nll(logprobs, sorted(label_set))
    return L.log_marginal_nll(logprobs, label_set)


class Ensemble:
    """Averages member probabilities; argmax with ties to the lowest class id."""

    def __init__(self, members):
        if not members:
            raise ValueError("empty ensemble")
        self.members = list(members)

    def __len__(self):
        return len(self.members)

    def mean_probs(self, examples, batch_size=256):
        out = []
        for i in range(0, len(examples), batch_size):
            chunk = examples[i:i + batch_size]
            acc = None
            for m in self.members:
                p = m.probs(make_batch(chunk, m.vocab))
                acc = p if acc is None else acc + p
            out.append(acc / len(self.members))
        return np.concatenate(out) if out else np.zeros((0, N_CLASSES))

    def predict(self, examples):
        if not examples:
            return np.zeros(0, dtype=np.int64)
        return np.argmax(self.mean_probs(examples), axis=-1)

    def dumps(self):
        buf = io.BytesIO()
        buf.write(ENSEMBLE_MAGIC)
        buf.write(struct.pack("<I", len(self.members)))
        for m in self.members:
            block = dumps_params(m.state(), m.hyper())
            buf.write(struct.pack("<Q", len(block)))
            buf.write(block)
        return buf.getvalue()

    @classmethod
    def loads(cls, data):
        if data[:4] != ENSEMBLE_MAGIC:
            raise ValueError("not an ensemble file")
        (n,) = struct.unpack("<I", data[4:8])
        off = 8
        members = []
        for _ in range(n):
            (size,) = struct.unpack("<Q", data[off:off + 8])
            off += 8
            members.append(Classifier.from_state(*loads_params(data[off:off + size])))
            off += size
        return cls(members)

    def save(self, path):
        from .records import write_atomic

        write_atomic(path, self.dumps())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            return cls.loads(fh.read())


def ensemble_predict(ens, ex):
    return int(ens.predict([ex])[0])


class OracleEnsemble:
    """Stand-in ensemble that knows the true relation behind selected token ranges.

    ``alignment`` maps ``(doc_start, doc_end)`` of a number span to the
    :class:`RelationKey` it realizes.  A candidate is labelled with that
    relation's type when its entity matches, else with EPS.
    """

    def __init__(self, alignment):
        self.alignment = dict(alignment)

    @classmethod
    def from_template(cls, output):
        return cls(zip(output.slots, output.realized))

    def predict(self, examples):
        out = []
        for ex in examples:
            key = self.alignment.get((ex.sent_start + ex.num.start, ex.sent_start + ex.num.end))
            out.append(int(key.type) if key is not None and key.entity == ex.entity else EPS)
        return np.asarray(out, dtype=np.int64)


# -- training --------------------------------------------------------------
def split_heldout(examples, fraction, seed):
    games = sorted({ex.game_id for ex in examples})
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(games))
    n_held = int(round(fraction * len(games)))
    if len(games) > 1:
        n_held = min(max(n_held, 1), len(games) - 1)
    else:
        n_held = 0
    held = {games[i] for i in order[:n_held]}
    train = [ex for ex in examples if ex.game_id not in held]
    dev = [ex for ex in examples if ex.game_id in held]
    return train, dev


def _batches(examples, batch_size, rng):
    # bucket by length so padding stays small, then shuffle batch order
    order = sorted(range(len(examples)), key=lambda i: (len(examples[i].tokens), i))
    chunks = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
    rng.shuffle(chunks)
    return chunks


def accuracy(model, examples, batch_size=256):
    """Fraction of examples whose argmax class lies in their label set."""
    if not examples:
        return float("nan")
    if isinstance(model, Classifier):
        model = Ensemble([model])
    pred = model.predict(examples)
    return float(np.mean([int(p) in ex.labels for p, ex in zip(pred, examples)]))


def train_classifier(arch, train, dev, cfg, vocab, seed, index=0):
    clf = Classifier(arch, cfg, vocab, seed=seed)
    rng = np.random.default_rng(seed)
    history = []
    best = (-1.0, None)
    stale = 0
    for epoch in range(cfg.epochs):
        total = 0.0
        for chunk in _batches(train, cfg.batch_size, rng):
            exs = [train[i] for i in chunk]
            batch = make_batch(exs, vocab)
            loss = marginal_loss(clf.log_probs(batch, train=True), batch.labels) * (1.0 / len(exs))
            if not np.isfinite(loss.data):
                raise TrainingError(f"model {index} ({arch}) diverged at epoch {epoch}")
            loss.backward()
            sgd_step(clf.store, clip=cfg.clip)
            total += float(loss.data) * len(exs)
        acc = accuracy(clf, dev) if dev else accuracy(clf, train)
        history.append({"model": index, "arch": arch, "epoch": epoch, "loss": total / len(train), "accuracy": acc})
        log.info("model %d (%s) epoch %d loss %.4f held-out acc %.4f", index, arch, epoch, total / len(train), acc)
        if acc > best[0]:
            best = (acc, clf.store.state())
            stale = 0
        else:
            stale += 1
        if cfg.patience is not None and (stale >= cfg.patience or acc >= 1.0):
            break
    if best[1] is not None:
        clf.store.load_state(best[1])
    return clf, history


def train_extractor(ie_data, cfg, vocab=None):
    """Train the conv + BiLSTM ensemble.  Returns ``(Ensemble, history, heldout)``."""
    if not ie_data:
        raise ValueError("train_extractor needs at least one example")
    train, dev = split_heldout(ie_data, cfg.heldout_fraction, cfg.seed)
    vocab = vocab or ie_vocab(train)
    archs = ["conv"] * cfg.n_conv_models + ["blstm"] * cfg.n_blstm_models
    members, history = [], []
    for i, arch in enumerate(archs):
        clf, hist = train_classifier(arch, train, dev, cfg, vocab, seed=cfg.seed * 1000 + i, index=i)
        members.append(clf)
        history.extend(hist)
    return Ensemble(members), history, dev


# -- extraction ------------------------------------------------------------
def extract_sequence(doc, db, ens, examples=None):
    """Non-EPS predictions over all candidate pairs, in document order."""
    from .spanner import IEExample

    if examples is None:
        examples = []
        for _, start, sent, espan, canon, nspan, value in candidate_pairs(doc.tokens, doc.sentence_bounds, db):
            examples.append(IEExample(sent, espan, nspan, value, canon, frozenset({EPS}), db.game_id, start))
    if not examples:
        return []
    pred = ens.predict(examples)
    out = [ExtractedRecord(ex.entity, ex.value, RecordType(int(t)), (ex.sentence_index, ex.ent.start, ex.num.start))
           for ex, t in zip(examples, pred) if int(t) != EPS]
    out.sort(key=lambda r: r.position)
    return out


def extractor_recall(ens, pairs, realized=None):
    """Corpus recall of correct unique extracted relations from gold texts.

    Returns ``{"full_db": ..., "matchable": ...}``: the first against every
    numeric record of each game, the second against records whose entity and
    value co-occur as a candidate pair in the text.  When ``realized`` (one
    collection of relation keys per pair) is given, a third entry measures
    recall of exactly those relations.
    """
    hit = full = matchable = 0
    r_hit = r_base = 0
    for k, pair in enumerate(pairs):
        db_keys = pair.db.numeric_keys()
        got = {r.key for r in extract_sequence(pair.summary, pair.db, ens)} & db_keys
        index = value_index(pair.db)
        mkeys = set()
        for _, _, _, _, canon, _, value in candidate_pairs(pair.summary.tokens, pair.summary.sentence_bounds, pair.db):
            for t in index.get((canon, value), ()):
                mkeys.add(RelationKey(canon, value, RecordType(t)))
        hit += len(got)
        full += len(db_keys)
        matchable += len(mkeys)
        if realized is not None:
            want = set(realized[k])
            r_hit += len(got & want)
            r_base += len(want)
    out = {
        "full_db": hit / full if full else 0.0,
        "matchable": min(1.0, hit / matchable) if matchable else 0.0,
    }
    if realized is not None:
        out["realized"] = r_hit / r_base if r_base else 0.0
    return out


def dumps_extractions(seqs):
    """One JSON line per document: a list of ``{"e", "m", "t", "pos"}`` objects."""
    import json

    lines = []
    for seq in seqs:
        lines.append(json.dumps([{"e": r.entity, "m": r.value, "t": r.type.name, "pos": list(r.position)}
                                 for r in seq], separators=(",", ":")))
    return "".join(line + "\n" for line in lines)
