"""Record encoder, input-feeding attention decoder, copy heads and reconstruction heads."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

import numpy as np

from ..nn import ParamStore
from ..nn import layers as L
from ..nn import tensor as T
from ..nn.params import dumps_params, loads_params
from ..nn.tensor import NEG, Tensor
from ..records import N_CLASSES, RecordType, Vocab, build_vocab, write_atomic
from ..spanner import entity_spans, split_sentences

COPY_MODES = ("none", "joint", "conditional")
MAX_INT_VALUE = 200
N_TYPES = N_CLASSES - 1


@dataclass
class ReconConfig:
    enabled: bool = False
    block: int = 100
    K: int = 3
    tvd_weight: float = 1.0
    tvd_sign: str = "penalize"
    filters: int = 200
    widths: tuple = (3, 5)
    head_dim: int = 200

    def __post_init__(self):
        self.widths = tuple(self.widths)
        if self.block < 1:
            raise ValueError("recon block size must be >= 1")
        if self.K < 1:
            raise ValueError("recon K must be >= 1")
        if self.tvd_sign not in ("penalize", "encourage"):
            raise ValueError(f"tvd_sign must be 'penalize' or 'encourage', got {self.tvd_sign!r}")


@dataclass
class GenConfig:
    dim: int = 64
    layers: int = 2
    copy_mode: str = "conditional"
    recon: ReconConfig = field(default_factory=ReconConfig)
    bptt_block: int = 100
    batch_size: int = 16
    lr: float = 1.0
    clip: float = 5.0
    dropout: float = 0.5
    epochs: int = 10
    seed: int = 1
    beam_size: int = 1
    max_len: int = 400
    max_entities: int = 30
    min_count: int = 1
    switch_dim: int | None = None
    halve_on_train: bool = False

    def __post_init__(self):
        if isinstance(self.recon, dict):
            self.recon = ReconConfig(**self.recon)
        if self.copy_mode not in COPY_MODES:
            raise ValueError(f"copy_mode must be one of {COPY_MODES}, got {self.copy_mode!r}")
        if self.layers < 1 or self.dim < 1 or self.bptt_block < 1:
            raise ValueError("dim, layers and bptt_block must be >= 1")

    def to_dict(self):
        d = asdict(self)
        d["recon"]["widths"] = list(d["recon"]["widths"])
        return d

    def with_(self, **kw):
        return replace(self, **kw)


# -- vocabularies ----------------------------------------------------------
class GenVocab:
    """Word, entity and value tables for one model."""

    def __init__(self, words, entities, strings):
        self.words = words if isinstance(words, Vocab) else Vocab.from_list(words)
        self.entities = ["<unk-entity>"] + [e for e in entities if e != "<unk-entity>"]
        self.strings = list(strings)
        self._ent = {e: i for i, e in enumerate(self.entities)}
        self._str = {s: i for i, s in enumerate(self.strings)}

    @classmethod
    def build(cls, pairs, min_count=1):
        ents, strs = set(), set()
        for p in pairs:
            for r in p.db.records:
                ents.add(r.entity)
                if isinstance(r.value, str):
                    strs.add(r.value)
        return cls(build_vocab(pairs, min_count), sorted(ents), sorted(strs))

    @property
    def n_values(self):
        # 0..200, one overflow bin, one unknown-string bin, then known strings
        return MAX_INT_VALUE + 3 + len(self.strings)

    def entity_id(self, e):
        return self._ent.get(e, 0)

    def value_id(self, v):
        if isinstance(v, str):
            i = self._str.get(v)
            return MAX_INT_VALUE + 2 if i is None else MAX_INT_VALUE + 3 + i
        return int(v) if 0 <= v <= MAX_INT_VALUE else MAX_INT_VALUE + 1

    def to_json(self):
        return {"words": self.words.to_list(), "entities": self.entities[1:], "strings": self.strings}

    @classmethod
    def from_json(cls, obj):
        return cls(obj["words"], obj["entities"], obj["strings"])


# -- per-game arrays -------------------------------------------------------
@dataclass
class GameArrays:
    """Integer views of one database, in schema order."""

    game_id: str
    types: np.ndarray
    ents: np.ndarray
    vals: np.ndarray
    home: np.ndarray
    numeric: np.ndarray  # bool: record can be copied
    strings: list  # digit rendering of each record value ("" for string records)
    pool: np.ndarray  # (max_entities, J) mean-pooling weights
    entity_of: list  # canonical entity of each record


def game_arrays(db, vocab, max_entities):
    recs = db.records
    if not recs:
        raise ValueError(f"game {db.game_id}: no records")
    ents = db.canonical_entities()
    if len(ents) > max_entities:
        raise ValueError(f"game {db.game_id}: {len(ents)} entities > max_entities={max_entities}")
    slot = {e: i for i, e in enumerate(ents)}
    J = len(recs)
    pool = np.zeros((max_entities, J), dtype=np.float32)
    for j, r in enumerate(recs):
        pool[slot[r.entity], j] = 1.0
    counts = pool.sum(axis=1, keepdims=True)
    pool = np.divide(pool, counts, out=np.zeros_like(pool), where=counts > 0)
    return GameArrays(
        game_id=db.game_id,
        types=np.array([int(r.type) for r in recs]),
        ents=np.array([vocab.entity_id(r.entity) for r in recs]),
        vals=np.array([vocab.value_id(r.value) for r in recs]),
        home=np.array([int(r.is_home) for r in recs]),
        numeric=np.array([not r.type.is_string for r in recs]),
        strings=["" if r.type.is_string else str(r.value) for r in recs],
        pool=pool,
        entity_of=[r.entity for r in recs],
    )


@dataclass
class CopySupervision:
    z: np.ndarray  # (T,) 0/1 per target position
    records: list  # per position: tuple of record indices r(y_t)


def copy_supervision(tokens, db):
    """Copy labels for a target token list (without BOS/EOS).

    A digit token is copied when some numeric record with that value belongs
    to an entity mentioned in the same sentence.
    """
    tokens = list(tokens)
    z = np.zeros(len(tokens), dtype=np.int64)
    recs = [()] * len(tokens)
    by_value = {}
    for j, r in enumerate(db.records):
        if not r.type.is_string:
            by_value.setdefault(str(r.value), []).append(j)
    for si, (s, e) in enumerate(split_sentences(tokens)):
        sent = tokens[s:e]
        mentioned = {canon for _, canon in entity_spans(sent, db, si)}
        for t in range(s, e):
            tok = tokens[t]
            if not (tok.isdigit() and tok.isascii()):
                continue
            hits = tuple(j for j in by_value.get(tok, ()) if db.records[j].entity in mentioned)
            if hits:
                z[t] = 1
                recs[t] = hits
    return CopySupervision(z, recs)


# -- parameters ------------------------------------------------------------
class GenModel:
    """Parameters plus vocabularies for one generator."""

    def __init__(self, cfg, vocab, seed=None):
        self.cfg = cfg
        self.vocab = vocab
        self.store = ParamStore(seed=cfg.seed if seed is None else seed, lr=cfg.lr)
        self.rng = np.random.default_rng((cfg.seed if seed is None else seed) + 104729)
        d = cfg.dim
        s = self.store
        V = len(vocab.words)
        s.add("type_emb", (N_TYPES, d))
        s.add("ent_emb", (len(vocab.entities), d))
        s.add("val_emb", (vocab.n_values, d))
        s.add("home_emb", (2, d))
        s.add("enc_W", (4 * d, d))
        s.add("enc_b", (d,))
        s.add("init_W", (cfg.max_entities * d, 2 * cfg.layers * d))
        s.add("init_b", (2 * cfg.layers * d,))
        s.add("word_emb", (V, d))
        for layer in range(cfg.layers):
            s.add(f"lstm{layer}_W", ((2 * d if layer == 0 else d) + d, 4 * d))
            s.add(f"lstm{layer}_b", (4 * d,))
        s.add("att_W", (d, d))
        s.add("comb_W", (2 * d, d))
        s.add("out_W", (d, V))
        s.add("out_b", (V,))
        if cfg.copy_mode != "none":
            s.add("copy_W", (d, d))
        if cfg.copy_mode == "conditional":
            sd = cfg.switch_dim or d
            s.add("switch_W1", (2 * d, sd))
            s.add("switch_b1", (sd,))
            s.add("switch_W2", (sd, 1))
            s.add("switch_b2", (1,))
        rc = cfg.recon
        if rc.enabled:
            for w in rc.widths:
                s.add(f"rec_conv{w}_W", (w * d, rc.filters))
                s.add(f"rec_conv{w}_b", (rc.filters,))
            feat = rc.filters * len(rc.widths)
            for k in range(rc.K):
                s.add(f"rec_head{k}_W", (feat, 3 * rc.head_dim))
                s.add(f"rec_head{k}_b", (3 * rc.head_dim,))
            s.add("rec_ent_W", (rc.head_dim, len(vocab.entities)))
            s.add("rec_ent_b", (len(vocab.entities),))
            s.add("rec_val_W", (rc.head_dim, vocab.n_values))
            s.add("rec_val_b", (vocab.n_values,))
            s.add("rec_type_W", (rc.head_dim, N_TYPES))
            s.add("rec_type_b", (N_TYPES,))

    @property
    def p(self):
        return self.store.params

    # -- persistence --
    def hyper(self):
        return {"arch": "gen", "config": self.cfg.to_dict(), "vocab": self.vocab.to_json()}

    def dumps(self):
        return dumps_params(self.store.state(), self.hyper())

    def save(self, path):
        write_atomic(path, self.dumps())

    @classmethod
    def loads(cls, data):
        state, hyper = loads_params(data)
        if hyper.get("arch") != "gen":
            raise ValueError(f"not a generator model (arch={hyper.get('arch')!r})")
        model = cls(GenConfig(**hyper["config"]), GenVocab.from_json(hyper["vocab"]))
        model.store.load_state(state)
        return model

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            return cls.loads(fh.read())


# -- encoder ---------------------------------------------------------------
@dataclass
class EncodedDB:
    records: Tensor  # (B, J, d)
    mask: np.ndarray  # (B, J) real records
    copy_mask: np.ndarray  # (B, J) copyable records
    pooled: Tensor  # (B, d) mean over records
    init: list  # per layer (h, c), each (B, d)
    games: list  # GameArrays per row


def _pad_games(games):
    B = len(games)
    J = max(len(g.types) for g in games)
    out = {k: np.zeros((B, J), dtype=np.int64) for k in ("types", "ents", "vals", "home")}
    mask = np.zeros((B, J), dtype=bool)
    copy = np.zeros((B, J), dtype=bool)
    pool = np.zeros((B,) + games[0].pool.shape[:1] + (J,), dtype=np.float32)
    for i, g in enumerate(games):
        n = len(g.types)
        for k in out:
            out[k][i, :n] = getattr(g, k)
        mask[i, :n] = True
        copy[i, :n] = g.numeric
        pool[i, :, :n] = g.pool
    return out, mask, copy, pool


def encode_records(model, games):
    """Embed every record and derive the decoder's initial states."""
    p, cfg = model.p, model.cfg
    d = cfg.dim
    ids, mask, copy, pool = _pad_games(games)
    x = T.concat([
        T.embedding(p["type_emb"], ids["types"]),
        T.embedding(p["ent_emb"], ids["ents"]),
        T.embedding(p["val_emb"], ids["vals"]),
        T.embedding(p["home_emb"], ids["home"]),
    ], axis=-1)
    recs = T.relu(L.linear(x, p["enc_W"], p["enc_b"]))
    B, J = mask.shape
    fmask = Tensor(mask[:, :, None].astype(recs.dtype))
    recs = recs * fmask
    pooled = T.tsum(recs, axis=1) * Tensor((1.0 / mask.sum(axis=1, keepdims=True)).astype(recs.dtype))
    ent = T.matmul(Tensor(pool.astype(recs.dtype)), recs)  # (B, E, d)
    z = L.linear(T.reshape(ent, (B, cfg.max_entities * d)), p["init_W"], p["init_b"])
    init = []
    for layer in range(cfg.layers):
        h = z[:, (2 * layer) * d:(2 * layer + 1) * d]
        c = z[:, (2 * layer + 1) * d:(2 * layer + 2) * d]
        init.append((h, c))
    return EncodedDB(recs, mask, copy, pooled, init, list(games))


# -- decoder ---------------------------------------------------------------
@dataclass
class DecoderState:
    layers: list  # [(h, c)] per layer
    feed: Tensor  # attentional hidden state from the previous step

    def detach(self):
        return DecoderState([(h.detach(), c.detach()) for h, c in self.layers], self.feed.detach())


def initial_state(model, enc):
    B = enc.mask.shape[0]
    feed = Tensor(np.zeros((B, model.cfg.dim), dtype=enc.records.dtype))
    return DecoderState(list(enc.init), feed)


@dataclass
class StepOutput:
    gen_logits: Tensor  # (B, V)
    copy_scores: Tensor | None  # (B, J), non-copyable entries pushed to NEG
    switch_logit: Tensor | None  # (B, 1), log-odds of copying
    attn: Tensor  # (B, J)
    top: Tensor  # (B, d) topmost LSTM hidden state


def decode_step(model, prev_ids, state, enc, train=False):
    """One decoder step.  Returns ``(StepOutput, new DecoderState)``."""
    p, cfg = model.p, model.cfg
    x = T.concat([T.embedding(p["word_emb"], np.asarray(prev_ids)), state.feed], axis=-1)
    new_layers = []
    for layer, (h, c) in enumerate(state.layers):
        h, c = L.lstm_step(x, h, c, p[f"lstm{layer}_W"], p[f"lstm{layer}_b"])
        new_layers.append((h, c))
        x = T.dropout(h, cfg.dropout, model.rng, train)
    top = new_layers[-1][0]
    attn, ctx = L.attention(top, enc.records, p["att_W"], enc.mask)
    feed = T.tanh(L.linear(T.concat([ctx, top], axis=-1), p["comb_W"]))
    out = T.dropout(feed, cfg.dropout, model.rng, train)
    gen = L.linear(out, p["out_W"], p["out_b"])
    copy_scores = switch = None
    if cfg.copy_mode != "none":
        copy_scores = L.attention_scores(top, enc.records, p["copy_W"])
        copy_scores = copy_scores + Tensor(np.where(enc.copy_mask, 0.0, NEG).astype(gen.dtype))
    if cfg.copy_mode == "conditional":
        hid = T.relu(L.linear(T.concat([enc.pooled, top], axis=-1), p["switch_W1"], p["switch_b1"]))
        switch = L.linear(hid, p["switch_W2"], p["switch_b2"])
    return StepOutput(gen, copy_scores, switch, attn, top), DecoderState(new_layers, feed)


def _log_sigmoid_pair(s):
    """``(log sigmoid(s), log sigmoid(-s))`` for a ``(B, 1)`` tensor."""
    lp = T.log_softmax(T.concat([Tensor(np.zeros(s.shape, dtype=s.dtype)), s], axis=-1), axis=-1)
    return lp[:, 1], lp[:, 0]


# -- per-step losses -------------------------------------------------------
def _has_copy_rows(enc):
    return enc.copy_mask.any(axis=1)


def joint_copy_step_nll(out, enc, gen_ids, match):
    """Per-row ``-log p(y_t)`` under one softmax over vocab cells and record cells.

    ``gen_ids`` (B,) are vocabulary ids of the targets; ``match`` (B, J)
    marks records whose value renders as the target token.
    """
    V = out.gen_logits.shape[-1]
    allc = T.concat([out.gen_logits, out.copy_scores], axis=-1)
    tmask = np.zeros(allc.shape, dtype=bool)
    tmask[np.arange(len(gen_ids)), gen_ids] = True
    tmask[:, V:] = match & enc.copy_mask
    return T.logsumexp(allc, axis=-1) - T.logsumexp(allc, axis=-1, mask=tmask)


def cond_copy_step_nll(out, enc, gen_ids, z, sup):
    """Per-row loss of the conditional copy model given copy labels.

    ``z`` (B,) is 0/1 and ``sup`` (B, J) marks r(y_t).  Rows with ``z = 1``
    and an empty r(y_t) are a contract violation.
    """
    z = np.asarray(z)
    bad = (z == 1) & ~(sup & enc.copy_mask).any(axis=1)
    if bad.any():
        raise ValueError("cond_copy_nll: z=1 with no supporting record")
    log_p1, log_p0 = _log_sigmoid_pair(out.switch_logit)
    gen_lp = T.gather(T.log_softmax(out.gen_logits, axis=-1), np.asarray(gen_ids)[:, None], axis=-1)
    gen_lp = T.reshape(gen_lp, (len(gen_ids),))
    copy_rows = _has_copy_rows(enc)
    # rows that do not copy still need a nonempty mask; their term is zeroed below
    smask = np.where((z == 1)[:, None], sup & enc.copy_mask, enc.copy_mask | ~copy_rows[:, None])
    denom_mask = enc.copy_mask | ~copy_rows[:, None]
    copy_lp = T.logsumexp(out.copy_scores, axis=-1, mask=smask) - T.logsumexp(out.copy_scores, axis=-1, mask=denom_mask)
    zf = Tensor(z.astype(gen_lp.dtype))
    return -(zf * (log_p1 + copy_lp) + (1 - zf) * (log_p0 + gen_lp))


def gen_step_nll(out, gen_ids):
    lp = T.log_softmax(out.gen_logits, axis=-1)
    return -T.reshape(T.gather(lp, np.asarray(gen_ids)[:, None], axis=-1), (len(gen_ids),))


def marginal_log_prob(model, out, enc, gen_ids, match):
    """Numpy ``log p(y_t)`` with copy decisions summed out (evaluation only)."""
    mode = model.cfg.copy_mode
    B = len(gen_ids)
    rows = np.arange(B)
    g = out.gen_logits.data.astype(np.float64)
    if mode == "none":
        lg = g - _lse(g)
        return lg[rows, gen_ids]
    c = out.copy_scores.data.astype(np.float64)
    if mode == "joint":
        allc = np.concatenate([g, c], axis=-1)
        lz = _lse(allc)[:, 0]
        tm = np.zeros(allc.shape, dtype=bool)
        tm[rows, gen_ids] = True
        tm[:, g.shape[1]:] = match & enc.copy_mask
        return _lse(np.where(tm, allc, -np.inf))[:, 0] - lz
    s = out.switch_logit.data[:, 0].astype(np.float64)
    lp1 = -np.logaddexp(0.0, -s)
    lp0 = -np.logaddexp(0.0, s)
    lg = (g - _lse(g))[rows, gen_ids]
    cm = enc.copy_mask
    has = cm.any(axis=1)
    lc_all = np.where(cm, c, -np.inf)
    lc_norm = _lse(np.where(has[:, None], lc_all, 0.0))[:, 0]
    m = match & cm
    lc = np.where(m.any(axis=1), _lse(np.where(m, c, -np.inf))[:, 0] - lc_norm, -np.inf)
    return np.logaddexp(lp0 + lg, np.where(has, lp1 + lc, -np.inf))


def _lse(x):
    m = np.max(x, axis=-1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        return m + np.log(np.exp(x - m).sum(axis=-1, keepdims=True))


def next_token_distribution(model, out, enc, row=0):
    """Full next-token distribution ``{token: prob}`` for one batch row.

    Generation mass goes to vocabulary words; copy mass goes to each copyable
    record's rendered value and is merged with the word of the same spelling.
    """
    words = model.vocab.words
    mode = model.cfg.copy_mode
    g = out.gen_logits.data[row].astype(np.float64)
    dist = {}

    def add(tok, pr):
        dist[tok] = dist.get(tok, 0.0) + pr

    if mode == "joint":
        c = out.copy_scores.data[row].astype(np.float64)
        cm = enc.copy_mask[row]
        allc = np.concatenate([g, np.where(cm, c, -np.inf)])
        pr = np.exp(allc - _lse(allc[None])[0, 0])
        gp, cp = pr[:len(g)], pr[len(g):]
        pgen = 1.0
    else:
        gp = np.exp(g - _lse(g[None])[0, 0])
        cp = None
        pgen = 1.0
        if mode == "conditional":
            s = float(out.switch_logit.data[row, 0])
            p1 = 1.0 / (1.0 + np.exp(-s))
            cm = enc.copy_mask[row]
            if cm.any():
                c = out.copy_scores.data[row].astype(np.float64)
                cc = np.where(cm, c, -np.inf)
                cp = p1 * np.exp(cc - _lse(cc[None])[0, 0])
                pgen = 1.0 - p1
    for i, pr in enumerate(gp):
        add(words.itos[i], pgen * pr)
    if cp is not None:
        strings = enc.games[row].strings
        for j in np.nonzero(cp > 0)[0]:
            if j < len(strings):
                add(strings[j], cp[j])
    return dist


# -- reconstruction --------------------------------------------------------
def recon_heads(model, block, mask=None):
    """K factor-distribution triples ``(entity, value, type)`` of log-probs for a block.

    ``block`` is ``(B, T, d)`` decoder hidden states.
    """
    p, rc = model.p, model.cfg.recon
    kernels = [(w, p[f"rec_conv{w}_W"], p[f"rec_conv{w}_b"]) for w in rc.widths]
    feat = L.conv1d_maxpool(block, kernels, mask)
    H = rc.head_dim
    heads = []
    for k in range(rc.K):
        v = T.relu(L.linear(feat, p[f"rec_head{k}_W"], p[f"rec_head{k}_b"]))
        heads.append((
            T.log_softmax(L.linear(v[:, :H], p["rec_ent_W"], p["rec_ent_b"]), axis=-1),
            T.log_softmax(L.linear(v[:, H:2 * H], p["rec_val_W"], p["rec_val_b"]), axis=-1),
            T.log_softmax(L.linear(v[:, 2 * H:], p["rec_type_W"], p["rec_type_b"]), axis=-1),
        ))
    return heads


def recon_nll_from_heads(heads, games):
    """``sum_k sum_rows min_r -log p_k(r)`` over each row's own records."""
    total = None
    for lpe, lpv, lpt in heads:
        for i, g in enumerate(games):
            scores = -(T.getitem(lpe, (i, g.ents)) + T.getitem(lpv, (i, g.vals)) + T.getitem(lpt, (i, g.types)))
            term = T.tmin(scores, axis=0)
            total = term if total is None else total + term
    return total


def recon_loss(model, block, games, mask=None):
    """Reconstruction loss of one block of hidden states against each row's database."""
    return recon_nll_from_heads(recon_heads(model, block, mask), games)


def tvd_term(heads):
    """Mean total variation distance over unordered head pairs and the three factors.

    ``heads`` holds ``(entity, value, type)`` log-prob tensors per head, each
    ``(C,)`` or ``(B, C)``; batched input gives the sum over rows.
    """
    K = len(heads)
    if K < 2:
        return Tensor(np.zeros((), dtype=np.float32))
    total = None
    n = 0
    for a in range(K):
        for b in range(a + 1, K):
            for f in range(3):
                d = 0.5 * T.tsum(T.tabs(T.exp(heads[a][f]) - T.exp(heads[b][f])))
                total = d if total is None else total + d
                n += 1
    return total * (1.0 / n)


def split_blocks(length, size):
    """Contiguous ``(start, end)`` blocks of at most ``size`` covering ``range(length)``."""
    return [(s, min(s + size, length)) for s in range(0, length, size)]


__all__ = [
    "COPY_MODES", "CopySupervision", "DecoderState", "EncodedDB", "GameArrays", "GenConfig",
    "GenModel", "GenVocab", "ReconConfig", "StepOutput", "copy_supervision", "cond_copy_step_nll",
    "decode_step", "encode_records", "game_arrays", "gen_step_nll", "initial_state",
    "joint_copy_step_nll", "marginal_log_prob", "next_token_distribution", "recon_heads",
    "recon_loss", "recon_nll_from_heads", "split_blocks", "tvd_term", "RecordType",
]
