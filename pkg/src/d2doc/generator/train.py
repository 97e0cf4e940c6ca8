"""Truncated-BPTT training, perplexity and beam search for the generators."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from ..nn import PlateauHalver, TrainingError, sgd_step
from ..nn import tensor as T
from ..nn.tensor import Tensor
from ..records import BOS_ID, EOS_ID, Document
from .model import (
    DecoderState,
    EncodedDB,
    GenModel,
    GenVocab,
    cond_copy_step_nll,
    copy_supervision,
    decode_step,
    encode_records,
    game_arrays,
    gen_step_nll,
    initial_state,
    joint_copy_step_nll,
    marginal_log_prob,
    next_token_distribution,
    recon_heads,
    recon_nll_from_heads,
    split_blocks,
    tvd_term,
)

log = logging.getLogger(__name__)


@dataclass
class GenExample:
    game: object  # GameArrays
    inputs: np.ndarray  # (T,) word ids, BOS first
    targets: list  # (T,) token strings, EOS last
    target_ids: np.ndarray
    match: np.ndarray  # (T, J) record renders as the target
    z: np.ndarray  # (T,)
    sup: np.ndarray  # (T, J) r(y_t)

    def __len__(self):
        return len(self.targets)


def make_example(pair, vocab, cfg):
    ga = game_arrays(pair.db, vocab, cfg.max_entities)
    words = vocab.words
    toks = list(pair.summary.tokens)
    targets = toks + [words.itos[EOS_ID]]
    J = len(ga.types)
    strings = np.array(ga.strings, dtype=object)
    match = np.zeros((len(targets), J), dtype=bool)
    sup = np.zeros((len(targets), J), dtype=bool)
    cs = copy_supervision(toks, pair.db)
    z = np.zeros(len(targets), dtype=np.int64)
    z[:len(toks)] = cs.z
    for t, tok in enumerate(toks):
        if tok.isdigit():
            match[t] = strings == tok
        if cs.z[t]:
            sup[t, list(cs.records[t])] = True
    return GenExample(
        game=ga,
        inputs=np.array([BOS_ID] + words.encode(toks), dtype=np.int64),
        targets=targets,
        target_ids=np.array(words.encode(toks) + [EOS_ID], dtype=np.int64),
        match=match,
        z=z,
        sup=sup,
    )


def _slice_state(state, n):
    return DecoderState([(Tensor(h.data[:n]), Tensor(c.data[:n])) for h, c in state.layers],
                        Tensor(state.feed.data[:n]))


def step_losses(model, out, enc, ex_rows, t):
    """Per-row token losses at time ``t`` for the model's copy mode."""
    ids = np.array([ex.target_ids[t] for ex in ex_rows])
    mode = model.cfg.copy_mode
    if mode == "none":
        return gen_step_nll(out, ids)
    J = enc.mask.shape[1]
    match = np.stack([np.pad(ex.match[t], (0, J - ex.match.shape[1])) for ex in ex_rows])
    if mode == "joint":
        return joint_copy_step_nll(out, enc, ids, match)
    sup = np.stack([np.pad(ex.sup[t], (0, J - ex.sup.shape[1])) for ex in ex_rows])
    z = np.array([ex.z[t] for ex in ex_rows])
    return cond_copy_step_nll(out, enc, ids, z, sup)


@dataclass
class BlockResult:
    loss: Tensor
    nll: float
    tokens: int
    recon: float
    tvd: float


def run_block(model, batch, enc, state, start, end, train=True):
    """Decode positions ``[start, end)`` for the rows of ``batch`` (sorted by length, all active)."""
    cfg = model.cfg
    n = len(batch)
    total = None
    tops = []
    n_tok = 0
    for t in range(start, end):
        rows = sum(len(ex) > t for ex in batch)
        prev = np.array([ex.inputs[t] if len(ex) > t else 0 for ex in batch])
        out, state = decode_step(model, prev, state, enc, train=train)
        tops.append(out.top)
        # rows are sorted by length, so the live ones are a prefix
        if rows < n:
            sub = _subset_out(out, rows)
            sub_enc = _subset_enc(enc, rows)
            losses = step_losses(model, sub, sub_enc, batch[:rows], t)
        else:
            losses = step_losses(model, out, enc, batch, t)
        s = T.tsum(losses)
        total = s if total is None else total + s
        n_tok += rows
    nll = float(total.data)
    recon_v = tvd_v = 0.0
    if cfg.recon.enabled:
        H = T.stack(tops, axis=1)  # (B, Tb, d)
        steps = np.arange(start, end)
        for a, b in split_blocks(end - start, cfg.recon.block):
            live = [i for i, ex in enumerate(batch) if len(ex) > start + a]
            if not live:
                continue
            blk = T.getitem(H, (slice(0, len(live)), slice(a, b)))
            mask = np.array([[len(batch[i]) > s for s in steps[a:b]] for i in live])
            blk = blk * Tensor(mask[:, :, None].astype(blk.dtype))
            heads = recon_heads(model, blk, mask)
            rl = recon_nll_from_heads(heads, [batch[i].game for i in live])
            tv = tvd_term(heads)
            sign = 1.0 if cfg.recon.tvd_sign == "penalize" else -1.0
            total = total + rl + tv * (sign * cfg.recon.tvd_weight)
            recon_v += float(rl.data)
            tvd_v += float(tv.data)
    return BlockResult(total * (1.0 / n), nll, n_tok, recon_v, tvd_v), state


def _subset_out(out, n):
    from .model import StepOutput

    cut = lambda x: None if x is None else T.getitem(x, slice(0, n))  # noqa: E731
    return StepOutput(cut(out.gen_logits), cut(out.copy_scores), cut(out.switch_logit), cut(out.attn), cut(out.top))


def _subset_enc(enc, n):
    return EncodedDB(T.getitem(enc.records, slice(0, n)), enc.mask[:n], enc.copy_mask[:n],
                     T.getitem(enc.pooled, slice(0, n)), [], enc.games[:n])


@dataclass
class EpochStats:
    epoch: int
    nll: float
    tokens: int
    recon: float
    tvd: float
    lr: float
    valid_ppl: float | None = None

    @property
    def ppl(self):
        return math.exp(self.nll / self.tokens) if self.tokens else float("nan")


def train_epoch(model, examples, rng, epoch=0):
    cfg = model.cfg
    order = rng.permutation(len(examples))
    nll = recon = tvd = 0.0
    toks = 0
    for bstart in range(0, len(order), cfg.batch_size):
        batch = [examples[i] for i in order[bstart:bstart + cfg.batch_size]]
        batch.sort(key=lambda ex: -len(ex))
        state = None
        for start, end in split_blocks(len(batch[0]), cfg.bptt_block):
            live = [ex for ex in batch if len(ex) > start]
            # the encoder is rerun per block so each block's loss reaches its parameters
            enc = encode_records(model, [ex.game for ex in live])
            state = initial_state(model, enc) if state is None else _slice_state(state.detach(), len(live))
            res, state = run_block(model, live, enc, state, start, end, train=True)
            if not np.isfinite(res.loss.data):
                ids = ",".join(ex.game.game_id for ex in live)
                raise TrainingError(f"non-finite loss at epoch {epoch}, tokens [{start}, {end}) of games {ids}")
            res.loss.backward()
            sgd_step(model.store, clip=cfg.clip)
            nll += res.nll
            toks += res.tokens
            recon += res.recon
            tvd += res.tvd
    return EpochStats(epoch, nll, toks, recon, tvd, model.store.lr)


def frozen(model):
    """Gradient-free view of ``model`` for evaluation and decoding."""
    clone = object.__new__(GenModel)
    clone.cfg, clone.vocab, clone.rng = model.cfg, model.vocab, model.rng
    clone.store = _FrozenStore({k: Tensor(v.data) for k, v in model.store.params.items()})
    return clone


class _FrozenStore:
    def __init__(self, params):
        self.params = params


def perplexity(model, pairs_or_examples, batch_size=16):
    """``exp`` of the mean per-token negative log marginal likelihood (EOS included)."""
    fm = frozen(model)
    exs = [e if isinstance(e, GenExample) else make_example(e, model.vocab, model.cfg) for e in pairs_or_examples]
    nll, n = 0.0, 0
    for s in range(0, len(exs), batch_size):
        batch = sorted(exs[s:s + batch_size], key=lambda ex: -len(ex))
        enc = encode_records(fm, [ex.game for ex in batch])
        state = initial_state(fm, enc)
        J = enc.mask.shape[1]
        for t in range(len(batch[0])):
            rows = sum(len(ex) > t for ex in batch)
            prev = np.array([ex.inputs[t] if len(ex) > t else 0 for ex in batch])
            out, state = decode_step(fm, prev, state, enc)
            ids = np.array([ex.target_ids[t] if len(ex) > t else 0 for ex in batch])
            match = np.stack([np.pad(ex.match[min(t, len(ex) - 1)], (0, J - ex.match.shape[1])) for ex in batch])
            lp = marginal_log_prob(fm, out, enc, ids, match)[:rows]
            nll -= float(lp.sum())
            n += rows
    return math.exp(nll / n) if n else float("nan")


def reconstruction_loss(model, pairs_or_examples, batch_size=16):
    """Mean per-game reconstruction term under teacher forcing, without updates."""
    if not model.cfg.recon.enabled:
        raise ValueError("model was built without reconstruction heads")
    fm = frozen(model)
    exs = [e if isinstance(e, GenExample) else make_example(e, model.vocab, model.cfg) for e in pairs_or_examples]
    total = 0.0
    for s in range(0, len(exs), batch_size):
        batch = sorted(exs[s:s + batch_size], key=lambda ex: -len(ex))
        enc = encode_records(fm, [ex.game for ex in batch])
        state = initial_state(fm, enc)
        tops = []
        for t in range(len(batch[0])):
            prev = np.array([ex.inputs[t] if len(ex) > t else 0 for ex in batch])
            out, state = decode_step(fm, prev, state, enc)
            tops.append(out.top)
        H = T.stack(tops, axis=1)
        for a, b in split_blocks(len(batch[0]), model.cfg.recon.block):
            live = [i for i, ex in enumerate(batch) if len(ex) > a]
            mask = np.array([[len(batch[i]) > t for t in range(a, b)] for i in live])
            blk = T.getitem(H, (slice(0, len(live)), slice(a, b))) * Tensor(mask[:, :, None].astype(H.dtype))
            heads = recon_heads(fm, blk, mask)
            total += float(recon_nll_from_heads(heads, [batch[i].game for i in live]).data)
    return total / len(exs)


def train_generator(train_pairs, cfg, valid_pairs=None, vocab=None, callback=None):
    """Train a generator; returns ``(model, history)``.

    The learning rate is halved whenever validation perplexity fails to
    decrease.  Without a validation split the rate stays fixed unless
    ``cfg.halve_on_train`` asks for the same rule on training perplexity.
    """
    if not train_pairs:
        raise ValueError("train_generator needs at least one game")
    vocab = vocab or GenVocab.build(train_pairs, cfg.min_count)
    model = GenModel(cfg, vocab)
    examples = [make_example(p, vocab, cfg) for p in train_pairs]
    valid = [make_example(p, vocab, cfg) for p in valid_pairs] if valid_pairs else None
    rng = np.random.default_rng(cfg.seed)
    halver = PlateauHalver(model.store)
    history = []
    for epoch in range(cfg.epochs):
        stats = train_epoch(model, examples, rng, epoch)
        if valid:
            stats.valid_ppl = perplexity(model, valid)
            halver.step(stats.valid_ppl)
        elif cfg.halve_on_train:
            halver.step(stats.ppl)
        history.append(stats)
        log.info("epoch %d train ppl %.3f valid ppl %s recon %.3f lr %.4f", epoch, stats.ppl,
                 "-" if stats.valid_ppl is None else f"{stats.valid_ppl:.3f}", stats.recon, stats.lr)
        if callback is not None and callback(model, stats) is False:
            break
    return model, history


# -- decoding --------------------------------------------------------------
def _repeat_enc(enc, n):
    rep = lambda x: Tensor(np.repeat(x.data, n, axis=0))  # noqa: E731
    return EncodedDB(rep(enc.records), np.repeat(enc.mask, n, 0), np.repeat(enc.copy_mask, n, 0),
                     rep(enc.pooled), [], enc.games * n)


def _stack_states(states):
    layers = []
    for li in range(len(states[0].layers)):
        layers.append((Tensor(np.concatenate([s.layers[li][0].data for s in states])),
                       Tensor(np.concatenate([s.layers[li][1].data for s in states]))))
    return DecoderState(layers, Tensor(np.concatenate([s.feed.data for s in states])))


def _row_state(state, i):
    return DecoderState([(Tensor(h.data[i:i + 1]), Tensor(c.data[i:i + 1])) for h, c in state.layers],
                        Tensor(state.feed.data[i:i + 1]))


def beam_search(db, model, B=1, max_len=None, trace=None):
    """Length-unnormalized beam search over the marginal next-token distribution.

    Copied values appear as their digit strings.  ``trace``, when a list,
    receives the sorted live log-probabilities after every step.  Returns a
    :class:`Document` without the end token.
    """
    if B < 1:
        raise ValueError("beam size must be >= 1")
    fm = frozen(model)
    max_len = max_len or model.cfg.max_len
    words = model.vocab.words
    eos = words.itos[EOS_ID]
    enc1 = encode_records(fm, [game_arrays(db, model.vocab, model.cfg.max_entities)])
    live = [([], 0.0, initial_state(fm, enc1), BOS_ID)]
    finished = []
    for _ in range(max_len):
        n = len(live)
        enc = enc1 if n == 1 else _repeat_enc(enc1, n)
        state = _stack_states([h[2] for h in live])
        out, new_state = decode_step(fm, np.array([h[3] for h in live]), state, enc)
        cands = []
        for i, (toks, lp, _, _) in enumerate(live):
            dist = next_token_distribution(fm, out, enc, row=i)
            for tok, pr in dist.items():
                if pr > 0:
                    cands.append((lp + math.log(pr), i, tok))
        cands.sort(key=lambda c: (-c[0], c[1], c[2]))
        nxt = []
        for score, i, tok in cands[:B]:
            if tok == eos:
                finished.append((live[i][0], score))
            else:
                nxt.append((live[i][0] + [tok], score, _row_state(new_state, i), words.id(tok)))
        live = nxt
        if trace is not None:
            trace.append([h[1] for h in live])
        if not live:
            break
        best_done = max((s for _, s in finished), default=-math.inf)
        if live[0][1] < best_done:
            break
    pool = finished + [(h[0], h[1]) for h in live]
    best = max(pool, key=lambda x: x[1])[0] if pool else []
    return Document.from_tokens(best)
