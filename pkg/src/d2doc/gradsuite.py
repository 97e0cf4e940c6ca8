"""Finite-difference checks of every differentiable building block at toy sizes."""
from __future__ import annotations

import time

import numpy as np

from .nn import grad_check
from .nn import layers as L
from .nn import tensor as T
from .nn.tensor import Tensor
from .records import Document, ExamplePair, GameDatabase, PlayerInfo, TeamInfo

TOLERANCE = 1e-3


def toy_game():
    """Two teams and three players with a short hand-written summary."""
    home = TeamInfo("Heat", "Miami", {"pts": 95, "wins": 10, "losses": 5, "reb": 40})
    vis = TeamInfo("Hawks", "Atlanta", {"pts": 103, "wins": 7, "losses": 8, "reb": 38})
    players = (
        PlayerInfo("Tyler Johnson", "Tyler", "Johnson", "Miami", True, {"pts": 27, "reb": 5, "ast": 5}),
        PlayerInfo("Dwight Howard", "Dwight", "Howard", "Atlanta", False, {"pts": 12, "reb": 15, "ast": 2}),
        PlayerInfo("Kyle Korver", "Kyle", "Korver", "Atlanta", False, {"pts": 9, "reb": 3, "ast": 4}),
    )
    db = GameDatabase("toy-0", home, vis, players)
    text = ("The Atlanta Hawks defeated the Miami Heat 103 - 95 . "
            "Tyler Johnson scored 27 points with 5 rebounds .")
    return ExamplePair(db, Document.from_tokens(text.split()))


def _rand(rng, *shape, scale=0.5):
    return rng.normal(scale=scale, size=shape)


def check_linear(rng):
    return grad_check(lambda p: T.tsum(T.tanh(L.linear(p["x"], p["W"], p["b"]))),
                      {"x": _rand(rng, 3, 4), "W": _rand(rng, 4, 3), "b": _rand(rng, 3)})


def check_conv(rng):
    mask = np.array([[1, 1, 1, 1, 1, 1], [1, 1, 1, 0, 0, 0]], dtype=bool)

    def f(p):
        out = L.conv1d_maxpool(p["x"], [(2, p["W2"], p["b2"]), (3, p["W3"], p["b3"])], mask)
        return T.tsum(out * Tensor(np.linspace(0.5, 1.5, out.data.size).reshape(out.shape)))

    return grad_check(f, {"x": _rand(rng, 2, 6, 3), "W2": _rand(rng, 6, 4), "b2": _rand(rng, 4),
                          "W3": _rand(rng, 9, 4), "b3": _rand(rng, 4)})


def check_lstm_step(rng):
    def f(p):
        h, c = L.lstm_step(p["x"], p["h"], p["c"], p["W"], p["b"])
        return T.tsum(h * Tensor(np.arange(1.0, 4.0))) + T.tsum(c)

    return grad_check(f, {"x": _rand(rng, 2), "h": _rand(rng, 3), "c": _rand(rng, 3),
                          "W": _rand(rng, 5, 12), "b": _rand(rng, 12)})


def check_bilstm(rng):
    mask = np.array([[1, 1, 1, 1], [1, 1, 0, 0]], dtype=bool)

    def f(p):
        out = L.bilstm_maxpool(p["x"], (p["Wf"], p["bf"]), (p["Wb"], p["bb"]), mask)
        return T.tsum(out * Tensor(np.linspace(-1, 1, out.data.size).reshape(out.shape)))

    return grad_check(f, {"x": _rand(rng, 2, 4, 2), "Wf": _rand(rng, 4, 8), "bf": _rand(rng, 8),
                          "Wb": _rand(rng, 4, 8), "bb": _rand(rng, 8)})


def check_attention(rng):
    def f(p):
        w, ctx = L.attention(p["q"], p["K"], p["W"])
        return T.tsum(ctx * Tensor(np.arange(1.0, 4.0))) + T.tsum(w * w)

    return grad_check(f, {"q": _rand(rng, 3), "K": _rand(rng, 4, 3), "W": _rand(rng, 3, 3)})


def check_marginal(rng):
    from .extractor import marginal_loss

    return grad_check(lambda p: marginal_loss(T.log_softmax(p["z"]), {1, 4, 7}), {"z": _rand(rng, 10, scale=1.0)})


def _toy_model(copy_mode, recon=False, seed=0):
    from .generator.model import GenConfig, GenModel, GenVocab, ReconConfig

    pair = toy_game()
    cfg = GenConfig(dim=3, copy_mode=copy_mode, dropout=0.0, max_entities=5, seed=seed,
                    recon=ReconConfig(enabled=recon, filters=2, head_dim=2, K=2))
    vocab = GenVocab.build([pair])
    return GenModel(cfg, vocab), pair


def _model_check(model, loss_fn, rng):
    """Grad-check ``loss_fn(model)`` over every parameter of ``model``.

    Parameters are redrawn at a larger scale than the training init so that
    gradients sit well above finite-difference roundoff.
    """
    names = list(model.store.params)
    base = {k: _rand(rng, *model.store.params[k].shape) for k in names}

    def f(p):
        for k in names:
            model.store.params[k] = p[k]
        return loss_fn(model)

    try:
        # losses here are O(10), so a larger step keeps roundoff below truncation error
        return grad_check(f, base, eps=1e-5)
    finally:
        for k in names:
            model.store.params[k] = Tensor(base[k].astype(np.float32), requires_grad=True)


def _decode_loss(model, pair, steps=6):
    from .generator.model import encode_records, initial_state
    from .generator.train import make_example, run_block

    ex = make_example(pair, model.vocab, model.cfg)
    enc = encode_records(model, [ex.game])
    res, _ = run_block(model, [ex], enc, initial_state(model, enc), 0, min(steps, len(ex)))
    return res.loss


def check_joint_copy(rng):
    model, pair = _toy_model("joint")
    return _model_check(model, lambda m: _decode_loss(m, pair), rng)


def check_cond_copy(rng):
    model, pair = _toy_model("conditional")
    return _model_check(model, lambda m: _decode_loss(m, pair), rng)


def check_recon(rng):
    from .generator.model import game_arrays, recon_loss

    model, pair = _toy_model("none", recon=True)
    ga = game_arrays(pair.db, model.vocab, model.cfg.max_entities)
    block = _rand(rng, 1, 5, 3)
    rec = [k for k in model.store.params if k.startswith("rec_")]
    base = {k: _rand(rng, *model.store.params[k].shape) for k in rec}
    base["block"] = block

    def f(p):
        for k in rec:
            model.store.params[k] = p[k]
        return recon_loss(model, p["block"], [ga])

    return grad_check(f, base)


def check_tvd(rng):
    from .generator.model import tvd_term

    def f(p):
        heads = [tuple(T.log_softmax(p[f"h{k}{j}"]) for j in range(3)) for k in range(3)]
        return tvd_term(heads)

    return grad_check(f, {f"h{k}{j}": _rand(rng, 4, scale=1.0) for k in range(3) for j in range(3)})


CHECKS = {
    "linear": check_linear,
    "conv1d_maxpool": check_conv,
    "lstm_step": check_lstm_step,
    "bilstm_maxpool": check_bilstm,
    "attention": check_attention,
    "marginal_loss": check_marginal,
    "joint_copy_nll": check_joint_copy,
    "cond_copy_nll": check_cond_copy,
    "recon_loss": check_recon,
    "tvd_term": check_tvd,
}


def run_all(seed=0, names=None):
    """``[(name, max relative error, seconds)]`` for each check."""
    out = []
    for name in names or CHECKS:
        rng = np.random.default_rng(seed)
        t0 = time.perf_counter()
        err = CHECKS[name](rng)
        out.append((name, err, time.perf_counter() - t0))
    return out
