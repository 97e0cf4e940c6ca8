"""Layers built from :mod:`d2doc.nn.tensor` primitives.

Everything is functional: parameters come in as tensors (usually looked up
from a :class:`~d2doc.nn.params.ParamStore`) and nothing is cached between
calls.  Batched variants take a leading batch axis.
"""
from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import NEG, ShapeError, Tensor


def linear(x, W, b=None):
    """``x @ W + b`` for ``x`` of shape ``(..., in)`` and ``W`` of ``(in, out)``."""
    if x.shape[-1] != W.shape[0]:
        raise ShapeError(f"linear: input {x.shape} does not match weight {W.shape}")
    if b is not None and b.shape != (W.shape[1],):
        raise ShapeError(f"linear: bias {b.shape} does not match weight {W.shape}")
    y = T.matmul(x, W)
    return y if b is None else y + b


def _windows(x, width):
    """Stack sliding windows: ``(B, L, d) -> (B, L - width + 1, width * d)``."""
    B, L, d = x.shape
    n = L - width + 1
    idx = np.arange(n)[:, None] + np.arange(width)[None, :]
    win = T.getitem(x, (slice(None), idx))  # (B, n, width, d)
    return T.reshape(win, (B, n, width * d))


def conv1d_maxpool(x, kernels, mask=None):
    """Temporal convolution, ReLU and max-over-time for each kernel width.

    ``x`` is ``(T, d)`` or ``(B, T, d)``.  ``kernels`` is a list of
    ``(width, W, b)`` with ``W`` of shape ``(width * d, filters)``.  Inputs
    shorter than a kernel are zero-padded on the right up to its width.
    ``mask`` (``(B, T)``, 1 for real tokens) keeps windows that start past
    the end of a sequence out of the max.  Outputs are concatenated in kernel
    order.
    """
    single = x.ndim == 2
    if single:
        x = T.reshape(x, (1,) + x.shape)
        if mask is not None:
            mask = np.asarray(mask)[None]
    B, L, d = x.shape
    if mask is None:
        mask = np.ones((B, L), dtype=bool)
    lengths = np.asarray(mask).sum(axis=1).astype(int)
    feats = []
    for width, W, b in kernels:
        if W.shape[0] != width * d:
            raise ShapeError(f"conv width {width} over dim {d} needs {width * d} rows, got {W.shape}")
        xx, LL = x, L
        if L < width:
            pad = Tensor(np.zeros((B, width - L, d), dtype=x.dtype))
            xx, LL = T.concat([x, pad], axis=1), width
        h = T.relu(linear(_windows(xx, width), W, b))  # (B, n, F)
        n = LL - width + 1
        valid = np.arange(n)[None, :] < np.maximum(lengths - width + 1, 1)[:, None]
        if not valid.all():
            h = h + Tensor(np.where(valid, 0.0, NEG).astype(x.dtype)[:, :, None])
        feats.append(T.tmax(h, axis=1))
    out = T.concat(feats, axis=-1)
    return T.reshape(out, (out.shape[-1],)) if single else out


def lstm_step(x, h, c, W, b):
    """One LSTM update.  ``W`` is ``(in + k, 4k)``; gate order is i, f, o, g."""
    k = h.shape[-1]
    if W.shape != (x.shape[-1] + k, 4 * k):
        raise ShapeError(f"lstm_step: x {x.shape}, h {h.shape} incompatible with W {W.shape}")
    z = linear(T.concat([x, h], axis=-1), W, b)
    i = T.sigmoid(z[..., :k])
    f = T.sigmoid(z[..., k:2 * k])
    o = T.sigmoid(z[..., 2 * k:3 * k])
    g = T.tanh(z[..., 3 * k:])
    c2 = f * c + i * g
    h2 = o * T.tanh(c2)
    return h2, c2


def lstm_scan(xs, W, b, mask=None, reverse=False, h0=None, c0=None):
    """Run :func:`lstm_step` over ``xs`` of shape ``(B, T, d)`` as one fused op.

    Padded steps (``mask == 0``) leave the state unchanged, so a reverse scan
    over a right-padded batch starts each sequence from the zero state.
    Returns the hidden states as a ``(B, T, k)`` tensor in input order.  The
    recurrence and its backward pass run in plain numpy, which is far cheaper
    than building a graph node per gate per step.
    """
    B, L, d = xs.shape
    k = W.shape[1] // 4
    if W.shape != (d + k, 4 * k):
        raise ShapeError(f"lstm_scan: input dim {d} incompatible with W {W.shape}")
    dt = xs.dtype
    Wx, Wh = W.data[:d], W.data[d:]
    m = np.ones((B, L), dtype=dt) if mask is None else np.asarray(mask, dtype=dt)
    h = np.zeros((B, k), dtype=dt) if h0 is None else h0.data
    c = np.zeros((B, k), dtype=dt) if c0 is None else c0.data
    zx = xs.data @ Wx + b.data
    steps = list(range(L - 1, -1, -1)) if reverse else list(range(L))
    H = np.zeros((B, L, k), dtype=dt)
    cache = []
    for t in steps:
        z = zx[:, t] + h @ Wh
        ifo = T._sigmoid(z[:, :3 * k])
        g = np.tanh(z[:, 3 * k:])
        i, f, o = ifo[:, :k], ifo[:, k:2 * k], ifo[:, 2 * k:]
        c2 = f * c + i * g
        tc = np.tanh(c2)
        mt = m[:, t:t + 1]
        cache.append((h, c, i, f, o, g, tc, mt))
        h = mt * (o * tc) + (1 - mt) * h
        c = mt * c2 + (1 - mt) * c
        H[:, t] = h
    parents = tuple(p for p in (xs, W, b, h0, c0) if p is not None)
    out = T._result(H, parents, "lstm_scan")
    if not out.requires_grad:
        return out

    def _backward(gH):
        dZ = np.zeros((B, L, 4 * k), dtype=dt)
        dWh = np.zeros_like(Wh)
        dh = np.zeros((B, k), dtype=dt)
        dc = np.zeros((B, k), dtype=dt)
        for t, (hp, cp, i, f, o, g, tc, mt) in zip(reversed(steps), reversed(cache)):
            dh = dh + gH[:, t]
            dh2 = mt * dh
            dc2 = mt * dc + dh2 * o * (1 - tc * tc)
            dz = np.concatenate([
                dc2 * g * i * (1 - i),
                dc2 * cp * f * (1 - f),
                dh2 * tc * o * (1 - o),
                dc2 * i * (1 - g * g),
            ], axis=-1)
            dZ[:, t] = dz
            dWh += hp.T @ dz
            dh = dz @ Wh.T + (1 - mt) * dh
            dc = dc2 * f + (1 - mt) * dc
        flat = dZ.reshape(-1, 4 * k)
        if xs.requires_grad:
            xs._accum(dZ @ Wx.T)
        if W.requires_grad:
            W._accum(np.concatenate([xs.data.reshape(-1, d).T @ flat, dWh], axis=0))
        if b.requires_grad:
            b._accum(flat.sum(0).reshape(b.shape))
        if h0 is not None and h0.requires_grad:
            h0._accum(dh)
        if c0 is not None and c0.requires_grad:
            c0._accum(dc)

    out._backward = _backward
    return out


def bilstm_maxpool(xs, fwd, bwd, mask=None):
    """Bidirectional LSTM with per-step concatenation and max over time.

    ``xs`` is ``(T, d)`` or ``(B, T, d)``; ``fwd`` and ``bwd`` are ``(W, b)``
    pairs.  Returns ``(2k,)`` or ``(B, 2k)``.
    """
    single = xs.ndim == 2
    if single:
        xs = T.reshape(xs, (1,) + xs.shape)
        if mask is not None:
            mask = np.asarray(mask)[None]
    B, L, _ = xs.shape
    hf = lstm_scan(xs, *fwd, mask=mask)
    hb = lstm_scan(xs, *bwd, mask=mask, reverse=True)
    states = T.concat([hf, hb], axis=-1)
    if mask is not None and not np.asarray(mask).all():
        states = states + Tensor(np.where(mask, 0.0, NEG).astype(xs.dtype)[:, :, None])
    out = T.tmax(states, axis=1)
    return T.reshape(out, (out.shape[-1],)) if single else out


def attention_scores(query, keys, W=None):
    """Unnormalized scores ``keys @ (W q)`` (or plain dot products without ``W``).

    ``query`` is ``(k,)`` or ``(B, k)``; ``keys`` is ``(J, k)`` or ``(B, J, k)``.
    """
    q = query if W is None else linear(query, W)
    if keys.ndim == 2:
        return T.matmul(keys, q)
    return T.reshape(T.matmul(keys, T.reshape(q, q.shape + (1,))), keys.shape[:2])


def attention(query, keys, W=None, mask=None):
    """Dot-product attention.  Returns ``(weights, context)``.

    ``mask`` marks the keys that may receive weight.
    """
    scores = attention_scores(query, keys, W)
    if mask is not None:
        scores = scores + Tensor(np.where(mask, 0.0, NEG).astype(scores.dtype))
    weights = T.softmax(scores, axis=-1)
    if keys.ndim == 2:
        context = T.matmul(weights, keys)
    else:
        B, J, k = keys.shape
        context = T.reshape(T.matmul(T.reshape(weights, (B, 1, J)), keys), (B, k))
    return weights, context


def softmax_nll(logits, target):
    """Negative log-likelihood of ``target`` under ``softmax(logits)``.

    ``target`` is an int index or a collection of indices; for a collection
    the loss is the negative log of the summed probability of its members.
    Batched logits ``(B, C)`` take a list of targets and return the sum.
    """
    logp = T.log_softmax(logits, axis=-1)
    return log_marginal_nll(logp, target)


def log_marginal_nll(logp, target):
    if logp.ndim == 1:
        targets = [target]
        logp = T.reshape(logp, (1,) + logp.shape)
    else:
        targets = list(target)
    C = logp.shape[-1]
    mask = np.zeros(logp.shape, dtype=bool)
    for row, t in enumerate(targets):
        members = [t] if np.isscalar(t) else list(t)
        if not members:
            raise ValueError("softmax_nll: empty target index set")
        for m in members:
            if not 0 <= m < C:
                raise ValueError(f"softmax_nll: target {m} outside [0, {C})")
        mask[row, members] = True
    return -T.tsum(T.logsumexp(logp, axis=-1, mask=mask))
