"""Pure-numpy implementation of the block attention core.

Reference semantics for the compiled kernel: batched scaled dot-product
attention over spatio-temporal blocks with an additive edge-bias matrix
(hard mask / learnable bias), an optional multiplicative-mask compatibility
path, and threshold attention dropout.

Shapes:
    q, k, v     (nb, heads, n, head_dim)
    bias        (nbias, n, n)   additive, may contain -inf
    mult_mask   (nbias, n, n)   0/1 logits multiplier, or None
    bias_idx    (nb,)           which bias slice each block uses
    keep_mask   (nb, heads, n, n) bool, frozen dropout, or None
"""

from __future__ import annotations

import numpy as np

BACKEND = "numpy"


def _logits(q, k, bias, bias_idx, scale, mult_mask):
    raw = np.matmul(q, np.swapaxes(k, -1, -2))
    raw *= scale  # in place so a float64 scale cannot promote the dtype
    if mult_mask is not None:
        raw = raw * mult_mask[bias_idx][:, None]
    return raw, raw + bias[bias_idx][:, None]


def _softmax(logits):
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _kept(probs, gamma, keep_mask):
    if keep_mask is not None:
        return keep_mask
    if gamma is not None:
        return probs <= gamma
    return None


def attention_forward(q, k, v, bias, bias_idx, scale,
                      mult_mask=None, gamma=None, keep_mask=None):
    """Masked block attention; returns (out, pre-dropout softmax probs)."""
    _, logits = _logits(q, k, bias, bias_idx, scale, mult_mask)
    probs = _softmax(logits)
    kept = _kept(probs, gamma, keep_mask)
    applied = probs if kept is None else probs * kept
    out = np.matmul(applied, v)
    return out, probs


def attention_backward(dout, q, k, v, probs, bias, bias_idx, scale,
                       mult_mask=None, gamma=None, keep_mask=None):
    """Gradients of attention_forward w.r.t. q, k, v and each bias slice."""
    kept = _kept(probs, gamma, keep_mask)
    applied = probs if kept is None else probs * kept
    dv = np.matmul(np.swapaxes(applied, -1, -2), dout)
    dapplied = np.matmul(dout, np.swapaxes(v, -1, -2))
    dprobs = dapplied if kept is None else dapplied * kept
    row = (dprobs * probs).sum(axis=-1, keepdims=True)
    dlogits = probs * (dprobs - row)
    dbias = np.zeros_like(bias)
    np.add.at(dbias, bias_idx, dlogits.sum(axis=1))
    draw = dlogits if mult_mask is None else dlogits * mult_mask[bias_idx][:, None]
    dq = np.matmul(draw, k)
    dq *= scale
    dk = np.matmul(np.swapaxes(draw, -1, -2), q)
    dk *= scale
    return dq, dk, dv, dbias
