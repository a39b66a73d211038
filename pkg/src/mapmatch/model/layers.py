"""Transformer building blocks as pure functions with explicit backward passes.

Internal batched functions work on (batch, time, feature) arrays and return
a cache consumed by the matching ``*_bwd`` function. The public single-matrix
wrappers at the bottom (attention, multi_head_attention, layer_norm, ffn)
expose the same math on unbatched inputs.

Masks: ``key_valid`` is True at real positions; a ``key_pad_mask`` argument
(True at padding) is accepted by the public wrappers and inverted.
"""

from __future__ import annotations

import numpy as np

LAYER_NORM_EPS = 1e-5


def _mask_value(dtype) -> float:
    # Large negative finite value; exp() underflows to exactly 0 after the
    # row-max shift, so padded keys get zero attention weight.
    return -0.5 * float(np.finfo(dtype).max)


# -- linear ------------------------------------------------------------------


def linear_fwd(x: np.ndarray, w: np.ndarray, b: np.ndarray | None = None) -> np.ndarray:
    y = x @ w
    if b is not None:
        y = y + b
    return y


def linear_bwd(dy: np.ndarray, x: np.ndarray, w: np.ndarray, with_bias: bool):
    dx = dy @ w.T
    dw = x.reshape(-1, x.shape[-1]).T @ dy.reshape(-1, dy.shape[-1])
    db = dy.reshape(-1, dy.shape[-1]).sum(axis=0) if with_bias else None
    return dx, dw, db


# -- layer norm ----------------------------------------------------------------


def layer_norm_fwd(x: np.ndarray, gain: np.ndarray, bias: np.ndarray):
    mean = x.mean(axis=-1, keepdims=True)
    centered = x - mean
    var = (centered**2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LAYER_NORM_EPS)
    xhat = centered * inv
    return xhat * gain + bias, (xhat, inv, gain)


def layer_norm_bwd(dy: np.ndarray, cache):
    xhat, inv, gain = cache
    dxhat = dy * gain
    dgain = (dy * xhat).reshape(-1, dy.shape[-1]).sum(axis=0)
    dbias = dy.reshape(-1, dy.shape[-1]).sum(axis=0)
    mean_dxhat = dxhat.mean(axis=-1, keepdims=True)
    mean_dxhat_xhat = (dxhat * xhat).mean(axis=-1, keepdims=True)
    dx = inv * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat)
    return dx, dgain, dbias


# -- feed-forward ----------------------------------------------------------


def ffn_fwd(x, w1, b1, w2, b2):
    pre = x @ w1 + b1
    hidden = np.maximum(pre, 0.0)
    return hidden @ w2 + b2, (x, hidden, pre > 0)


def ffn_bwd(dy, cache, w1, w2):
    x, hidden, active = cache
    d_out = dy.reshape(-1, dy.shape[-1])
    dw2 = hidden.reshape(-1, hidden.shape[-1]).T @ d_out
    db2 = d_out.sum(axis=0)
    dhidden = (dy @ w2.T) * active
    d_hid = dhidden.reshape(-1, dhidden.shape[-1])
    dw1 = x.reshape(-1, x.shape[-1]).T @ d_hid
    db1 = d_hid.sum(axis=0)
    dx = dhidden @ w1.T
    return dx, {"w1": dw1, "b1": db1, "w2": dw2, "b2": db2}


# -- scaled dot-product attention -------------------------------------------


def attention_core_fwd(q, k, v, key_valid):
    """q, k, v: (..., T, d_head); key_valid: broadcastable to score shape or None."""
    d_head = q.shape[-1]
    scores = (q @ np.swapaxes(k, -1, -2)) / np.sqrt(d_head)
    if key_valid is not None:
        scores = np.where(key_valid, scores, _mask_value(scores.dtype))
    scores = scores - scores.max(axis=-1, keepdims=True)
    weights = np.exp(scores)
    weights = weights / weights.sum(axis=-1, keepdims=True)
    out = weights @ v
    return out, weights, (q, k, v, weights)


def attention_core_bwd(dout, cache):
    q, k, v, weights = cache
    d_head = q.shape[-1]
    dweights = dout @ np.swapaxes(v, -1, -2)
    dv = np.swapaxes(weights, -1, -2) @ dout
    # softmax backward; rows are unaffected by the constant row-max shift
    dscores = weights * (dweights - (dweights * weights).sum(axis=-1, keepdims=True))
    dscores = dscores / np.sqrt(d_head)
    dq = dscores @ k
    dk = np.swapaxes(dscores, -1, -2) @ q
    return dq, dk, dv


def _split_heads(x: np.ndarray, n_heads: int) -> np.ndarray:
    b, t, d = x.shape
    return x.reshape(b, t, n_heads, d // n_heads).transpose(0, 2, 1, 3)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    b, h, t, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, t, h * dh)


def mha_fwd(x_q, x_kv, key_valid, wq, wk, wv, wo, n_heads):
    """Multi-head attention over batched streams.

    x_q: (B, Tq, d), x_kv: (B, Tk, d), key_valid: (B, Tk) bool or None.
    Returns (output (B, Tq, d), per-head weights (B, H, Tq, Tk), cache).
    """
    q = _split_heads(x_q @ wq, n_heads)
    k = _split_heads(x_kv @ wk, n_heads)
    v = _split_heads(x_kv @ wv, n_heads)
    mask = None if key_valid is None else key_valid[:, None, None, :]
    ctx, weights, core_cache = attention_core_fwd(q, k, v, mask)
    merged = _merge_heads(ctx)
    out = merged @ wo
    return out, weights, (x_q, x_kv, merged, core_cache, n_heads)


def mha_bwd(dout, cache, wq, wk, wv, wo):
    x_q, x_kv, merged, core_cache, n_heads = cache
    dwo = merged.reshape(-1, merged.shape[-1]).T @ dout.reshape(-1, dout.shape[-1])
    dmerged = dout @ wo.T
    dctx = _split_heads(dmerged, n_heads)
    dq, dk, dv = attention_core_bwd(dctx, core_cache)
    dq_m, dk_m, dv_m = _merge_heads(dq), _merge_heads(dk), _merge_heads(dv)
    dx_q = dq_m @ wq.T
    dx_kv = dk_m @ wk.T + dv_m @ wv.T
    flat_q = x_q.reshape(-1, x_q.shape[-1])
    flat_kv = x_kv.reshape(-1, x_kv.shape[-1])
    grads = {
        "wq": flat_q.T @ dq_m.reshape(-1, dq_m.shape[-1]),
        "wk": flat_kv.T @ dk_m.reshape(-1, dk_m.shape[-1]),
        "wv": flat_kv.T @ dv_m.reshape(-1, dv_m.shape[-1]),
        "wo": dwo,
    }
    return dx_q, dx_kv, grads


# -- dropout -----------------------------------------------------------------


def dropout_fwd(x: np.ndarray, rate: float, rng: np.random.Generator | None):
    """Inverted dropout; identity when rate is 0 or no generator is given."""
    if rate <= 0.0 or rng is None:
        return x, None
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return x * keep, keep


def dropout_bwd(dy: np.ndarray, keep) -> np.ndarray:
    return dy if keep is None else dy * keep


# -- public single-matrix wrappers -------------------------------------------


def attention(q: np.ndarray, k: np.ndarray, v: np.ndarray, key_pad_mask: np.ndarray | None = None):
    """Scaled dot-product attention on single matrices.

    q: (Tq, d_k), k: (Tk, d_k), v: (Tk, d_v); key_pad_mask True at padded
    keys. Returns (output (Tq, d_v), weights (Tq, Tk)).
    """
    key_valid = None if key_pad_mask is None else ~np.asarray(key_pad_mask, dtype=bool)
    out, weights, _ = attention_core_fwd(
        np.asarray(q), np.asarray(k), np.asarray(v), None if key_valid is None else key_valid[None, :]
    )
    return out, weights


def multi_head_attention(
    block: dict[str, np.ndarray],
    q_in: np.ndarray,
    k_in: np.ndarray,
    v_in: np.ndarray,
    key_pad_mask: np.ndarray | None = None,
    *,
    n_heads: int,
):
    """Multi-head attention on single matrices (Tq, d_model) / (Tk, d_model).

    ``block`` holds the projections wq, wk, wv, wo. Returns the output and
    the per-head weight matrices as a list of (Tq, Tk) arrays.
    """
    q = _split_heads((np.asarray(q_in) @ block["wq"])[None], n_heads)
    k = _split_heads((np.asarray(k_in) @ block["wk"])[None], n_heads)
    v = _split_heads((np.asarray(v_in) @ block["wv"])[None], n_heads)
    mask = None if key_pad_mask is None else ~np.asarray(key_pad_mask, dtype=bool)[None, None, None, :]
    ctx, weights, _ = attention_core_fwd(q, k, v, mask)
    out = _merge_heads(ctx)[0] @ block["wo"]
    return out, [weights[0, h] for h in range(n_heads)]


def layer_norm(x: np.ndarray, gain: np.ndarray, bias: np.ndarray) -> np.ndarray:
    out, _ = layer_norm_fwd(np.asarray(x, dtype=float), gain, bias)
    return out


def ffn(x: np.ndarray, w1: np.ndarray, b1: np.ndarray, w2: np.ndarray, b2: np.ndarray) -> np.ndarray:
    out, _ = ffn_fwd(np.asarray(x, dtype=float), w1, b1, w2, b2)
    return out
