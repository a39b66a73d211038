"""Encoder-decoder map matcher over normalized coordinate sequences.

The encoder reads spatially embedded GPS points plus a learned positional
table. The decoder is non-autoregressive: its input is the learned
positional-query table truncated to the input length, so the output always
has one class row per input point. Class 0 is reserved for padding and is
excluded from prediction argmax.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DegenerateBounds, LabelOutOfRange, NoCapture, TooLong
from ..routes import PointRoute
from ..trajgen import GpsTrajectory
from .layers import (
    dropout_bwd,
    dropout_fwd,
    ffn_bwd,
    ffn_fwd,
    layer_norm_bwd,
    layer_norm_fwd,
    mha_bwd,
    mha_fwd,
)
from .params import ModelConfig, ModelParameters

# Attention weights are floored here before the log transform so that
# underflowed entries do not dominate threshold statistics.
ATTENTION_LOG_FLOOR = 1e-12

# Keys exactly at the threshold count as above it; the epsilon absorbs float
# rounding in the mean/median so a uniform row keeps its full-width interval.
_THRESHOLD_EPS = 1e-9


@dataclass
class NormalizedTrajectory:
    values: np.ndarray  # (n, 2) rows of (lat_norm, lon_norm) in [0, 1]
    pad_mask: np.ndarray  # (n,) bool, True at padded positions
    n_clamped: int = 0  # coordinates clamped into [0, 1]

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class AttentionRecord:
    stage: str  # encoder_self | decoder_self | decoder_cross
    layer: int
    head: int
    weights: np.ndarray  # (query positions, key positions), rows sum to 1


def normalize(traj: GpsTrajectory, bounds: tuple[float, float, float, float]) -> NormalizedTrajectory:
    """Scale (lat, lon) into [0, 1] using fixed per-network bounds.

    Out-of-bounds coordinates (noise can push points past the box) are
    clamped and counted.
    """
    lat_min, lat_max, lon_min, lon_max = bounds
    if lat_max <= lat_min or lon_max <= lon_min:
        raise DegenerateBounds(f"bounds are degenerate: {bounds}")
    pts = np.asarray(traj.points, dtype=np.float64)
    lat = (pts[:, 1] - lat_min) / (lat_max - lat_min)
    lon = (pts[:, 0] - lon_min) / (lon_max - lon_min)
    values = np.stack([lat, lon], axis=1)
    clipped = np.clip(values, 0.0, 1.0)
    n_clamped = int((clipped != values).sum())
    return NormalizedTrajectory(clipped, np.zeros(len(clipped), dtype=bool), n_clamped)


# -- forward -----------------------------------------------------------------


def _attn_weights(p: ModelParameters, prefix: str):
    return p[f"{prefix}.wq"], p[f"{prefix}.wk"], p[f"{prefix}.wv"], p[f"{prefix}.wo"]


def _encoder_layer_fwd(p, prefix, x, valid, n_heads, rate, rng):
    a, aw, a_cache = mha_fwd(x, x, valid, *_attn_weights(p, f"{prefix}.attn"), n_heads)
    a_drop, k1 = dropout_fwd(a, rate, rng)
    x1, n1 = layer_norm_fwd(x + a_drop, p[f"{prefix}.norm1.gain"], p[f"{prefix}.norm1.bias"])
    f, f_cache = ffn_fwd(x1, p[f"{prefix}.ffn.w1"], p[f"{prefix}.ffn.b1"], p[f"{prefix}.ffn.w2"], p[f"{prefix}.ffn.b2"])
    f_drop, k2 = dropout_fwd(f, rate, rng)
    x2, n2 = layer_norm_fwd(x1 + f_drop, p[f"{prefix}.norm2.gain"], p[f"{prefix}.norm2.bias"])
    return x2, aw, (a_cache, k1, n1, f_cache, k2, n2)


def _decoder_layer_fwd(p, prefix, y, memory, valid, n_heads, rate, rng):
    s, sw, s_cache = mha_fwd(y, y, valid, *_attn_weights(p, f"{prefix}.self"), n_heads)
    s_drop, k1 = dropout_fwd(s, rate, rng)
    y1, n1 = layer_norm_fwd(y + s_drop, p[f"{prefix}.norm1.gain"], p[f"{prefix}.norm1.bias"])
    c, cw, c_cache = mha_fwd(y1, memory, valid, *_attn_weights(p, f"{prefix}.cross"), n_heads)
    c_drop, k2 = dropout_fwd(c, rate, rng)
    y2, n2 = layer_norm_fwd(y1 + c_drop, p[f"{prefix}.norm2.gain"], p[f"{prefix}.norm2.bias"])
    f, f_cache = ffn_fwd(y2, p[f"{prefix}.ffn.w1"], p[f"{prefix}.ffn.b1"], p[f"{prefix}.ffn.w2"], p[f"{prefix}.ffn.b2"])
    f_drop, k3 = dropout_fwd(f, rate, rng)
    y3, n3 = layer_norm_fwd(y2 + f_drop, p[f"{prefix}.norm3.gain"], p[f"{prefix}.norm3.bias"])
    return y3, sw, cw, (s_cache, k1, n1, c_cache, k2, n2, f_cache, k3, n3)


def forward(
    params: ModelParameters,
    config: ModelConfig,
    values: np.ndarray,
    valid: np.ndarray | None = None,
    *,
    train: bool = False,
    rng: np.random.Generator | None = None,
    capture: bool = False,
):
    """Batched forward pass.

    values: (B, T, 2) normalized coordinates; valid: (B, T) bool, True at
    real points (None means all real). Returns (logits (B, T, n_classes),
    attention records for batch row 0 when capture is set, cache for the
    backward pass).
    """
    values = np.asarray(values, dtype=params.dtype)
    if values.ndim != 3 or values.shape[-1] != 2:
        raise ValueError("values must have shape (batch, time, 2)")
    batch, length, _ = values.shape
    if length > config.max_len:
        raise TooLong(f"sequence length {length} exceeds max_len {config.max_len}")
    if valid is None:
        valid = np.ones((batch, length), dtype=bool)
    rate = config.dropout if train else 0.0
    drop_rng = rng if (train and config.dropout > 0.0) else None

    # spatial embedding: 2 -> d -> d with a ReLU between
    pre1 = values @ params["embed.spatial.w1"] + params["embed.spatial.b1"]
    hid = np.maximum(pre1, 0.0)
    spatial = hid @ params["embed.spatial.w2"] + params["embed.spatial.b2"]

    enc0 = spatial + params["embed.position"][:length]
    enc_x, enc_keep = dropout_fwd(enc0, rate, drop_rng)
    enc_caches = []
    enc_weights = []
    for i in range(config.n_layers):
        enc_x, aw, cache = _encoder_layer_fwd(params, f"enc.{i}", enc_x, valid, config.n_heads, rate, drop_rng)
        enc_caches.append(cache)
        enc_weights.append(aw)
    memory = enc_x

    dec0 = np.broadcast_to(params["embed.query"][:length], (batch, length, config.d_model))
    dec_x, dec_keep = dropout_fwd(dec0, rate, drop_rng)
    dec_caches = []
    dec_self_weights = []
    dec_cross_weights = []
    for i in range(config.n_layers):
        dec_x, sw, cw, cache = _decoder_layer_fwd(
            params, f"dec.{i}", dec_x, memory, valid, config.n_heads, rate, drop_rng
        )
        dec_caches.append(cache)
        dec_self_weights.append(sw)
        dec_cross_weights.append(cw)

    logits = dec_x @ params["out.w"] + params["out.b"]

    records: list[AttentionRecord] = []
    if capture:
        for stage, stack in (
            ("encoder_self", enc_weights),
            ("decoder_self", dec_self_weights),
            ("decoder_cross", dec_cross_weights),
        ):
            for layer, weights in enumerate(stack):
                for head in range(config.n_heads):
                    records.append(AttentionRecord(stage, layer, head, weights[0, head]))

    cache = {
        "values": values,
        "valid": valid,
        "pre1": pre1,
        "hid": hid,
        "enc_keep": enc_keep,
        "enc_caches": enc_caches,
        "dec_keep": dec_keep,
        "dec_caches": dec_caches,
        "dec_out": dec_x,
        "length": length,
    }
    return logits, records, cache


# -- backward ----------------------------------------------------------------


def _accumulate_mha_grads(grads, prefix, g):
    for key, value in g.items():
        grads[f"{prefix}.{key}"] += value


def _encoder_layer_bwd(params, prefix, dx2, cache, grads):
    a_cache, k1, n1, f_cache, k2, n2 = cache
    dn2, dg2, db2 = layer_norm_bwd(dx2, n2)
    grads[f"{prefix}.norm2.gain"] += dg2
    grads[f"{prefix}.norm2.bias"] += db2
    df = dropout_bwd(dn2, k2)
    dx1_f, ffn_grads = ffn_bwd(df, f_cache, params[f"{prefix}.ffn.w1"], params[f"{prefix}.ffn.w2"])
    for key, value in ffn_grads.items():
        grads[f"{prefix}.ffn.{key}"] += value
    dx1 = dn2 + dx1_f
    dn1, dg1, db1 = layer_norm_bwd(dx1, n1)
    grads[f"{prefix}.norm1.gain"] += dg1
    grads[f"{prefix}.norm1.bias"] += db1
    da = dropout_bwd(dn1, k1)
    dxq, dxkv, attn_grads = mha_bwd(da, a_cache, *_attn_weights(params, f"{prefix}.attn"))
    _accumulate_mha_grads(grads, f"{prefix}.attn", attn_grads)
    return dn1 + dxq + dxkv


def _decoder_layer_bwd(params, prefix, dy3, cache, grads):
    s_cache, k1, n1, c_cache, k2, n2, f_cache, k3, n3 = cache
    dn3, dg3, db3 = layer_norm_bwd(dy3, n3)
    grads[f"{prefix}.norm3.gain"] += dg3
    grads[f"{prefix}.norm3.bias"] += db3
    df = dropout_bwd(dn3, k3)
    dy2_f, ffn_grads = ffn_bwd(df, f_cache, params[f"{prefix}.ffn.w1"], params[f"{prefix}.ffn.w2"])
    for key, value in ffn_grads.items():
        grads[f"{prefix}.ffn.{key}"] += value
    dy2 = dn3 + dy2_f
    dn2, dg2, db2 = layer_norm_bwd(dy2, n2)
    grads[f"{prefix}.norm2.gain"] += dg2
    grads[f"{prefix}.norm2.bias"] += db2
    dc = dropout_bwd(dn2, k2)
    dy1_c, dmemory, cross_grads = mha_bwd(dc, c_cache, *_attn_weights(params, f"{prefix}.cross"))
    _accumulate_mha_grads(grads, f"{prefix}.cross", cross_grads)
    dy1 = dn2 + dy1_c
    dn1, dg1, db1 = layer_norm_bwd(dy1, n1)
    grads[f"{prefix}.norm1.gain"] += dg1
    grads[f"{prefix}.norm1.bias"] += db1
    ds = dropout_bwd(dn1, k1)
    dyq, dykv, self_grads = mha_bwd(ds, s_cache, *_attn_weights(params, f"{prefix}.self"))
    _accumulate_mha_grads(grads, f"{prefix}.self", self_grads)
    return dn1 + dyq + dykv, dmemory


def backward(params: ModelParameters, config: ModelConfig, cache: dict, dlogits: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients for every trainable tensor given d(loss)/d(logits)."""
    grads = {name: np.zeros_like(tensor) for name, tensor in params.tensors.items()}
    length = cache["length"]
    dec_out = cache["dec_out"]

    flat_dec = dec_out.reshape(-1, config.d_model)
    flat_dl = dlogits.reshape(-1, config.n_classes)
    grads["out.w"] += flat_dec.T @ flat_dl
    grads["out.b"] += flat_dl.sum(axis=0)
    ddec = dlogits @ params["out.w"].T

    dmemory = None
    for i in reversed(range(config.n_layers)):
        ddec, dmem = _decoder_layer_bwd(params, f"dec.{i}", ddec, cache["dec_caches"][i], grads)
        dmemory = dmem if dmemory is None else dmemory + dmem
    ddec0 = dropout_bwd(ddec, cache["dec_keep"])
    grads["embed.query"][:length] += ddec0.sum(axis=0)

    denc = dmemory
    for i in reversed(range(config.n_layers)):
        denc = _encoder_layer_bwd(params, f"enc.{i}", denc, cache["enc_caches"][i], grads)
    denc0 = dropout_bwd(denc, cache["enc_keep"])
    grads["embed.position"][:length] += denc0.sum(axis=0)

    dspatial = denc0
    flat_ds = dspatial.reshape(-1, config.d_model)
    grads["embed.spatial.w2"] += cache["hid"].reshape(-1, config.d_model).T @ flat_ds
    grads["embed.spatial.b2"] += flat_ds.sum(axis=0)
    dhid = (dspatial @ params["embed.spatial.w2"].T) * (cache["pre1"] > 0)
    flat_dh = dhid.reshape(-1, config.d_model)
    grads["embed.spatial.w1"] += cache["values"].reshape(-1, 2).T @ flat_dh
    grads["embed.spatial.b1"] += flat_dh.sum(axis=0)
    return grads


# -- loss --------------------------------------------------------------------


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def loss_and_gradients(
    params: ModelParameters,
    config: ModelConfig,
    values: np.ndarray,
    labels: np.ndarray,
    *,
    train: bool = True,
    rng: np.random.Generator | None = None,
):
    """Mean token cross-entropy over non-padded positions, plus gradients.

    labels: (B, T) ints with 0 at padding; real labels must lie in
    [1, n_classes).
    """
    labels = np.asarray(labels, dtype=np.int64)
    if labels.min() < 0 or labels.max() >= config.n_classes:
        raise LabelOutOfRange(f"labels must lie in [0, {config.n_classes})")
    valid = labels > 0
    n_valid = int(valid.sum())
    if n_valid == 0:
        raise LabelOutOfRange("batch has no non-padding labels")

    logits, _, cache = forward(params, config, values, valid, train=train, rng=rng)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    logp = shifted - logz
    picked = np.take_along_axis(logp, labels[..., None], axis=-1)[..., 0]
    loss = float(-(picked * valid).sum() / n_valid)

    dlogits = np.exp(logp)
    rows = np.zeros_like(dlogits)
    np.put_along_axis(rows, labels[..., None], 1.0, axis=-1)
    dlogits = (dlogits - rows) * valid[..., None] / n_valid
    dlogits = dlogits.astype(params.dtype)
    grads = backward(params, config, cache, dlogits)
    return loss, grads


# -- inference ---------------------------------------------------------------


def predict(
    params: ModelParameters,
    config: ModelConfig,
    traj: GpsTrajectory,
    bounds: tuple[float, float, float, float],
    *,
    capture: bool = True,
):
    """Match one trajectory: (point route, per-point class probabilities, records).

    Argmax runs over classes 1..n_classes-1 so padding is never predicted;
    probability rows keep all classes and sum to 1.
    """
    norm = normalize(traj, bounds)
    logits, records, _ = forward(params, config, norm.values[None], ~norm.pad_mask[None], capture=capture)
    probs = softmax(logits[0].astype(np.float64))
    route: PointRoute = [int(e) for e in np.argmax(logits[0][:, 1:], axis=-1)]
    return route, probs, records


def attention_ranges(records: list[AttentionRecord]) -> tuple[list[tuple[int, int]], float]:
    """Per-output-position input interval of high cross-attention.

    Cross-attention weights are averaged over layers and heads, log
    transformed, and thresholded at the mean of (mean, median) of the log
    weights. Each position gets the smallest contiguous key interval
    covering every at-or-above-threshold key; a position with no key at
    threshold falls back to its single strongest key.
    """
    cross = [r.weights for r in records if r.stage == "decoder_cross"]
    if not cross:
        raise NoCapture("no decoder cross-attention records captured")
    mean_weights = np.mean(np.stack(cross), axis=0)
    log_weights = np.log(np.maximum(mean_weights, ATTENTION_LOG_FLOOR))
    threshold = float((log_weights.mean() + np.median(log_weights)) / 2.0)
    intervals: list[tuple[int, int]] = []
    for row in log_weights:
        above = np.nonzero(row >= threshold - _THRESHOLD_EPS)[0]
        if len(above) == 0:
            j = int(np.argmax(row))
            intervals.append((j, j))
        else:
            intervals.append((int(above[0]), int(above[-1])))
    return intervals, threshold
