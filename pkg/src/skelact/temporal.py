"""Channel-transposed temporal attention block.

Queries and keys come from pointwise + depthwise (3-tap temporal)
projections; values from a four-branch bank (two dilated kernel-7 temporal
convolutions, a max-pool branch, and a plain channel reduction) whose
concatenation restores the input width, plus an input residual.  Pooled
stride features from the extractor are projected and appended as extra
channels to Q/K/V, so the attention map lives in channel-by-channel space:
its size is independent of the frame count, which keeps the cost linear
in T.  A gated depthwise feed-forward and a per-joint weighted fusion with
the pooled skeleton feature close the block.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .params import rand_param, ones_param, zeros_param
from .tensor import Parameter, ShapeError

VALUE_BRANCHES = 4
TCN_KERNEL = 7
DW_KERNEL = 3


class AttentionStats:
    """Counts attention-map entry allocations, for cost-scaling checks."""

    def __init__(self):
        self.map_entries = 0
        self.maps = 0

    def reset(self):
        self.map_entries = 0
        self.maps = 0

    def record(self, entries):
        self.map_entries += entries
        self.maps += 1


STATS = AttentionStats()


@dataclass
class GdfnParams:
    """Gated depthwise feed-forward: gelu(path1) * path2, then contraction."""

    w_gate: Parameter     # (C, Ch) pointwise expand, gating path
    d_gate: Parameter     # (3, Ch) depthwise
    w_lin: Parameter      # (C, Ch) pointwise expand, linear path
    d_lin: Parameter      # (3, Ch) depthwise
    w_out: Parameter      # (Ch, C) contraction
    ln_gamma: Parameter
    ln_beta: Parameter


def init_gdfn(rng, c, hidden):
    return GdfnParams(
        w_gate=rand_param(rng, (c, hidden)),
        d_gate=rand_param(rng, (DW_KERNEL, hidden), scale=1.0 / math.sqrt(DW_KERNEL)),
        w_lin=rand_param(rng, (c, hidden)),
        d_lin=rand_param(rng, (DW_KERNEL, hidden), scale=1.0 / math.sqrt(DW_KERNEL)),
        w_out=rand_param(rng, (hidden, c)),
        ln_gamma=ones_param((c,)),
        ln_beta=zeros_param((c,)),
    )


@dataclass
class SdtaParams:
    heads: int
    dilations: tuple          # the two dilated value branches
    ln_gamma: Parameter
    ln_beta: Parameter
    w_q_p: Parameter          # (C, C) pointwise
    w_q_d: Parameter          # (3, C) depthwise temporal
    w_k_p: Parameter
    w_k_d: Parameter
    v_reduce: list            # four (C, C/4) pointwise reductions
    v_tcn: list               # two (7, C/4, C/4) dilated temporal kernels
    fuse_proj: Parameter      # (C_f, C_P) appended-channel projection
    alpha: Parameter          # (h,) per-head attention temperature
    attn_out: Parameter       # (C_hat, C) back-projection after attention
    gdfn: GdfnParams
    phi: Parameter            # (V,) per-joint fusion weights
    p_hat_proj: Parameter     # (C_f, C) pooled-feature projection
    out_proj: Parameter       # (C, C) final pointwise conv


def init_sdta(rng, c, c_fusion, c_append, heads, joints, dilations=(1, 2),
              gdfn_ratio=2):
    if c % VALUE_BRANCHES:
        raise ShapeError(f"width {c} not divisible by {VALUE_BRANCHES} value branches")
    c_hat = c + c_append
    if c_hat % heads:
        raise ShapeError(f"augmented width {c_hat} not divisible by {heads} heads")
    cb = c // VALUE_BRANCHES
    alpha0 = math.sqrt(c_hat / heads)
    return SdtaParams(
        heads=heads, dilations=tuple(dilations),
        ln_gamma=ones_param((c,)), ln_beta=zeros_param((c,)),
        w_q_p=rand_param(rng, (c, c)),
        w_q_d=rand_param(rng, (DW_KERNEL, c), scale=1.0 / math.sqrt(DW_KERNEL)),
        w_k_p=rand_param(rng, (c, c)),
        w_k_d=rand_param(rng, (DW_KERNEL, c), scale=1.0 / math.sqrt(DW_KERNEL)),
        v_reduce=[rand_param(rng, (c, cb)) for _ in range(VALUE_BRANCHES)],
        v_tcn=[rand_param(rng, (TCN_KERNEL, cb, cb),
                          scale=1.0 / math.sqrt(TCN_KERNEL * cb))
               for _ in range(2)],
        fuse_proj=rand_param(rng, (c_fusion, c_append)),
        alpha=Parameter(np.full(heads, alpha0), name="alpha"),
        attn_out=rand_param(rng, (c_hat, c)),
        gdfn=init_gdfn(rng, c, gdfn_ratio * c),
        phi=rand_param(rng, (joints,), scale=0.1),
        p_hat_proj=rand_param(rng, (c_fusion, c)),
        out_proj=rand_param(rng, (c, c)),
    )


def project_qk(y, p):
    """Bias-free pointwise then depthwise (3-tap temporal) Q/K projections."""
    q = T.conv_temporal(T.matmul(y, p.w_q_p), p.w_q_d, depthwise=True)
    k = T.conv_temporal(T.matmul(y, p.w_k_p), p.w_k_d, depthwise=True)
    return q, k


def value_multibranch(y, p):
    """Four-branch value bank; concatenation restores the width, plus residual.

    Branches: dilated TCN x2, max-pool after reduction, plain reduction.
    With all branch weights zero the output is exactly the input.
    """
    c = y.shape[-1]
    if c % VALUE_BRANCHES:
        raise ShapeError(f"width {c} not divisible by {VALUE_BRANCHES}")
    b1 = T.conv_temporal(T.matmul(y, p.v_reduce[0]), p.v_tcn[0],
                         dilation=p.dilations[0])
    b2 = T.conv_temporal(T.matmul(y, p.v_reduce[1]), p.v_tcn[1],
                         dilation=p.dilations[1])
    b3 = T.max_pool_temporal(T.matmul(y, p.v_reduce[2]), window=3)
    b4 = T.matmul(y, p.v_reduce[3])
    return T.add(T.concat([b1, b2, b3, b4], axis=-1), y)


def resample_frames(x, frames):
    """Nearest-frame repeat/selection of (..., T, C) to a target frame count."""
    t = x.shape[-2]
    if t == frames:
        return x
    idx = np.minimum((np.arange(frames) * t) // frames, t - 1)
    return T.gather(x, idx, axis=-2)


def fuse_temporal_tokens(q, k, v, fusion, p):
    """Append projected pooled stride features as extra channels to Q, K, V.

    `fusion` is (..., T_f, C_f); it is projected to the appended width,
    resampled to the block's frame count, and broadcast across joints.
    """
    frames = q.shape[-2]
    proj = resample_frames(T.matmul(fusion, p.fuse_proj), frames)
    rows = T.reshape(proj, proj.shape[:-2] + (1,) + proj.shape[-2:])
    rows = T.broadcast_to(rows, q.shape[:-1] + (proj.shape[-1],))
    return (T.concat([q, rows], axis=-1),
            T.concat([k, rows], axis=-1),
            T.concat([v, rows], axis=-1))


def _channel_heads(x, h):
    """(..., N, T, C) -> (..., h, N*T, C/h) token-flattened per-head view."""
    n, t, c = x.shape[-3:]
    flat = T.reshape(x, x.shape[:-3] + (n * t, c))
    split = T.reshape(flat, flat.shape[:-1] + (h, c // h))
    k = split.ndim
    return T.transpose(split, tuple(range(k - 3)) + (k - 2, k - 3, k - 1))


def transposed_attention(qh, kh, vh, alpha, heads, return_attn=False):
    """Channel-by-channel attention: the map is (C/h, C/h) per head.

    softmax(K^T Q / |alpha|) is normalized over its second channel axis, so
    each output channel's mixing weights sum to one; the output is the value
    tensor mixed by that map.  Map size never depends on the frame count.
    """
    if np.any(alpha.data == 0.0):
        raise ValueError("attention temperature alpha must be nonzero")
    c_hat = qh.shape[-1]
    if c_hat % heads:
        raise ShapeError(f"width {c_hat} not divisible by {heads} heads")
    dh = c_hat // heads
    n, t = qh.shape[-3], qh.shape[-2]
    q = _channel_heads(qh, heads)          # (..., h, NT, dh)
    k = _channel_heads(kh, heads)
    v = _channel_heads(vh, heads)
    kt = T.transpose(k, tuple(range(k.ndim - 2)) + (k.ndim - 1, k.ndim - 2))
    scores = T.matmul(kt, q)               # (..., h, dh, dh)
    a = T.reshape(T.absolute(alpha), (heads, 1, 1))
    attn = T.softmax(T.div(scores, a), axis=-1)
    STATS.record(heads * dh * dh)
    mixed = T.matmul(v, T.transpose(attn, tuple(range(attn.ndim - 2))
                                    + (attn.ndim - 1, attn.ndim - 2)))
    kk = mixed.ndim
    merged = T.transpose(mixed, tuple(range(kk - 3)) + (kk - 2, kk - 3, kk - 1))
    out = T.reshape(merged, merged.shape[:-2] + (c_hat,))
    out = T.reshape(out, out.shape[:-2] + (n, t, c_hat))
    return (out, attn) if return_attn else out


def naive_token_attention(qh, kh, vh, scale):
    """Token-by-token attention baseline: the map is (N*T, N*T).

    Forward-only reference used to demonstrate the quadratic map growth the
    transposed formulation avoids.
    """
    n, t, c = qh.shape[-3:]
    q = qh.data.reshape(qh.shape[:-3] + (n * t, c))
    k = kh.data.reshape(kh.shape[:-3] + (n * t, c))
    v = vh.data.reshape(vh.shape[:-3] + (n * t, c))
    scores = np.matmul(q, np.swapaxes(k, -1, -2)) / scale
    scores -= scores.max(axis=-1, keepdims=True)
    e = np.exp(scores)
    attn = e / e.sum(axis=-1, keepdims=True)
    STATS.record((n * t) * (n * t))
    return np.matmul(attn, v).reshape(qh.shape[:-3] + (n, t, c))


def gdfn_forward(x, p):
    """Gated depthwise feed-forward with a residual.

    Both paths expand pointwise then convolve depthwise along frames; the
    gating path passes through GELU and multiplies the linear path.
    """
    h = T.layer_norm(x, p.ln_gamma, p.ln_beta)
    gate = T.conv_temporal(T.matmul(h, p.w_gate), p.d_gate, depthwise=True)
    lin = T.conv_temporal(T.matmul(h, p.w_lin), p.d_lin, depthwise=True)
    out = T.matmul(T.mul(T.gelu(gate), lin), p.w_out)
    return T.add(x, out)


def joint_level_fusion(x_joints, p_hat, phi, p):
    """Per-joint weighted addition of the pooled feature, then a 1x1 conv."""
    v = x_joints.shape[-3]
    if phi.data.shape != (v,):
        raise ShapeError(f"phi length {phi.data.shape} != joint count {v}")
    w = T.reshape(phi, (v, 1, 1))
    ph = T.reshape(p_hat, p_hat.shape[:-2] + (1,) + p_hat.shape[-2:])
    fused = T.add(x_joints, T.mul(w, ph))
    return T.matmul(fused, p.out_proj)


def sdta_forward(x, fusion, p, return_attn=False):
    """Full temporal block on (..., N, T, C) part features.

    Returns the joint-axis mean, shape (..., T, C).
    """
    y = T.layer_norm(x, p.ln_gamma, p.ln_beta)
    q, k = project_qk(y, p)
    v = value_multibranch(y, p)
    qh, kh, vh = fuse_temporal_tokens(q, k, v, fusion, p)
    res = transposed_attention(qh, kh, vh, p.alpha, p.heads,
                               return_attn=return_attn)
    attn_full, attn = res if return_attn else (res, None)
    x2 = T.add(x, T.matmul(attn_full, p.attn_out))
    x3 = gdfn_forward(x2, p.gdfn)
    p_hat = resample_frames(T.matmul(fusion, p.p_hat_proj), x.shape[-2])
    x4 = joint_level_fusion(x3, p_hat, p.phi, p)
    out = T.tmean(x4, axis=-3)
    return (out, attn) if return_attn else out
