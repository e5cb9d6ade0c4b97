"""Body-part cross-attention blocks.

Two dual-branch spatial transformer blocks:

* single-part block: one body part (hands, or legs/feet) against the
  remaining joints.  Each side runs per-frame self-attention over its joints
  at its own branch width (large/small), both are aligned to a shared width,
  and a designated "cls" channel (channel 0) carries information across the
  branches through multi-head cross-attention.  Branch outputs are
  channel-concatenated and passed through a pre-norm feed-forward residual.

* multi-part block: consumes the two single-part outputs reassembled onto
  the full joint set and split by upper/lower (or wrist-ankle/rest) roles.
  Its spatial transformers are gated: the large branch takes queries and
  values from one role and keys from the other, the small branch swaps the
  roles.  The rest of the block matches the single-part composition.
"""

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import tensor as T
from .params import rand_param, ones_param, zeros_param, const_param
from .tensor import Parameter, ShapeError, Tensor


def _joints_to_tokens(x):
    """(..., J, T, C) -> (..., T, J, C)."""
    nd = x.ndim
    return T.transpose(x, tuple(range(nd - 3)) + (nd - 2, nd - 3, nd - 1))


def _tokens_to_joints(x):
    return _joints_to_tokens(x)  # the swap is its own inverse


def _split_heads(x, h):
    """(..., T, J, C) -> (..., T, h, J, C/h)."""
    c = x.shape[-1]
    if c % h:
        raise ShapeError(f"width {c} not divisible by {h} heads")
    y = T.reshape(x, x.shape[:-1] + (h, c // h))
    k = y.ndim
    return T.transpose(y, tuple(range(k - 4)) + (k - 4, k - 2, k - 3, k - 1))


def _merge_heads(x):
    """(..., T, h, J, dh) -> (..., T, J, h*dh)."""
    k = x.ndim
    y = T.transpose(x, tuple(range(k - 4)) + (k - 4, k - 2, k - 3, k - 1))
    return T.reshape(y, y.shape[:-2] + (y.shape[-2] * y.shape[-1],))


def _attend(q, k, v, heads, return_attn=False):
    """Multi-head scaled dot-product attention over the token axis."""
    dh = q.shape[-1] // heads
    qh = _split_heads(q, heads)
    kh = _split_heads(k, heads)
    vh = _split_heads(v, heads)
    scores = T.matmul(qh, T.transpose(kh, tuple(range(kh.ndim - 2))
                                      + (kh.ndim - 1, kh.ndim - 2)))
    attn = T.softmax(T.mul(scores, 1.0 / math.sqrt(dh)), axis=-1)
    out = _merge_heads(T.matmul(attn, vh))
    if return_attn:
        return out, attn
    return out


def _mean_rows(x, rows):
    """Average over the joint axis and broadcast back to `rows` joints."""
    m = T.tmean(x, axis=-3, keepdims=True)
    return T.broadcast_to(m, x.shape[:-3] + (rows,) + x.shape[-2:])


@dataclass
class SpatialTransformerParams:
    """Per-frame joint attention at one branch width, with entry/exit 1x1 convs."""

    variant: str            # "L" or "S"
    heads: int
    w_in: Parameter         # entry 1x1: model width -> branch width
    w_q: Parameter
    w_k: Parameter
    w_v: Parameter
    w_o: Parameter
    w_align: Parameter      # exit 1x1: branch width -> shared width
    w_in_k: Optional[Parameter] = None  # second entry conv for gated (two-input) use


def init_spatial_transformer(rng, c_model, c_branch, heads, c_shared,
                             variant, gated=False):
    if c_branch % heads:
        raise ShapeError(f"branch width {c_branch} not divisible by {heads} heads")
    return SpatialTransformerParams(
        variant=variant, heads=heads,
        w_in=rand_param(rng, (c_model, c_branch)),
        w_q=rand_param(rng, (c_branch, c_branch)),
        w_k=rand_param(rng, (c_branch, c_branch)),
        w_v=rand_param(rng, (c_branch, c_branch)),
        w_o=rand_param(rng, (c_branch, c_branch)),
        w_align=rand_param(rng, (c_branch, c_shared)),
        w_in_k=rand_param(rng, (c_model, c_branch)) if gated else None,
    )


def spatial_self_attention(x, p, return_attn=False):
    """Per-frame multi-head self-attention over the joint axis, residual added.

    `x` is (..., J, T, C_branch); width is preserved.
    """
    xt = _joints_to_tokens(x)
    q = T.matmul(xt, p.w_q)
    k = T.matmul(xt, p.w_k)
    v = T.matmul(xt, p.w_v)
    res = _attend(q, k, v, p.heads, return_attn=return_attn)
    out, attn = res if return_attn else (res, None)
    y = T.add(T.matmul(out, p.w_o), xt)
    y = _tokens_to_joints(y)
    return (y, attn) if return_attn else y


def spatial_gated_attention(x_qv, x_k, p, return_attn=False):
    """Two-input attention: queries/values from one role, keys from the other.

    Output tokens follow the key side: each key-side joint attends over the
    query/value-side joints.  Residual comes from the key-side input.
    """
    xq = _joints_to_tokens(x_qv)
    xk = _joints_to_tokens(x_k)
    q = T.matmul(xq, p.w_q)
    k = T.matmul(xk, p.w_k)
    v = T.matmul(xq, p.w_v)
    res = _attend(k, q, v, p.heads, return_attn=return_attn)
    out, attn = res if return_attn else (res, None)
    y = T.add(T.matmul(out, p.w_o), xk)
    y = _tokens_to_joints(y)
    return (y, attn) if return_attn else y


@dataclass
class CrossAttentionParams:
    """Cls-channel cross-attention at the shared width.

    f_proj lifts the cls channel into the composed tensor, g_proj maps the
    attended cls channel back to the branch; w_q reads the cls channel only.
    """

    heads: int
    f_proj: Parameter   # (1, 1)
    g_proj: Parameter   # (1, 1)
    w_q: Parameter      # (1, C)
    w_k: Parameter      # (C, C)
    w_v: Parameter      # (C, C)
    w_o: Parameter      # (C, 1)
    ln_gamma: Parameter
    ln_beta: Parameter


def init_cross_attention(rng, c, heads):
    if c % heads:
        raise ShapeError(f"shared width {c} not divisible by {heads} heads")
    return CrossAttentionParams(
        heads=heads,
        f_proj=const_param([[1.0]]),
        g_proj=const_param([[1.0]]),
        w_q=rand_param(rng, (1, c), scale=1.0),
        w_k=rand_param(rng, (c, c)),
        w_v=rand_param(rng, (c, c)),
        w_o=rand_param(rng, (c, 1)),
        ln_gamma=ones_param((c,)),
        ln_beta=zeros_param((c,)),
    )


def cls_compose(x_part, x_other, p):
    """Compose the cross-attention input for one branch.

    Channel 0 is the projected cls channel of the branch's own features; the
    remaining channels come from the other branch, aligned to this branch's
    joint count by a joint-axis mean.
    """
    c = x_part.shape[-1]
    if c < 2:
        raise ShapeError("cls composition needs at least 2 channels")
    if x_other.shape[-1] != c:
        raise ShapeError(f"branch widths differ: {x_part.shape} vs {x_other.shape}")
    cls = T.narrow(x_part, -1, 0, 1)
    fcls = T.matmul(cls, p.f_proj)
    other_nc = T.narrow(x_other, -1, 1, c - 1)
    other_aligned = _mean_rows(other_nc, x_part.shape[-3])
    return T.concat([fcls, other_aligned], axis=-1)


def cross_attention(composed, p, return_attn=False):
    """Multi-head cross-attention: queries from the cls channel only.

    Keys and values read the full composed tensor; returns the head-
    concatenated attention output at the shared width.
    """
    xt = _joints_to_tokens(composed)
    q = T.matmul(T.narrow(xt, -1, 0, 1), p.w_q)
    k = T.matmul(xt, p.w_k)
    v = T.matmul(xt, p.w_v)
    res = _attend(q, k, v, p.heads, return_attn=return_attn)
    out, attn = res if return_attn else (res, None)
    out = _tokens_to_joints(out)
    return (out, attn) if return_attn else out


def mca_residual(x_branch, composed, p):
    """Cls-channel cross-attention residual update for one branch.

    y_cls = f(x_cls) + W_o . MCA(LN(composed)); the branch output re-attaches
    the back-projected cls channel to the untouched non-cls channels.
    """
    c = x_branch.shape[-1]
    ln = T.layer_norm(composed, p.ln_gamma, p.ln_beta)
    mca = T.matmul(cross_attention(ln, p), p.w_o)
    cls = T.narrow(x_branch, -1, 0, 1)
    y_cls = T.add(T.matmul(cls, p.f_proj), mca)
    rest = T.narrow(x_branch, -1, 1, c - 1)
    return T.concat([T.matmul(y_cls, p.g_proj), rest], axis=-1)


@dataclass
class FfnParams:
    w1: Parameter
    w2: Parameter
    ln_gamma: Parameter
    ln_beta: Parameter


def init_ffn(rng, c, ratio):
    hidden = int(round(ratio * c))
    return FfnParams(
        w1=rand_param(rng, (c, hidden)),
        w2=rand_param(rng, (hidden, c)),
        ln_gamma=ones_param((c,)),
        ln_beta=zeros_param((c,)),
    )


def ffn_forward(x, p):
    """Pre-norm two-layer MLP with GELU after the first linear layer."""
    h = T.layer_norm(x, p.ln_gamma, p.ln_beta)
    return T.matmul(T.gelu(T.matmul(h, p.w1)), p.w2)


@dataclass
class SbcaParams:
    st_l: SpatialTransformerParams
    st_s: SpatialTransformerParams
    ca_l: CrossAttentionParams
    ca_s: CrossAttentionParams
    f_l: Parameter       # branch-output alignment for the concat
    f_s: Parameter
    ffn: FfnParams


def init_sbca(rng, c_model, c, c_l, c_s, heads, ratio):
    if c % 2:
        raise ShapeError("shared width must be even for the branch concat")
    return SbcaParams(
        st_l=init_spatial_transformer(rng, c_model, c_l, heads, c, "L"),
        st_s=init_spatial_transformer(rng, c_model, c_s, heads, c, "S"),
        ca_l=init_cross_attention(rng, c, heads),
        ca_s=init_cross_attention(rng, c, heads),
        f_l=rand_param(rng, (c, c // 2)),
        f_s=rand_param(rng, (c, c // 2)),
        ffn=init_ffn(rng, c, ratio),
    )


def sbca_forward(x_part, x_other, p):
    """Single-part block: part joints vs the remaining joints.

    Output shape (J_part, T, C_shared) with leading batch dims preserved.
    """
    xl = T.matmul(spatial_self_attention(T.matmul(x_part, p.st_l.w_in), p.st_l),
                  p.st_l.w_align)
    xs = T.matmul(spatial_self_attention(T.matmul(x_other, p.st_s.w_in), p.st_s),
                  p.st_s.w_align)
    y_l = mca_residual(xl, cls_compose(xl, xs, p.ca_l), p.ca_l)
    y_s = mca_residual(xs, cls_compose(xs, xl, p.ca_s), p.ca_s)
    y_s_aligned = _mean_rows(y_s, y_l.shape[-3])
    z = T.concat([T.matmul(y_l, p.f_l), T.matmul(y_s_aligned, p.f_s)], axis=-1)
    return T.add(z, ffn_forward(z, p.ffn))


@dataclass
class MbcaParams:
    st_l: SpatialTransformerParams   # gated: q,v from role A, k from role B
    st_s: SpatialTransformerParams   # gated: q,v from role B, k from role A
    ca_l: CrossAttentionParams
    ca_s: CrossAttentionParams
    f_l: Parameter
    f_s: Parameter
    ffn: FfnParams


def init_mbca(rng, c, c_l, c_s, heads, ratio):
    return MbcaParams(
        st_l=init_spatial_transformer(rng, c, c_l, heads, c, "L", gated=True),
        st_s=init_spatial_transformer(rng, c, c_s, heads, c, "S", gated=True),
        ca_l=init_cross_attention(rng, c, heads),
        ca_s=init_cross_attention(rng, c, heads),
        f_l=rand_param(rng, (c, c)),
        f_s=rand_param(rng, (c, c)),
        ffn=init_ffn(rng, c, ratio),
    )


def _scatter_rows(blocks, index_groups, joint_count):
    """Place row blocks at their joint indices; uncovered joints get zeros."""
    covered = [j for grp in index_groups for j in grp]
    rest = [j for j in range(joint_count) if j not in set(covered)]
    order = covered + rest
    parts = list(blocks)
    if rest:
        first = blocks[0]
        shape = first.shape[:-3] + (len(rest),) + first.shape[-2:]
        parts.append(Tensor(np.zeros(shape)))
    stacked = T.concat(parts, axis=-3)
    inverse = np.argsort(order)
    return T.gather(stacked, inverse, axis=-3)


def mbca_forward(x_a, x_b, p, indices_a, indices_b, role_a, role_b,
                 joint_count):
    """Multi-part block over the reassembled joint set.

    `x_a`/`x_b` are single-part outputs covering `indices_a`/`indices_b`;
    uncovered joints are zero-filled.  The large branch draws queries and
    values from `role_a` joints and keys from `role_b`; the small branch
    swaps the roles.  Output covers role_a + role_b in canonical joint order.
    """
    full = _scatter_rows([x_a, x_b], [indices_a, indices_b], joint_count)
    xu = T.gather(full, list(role_a), axis=-3)
    xd = T.gather(full, list(role_b), axis=-3)

    xl = spatial_gated_attention(T.matmul(xu, p.st_l.w_in),
                                 T.matmul(xd, p.st_l.w_in_k), p.st_l)
    xl = T.matmul(xl, p.st_l.w_align)                 # rows follow role_b
    xs = spatial_gated_attention(T.matmul(xd, p.st_s.w_in),
                                 T.matmul(xu, p.st_s.w_in_k), p.st_s)
    xs = T.matmul(xs, p.st_s.w_align)                 # rows follow role_a

    y_l = mca_residual(xl, cls_compose(xl, xs, p.ca_l), p.ca_l)
    y_s = mca_residual(xs, cls_compose(xs, xl, p.ca_s), p.ca_s)

    z = _scatter_rows([T.matmul(y_l, p.f_l), T.matmul(y_s, p.f_s)],
                      [list(role_b), list(role_a)], joint_count)
    return T.add(z, ffn_forward(z, p.ffn))
