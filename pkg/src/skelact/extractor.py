"""Graph-convolution feature extractor with channel-wise topology refinement.

A stack of (graph conv -> temporal conv) layers over the joint graph.  The
shared degree-normalized adjacency is refined per output channel by a tanh
of pairwise projected feature differences, scaled by a learned per-channel
gain; setting that gain to zero recovers a plain shared-topology GCN.
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .params import rand_param, zeros_param
from .tensor import Tensor

DEFAULT_CHANNELS = (3, 16, 16, 32, 32)
DEFAULT_STRIDES = (1, 1, 2, 2)
TEMPORAL_KERNEL = 5


@dataclass
class AdjacencyMatrix:
    """Symmetric, degree-normalized adjacency with self loops: D^-1/2 (A+I) D^-1/2."""

    a: np.ndarray

    @classmethod
    def from_parents(cls, parents):
        n = len(parents)
        a = np.zeros((n, n))
        for child, parent in enumerate(parents):
            if child != parent:
                a[child, parent] = a[parent, child] = 1.0
        a += np.eye(n)
        d = a.sum(axis=1)
        inv_sqrt = 1.0 / np.sqrt(d)
        norm = inv_sqrt[:, None] * a * inv_sqrt[None, :]
        return cls(a=norm)


@dataclass
class CtrGcParams:
    phi: "T.Parameter"      # (C_in, C_out) pairwise-difference projection
    psi: "T.Parameter"      # (C_in, C_out)
    alpha_r: "T.Parameter"  # (C_out,) per-channel refinement gain
    w_out: "T.Parameter"    # (C_in, C_out)


def init_ctr_gc(rng, c_in, c_out, refine_scale=0.1):
    return CtrGcParams(
        phi=rand_param(rng, (c_in, c_out)),
        psi=rand_param(rng, (c_in, c_out)),
        alpha_r=rand_param(rng, (c_out,), scale=refine_scale),
        w_out=rand_param(rng, (c_in, c_out)),
    )


def ctr_gc_forward(x, adj, p):
    """Channel-wise refined graph convolution.

    `x` is (..., N, T, C_in).  Output channel c aggregates with topology
    A_c = adj + alpha_r[c] * tanh(phi(x)_i - psi(x)_j), applied to x @ w_out.
    """
    x = T.astensor(x)
    n = adj.a.shape[0]
    if x.shape[-3] != n:
        raise T.ShapeError(f"expected {n} joints, got input shape {x.shape}")
    xw = T.matmul(x, p.w_out)                       # (..., N, T, C_out)
    c_out = p.w_out.shape[1]

    # shared-topology term: contract adj over the joint axis
    nd = xw.ndim
    to_last = tuple(i for i in range(nd) if i != nd - 3) + (nd - 3,)
    xw_l = T.transpose(xw, to_last)                 # (..., T, C_out, N)
    base_l = T.matmul(xw_l, Tensor(adj.a.T))        # sum_j adj[i,j] xw[j]
    back = tuple(np.argsort(to_last))
    base = T.transpose(base_l, back)

    # channel-wise refinement from temporally pooled features
    pooled = T.tmean(x, axis=-2)                    # (..., N, C_in)
    pf = T.matmul(pooled, p.phi)                    # (..., N, C_out)
    qf = T.matmul(pooled, p.psi)
    lead = pf.shape[:-2]
    pf_i = T.reshape(pf, lead + (n, 1, c_out))
    qf_j = T.reshape(qf, lead + (1, n, c_out))
    m = T.tanh(T.sub(pf_i, qf_j))                   # (..., N, N, C_out)

    md = m.ndim
    m_c = T.transpose(m, tuple(range(md - 3)) + (md - 1, md - 3, md - 2))
    xw_c = T.transpose(xw, tuple(range(nd - 3)) + (nd - 1, nd - 3, nd - 2))
    ref_c = T.matmul(m_c, xw_c)                     # (..., C_out, N, T)
    rd = ref_c.ndim
    ref = T.transpose(ref_c, tuple(range(rd - 3)) + (rd - 2, rd - 1, rd - 3))
    return T.add(base, T.mul(ref, p.alpha_r))


@dataclass
class TemporalConvParams:
    w: "T.Parameter"  # (K, C, C)
    stride: int


def init_temporal_conv(rng, channels, stride, identity=False):
    """Kernel-5 temporal conv; `identity` initializes to the center-tap delta."""
    if identity:
        w = np.zeros((TEMPORAL_KERNEL, channels, channels))
        w[TEMPORAL_KERNEL // 2] = np.eye(channels)
        p = zeros_param((TEMPORAL_KERNEL, channels, channels))
        p.data = w
        return TemporalConvParams(w=p, stride=stride)
    scale = 1.0 / np.sqrt(TEMPORAL_KERNEL * channels)
    return TemporalConvParams(
        w=rand_param(rng, (TEMPORAL_KERNEL, channels, channels), scale=scale),
        stride=stride)


def temporal_conv_block(x, p):
    """Temporal convolution along frames; adds a residual when stride is 1."""
    out = T.conv_temporal(x, p.w, dilation=1, stride=p.stride)
    if p.stride == 1:
        out = T.add(out, x)
    return out


@dataclass
class ExtractorParams:
    gcn: list       # CtrGcParams per layer
    tcn: list       # TemporalConvParams per layer
    channels: tuple
    strides: tuple


def init_extractor(rng, channels=DEFAULT_CHANNELS, strides=DEFAULT_STRIDES):
    gcn, tcn = [], []
    for i, stride in enumerate(strides):
        gcn.append(init_ctr_gc(rng, channels[i], channels[i + 1]))
        tcn.append(init_temporal_conv(rng, channels[i + 1], stride))
    return ExtractorParams(gcn=gcn, tcn=tcn, channels=tuple(channels),
                           strides=tuple(strides))


@dataclass
class ExtractorOutput:
    x_in: Tensor         # (..., N, T', C0) features for the transformer stack
    fusion_feats: Tensor  # (..., T', C0) joint-averaged stride features


def extract(x, adj, p):
    """Run the full backbone on (..., N, T, C_first) input.

    Fusion features are the joint-axis average of the last stride-reduced
    layer's output.
    """
    h = T.astensor(x)
    for gc, tc in zip(p.gcn, p.tcn):
        h = ctr_gc_forward(h, adj, gc)
        h = temporal_conv_block(h, tc)
    fusion = T.tmean(h, axis=-3)
    return ExtractorOutput(x_in=h, fusion_feats=fusion)
