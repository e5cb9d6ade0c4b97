"""Full pipeline: backbone -> embed -> part blocks -> temporal blocks -> head.

Also owns the classification loss, the desk-scale training loop (full-batch
momentum SGD, bit-reproducible for a fixed seed) and multi-stream score
fusion.
"""

import csv
import dataclasses
import json
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from . import extractor, spatial, temporal
from .extractor import AdjacencyMatrix
from .params import assign_names, parameters, rand_param, zero_grads
from .skeleton import (SkeletonLayout, default_layout, derive_stream,
                       STREAM_KINDS)
from .tensor import NumericError, Parameter, Tensor


@dataclass
class ModelConfig:
    """Channel widths, head counts and skeleton layout for one model."""

    class_count: int = 8
    c0: int = 32            # backbone output width
    c1: int = 64            # embedding width (also the shared block width)
    c_l: int = 96           # large branch width
    c_s: int = 48           # small branch width
    c_append: int = 32      # channels appended from the fusion features
    c_out: int = 64         # head width before the classifier
    heads: int = 8
    ratio: int = 4          # feed-forward expansion
    dilations: tuple = (1, 2)
    backbone_channels: tuple = (3, 16, 16, 32, 32)
    backbone_strides: tuple = (1, 1, 2, 2)
    stream: str = "joint"
    seed: int = 42
    layout: SkeletonLayout = field(default_factory=default_layout)

    def __post_init__(self):
        if self.stream not in STREAM_KINDS:
            raise ValueError(f"unknown stream {self.stream!r}")
        if self.backbone_channels[-1] != self.c0:
            raise ValueError("backbone output width must equal c0")

    @classmethod
    def toy(cls, layout=None, frames_note=8):
        """A configuration small enough for finite-difference checking."""
        from .skeleton import toy_layout
        return cls(class_count=4, c0=8, c1=8, c_l=8, c_s=8, c_append=4,
                   c_out=8, heads=2, ratio=2,
                   backbone_channels=(3, 8, 8, 8, 8),
                   backbone_strides=(1, 1, 1, 1),
                   layout=layout or toy_layout())

    def to_json(self):
        d = dataclasses.asdict(self)
        d.pop("layout")
        return d

    @classmethod
    def from_json(cls, d):
        d = dict(d)
        for key in ("dilations", "backbone_channels", "backbone_strides"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


@dataclass
class ModelParams:
    extractor: "extractor.ExtractorParams"
    embed_w: Parameter       # (c0, c1)
    pos_embed: Parameter     # (J, 1, c1)
    sbca_hand: "spatial.SbcaParams"
    sbca_foot: "spatial.SbcaParams"
    mbca_ud: "spatial.MbcaParams"
    mbca_wa: "spatial.MbcaParams"
    sdta_a: "temporal.SdtaParams"
    sdta_b: "temporal.SdtaParams"
    mlp_w1: Parameter        # (c1, ratio*c1)
    mlp_w2: Parameter        # (ratio*c1, c_out)
    fc: Parameter            # (c_out, classes)


def init_model(cfg, rng=None):
    rng = rng or np.random.default_rng(cfg.seed)
    lay = cfg.layout
    j = lay.joint_count
    p = ModelParams(
        extractor=extractor.init_extractor(rng, cfg.backbone_channels,
                                           cfg.backbone_strides),
        embed_w=rand_param(rng, (cfg.c0, cfg.c1)),
        pos_embed=rand_param(rng, (j, 1, cfg.c1), scale=0.02),
        sbca_hand=spatial.init_sbca(rng, cfg.c1, cfg.c1, cfg.c_l, cfg.c_s,
                                    cfg.heads, cfg.ratio),
        sbca_foot=spatial.init_sbca(rng, cfg.c1, cfg.c1, cfg.c_l, cfg.c_s,
                                    cfg.heads, cfg.ratio),
        mbca_ud=spatial.init_mbca(rng, cfg.c1, cfg.c_l, cfg.c_s, cfg.heads,
                                  cfg.ratio),
        mbca_wa=spatial.init_mbca(rng, cfg.c1, cfg.c_l, cfg.c_s, cfg.heads,
                                  cfg.ratio),
        sdta_a=temporal.init_sdta(
            rng, cfg.c1, cfg.c0, cfg.c_append, cfg.heads,
            joints=len(lay.partitions.hands) + len(lay.partitions.legs_feet),
            dilations=cfg.dilations),
        sdta_b=temporal.init_sdta(rng, cfg.c1, cfg.c0, cfg.c_append,
                                  cfg.heads, joints=2 * j,
                                  dilations=cfg.dilations),
        mlp_w1=rand_param(rng, (cfg.c1, cfg.ratio * cfg.c1)),
        mlp_w2=rand_param(rng, (cfg.ratio * cfg.c1, cfg.c_out)),
        fc=rand_param(rng, (cfg.c_out, cfg.class_count)),
    )
    return assign_names(p)


def _check_finite(name, t):
    if not np.isfinite(t.data).all():
        raise NumericError(f"non-finite values produced by block {name!r}")
    return t


def embed(x_in, p):
    """Linear channel projection plus learned per-joint position embedding."""
    return T.add(T.matmul(x_in, p.embed_w), p.pos_embed)


def pipeline_forward(stream, cfg, p, adj=None):
    """Forward one (or a batch of) derived streams to class logits.

    `stream` is (..., J, T, 3).  Returns logits (..., classes).
    """
    lay = cfg.layout
    parts = lay.partitions
    adj = adj or AdjacencyMatrix.from_parents(lay.parents)
    x = T.astensor(stream)
    if x.shape[-3] != lay.joint_count or x.shape[-1] != cfg.backbone_channels[0]:
        raise T.ShapeError(f"expected (..., {lay.joint_count}, T, "
                           f"{cfg.backbone_channels[0]}), got {x.shape}")

    ext = extractor.extract(x, adj, p.extractor)
    _check_finite("feature_extractor", ext.x_in)
    x1 = embed(ext.x_in, p)

    hands, feet = list(parts.hands), list(parts.legs_feet)
    xh = spatial.sbca_forward(T.gather(x1, hands, -3),
                              T.gather(x1, list(parts.other_vs_hands), -3),
                              p.sbca_hand)
    xf = spatial.sbca_forward(T.gather(x1, feet, -3),
                              T.gather(x1, list(parts.other_vs_feet), -3),
                              p.sbca_foot)
    _check_finite("single_part_blocks", xh)
    _check_finite("single_part_blocks", xf)

    parts_a = T.concat([xh, xf], axis=-3)
    xt1 = temporal.sdta_forward(parts_a, ext.fusion_feats, p.sdta_a)
    _check_finite("temporal_block_a", xt1)

    xud = spatial.mbca_forward(xh, xf, p.mbca_ud, hands, feet,
                               parts.upper, parts.lower, lay.joint_count)
    xwa = spatial.mbca_forward(xh, xf, p.mbca_wa, hands, feet,
                               parts.wrist_ankle, parts.other_vs_wrist_ankle,
                               lay.joint_count)
    _check_finite("multi_part_blocks", xud)
    _check_finite("multi_part_blocks", xwa)

    parts_b = T.concat([xud, xwa], axis=-3)
    xt2 = temporal.sdta_forward(parts_b, ext.fusion_feats, p.sdta_b)
    _check_finite("temporal_block_b", xt2)

    xt = T.add(xt1, xt2)                              # (..., T, C)
    h = T.matmul(T.gelu(T.matmul(xt, p.mlp_w1)), p.mlp_w2)
    pooled = T.global_average_pool(h, axes=(-2,))     # (..., c_out)
    logits = T.matmul(pooled, p.fc)
    _check_finite("classifier_head", logits)
    return logits


def predict_proba(stream, cfg, p, adj=None):
    logits = pipeline_forward(stream, cfg, p, adj)
    return T.softmax(logits, axis=-1)


def cross_entropy(logits, labels):
    """Mean negative log-likelihood, computed in log space.

    `logits` (..., classes); `labels` an int array matching the leading dims.
    """
    classes = logits.shape[-1]
    labels = np.asarray(labels, dtype=np.intp)
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= classes:
        raise ValueError(f"label out of range for {classes} classes")
    shift = Tensor(logits.data.max(axis=-1, keepdims=True))
    z = T.sub(logits, shift)
    lse = T.log(T.tsum(T.exp(z), axis=-1, keepdims=True))
    logp = T.sub(z, lse)
    onehot = np.zeros(logits.shape)
    np.put_along_axis(onehot, labels[..., None], 1.0, axis=-1)
    picked = T.tsum(T.mul(logp, Tensor(onehot)))
    n = int(np.prod(labels.shape)) if labels.shape else 1
    return T.mul(picked, -1.0 / n)


# ---------------------------------------------------------------------------
# training


@dataclass
class EpochMetrics:
    epoch: int
    loss: float
    accuracy: float


@dataclass
class TrainState:
    params: ModelParams
    config: ModelConfig
    velocity: dict
    epoch: int = 0
    metrics: list = field(default_factory=list)


def batch_streams(sequences, kind, layout):
    """Stack per-sequence streams into (B, J, T, 3); frame counts must match."""
    streams = [derive_stream(s, kind, layout) for s in sequences]
    frames = {s.shape[1] for s in streams}
    if len(frames) != 1:
        raise ValueError(f"sequences have differing frame counts: {sorted(frames)}")
    return np.stack(streams), np.array([s.label for s in sequences])


def train(manifest, cfg, epochs, lr, momentum=0.9, state=None,
          stop_accuracy=None, log=None):
    """Full-batch momentum SGD on one stream; deterministic for a fixed seed.

    Loss is not guaranteed monotone on the tiny corpora this targets; the
    caller judges success by the recorded accuracy.  Returns a TrainState
    whose metrics list one (epoch, loss, accuracy) row per epoch.
    """
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    if not manifest.items:
        raise ValueError("manifest is empty")
    if state is None:
        params = init_model(cfg)
        state = TrainState(params=params, config=cfg,
                           velocity={p.name: np.zeros_like(p.data)
                                     for p in parameters(params)})
    plist = parameters(state.params)
    adj = AdjacencyMatrix.from_parents(cfg.layout.parents)
    x, labels = batch_streams(manifest.load_all(), cfg.stream, cfg.layout)

    for _ in range(epochs):
        zero_grads(state.params)
        logits = pipeline_forward(x, cfg, state.params, adj)
        loss = cross_entropy(logits, labels)
        T.backward(loss)
        acc = float((logits.data.argmax(axis=-1) == labels).mean())
        state.epoch += 1
        state.metrics.append(EpochMetrics(state.epoch, loss.item(), acc))
        if log:
            log(state.metrics[-1])
        for p in plist:
            v = state.velocity[p.name]
            v *= momentum
            v += p.grad
            p.data = p.data - lr * v
        if stop_accuracy is not None and acc >= stop_accuracy:
            break
    return state


def evaluate(manifest, cfg, p, adj=None):
    """Accuracy and per-sample probabilities on a manifest."""
    adj = adj or AdjacencyMatrix.from_parents(cfg.layout.parents)
    seqs = manifest.load_all()
    x, labels = batch_streams(seqs, cfg.stream, cfg.layout)
    probs = predict_proba(x, cfg, p, adj).data
    acc = float((probs.argmax(axis=-1) == labels).mean())
    return acc, probs, [s.id for s in seqs], labels


def write_metrics_csv(metrics, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "loss", "accuracy"])
        for m in metrics:
            w.writerow([m.epoch, repr(m.loss), repr(m.accuracy)])


def export_scores(ids, stream, logits, path):
    """Score export: JSON array of {sample id, stream, logits[]}."""
    rows = [{"id": i, "stream": stream, "logits": list(map(float, row))}
            for i, row in zip(ids, logits)]
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(rows, fh, indent=1)


def load_scores(path):
    with open(path, "r", encoding="utf-8") as fh:
        rows = json.load(fh)
    return rows


# ---------------------------------------------------------------------------
# ensembling


def ensemble_fuse(score_vectors, weights=None):
    """Weighted sum of per-stream probability vectors, renormalized.

    `score_vectors` is a list of (classes,) probability arrays (one per
    stream).  Returns (fused probabilities, argmax).
    """
    if not score_vectors:
        raise ValueError("no score vectors to fuse")
    classes = {len(s) for s in score_vectors}
    if len(classes) != 1:
        raise ValueError(f"class counts differ: {sorted(classes)}")
    if weights is None:
        weights = [1.0] * len(score_vectors)
    if len(weights) != len(score_vectors):
        raise ValueError("one weight per stream required")
    fused = np.zeros(classes.pop())
    for w, s in zip(weights, score_vectors):
        fused += w * np.asarray(s, dtype=np.float64)
    total = fused.sum()
    if total > 0:
        fused = fused / total
    return fused, int(fused.argmax())


def softmax_rows(logits):
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)
