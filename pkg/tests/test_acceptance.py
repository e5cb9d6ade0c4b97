"""Acceptance suite: the nine release gates, each with a pinned tolerance.

Every test prints one PASS/FAIL line with its measured value, so a plain
`pytest -v tests/test_acceptance.py -s` doubles as the release report.
"""

import math
import os
import time

import numpy as np
import pytest

from skelact import cli
from skelact import extractor as ex
from skelact import model as md
from skelact import spatial as sp
from skelact import temporal as tp
from skelact import tensor as T
from skelact.gradcheck import grad_check
from skelact.params import iter_named_parameters, parameters
from skelact.skeleton import (DatasetManifest, ManifestItem,
                              SkeletonParseError, default_layout,
                              parse_skeleton, synth_generate, toy_layout,
                              write_skeleton)
from skelact.tensor import Parameter, Tensor


def report(name, passed, detail):
    print(f"\n[{name}] {'PASS' if passed else 'FAIL'}: {detail}")
    assert passed, detail


# ---------------------------------------------------------------------------
# 1. gradient suite: primitives <= 1e-5, composite blocks and the full toy
#    model <= 1e-4, three seeds, under five minutes of CPU.


PRIMITIVE_TOL = 1e-5
COMPOSITE_TOL = 1e-4
SEEDS = (0, 1, 2)


def _probe_loss(out, probe):
    return T.tsum(T.mul(out, Tensor(probe)))


@pytest.mark.parametrize("seed", SEEDS)
def test_criterion_1_primitive_gradients(seed):
    rng = np.random.default_rng(1000 + seed)
    x = Parameter(rng.normal(size=(4, 6, 5)), "x")
    w = Parameter(rng.normal(size=(5, 5)), "w")
    gamma = Parameter(rng.normal(size=(5,)), "gamma")
    beta = Parameter(rng.normal(size=(5,)), "beta")
    cw = Parameter(rng.normal(size=(3, 5, 5)), "cw")
    dw = Parameter(rng.normal(size=(3, 5)), "dw")
    probe = rng.normal(size=(4, 6, 5))
    probe3 = rng.normal(size=(4, 3, 5))
    cases = {
        "matmul": lambda: _probe_loss(T.matmul(x, w), probe),
        "softmax": lambda: _probe_loss(T.softmax(x, axis=-1), probe),
        "layer_norm": lambda: _probe_loss(T.layer_norm(x, gamma, beta), probe),
        "gelu": lambda: _probe_loss(T.gelu(x), probe),
        "tanh": lambda: _probe_loss(T.tanh(x), probe),
        "exp": lambda: _probe_loss(T.exp(T.mul(x, 0.3)), probe),
        "conv": lambda: _probe_loss(T.conv_temporal(x, cw, dilation=2), probe),
        "conv_strided": lambda: _probe_loss(
            T.conv_temporal(x, cw, stride=2), probe3),
        "conv_depthwise": lambda: _probe_loss(
            T.conv_temporal(x, dw, depthwise=True), probe),
        "max_pool": lambda: _probe_loss(T.max_pool_temporal(x, window=3), probe),
        "gather": lambda: _probe_loss(T.gather(x, [2, 0, 2, 3], axis=0), probe),
        "mean": lambda: _probe_loss(T.tmean(x, axis=-2, keepdims=True),
                                    probe[:, :1]),
    }
    worst = ("", 0.0)
    for name, fn in cases.items():
        rep = grad_check(fn, [x, w, gamma, beta, cw, dw], tol=PRIMITIVE_TOL)
        assert rep.passed, f"{name}: {rep}"
        if rep.max_rel_error > worst[1]:
            worst = (name, rep.max_rel_error)
    report("criterion 1 / primitives", True,
           f"seed {seed}: 12 primitives <= {PRIMITIVE_TOL:.0e} "
           f"(worst {worst[1]:.2e} in {worst[0]})")


@pytest.mark.parametrize("seed", SEEDS)
def test_criterion_1_composite_block_gradients(seed):
    rng = np.random.default_rng(2000 + seed)

    sbca = sp.init_sbca(rng, 4, 4, 4, 4, 2, 2)
    xp = Parameter(rng.normal(size=(2, 3, 4)), "xp")
    xo = Parameter(rng.normal(size=(4, 3, 4)), "xo")
    probe_s = rng.normal(size=(2, 3, 4))
    rep = grad_check(
        lambda: _probe_loss(sp.sbca_forward(xp, xo, sbca), probe_s),
        [xp, xo] + [q for _, q in iter_named_parameters(sbca)],
        tol=COMPOSITE_TOL, max_entries=3, rng=np.random.default_rng(seed))
    assert rep.passed, f"SBCA: {rep}"
    e_sbca = rep.max_rel_error

    mbca = sp.init_mbca(rng, 4, 4, 4, 2, 2)
    xa = Parameter(rng.normal(size=(2, 2, 4)), "xa")
    xb = Parameter(rng.normal(size=(2, 2, 4)), "xb")
    probe_m = rng.normal(size=(8, 2, 4))
    rep = grad_check(
        lambda: _probe_loss(
            sp.mbca_forward(xa, xb, mbca, (2, 3), (6, 7),
                            (0, 1, 2, 3), (4, 5, 6, 7), 8), probe_m),
        [xa, xb] + [q for _, q in iter_named_parameters(mbca)],
        tol=COMPOSITE_TOL, max_entries=3, rng=np.random.default_rng(seed))
    assert rep.passed, f"MBCA: {rep}"
    e_mbca = rep.max_rel_error

    sdta = tp.init_sdta(rng, 8, 4, 4, 2, joints=3)
    xt = Parameter(rng.normal(size=(3, 6, 8)), "xt")
    fusion = Parameter(rng.normal(size=(4, 4)), "fusion")
    probe_t = rng.normal(size=(6, 8))
    rep = grad_check(
        lambda: _probe_loss(tp.sdta_forward(xt, fusion, sdta), probe_t),
        [xt, fusion] + [q for _, q in iter_named_parameters(sdta)],
        tol=COMPOSITE_TOL, max_entries=3, rng=np.random.default_rng(seed))
    assert rep.passed, f"SDTA: {rep}"
    report("criterion 1 / composites", True,
           f"seed {seed}: SBCA {e_sbca:.2e}, MBCA {e_mbca:.2e}, "
           f"SDTA {rep.max_rel_error:.2e} <= {COMPOSITE_TOL:.0e}")


@pytest.mark.parametrize("seed", SEEDS)
def test_criterion_1_full_model_gradients(seed):
    start = time.time()
    cfg = md.ModelConfig.toy()
    cfg.seed = seed
    rng = np.random.default_rng(seed)
    p = md.init_model(cfg, rng)
    x = rng.normal(size=(8, 6, 3))
    label = int(rng.integers(cfg.class_count))

    def loss():
        return md.cross_entropy(md.pipeline_forward(x, cfg, p), label)

    rep = grad_check(loss, parameters(p), tol=COMPOSITE_TOL, max_entries=3,
                     rng=np.random.default_rng(seed))
    # no analytically-dead parameters allowed
    dead = [q.name for q in parameters(p) if np.abs(q.grad).max() == 0.0]
    assert not dead, f"dead parameters: {dead}"
    report("criterion 1 / full model", rep.passed,
           f"seed {seed}: max rel error {rep.max_rel_error:.2e} <= "
           f"{COMPOSITE_TOL:.0e} over {len(rep.params)} parameters "
           f"in {time.time() - start:.1f}s")


# ---------------------------------------------------------------------------
# 2. oracle equivalence within 1e-12


ORACLE_TOL = 1e-12


def _brute_mha(q, k, v, heads):
    t, jq, c = q.shape
    dh = c // heads
    out = np.zeros((t, jq, c))
    for ti in range(t):
        for h in range(heads):
            sl = slice(h * dh, (h + 1) * dh)
            s = q[ti, :, sl] @ k[ti, :, sl].T / math.sqrt(dh)
            e = np.exp(s - s.max(axis=-1, keepdims=True))
            out[ti, :, sl] = (e / e.sum(axis=-1, keepdims=True)) @ v[ti, :, sl]
    return out


def test_criterion_2_oracle_equivalence():
    rng = np.random.default_rng(7)
    errs = {}

    # spatial self-attention
    p = sp.init_spatial_transformer(rng, 6, 6, 3, 6, "L")
    x = rng.normal(size=(5, 4, 6))
    got = sp.spatial_self_attention(Tensor(x), p).data
    xt = x.transpose(1, 0, 2)
    want = (_brute_mha(xt @ p.w_q.data, xt @ p.w_k.data, xt @ p.w_v.data, 3)
            @ p.w_o.data + xt).transpose(1, 0, 2)
    errs["self_attention"] = np.abs(got - want).max()

    # cls-channel cross-attention
    ca = sp.init_cross_attention(rng, 6, 3)
    x = rng.normal(size=(4, 3, 6))
    got = sp.cross_attention(Tensor(x), ca).data
    xt = x.transpose(1, 0, 2)
    want = _brute_mha(xt[..., :1] @ ca.w_q.data, xt @ ca.w_k.data,
                      xt @ ca.w_v.data, 3).transpose(1, 0, 2)
    errs["cross_attention"] = np.abs(got - want).max()

    # transposed channel attention
    heads, n, t, c = 2, 3, 5, 8
    dh = c // heads
    alpha = Parameter(np.array([2.0, 3.0]), "a")
    q, k, v = (rng.normal(size=(n, t, c)) for _ in range(3))
    got = tp.transposed_attention(Tensor(q), Tensor(k), Tensor(v),
                                  alpha, heads).data
    qf, kf, vf = (z.reshape(n * t, c) for z in (q, k, v))
    want = np.zeros((n * t, c))
    for h in range(heads):
        sl = slice(h * dh, (h + 1) * dh)
        s = kf[:, sl].T @ qf[:, sl] / abs(alpha.data[h])
        e = np.exp(s - s.max(axis=-1, keepdims=True))
        want[:, sl] = vf[:, sl] @ (e / e.sum(axis=-1, keepdims=True)).T
    errs["transposed_attention"] = np.abs(got - want.reshape(n, t, c)).max()

    # value multibranch: plain-reduction branch against a direct formula
    sd = tp.init_sdta(rng, 8, 4, 4, 2, joints=3)
    y = rng.normal(size=(3, 6, 8))
    got = tp.value_multibranch(Tensor(y), sd).data[..., 6:8]
    errs["value_multibranch"] = np.abs(
        got - (y @ sd.v_reduce[3].data + y[..., 6:8])).max()

    # temporal conv against a sliding-window loop
    xc = rng.normal(size=(9, 3))
    wc = rng.normal(size=(5, 3, 2))
    got = T.conv_temporal(Tensor(xc), Tensor(wc), dilation=2).data
    want = np.zeros((9, 2))
    for o in range(9):
        for kk in range(5):
            src = o + kk * 2 - 4
            if 0 <= src < 9:
                want[o] += xc[src] @ wc[kk]
    errs["conv_temporal"] = np.abs(got - want).max()

    # max pool against a window loop
    got = T.max_pool_temporal(Tensor(xc), window=3).data
    want = np.array([[max(xc[j, c] for j in range(max(0, o - 1),
                                                  min(9, o + 2)))
                      for c in range(3)] for o in range(9)])
    errs["max_pool"] = np.abs(got - want).max()

    worst = max(errs, key=errs.get)
    report("criterion 2", all(e <= ORACLE_TOL for e in errs.values()),
           f"6 oracles <= {ORACLE_TOL:.0e} (worst {errs[worst]:.2e} "
           f"in {worst})")


# ---------------------------------------------------------------------------
# 3. degenerate value bank: zero branch weights => V == y exactly


def test_criterion_3_value_bank_degenerate_identity():
    rng = np.random.default_rng(8)
    p = tp.init_sdta(rng, 8, 4, 4, 2, joints=3)
    for w in p.v_reduce:
        w.data[:] = 0.0
    y = rng.normal(size=(3, 16, 8))
    out = tp.value_multibranch(Tensor(y), p).data
    exact = np.array_equal(out, y)
    report("criterion 3", exact,
           f"V == y bitwise with zero branch weights "
           f"(max abs diff {np.abs(out - y).max():.1e})")


# ---------------------------------------------------------------------------
# 4. transposed-attention scaling: map size constant in T, baseline ~ T^2


def test_criterion_4_attention_scaling():
    rng = np.random.default_rng(9)
    heads, c_hat, joints = 2, 12, 3
    dh = c_hat // heads
    alpha = Parameter(np.full(heads, 2.0), "a")
    shapes, entries, naive = [], [], []
    for t in (8, 16, 32):
        q = Tensor(rng.normal(size=(joints, t, c_hat)))
        tp.STATS.reset()
        _, attn = tp.transposed_attention(q, q, q, alpha, heads,
                                          return_attn=True)
        shapes.append(attn.shape[-2:])
        entries.append(tp.STATS.map_entries)
        tp.STATS.reset()
        tp.naive_token_attention(q, q, q, 2.0)
        naive.append(tp.STATS.map_entries)
    const_shape = all(s == (dh, dh) for s in shapes)
    const_entries = len(set(entries)) == 1
    quadratic = (naive[1] == 4 * naive[0] and naive[2] == 4 * naive[1])
    report("criterion 4", const_shape and const_entries and quadratic,
           f"map {shapes[0]} and {entries[0]} entries for T in (8,16,32); "
           f"token baseline {naive} grows 4x per doubling")


# ---------------------------------------------------------------------------
# 5. permutation equivariance of the refined graph conv


def test_criterion_5_permutation_equivariance():
    rng = np.random.default_rng(10)
    adj = ex.AdjacencyMatrix.from_parents(toy_layout().parents)
    p = ex.init_ctr_gc(rng, 3, 4)
    x = rng.normal(size=(8, 6, 3))
    base = ex.ctr_gc_forward(Tensor(x), adj, p).data
    worst = 0.0
    for k in range(5):
        perm = np.random.default_rng(100 + k).permutation(8)
        adj_p = ex.AdjacencyMatrix(a=adj.a[np.ix_(perm, perm)])
        out = ex.ctr_gc_forward(Tensor(x[perm]), adj_p, p).data
        worst = max(worst, np.abs(out - base[perm]).max())
    report("criterion 5", worst <= 1e-12,
           f"5 joint permutations, max abs deviation {worst:.2e} <= 1e-12")


# ---------------------------------------------------------------------------
# 6. tiny-corpus overfit and 7. four-stream ensemble sanity
#
# One slim 25-joint configuration shared by both criteria; parameters were
# tuned empirically for the CPU budget (see the training-speed notes in the
# README).

CLASSES = 8
TRAIN_PER_CLASS = 16
TEST_PER_CLASS = 4
FRAMES = 16
EPOCHS = 300
LR = 1e-3
STOP_AT = 0.95


def overfit_cfg(stream):
    return md.ModelConfig(c0=16, c1=8, c_l=8, c_s=8, c_append=8, c_out=16,
                          heads=2, ratio=2, backbone_channels=(3, 8, 8, 8, 16),
                          backbone_strides=(1, 1, 2, 2), stream=stream,
                          seed=42)


def corpus(per_class, seed0):
    items = [ManifestItem(label=c, seed=seed0 + i, frames=FRAMES)
             for c in range(CLASSES) for i in range(per_class)]
    return DatasetManifest(items=items, class_count=CLASSES)


@pytest.fixture(scope="module")
def overfit_run():
    train_m = corpus(TRAIN_PER_CLASS, seed0=0)
    test_m = corpus(TEST_PER_CLASS, seed0=1000)
    start = time.time()
    state = md.train(train_m, overfit_cfg("joint"), EPOCHS, LR,
                     stop_accuracy=STOP_AT)
    elapsed = time.time() - start
    return train_m, test_m, state, elapsed


def test_criterion_6_tiny_corpus_overfit(overfit_run):
    train_m, test_m, state, elapsed = overfit_run
    train_acc = state.metrics[-1].accuracy
    test_acc, _, _, _ = md.evaluate(test_m, state.config, state.params)
    ok = (train_acc >= 0.95 and test_acc >= 0.75
          and state.epoch <= EPOCHS and elapsed < 600.0)
    report("criterion 6", ok,
           f"train acc {train_acc:.3f} >= 0.95 in {state.epoch} epochs "
           f"({elapsed:.0f}s < 600s); held-out acc {test_acc:.3f} >= 0.75")


def test_criterion_7_four_stream_ensemble(overfit_run):
    train_m, test_m, joint_state, _ = overfit_run
    streams = {"joint": joint_state}
    for kind in ("bone", "joint_motion", "bone_motion"):
        streams[kind] = md.train(train_m, overfit_cfg(kind), EPOCHS, LR,
                                 stop_accuracy=STOP_AT)
    accs, probs = {}, {}
    labels = None
    for kind, state in streams.items():
        acc, pr, _, labels = md.evaluate(test_m, state.config, state.params)
        accs[kind], probs[kind] = acc, pr
    n = len(labels)
    fused_pred = np.empty(n, dtype=int)
    scaled_pred = np.empty(n, dtype=int)
    w = [1.0] * 4
    for i in range(n):
        vecs = [probs[k][i] for k in probs]
        _, fused_pred[i] = md.ensemble_fuse(vecs, w)
        _, scaled_pred[i] = md.ensemble_fuse(vecs, [7.5 * x for x in w])
    fused_acc = float((fused_pred == labels).mean())
    best = max(accs.values())
    invariant = (fused_pred == scaled_pred).all()
    ok = fused_acc >= best - 0.02 and invariant
    single = " ".join(f"{k}={v:.3f}" for k, v in accs.items())
    report("criterion 7", ok,
           f"fused acc {fused_acc:.3f} >= best single {best:.3f} - 0.02 "
           f"({single}); argmax invariant under uniform weight scaling")


# ---------------------------------------------------------------------------
# 8. parser round trip and malformed corpus


def test_criterion_8_parser():
    worst = None
    for i in range(100):
        rng = np.random.default_rng(5000 + i)
        seq = synth_generate(int(rng.integers(8)), int(rng.integers(10**6)),
                             frames=int(rng.integers(2, 8)))
        back = parse_skeleton(write_skeleton(seq))
        if not np.array_equal(back.coords, seq.coords):
            worst = i
    assert worst is None, f"round trip not exact for sequence {worst}"

    good = write_skeleton(synth_generate(0, 0, frames=2)).splitlines()
    malformed = {
        "truncation": ("\n".join(good[:15]), 16),
        "bad joint count": ("\n".join(good[:3] + ["7"] + good[4:]), 4),
        "non-numeric": ("\n".join(good[:6] + ["a b c"] + good[7:]), 7),
        "bad frame count": ("x\n" + "\n".join(good[1:]), 1),
    }
    for name, (text, line) in malformed.items():
        with pytest.raises(SkeletonParseError) as e:
            parse_skeleton(text)
        assert e.value.line == line, f"{name}: line {e.value.line} != {line}"
        assert f"line {line}" in str(e.value)
    report("criterion 8", True,
           "100 random sequences round trip exactly; 4 malformed corpora "
           "report the documented line numbers")


# ---------------------------------------------------------------------------
# 9. determinism: identical seeds give identical artifacts


def test_criterion_9_train_determinism(tmp_path):
    corpus_dir = tmp_path / "corpus"
    assert cli.run(["synth", "--classes", "4", "--per-class", "2",
                    "--frames", "8", "--out", str(corpus_dir)]) == 0
    cfg_path = tmp_path / "config.json"
    import json as _json
    cfg_path.write_text(_json.dumps(
        {"class_count": 4, "c0": 16, "c1": 8, "c_l": 8, "c_s": 8,
         "c_append": 8, "c_out": 16, "heads": 2, "ratio": 2,
         "backbone_channels": [3, 8, 8, 8, 16],
         "backbone_strides": [1, 1, 2, 2]}))
    outs = []
    for name in ("run1", "run2"):
        out = tmp_path / name
        assert cli.run(["train", "--manifest", str(corpus_dir / "manifest.json"),
                        "--config", str(cfg_path), "--epochs", "3",
                        "--lr", "1e-3", "--out", str(out)]) == 0
        outs.append(out)
    same_metrics = ((outs[0] / "metrics.csv").read_bytes()
                    == (outs[1] / "metrics.csv").read_bytes())
    same_ckpt = ((outs[0] / "checkpoint.json").read_bytes()
                 == (outs[1] / "checkpoint.json").read_bytes())
    report("criterion 9", same_metrics and same_ckpt,
           "two identically seeded runs: metrics CSV and checkpoint are "
           "byte-identical")
