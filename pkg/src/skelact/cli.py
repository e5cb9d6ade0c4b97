"""Command-line surface: data generation, inference, checking, training.

Exit codes: 0 success, 1 validation/usage error, 2 runtime or numeric
failure.  All randomness flows from --seed, so identical invocations
produce byte-identical artifacts.
"""

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import model as M
from . import skeleton as S
from .gradcheck import grad_check
from .params import load_checkpoint, parameters, save_checkpoint
from .tensor import NumericError


def _load_config(args):
    cfg_dict = {}
    if getattr(args, "config", None):
        with open(args.config, "r", encoding="utf-8") as fh:
            cfg_dict = json.load(fh)
    for key in ("stream", "seed", "class_count"):
        val = getattr(args, key, None)
        if val is not None:
            cfg_dict[key] = val
    if cfg_dict.pop("toy", False):
        cfg = M.ModelConfig.toy()
        for k, v in cfg_dict.items():
            setattr(cfg, k, v)
        return cfg
    return M.ModelConfig.from_json(cfg_dict)


def cmd_synth(args):
    os.makedirs(args.out, exist_ok=True)
    items = []
    for cls in range(args.classes):
        for i in range(args.per_class):
            seed = args.seed + cls * args.per_class + i
            seq = S.synth_generate(cls, seed, args.frames)
            name = f"c{cls:02d}_s{seed:05d}.skeleton"
            path = os.path.join(args.out, name)
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(S.write_skeleton(seq))
            items.append(S.ManifestItem(label=cls, path=path))
    manifest = S.DatasetManifest(items=items, class_count=args.classes,
                                 split=args.split)
    S.save_manifest(manifest, os.path.join(args.out, "manifest.json"))
    print(f"wrote {len(items)} sequences + manifest.json to {args.out}")
    return 0


def cmd_parse(args):
    with open(args.input, "r", encoding="utf-8") as fh:
        seq = S.parse_skeleton(fh.read())
    print(f"{args.input}: {seq.bodies} bodies, {seq.frames} frames, "
          f"{S.JOINT_COUNT} joints")
    if args.out:
        np.save(args.out, seq.coords)
        print(f"coordinates saved to {args.out}")
    return 0


def cmd_forward(args):
    cfg = _load_config(args)
    params = M.init_model(cfg)
    load_checkpoint(params, args.checkpoint)
    with open(args.input, "r", encoding="utf-8") as fh:
        seq = S.parse_skeleton(fh.read())
    stream = S.derive_stream(seq, cfg.stream, cfg.layout)
    probs = M.predict_proba(stream[None], cfg, params).data[0]
    print(" ".join(f"{p:.6f}" for p in probs))
    if args.out:
        M.export_scores([args.input], cfg.stream,
                        [np.log(np.maximum(probs, 1e-300))], args.out)
    return 0


def cmd_gradcheck(args):
    cfg = _load_config(args) if args.config else M.ModelConfig.toy()
    rng = np.random.default_rng(args.seed)
    params = M.init_model(cfg, rng)
    j = cfg.layout.joint_count
    x = rng.normal(size=(j, args.frames, 3))
    label = int(rng.integers(cfg.class_count))

    def loss():
        return M.cross_entropy(M.pipeline_forward(x, cfg, params), label)

    report = grad_check(loss, parameters(params), tol=args.tol,
                        max_entries=args.max_entries,
                        rng=np.random.default_rng(args.seed))
    print(f"max relative error {report.max_rel_error:.3e} "
          f"(tol {report.tol:.1e})")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(str(report) + "\n")
    return 0 if report.passed else 2


def cmd_train(args):
    cfg = _load_config(args)
    manifest = S.load_manifest(args.manifest, class_count=cfg.class_count)
    os.makedirs(args.out, exist_ok=True)
    state = M.train(manifest, cfg, epochs=args.epochs, lr=args.lr,
                    stop_accuracy=args.stop_accuracy,
                    log=(lambda m: print(
                        f"epoch {m.epoch}: loss {m.loss:.4f} acc {m.accuracy:.3f}"))
                    if args.verbose else None)
    save_checkpoint(state.params, os.path.join(args.out, "checkpoint.json"))
    M.write_metrics_csv(state.metrics, os.path.join(args.out, "metrics.csv"))
    last = state.metrics[-1]
    print(f"trained {last.epoch} epochs: loss {last.loss:.4f} "
          f"accuracy {last.accuracy:.3f}; artifacts in {args.out}")
    return 0


def cmd_eval(args):
    cfg = _load_config(args)
    manifest = S.load_manifest(args.manifest, split="test",
                               class_count=cfg.class_count)
    params = M.init_model(cfg)
    load_checkpoint(params, args.checkpoint)
    acc, probs, ids, _labels = M.evaluate(manifest, cfg, params)
    print(f"accuracy {acc:.4f} over {len(ids)} samples ({cfg.stream} stream)")
    if args.out:
        M.export_scores(ids, cfg.stream,
                        np.log(np.maximum(probs, 1e-300)), args.out)
        print(f"scores written to {args.out}")
    return 0


def cmd_ensemble(args):
    per_stream = [M.load_scores(p) for p in args.scores]
    counts = {len(rows) for rows in per_stream}
    if len(counts) != 1:
        raise ValueError("score files cover different sample counts")
    labels = {}
    if args.manifest:
        manifest = S.load_manifest(args.manifest)
        for it in manifest.items:
            labels[it.path or f"synth-{it.seed}"] = it.label
    weights = args.weights or [1.0] * len(per_stream)
    if len(weights) != len(per_stream):
        raise ValueError("need one weight per score file")

    rows_out = []
    correct = 0
    n = counts.pop()
    for i in range(n):
        sid = per_stream[0][i]["id"]
        probs = [M.softmax_rows(stream[i]["logits"]) for stream in per_stream]
        fused, pred = M.ensemble_fuse(probs, weights)
        rows_out.append((sid, pred, fused.max()))
        if sid in labels and labels[sid] == pred:
            correct += 1
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "prediction", "confidence"])
        for sid, pred, conf in rows_out:
            w.writerow([sid, pred, f"{conf:.6f}"])
    print(f"fused {len(per_stream)} streams over {n} samples -> {args.out}")
    if labels:
        print(f"fused accuracy {correct / n:.4f}")
    return 0


def build_parser():
    ap = argparse.ArgumentParser(
        prog="skelact",
        description="Skeleton action recognition: data, training, ensembling")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic labeled corpus")
    p.add_argument("--classes", type=int, default=S.SYNTH_CLASSES)
    p.add_argument("--per-class", type=int, default=16)
    p.add_argument("--frames", type=int, default=64)
    p.add_argument("--split", default="train")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("parse", help="parse and summarize a .skeleton file")
    p.add_argument("--input", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_parse)

    p = sub.add_parser("forward", help="run inference on one sequence")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config")
    p.add_argument("--input", required=True)
    p.add_argument("--stream", choices=S.STREAM_KINDS)
    p.add_argument("--out")
    p.set_defaults(func=cmd_forward)

    p = sub.add_parser("gradcheck", help="finite-difference check of the model")
    p.add_argument("--config")
    p.add_argument("--frames", type=int, default=8)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--max-entries", type=int, default=4)
    p.add_argument("--out")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("train", help="train one stream on a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--config")
    p.add_argument("--stream", choices=S.STREAM_KINDS)
    p.add_argument("--epochs", type=int, default=300)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--stop-accuracy", type=float)
    p.add_argument("--class-count", dest="class_count", type=int)
    p.add_argument("--verbose", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config")
    p.add_argument("--stream", choices=S.STREAM_KINDS)
    p.add_argument("--class-count", dest="class_count", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ensemble", help="fuse per-stream score exports")
    p.add_argument("--scores", nargs="+", required=True)
    p.add_argument("--weights", nargs="+", type=float)
    p.add_argument("--manifest")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ensemble)

    for sp in sub.choices.values():
        sp.add_argument("--seed", type=int, default=42)
    return ap


def run(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except (S.SkeletonParseError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (NumericError, ArithmeticError, OSError) as exc:
        print(f"failure: {exc}", file=sys.stderr)
        return 2


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
