"""Command-line entry point: ``surgant <subcommand> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import dataset as ds
from .errors import SurgAntError

log = logging.getLogger("surgant")


def _split_paths(out):
    out = Path(out)
    stem = out.name[:-len(".jsonl")] if out.name.endswith(".jsonl") else out.name
    return out.with_name(stem + ".train.jsonl"), out.with_name(stem + ".test.jsonl")


def cmd_build_dataset(args):
    frames = ds.load_annotation_dir(args.annotations)
    templates = ds.load_templates(args.templates)
    test_videos = [v for v in args.test_videos.split(",") if v]
    items, train, test, stats = ds.build_dataset(frames, templates, k=args.k,
                                                 test_videos=test_videos, workers=args.workers)
    ds.write_jsonl(args.out, items)
    train_path, test_path = _split_paths(args.out)
    ds.write_jsonl(train_path, train)
    ds.write_jsonl(test_path, test)
    if args.stats:
        ds.write_stats(args.stats, stats)
    print(f"{len(items)} items ({len(train)} train, {len(test)} test); "
          f"time fraction {stats['time_fraction']:.4f}")
    return 0


def cmd_synth_annotations(args):
    videos = ds.synth_annotations(args.out, seed=args.seed, n_videos=args.videos,
                                  minutes_per_video=args.minutes, feature_dim=args.feature_dim)
    print(f"wrote {len(videos)} synthetic videos to {args.out}")
    return 0


_TRAIN_FLAGS = ("seed", "epochs", "batch_size", "lr", "k", "max_steps", "data", "features",
                "checkpoint", "loss_csv")


def cmd_train(args):
    from .train import load_config, train
    overrides = {}
    for pair in args.set or []:
        if "=" not in pair:
            raise SurgAntError(f"--set expects key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        overrides[key] = value
    for name in _TRAIN_FLAGS:
        value = getattr(args, name)
        if value is not None:
            overrides[name] = str(value)
    config = load_config(args.config, overrides)
    t0 = time.perf_counter()
    result = train(config)
    print(f"trained {result.steps} steps in {time.perf_counter() - t0:.1f}s; "
          f"final loss {result.losses[-1]:.6f}; checkpoint {config.checkpoint}")
    return 0


def cmd_eval(args):
    from .metrics import evaluate
    report = evaluate(ds.read_jsonl(args.pred), ds.read_jsonl(args.gold))
    if args.report:
        Path(args.report).write_text(report.to_json() + "\n", encoding="utf-8")
    print(report.table())
    return 0


def _gate_stats(gates):
    g = np.asarray(gates)
    return [{"min": float(row.min()), "mean": float(row.mean()), "max": float(row.max())}
            for row in g]


def cmd_predict(args):
    from .model import make_batch
    from .train import load_model, predict_items
    model, vocab, _ = load_model(args.checkpoint)
    if args.data:
        items = ds.read_jsonl(args.data)
        store = ds.FeatureStore(args.features)
        preds = predict_items(model, vocab, items, store, max_new=args.max_new)
        ds.write_jsonl(args.out, preds)
        print(f"wrote {len(preds)} predictions to {args.out}")
        return 0
    if not (args.question and args.clip):
        raise SurgAntError("predict needs --question and --clip (or --data/--features/--out)")
    feats = ds.read_features(args.clip)
    item = ds.QAItem("clip", len(feats) - 1, len(feats), "", args.question, "", None)
    batch = make_batch([item], vocab, ds.FeatureStore(arrays={"clip": feats}))
    state = model.fuse(batch.q_ids, batch.feats)
    ids = model.generate(batch.q_ids, batch.q_len, batch.feats, args.max_new)[0]
    print(vocab.decode(ids))
    if args.dump_fusion:
        n = int(batch.q_len[0])
        dump = {
            "question_tokens": [vocab.itos[i] for i in batch.q_ids[0, :n]],
            "attention_weights": state.attn_weights.data[0, :, :n].tolist(),
            "gate_stats": _gate_stats(state.gates.data[0, :n]),
            "answer_ids": ids,
        }
        Path(args.dump_fusion).write_text(json.dumps(dump, indent=2) + "\n", encoding="utf-8")
    return 0


def cmd_gradcheck(args):
    from . import gradcheck
    results, elapsed = gradcheck.run(args.seed)
    table = gradcheck.format_table(results, elapsed)
    print(table)
    if args.report:
        Path(args.report).write_text(json.dumps(
            [{"block": r.block, "params": r.n_params, "checked": r.checked,
              "max_rel_error": r.max_rel_error, "passed": r.passed} for r in results],
            indent=2) + "\n", encoding="utf-8")
    return 0 if all(r.passed for r in results) else 1


def cmd_synthetic_experiment(args):
    from .experiment import ExperimentConfig, dumps_report, run_synthetic_experiment
    cfg = ExperimentConfig(seed=args.seed)
    for name in ("steps", "sweep_steps", "n_videos", "minutes_per_video", "eval_per_group"):
        if getattr(args, name) is not None:
            setattr(cfg, name, getattr(args, name))
    if args.test_videos:
        cfg.test_videos = tuple(v for v in args.test_videos.split(",") if v)
    if args.frame_budgets:
        cfg.frame_budgets = tuple(int(k) for k in args.frame_budgets.split(","))
    t0 = time.perf_counter()
    report = run_synthetic_experiment(args.seed, cfg)
    Path(args.out).write_text(dumps_report(report), encoding="utf-8")
    for name, ok in report["checks"].items():
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
    print(f"report written to {args.out} ({time.perf_counter() - t0:.0f}s)")
    return 0 if all(report["checks"].values()) else 1


def build_parser():
    p = argparse.ArgumentParser(prog="surgant", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("build-dataset", help="annotations -> clip-level QA JSONL")
    s.add_argument("--annotations", required=True)
    s.add_argument("--templates", default=None)
    s.add_argument("--k", type=int, default=8)
    s.add_argument("--out", required=True)
    s.add_argument("--test-videos", default=",".join(ds.DEFAULT_TEST_VIDEOS))
    s.add_argument("--stats", default=None)
    s.add_argument("--workers", type=int, default=1)
    s.set_defaults(func=cmd_build_dataset)

    s = sub.add_parser("synth-annotations", help="write synthetic annotations and features")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--videos", type=int, default=25)
    s.add_argument("--minutes", type=float, default=30.0)
    s.add_argument("--feature-dim", type=int, default=32)
    s.set_defaults(func=cmd_synth_annotations)

    s = sub.add_parser("train", help="train a model from a key=value config")
    s.add_argument("--config", default=None)
    s.add_argument("--set", action="append", metavar="KEY=VALUE")
    for name in _TRAIN_FLAGS:
        s.add_argument("--" + name.replace("_", "-"), dest=name, default=None)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="score predictions against gold JSONL")
    s.add_argument("--pred", required=True)
    s.add_argument("--gold", required=True)
    s.add_argument("--report", default=None)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("predict", help="answer a question about a clip")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--question")
    s.add_argument("--clip", help="feature file holding the clip's frames")
    s.add_argument("--max-new", type=int, default=32)
    s.add_argument("--dump-fusion", default=None)
    s.add_argument("--data", help="JSONL of items to answer in batch")
    s.add_argument("--features", help="feature directory for --data")
    s.add_argument("--out", help="prediction JSONL for --data")
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("gradcheck", help="finite-difference check of every block")
    s.add_argument("--seed", type=int, default=7)
    s.add_argument("--report", default=None)
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("synthetic-experiment", help="full / gate-closed / mean-pool comparison")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", default="synthetic_report.json")
    s.add_argument("--steps", type=int, default=None)
    s.add_argument("--sweep-steps", type=int, default=None)
    s.add_argument("--n-videos", type=int, default=None)
    s.add_argument("--minutes-per-video", type=float, default=None)
    s.add_argument("--eval-per-group", type=int, default=None)
    s.add_argument("--frame-budgets", default=None, help="comma separated, e.g. 8,16,32")
    s.add_argument("--test-videos", default=None, help="comma separated held-out video ids")
    s.set_defaults(func=cmd_synthetic_experiment)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (SurgAntError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
