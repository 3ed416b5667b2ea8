"""Command-line interface.

Subcommands: gen-data, train, eval, sample-dump, gradcheck.
Exit codes: 0 success, 1 validation failure, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import data as dataset
from . import tensor as tc
from .config import ConfigError, RunConfig, default_config, load_config
from .io_formats import to_uint8, write_pgm, write_ppm


def _build_parser():
    p = argparse.ArgumentParser(prog="stsampler",
                                description="Task-adaptive spatial-temporal video sampler")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, checkpoint=False, episodes=False):
        sp.add_argument("--config", default=None, help="key=value config file")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="KEY=VALUE", help="override a config key")
        if checkpoint:
            sp.add_argument("--checkpoint", required=True)
        if episodes:
            sp.add_argument("--episodes", type=int, default=None)

    sp = sub.add_parser("gen-data", help="generate the synthetic dataset")
    common(sp)
    sp.add_argument("--out", required=True)
    sp.add_argument("--force", action="store_true")
    sp.add_argument("--classes", type=int, default=None,
                    help="shorthand for --set data.classes=N")

    sp = sub.add_parser("train", help="train a model")
    common(sp)
    sp.add_argument("--out", required=True, help="directory for checkpoint + metrics.csv")

    sp = sub.add_parser("eval", help="evaluate a checkpoint")
    common(sp, checkpoint=True, episodes=True)
    sp.add_argument("--split", default="test", choices=["train", "val", "test"])

    sp = sub.add_parser("sample-dump", help="dump selected indices, saliency and frames")
    common(sp, checkpoint=True, episodes=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--split", default="test", choices=["train", "val", "test"])

    sp = sub.add_parser("gradcheck", help="run the oracle verification suite")
    common(sp)
    return p


def _load_cfg(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else default_config()
    overrides = {}
    for item in args.overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, _, v = item.partition("=")
        overrides[k.strip()] = v.strip()
    if getattr(args, "classes", None) is not None:
        overrides["data.classes"] = str(args.classes)
    return cfg.with_overrides(overrides)


def cmd_gen_data(args) -> int:
    cfg = _load_cfg(args)
    try:
        records = dataset.generate_dataset(cfg, args.seed, args.out, force=args.force)
    except FileExistsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    classes = sorted({r.class_id for r in records})
    splits = {}
    for r in records:
        splits[r.split] = splits.get(r.split, 0) + 1
    print(f"wrote {len(records)} videos, {len(classes)} classes -> {args.out}")
    print("split counts: " + ", ".join(f"{k}={v}" for k, v in sorted(splits.items())))
    return 0


def cmd_train(args) -> int:
    from .train import TrainingDiverged, train
    cfg = _load_cfg(args)

    def hook(epoch, loss, acc, sigma, lr):
        print(f"epoch {epoch} loss {loss:.4f} acc {acc:.3f} sigma {sigma:.4f} lr {lr:.5f}")

    try:
        _, ckpt = train(cfg, args.seed, args.out, log_hook=hook)
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"checkpoint: {ckpt}")
    return 0


def cmd_eval(args) -> int:
    from .train import evaluate, load_model
    model, cfg = load_model(args.checkpoint)
    by_split = dataset.load_manifest(cfg["data.dir"])
    episodes = args.episodes or cfg["eval.episodes"]
    mean, ci, _ = evaluate(model, by_split[args.split], episodes, args.seed)
    print(f"acc {mean:.4f} +- {ci:.4f} ({episodes} episodes, split {args.split})")
    return 0


def cmd_sample_dump(args) -> int:
    from .train import evaluate, load_model
    model, cfg = load_model(args.checkpoint)
    if model.baseline:
        print("error: baseline checkpoints have no sampler to dump", file=sys.stderr)
        return 1
    by_split = dataset.load_manifest(cfg["data.dir"])
    episodes = args.episodes or 1
    os.makedirs(args.out, exist_ok=True)
    _, _, _, results = evaluate(model, by_split[args.split], episodes, args.seed,
                                collect=True)
    index_lines = []
    for episode, out in results:
        recs = [r for r, _ in episode.support + episode.query]
        for v, rec in enumerate(recs):
            idx = out.selected[v]
            index_lines.append(f"{rec.vid}: " + " ".join(str(i) for i in idx))
            for col, frame_id in enumerate(idx):
                sal = out.saliency[v, col]
                write_pgm(os.path.join(args.out, f"{rec.vid}_{frame_id}_sal.pgm"),
                          to_uint8(sal))
                amp = out.amplified[v, col]
                amp8 = np.clip(np.round(amp * 255.0), 0, 255).astype(np.uint8)
                if amp8.shape[0] == 3:
                    write_ppm(os.path.join(args.out, f"{rec.vid}_{frame_id}_amp.ppm"),
                              amp8.transpose(1, 2, 0))
                else:
                    write_pgm(os.path.join(args.out, f"{rec.vid}_{frame_id}_amp.pgm"),
                              amp8[0])
    with open(os.path.join(args.out, "indices.txt"), "w", encoding="ascii") as fh:
        fh.write("\n".join(index_lines) + "\n")
    print(f"dumped {len(index_lines)} videos to {args.out}")
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_suite
    _load_cfg(args)  # validate any provided config/overrides
    ok = run_suite(args.seed, report=print)
    return 0 if ok else 1


_HANDLERS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "sample-dump": cmd_sample_dump,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _HANDLERS[args.command](args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (tc.ShapeError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
