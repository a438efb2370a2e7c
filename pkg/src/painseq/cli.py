"""Batch command-line interface.

Subcommands: synth, extract, train, eval, verify, init-weights. Logs go to
stderr; data and reports go to files or stdout. Exit codes: 0 success,
1 runtime/training failure, 2 usage or config error.
"""

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import pipeline
from .data import (LABEL_NAMES, SynthConfig, dataset_counts, load_manifest,
                   synth_dataset, write_fseq)
from .errors import ConfigError, DataError, FormatError, PainseqError
from .evaluate import render_report
from .extractor import (extract_video, load_extractor_weights, preprocess_frame,
                        random_extractor_checkpoint)
from .models import TrainConfig, load_model, parse_kv_config, save_model

logger = logging.getLogger("painseq")

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2


def _default_seed():
    env = os.environ.get("PAINSEQ_SEED")
    return int(env) if env else None


def _require_file(path, what):
    if not Path(path).is_file():
        raise ConfigError(f"{what} not found: {path}")


def _guard_overwrite(path, force):
    if Path(path).exists() and not force:
        raise ConfigError(f"refusing to overwrite {path}; pass --force")


def cmd_synth(args):
    if args.config is not None:
        _require_file(args.config, "config file")
        config = SynthConfig(**parse_kv_config(args.config, SynthConfig))
    else:
        config = SynthConfig()
    if args.seed is not None:
        config.seed = args.seed
    manifest = synth_dataset(config, args.out)
    for split in ("train", "validation", "test"):
        counts = dataset_counts(manifest, split=split)
        pretty = ", ".join(f"{LABEL_NAMES[c]}={counts[c]}" for c in range(3))
        print(f"{split}: {pretty}")
    print(f"manifest written to {Path(args.out) / 'manifest.csv'}")
    return EXIT_OK


def _load_bboxes(path):
    boxes = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 5:
                raise FormatError(f"{path}:{lineno}: expected frame_index,x,y,w,h")
            idx, x, y, w, h = (int(p) for p in parts)
            boxes[idx] = (x, y, w, h)
    return boxes


def cmd_extract(args):
    from PIL import Image

    _require_file(args.weights, "weights checkpoint")
    weights = load_extractor_weights(args.weights)
    frame_dir = Path(args.frames)
    files = sorted(p for p in frame_dir.glob("*")
                   if p.suffix.lower() in (".png", ".bmp", ".jpg", ".jpeg"))
    if not files:
        raise DataError(f"no frames found in {frame_dir}")
    boxes = _load_bboxes(args.bboxes) if args.bboxes else {}
    _guard_overwrite(args.out, args.force)
    prepared = []
    for index, path in enumerate(files):
        raw = np.asarray(Image.open(path).convert("RGB"))
        h, w = raw.shape[:2]
        bbox = boxes.get(index, (0, 0, w, h))
        prepared.append(preprocess_frame(raw, bbox))
    seq = extract_video(weights, prepared, fps=args.fps,
                        source_id=frame_dir.name)
    write_fseq(seq, args.out)
    logger.info("extracted %d frames -> %s", seq.frames, args.out)
    print(f"{args.out}: frames={seq.frames} dim={seq.dim}")
    return EXIT_OK


def cmd_train(args):
    _require_file(args.manifest, "manifest")
    manifest = load_manifest(args.manifest)
    if not manifest.split("train"):
        raise ConfigError("manifest has no train split")
    if not manifest.split("validation"):
        raise ConfigError("manifest has no validation split")
    if args.config is not None:
        _require_file(args.config, "config file")
        config = TrainConfig.from_file(args.config)
    else:
        config = TrainConfig()
    if args.seed is not None:
        config.seed = args.seed
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt_path = out_dir / f"{args.model}.psqw"
    _guard_overwrite(ckpt_path, args.force)
    model, history = pipeline.train_on_manifest(manifest, args.model, config)
    save_model(model, ckpt_path)
    history.write_csv(out_dir / f"{args.model}_history.csv")
    print(f"{args.model}: stopped after {history.epochs} epoch(s), "
          f"reason={history.stop_reason}, best_epoch={history.best_epoch}, "
          f"best_val_loss={history.val_loss[history.best_epoch - 1]:.4f}")
    return EXIT_OK


def cmd_eval(args):
    _require_file(args.manifest, "manifest")
    _require_file(args.weights, "model checkpoint")
    manifest = load_manifest(args.manifest)
    config = TrainConfig.from_file(args.config) if args.config else TrainConfig()
    model = load_model(args.model, args.weights, config)
    report, skipped = pipeline.evaluate_split(model, args.model, manifest, args.split)
    if skipped:
        logger.warning("%d short video(s) excluded", len(skipped))
    document = render_report([report], args.format)
    if args.out:
        Path(args.out).write_text(document, encoding="utf-8")
    else:
        sys.stdout.write(document)
    return EXIT_OK


def cmd_verify(args):
    from .verify import run_all

    results = run_all()
    failed = 0
    for name, passed, detail in results:
        status = "PASS" if passed else "FAIL"
        print(f"{status} {name}: {detail}")
        failed += not passed
    return EXIT_OK if failed == 0 else EXIT_RUNTIME


def cmd_init_weights(args):
    _guard_overwrite(args.out, args.force)
    seed = args.seed if args.seed is not None else 0
    random_extractor_checkpoint(args.out, seed=seed)
    print(f"random (non-semantic) extractor checkpoint written to {args.out}")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="painseq",
        description="Pain-level video classification pipeline: synthesize data, "
                    "extract features, train, evaluate, verify.")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--config", help="key = value SynthConfig file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=_default_seed())
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("extract", help="extract features for one video")
    p.add_argument("--weights", required=True, help="PSQW extractor checkpoint")
    p.add_argument("--frames", required=True, help="directory of frame images")
    p.add_argument("--bboxes", help="sidecar csv: frame_index,x,y,w,h")
    p.add_argument("--out", required=True, help="output FSEQ path")
    p.add_argument("--fps", type=float, default=30.0)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train", help="train a classifier on a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--model", required=True, choices=("ann", "lstm"))
    p.add_argument("--config", help="key = value TrainConfig file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=_default_seed())
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="validation",
                   choices=("train", "validation", "test"))
    p.add_argument("--weights", required=True, help="model checkpoint")
    p.add_argument("--model", required=True, choices=("ann", "lstm"))
    p.add_argument("--config", help="key = value TrainConfig file")
    p.add_argument("--format", default="text", choices=("text", "csv", "json"))
    p.add_argument("--out", help="write the report here instead of stdout")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("verify", help="run the verification suite")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("init-weights", help="write a random extractor checkpoint")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=_default_seed())
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_init_weights)

    return parser


def main(argv=None):
    logging.basicConfig(stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.verbose:
        logging.getLogger().setLevel(logging.DEBUG)
    try:
        return args.func(args)
    except ConfigError as exc:
        logger.error("%s", exc)
        return EXIT_USAGE
    except PainseqError as exc:
        logger.error("%s", exc)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
