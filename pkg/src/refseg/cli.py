"""Command-line surface: gen, train, eval, infer, verify.

Exit codes: 0 success, 1 verification failure or training abort, 2 usage
error (bad flags, unreadable inputs, malformed files).

Training reads an optional config file of `KEY = VALUE` lines (`#` starts
a comment). Keys are the training fields

    base_lr power max_iters batch_size seed precision profile
    weight_decay eval_every eval_limit checkpoint_every

plus `model.<field>` overrides for the dimension profile (for example
`model.image_size = 32` or `model.stem_channels = 8,16`). Explicit flags
win over file values, which win over profile defaults; the effective
config is echoed as JSON into the output directory. Every command is
deterministic given its flags and seed, and writes only under --out.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import __version__
from .dataset import SceneConfig, gen_dataset, read_dataset, write_dataset
from .fileio import (FileFormatError, read_ppm, read_tensor_file, to_gray,
                     write_pgm, write_tensor_file)
from .language import UNK_ID, TokenSequence, tokenize
from .model import ModelConfig, forward, profile_config
from .tensor import Tensor, no_grad
from .training import (TrainAbort, TrainConfig, evaluate_model,
                       load_checkpoint, train)
from .verify import SUITE_NAMES, run_suite

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_USAGE = 2

_TRAIN_CASTS = {
    "base_lr": float, "power": float, "max_iters": int, "batch_size": int,
    "seed": int, "precision": str, "profile": str, "weight_decay": float,
    "eval_every": int, "eval_limit": int, "checkpoint_every": int,
}

def _int_tuple(raw: str) -> Tuple[int, ...]:
    return tuple(int(part) for part in raw.split(",") if part.strip())

def _bool(raw: str) -> bool:
    if raw.lower() in ("true", "1", "yes"):
        return True
    if raw.lower() in ("false", "0", "no"):
        return False
    raise ValueError(f"expected a boolean, got {raw!r}")

_MODEL_CASTS = {
    "visual_channels": int, "embed_dim": int, "lstm_hidden": int, "attn_dim": int,
    "encoder_channels": int, "decoder_channels": int, "encoder_kernel": int,
    "decoder_kernel": int, "gate_kernel": int, "image_size": int, "max_words": int,
    "num_levels": int, "stem_channels": _int_tuple, "block_channels": int,
    "share_encoder_params": _bool,
}


class UsageError(Exception):
    """Bad flags or unusable inputs; maps to exit code 2."""


# ---------------------------------------------------------------------------
# config plumbing


def _parse_config_file(path: Path) -> Dict[str, str]:
    if not path.is_file():
        raise UsageError(f"config file not found: {path}")
    raw: Dict[str, str] = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected KEY = VALUE, got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key or not value:
            raise UsageError(f"{path}:{lineno}: empty key or value")
        raw[key] = value
    return raw


def _cast_entries(raw: Dict[str, str]) -> Tuple[dict, dict]:
    """Split raw strings into typed train and model override dicts."""
    train_kv: dict = {}
    model_kv: dict = {}
    for key, value in raw.items():
        try:
            if key.startswith("model."):
                field = key[len("model."):]
                if field not in _MODEL_CASTS:
                    raise UsageError(f"unknown model config key {key!r}")
                model_kv[field] = _MODEL_CASTS[field](value)
            elif key in _TRAIN_CASTS:
                train_kv[key] = _TRAIN_CASTS[key](value)
            else:
                raise UsageError(f"unknown config key {key!r}")
        except ValueError as e:
            raise UsageError(f"config key {key!r}: {e}") from e
    return train_kv, model_kv


def _resolve_train_config(args) -> Tuple[TrainConfig, ModelConfig]:
    raw: Dict[str, str] = {}
    if args.config:
        raw.update(_parse_config_file(Path(args.config)))
    for item in args.set or []:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = (part.strip() for part in item.split("=", 1))
        raw[key] = value
    train_kv, model_kv = _cast_entries(raw)

    for flag in ("base_lr", "max_iters", "batch_size", "seed", "precision",
                 "profile", "eval_every", "eval_limit", "checkpoint_every"):
        value = getattr(args, flag)
        if value is not None:
            train_kv[flag] = value

    try:
        cfg = TrainConfig(**train_kv)
        cfg.validate()
        model_cfg = profile_config(cfg.profile, precision=cfg.precision, **model_kv)
        model_cfg.validate()
    except (ValueError, TypeError) as e:
        raise UsageError(str(e)) from e
    return cfg, model_cfg


def _echo_config(out_dir: Path, name: str, payload: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / name).write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _require_empty_or_force(out: Path, force: bool) -> None:
    if out.exists() and any(out.iterdir()) and not force:
        raise UsageError(f"output directory {out} is not empty (use --force to write anyway)")


# ---------------------------------------------------------------------------
# commands


def cmd_gen(args) -> int:
    out = Path(args.out)
    _require_empty_or_force(out, args.force)
    scene = SceneConfig(canvas=args.canvas)
    samples = gen_dataset(args.seed, args.count, scene)
    write_dataset(out, samples, viz=args.viz)
    _echo_config(out, "gen_config.json",
                 {"canvas": args.canvas, "count": args.count, "seed": args.seed,
                  "viz": args.viz})
    lengths = [len(s.tokens) for s in samples]
    shapes = [len(s.meta["shapes"]) for s in samples]
    print(f"wrote {len(samples)} samples to {out} (canvas {args.canvas}, seed {args.seed})")
    if samples:
        print(f"expression length: min {min(lengths)}, "
              f"mean {sum(lengths) / len(lengths):.1f}, max {max(lengths)}")
        print(f"shapes per scene: min {min(shapes)}, max {max(shapes)}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg, model_cfg = _resolve_train_config(args)
    train_samples = read_dataset(args.data)
    eval_samples = read_dataset(args.eval_data) if args.eval_data else None
    started = time.time()
    try:
        summary = train(cfg, train_samples, args.out, eval_samples=eval_samples,
                        model_cfg=model_cfg)
    except TrainAbort as e:
        print(f"training aborted: {e}", file=sys.stderr)
        if e.last_checkpoint:
            print(f"last good checkpoint: {e.last_checkpoint}", file=sys.stderr)
        return EXIT_FAIL
    minutes = (time.time() - started) / 60.0
    print(f"trained {summary['iters']} iterations in {minutes:.1f} min "
          f"({len(train_samples)} samples, profile {cfg.profile}, {cfg.precision})")
    if summary["last_loss"] is not None:
        print(f"final loss {summary['last_loss']:.6f}")
    print(f"final checkpoint: {summary['final_checkpoint']}")
    print(f"metrics log: {summary['metrics_log']}")
    return EXIT_OK


def cmd_eval(args) -> int:
    if args.dcrf:
        print("--dcrf: dense CRF post-processing is not implemented; "
              "evaluating raw thresholded masks", file=sys.stderr)
    model, _, _ = load_checkpoint(args.ckpt)
    samples = read_dataset(args.data)
    if not samples:
        raise UsageError(f"dataset {args.data} is empty")
    report = evaluate_model(model, samples, limit=args.limit)
    print(report.table())
    print(json.dumps(report.to_dict(), sort_keys=True))
    return EXIT_OK


def _load_image(path: Path, dtype) -> Tensor:
    if not path.is_file():
        raise UsageError(f"image not found: {path}")
    if path.suffix == ".ppm":
        arr = read_ppm(path).astype(dtype) / 255.0
    elif path.suffix == ".rt":
        arr = read_tensor_file(path).astype(dtype)
    else:
        raise UsageError(f"unsupported image format {path.suffix!r} (use .ppm or .rt)")
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise UsageError(f"image must be [3,H,W], got {list(arr.shape)}")
    return Tensor(arr)


def cmd_infer(args) -> int:
    expression = args.expr.strip()
    if not expression:
        raise UsageError("empty expression")
    model, _, _ = load_checkpoint(args.ckpt)
    words = tokenize(expression)
    if len(words) > model.cfg.max_words:
        raise UsageError(
            f"expression has {len(words)} words, model accepts at most "
            f"{model.cfg.max_words}")
    ids = model.vocab.encode(words)
    if all(i == UNK_ID for i in ids):
        print("warning: no expression word is in the training vocabulary; "
              "proceeding with <unk> tokens", file=sys.stderr)
    tokens = TokenSequence(ids, max_len=model.cfg.max_words)
    image = _load_image(Path(args.image), model.cfg.dtype)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with no_grad():
        result = forward(model, image, tokens, keep_maps=args.dump_attention)
    prob = result.output.prob.numpy()
    mask = result.output.mask

    write_tensor_file(out / "prob.rt", prob)
    write_pgm(out / "prob.pgm", to_gray(prob[0], lo=0.0, hi=1.0))
    write_pgm(out / "mask.pgm", mask.astype(np.uint8) * 255)
    written = ["prob.rt", "prob.pgm", "mask.pgm"]
    if args.dump_attention:
        attention = result.words.attention.numpy()
        (out / "word_attention.json").write_text(
            json.dumps({"tokens": words, "ids": ids,
                        "attention": [float(a) for a in attention]},
                       indent=2) + "\n", encoding="utf-8")
        written.append("word_attention.json")
        for level, gate in enumerate(result.gate_maps):
            name = f"spatial_attention_{level}.pgm"
            write_pgm(out / name, to_gray(gate.numpy()[0], lo=0.0, hi=1.0))
            written.append(name)
    _echo_config(out, "infer_config.json",
                 {"ckpt": str(args.ckpt), "image": str(args.image),
                  "expr": expression, "dump_attention": args.dump_attention})

    coverage = float(mask.mean())
    print(f"expression: {expression!r} ({len(words)} words)")
    print(f"mask covers {coverage:.1%} of {mask.shape[1]}x{mask.shape[0]} pixels")
    print(f"wrote {', '.join(written)} to {out}")
    return EXIT_OK


def cmd_verify(args) -> int:
    names = list(SUITE_NAMES) if args.suite == "all" else [args.suite]
    failed = 0
    total = 0
    started = time.time()
    for name in names:
        for result in run_suite(name):
            total += 1
            failed += not result.ok
            status = "PASS" if result.ok else "FAIL"
            detail = f"  [{result.detail}]" if result.detail else ""
            print(f"{status}  {result.name}{detail}")
    elapsed = time.time() - started
    print(f"{total - failed}/{total} checks passed in {elapsed:.1f}s "
          f"(suites: {', '.join(names)})")
    return EXIT_FAIL if failed else EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="refseg",
        description="Referring-expression segmentation: synthetic data, "
                    "training, evaluation, inference, verification.")
    parser.add_argument("--version", action="version", version=f"refseg {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic shapes dataset")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=int, default=200, help="number of samples")
    p.add_argument("--canvas", type=int, default=64, help="square image size")
    p.add_argument("--viz", action="store_true",
                   help="also write viewable .ppm/.pgm copies")
    p.add_argument("--force", action="store_true",
                   help="write into a non-empty directory")
    p.set_defaults(fn=cmd_gen)

    p = sub.add_parser("train", help="train a model on a generated dataset")
    p.add_argument("--data", required=True, help="training dataset directory")
    p.add_argument("--out", required=True, help="run output directory")
    p.add_argument("--eval-data", help="held-out dataset for periodic evaluation")
    p.add_argument("--config", help="KEY = VALUE config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override any config key (repeatable)")
    p.add_argument("--base-lr", dest="base_lr", type=float)
    p.add_argument("--max-iters", dest="max_iters", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--precision", choices=("f32", "f64"))
    p.add_argument("--profile", choices=("desk", "paper"))
    p.add_argument("--eval-every", dest="eval_every", type=int)
    p.add_argument("--eval-limit", dest="eval_limit", type=int)
    p.add_argument("--checkpoint-every", dest="checkpoint_every", type=int)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--limit", type=int, default=0, help="evaluate at most N samples")
    p.add_argument("--dcrf", action="store_true",
                   help="dense CRF post-processing (not implemented)")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("infer", help="segment one image with one expression")
    p.add_argument("--image", required=True, help=".ppm or .rt image, [3,H,W]")
    p.add_argument("--expr", required=True, help="referring expression")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dump-attention", action="store_true",
                   help="also write word-attention JSON and spatial-attention maps")
    p.set_defaults(fn=cmd_infer)

    p = sub.add_parser("verify", help="run the built-in verification suites")
    p.add_argument("--suite", choices=SUITE_NAMES + ("all",), default="all")
    p.set_defaults(fn=cmd_verify)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, NotADirectoryError, FileFormatError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
