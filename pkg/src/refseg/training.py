"""Adam with weight decay, poly learning-rate schedule, training loop.

The loop is deliberately plain: sample a batch (default size 1), run the
full model forward, mean BCE backward, one Adam step at the scheduled
rate. Everything is seeded, so two runs with the same config produce
byte-identical metric logs. A non-finite loss or gradient aborts the run
with the last written checkpoint intact.

Checkpoint file layout (little-endian):

    b"RSEGCKPT" | u32 version | u32 json_len | header JSON
    | u32 n_records | records

each record being u32 name_len | name utf8 | tensor record (rank, dims,
dtype flag, payload). The header JSON carries the model config, the
vocabulary, and optimizer hyperparameters, so a checkpoint is
self-describing.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import tensor as te
from .dataset import Sample
from .fileio import FileFormatError, read_array, write_array
from .language import TokenSequence, Vocabulary, tokenize
from .metrics import MetricReport, build_report, iou
from .model import (ModelConfig, RefSegModel, compute_loss, forward, init_model,
                    named_parameters, profile_config, set_param)
from .tensor import Tensor, backward

CKPT_MAGIC = b"RSEGCKPT"
CKPT_VERSION = 1

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-8
WEIGHT_DECAY = 0.0005


class TrainAbort(RuntimeError):
    """Raised when training stops on a non-finite loss or gradient."""

    def __init__(self, message: str, last_checkpoint: Optional[Path] = None):
        super().__init__(message)
        self.last_checkpoint = last_checkpoint


@dataclass
class TrainConfig:
    base_lr: float = 0.00025
    power: float = 0.9
    max_iters: int = 1000
    batch_size: int = 1
    seed: int = 0
    precision: str = "f32"
    profile: str = "desk"
    weight_decay: float = WEIGHT_DECAY
    eval_every: int = 0          # 0 disables periodic held-out eval
    eval_limit: int = 0          # 0 evaluates the full held-out set
    checkpoint_every: int = 0    # 0 keeps only the initial and final ones

    def validate(self) -> None:
        if self.base_lr <= 0:
            raise ValueError("base_lr must be positive")
        if self.power <= 0:
            raise ValueError("power must be positive")
        if self.max_iters < 0:
            raise ValueError("max_iters must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.precision not in ("f32", "f64"):
            raise ValueError(f"precision must be f32 or f64, got {self.precision!r}")


def poly_lr(iteration: int, cfg: TrainConfig) -> float:
    """base_lr * (1 - iter/max_iters)^power, decaying to 0 at max_iters."""
    if iteration < 0 or iteration > cfg.max_iters:
        raise ValueError(f"iteration {iteration} outside [0, {cfg.max_iters}]")
    if cfg.max_iters == 0:
        raise ValueError("poly_lr undefined for max_iters = 0")
    return cfg.base_lr * (1.0 - iteration / cfg.max_iters) ** cfg.power


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    m: Dict[str, np.ndarray]
    v: Dict[str, np.ndarray]
    t: int = 0


def init_adam(params: Dict[str, Tensor]) -> AdamState:
    return AdamState(m={n: np.zeros(p.shape, dtype=p.dtype) for n, p in params.items()},
                     v={n: np.zeros(p.shape, dtype=p.dtype) for n, p in params.items()},
                     t=0)


def adam_step(params: Dict[str, Tensor], grads: Dict[str, np.ndarray],
              state: AdamState, lr: float, weight_decay: float = 0.0,
              beta1: float = BETA1, beta2: float = BETA2,
              eps: float = EPS) -> Dict[str, np.ndarray]:
    """One update over all parameters; returns the new values by name."""
    state.t += 1
    t = state.t
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    new_values: Dict[str, np.ndarray] = {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"adam_step: gradient shape {g.shape} != {p.shape} for {name}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
        if weight_decay:
            g = g + weight_decay * p.data
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        m_hat = m / bc1
        v_hat = v / bc2
        new_values[name] = p.data - lr * m_hat / (np.sqrt(v_hat) + eps)
    return new_values


# ---------------------------------------------------------------------------
# checkpoint I/O


def save_checkpoint(path, model: RefSegModel, adam: Optional[AdamState] = None,
                    extra: Optional[dict] = None) -> None:
    params = named_parameters(model)
    header = {
        "model": model.cfg.to_dict(),
        "vocab": model.vocab.tokens(),
        "adam_t": None if adam is None else adam.t,
        "extra": extra or {},
    }
    records: List[Tuple[str, np.ndarray]] = [(n, p.data) for n, p in params.items()]
    if adam is not None:
        records += [(f"adam.m/{n}", adam.m[n]) for n in params]
        records += [(f"adam.v/{n}", adam.v[n]) for n in params]
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<I", CKPT_VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<I", len(records)))
        for name, arr in records:
            enc = name.encode("utf-8")
            fh.write(struct.pack("<I", len(enc)))
            fh.write(enc)
            write_array(fh, arr)


def load_checkpoint(path, expect_precision: Optional[str] = None
                    ) -> Tuple[RefSegModel, Optional[AdamState], dict]:
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(len(CKPT_MAGIC))
        if magic != CKPT_MAGIC:
            raise FileFormatError(f"{path}: bad checkpoint magic {magic!r}")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != CKPT_VERSION:
            raise FileFormatError(f"{path}: unsupported checkpoint version {version}")
        (json_len,) = struct.unpack("<I", fh.read(4))
        blob = fh.read(json_len)
        if len(blob) != json_len:
            raise FileFormatError(f"{path}: truncated header")
        header = json.loads(blob.decode("utf-8"))
        cfg = ModelConfig.from_dict(header["model"])
        if expect_precision is not None and cfg.precision != expect_precision:
            raise FileFormatError(
                f"{path}: checkpoint precision {cfg.precision} does not match "
                f"requested {expect_precision}; refusing cross-precision load")
        vocab = Vocabulary(header["vocab"])
        model = init_model(np.random.default_rng(0), cfg, vocab)
        raw = fh.read(4)
        if len(raw) != 4:
            raise FileFormatError(f"{path}: truncated record count")
        (n_records,) = struct.unpack("<I", raw)
        records: Dict[str, np.ndarray] = {}
        for _ in range(n_records):
            raw = fh.read(4)
            if len(raw) != 4:
                raise FileFormatError(f"{path}: truncated record name length")
            (name_len,) = struct.unpack("<I", raw)
            name = fh.read(name_len).decode("utf-8")
            records[name] = read_array(fh, where=f"{path}:{name}")
        if fh.read(1):
            raise FileFormatError(f"{path}: trailing bytes")
    params = named_parameters(model)
    missing = set(params) - set(records)
    if missing:
        raise FileFormatError(f"{path}: missing parameter records {sorted(missing)}")
    for name in params:
        if records[name].dtype != cfg.dtype:
            raise FileFormatError(
                f"{path}: record {name} dtype {records[name].dtype} does not match "
                f"config precision {cfg.precision}")
        set_param(model, name, records[name])
    adam = None
    if header.get("adam_t") is not None:
        adam = AdamState(m={}, v={}, t=int(header["adam_t"]))
        for name in params:
            try:
                adam.m[name] = records[f"adam.m/{name}"]
                adam.v[name] = records[f"adam.v/{name}"]
            except KeyError:
                raise FileFormatError(f"{path}: missing optimizer state for {name}") from None
    return model, adam, header.get("extra", {})


# ---------------------------------------------------------------------------
# evaluation


def sample_tokens(model: RefSegModel, expression: str) -> TokenSequence:
    ids = model.vocab.encode(tokenize(expression))
    return TokenSequence(ids, max_len=model.cfg.max_words)


def evaluate_model(model: RefSegModel, samples: Sequence[Sample],
                   limit: int = 0) -> MetricReport:
    """Mean IoU / Prec@X / length buckets of thresholded predictions."""
    if limit:
        samples = samples[:limit]
    dt = model.cfg.dtype
    ious: List[float] = []
    lengths: List[int] = []
    with te.no_grad():
        for s in samples:
            image = Tensor(s.image.astype(dt))
            result = forward(model, image, sample_tokens(model, s.expression))
            ious.append(iou(result.output.mask, s.mask))
            lengths.append(len(s.tokens))
    return build_report(ious, lengths)


# ---------------------------------------------------------------------------
# training loop


def train(cfg: TrainConfig, train_samples: Sequence[Sample], out_dir,
          eval_samples: Optional[Sequence[Sample]] = None,
          model_cfg: Optional[ModelConfig] = None) -> dict:
    """Run the loop; returns a summary with paths and the last loss."""
    cfg.validate()
    if not train_samples:
        raise ValueError("train: empty dataset")
    if model_cfg is None:
        model_cfg = profile_config(cfg.profile, precision=cfg.precision)
    model_cfg.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(
        {"train": asdict(cfg), "model": model_cfg.to_dict()},
        indent=2, sort_keys=True) + "\n", encoding="utf-8")

    rng = np.random.default_rng(cfg.seed)
    vocab = Vocabulary.from_corpus([s.expression for s in train_samples])
    model = init_model(rng, model_cfg, vocab)
    params = named_parameters(model)
    adam = init_adam(params)
    dt = model_cfg.dtype

    ckpt_path = out / "ckpt_000000.ckpt"
    save_checkpoint(ckpt_path, model, adam, extra={"iter": 0})
    last_good = ckpt_path

    metrics_path = out / "metrics.jsonl"
    last_loss = None
    with open(metrics_path, "w", encoding="utf-8") as log:
        for it in range(cfg.max_iters):
            lr = poly_lr(it, cfg)
            idx = rng.integers(0, len(train_samples), size=cfg.batch_size)
            grad_sum: Dict[str, np.ndarray] = {n: np.zeros(p.shape, dtype=dt)
                                               for n, p in params.items()}
            loss_sum = 0.0
            for i in idx:
                s = train_samples[int(i)]
                image = Tensor(s.image.astype(dt))
                target = Tensor(s.mask.astype(dt))
                loss, _ = compute_loss(model, image, sample_tokens(model, s.expression),
                                       target)
                loss_val = loss.item()
                if not np.isfinite(loss_val):
                    raise TrainAbort(f"non-finite loss at iteration {it}", last_good)
                loss_sum += loss_val
                grads = backward(loss, leaves=list(params.values()))
                for name, p in params.items():
                    grad_sum[name] += grads[p].data
            mean_loss = loss_sum / cfg.batch_size
            if cfg.batch_size > 1:
                for name in grad_sum:
                    grad_sum[name] /= cfg.batch_size
            try:
                new_values = adam_step(params, grad_sum, adam, lr,
                                       weight_decay=cfg.weight_decay)
            except FloatingPointError as e:
                raise TrainAbort(f"{e} at iteration {it}", last_good) from None
            for name, value in new_values.items():
                set_param(model, name, value)
            params = named_parameters(model)

            record = {"iter": it, "lr": lr, "loss": mean_loss}
            if (cfg.eval_every and eval_samples
                    and (it + 1) % cfg.eval_every == 0):
                report = evaluate_model(model, eval_samples, limit=cfg.eval_limit)
                record["eval_iou"] = report.mean_iou
            log.write(json.dumps(record, sort_keys=True) + "\n")
            last_loss = mean_loss

            if cfg.checkpoint_every and (it + 1) % cfg.checkpoint_every == 0:
                ckpt_path = out / f"ckpt_{it + 1:06d}.ckpt"
                save_checkpoint(ckpt_path, model, adam, extra={"iter": it + 1})
                last_good = ckpt_path

    final_path = out / "ckpt_final.ckpt"
    save_checkpoint(final_path, model, adam, extra={"iter": cfg.max_iters})
    return {"final_checkpoint": str(final_path), "last_loss": last_loss,
            "iters": cfg.max_iters, "metrics_log": str(metrics_path)}
