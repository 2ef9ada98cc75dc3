"""
Training and evaluation loops.

The optimisation loop is single-threaded and fully determined by the
training seed: shuffling and augmentation draw from one generator.
"""
import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from numerics.exceptions import ConfigError
from numerics.tensor import Tape, Tensor
from segdata.augment import augment
from segdata.dataset import load_dataset
from segdata.samples import split, stack_batch
from segnet.checkpoint import save_checkpoint
from segnet.model import build

from .losses import bce_dice_loss
from .metrics import f1_dice, iou, threshold_logits
from .optim import Adam, learning_rate

logger = logging.getLogger(__name__)

HISTORY_FIELDS = ("epoch", "lr", "train_loss", "val_iou", "val_f1")
HISTORY_FILE = "history.csv"
BEST_CHECKPOINT = "best.ckpt"
FINAL_CHECKPOINT = "final.ckpt"


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    train_loss: float
    val_iou: float
    val_f1: float


@dataclass
class EvalReport:
    rows: list = field(default_factory=list)

    @property
    def mean_iou(self):
        return float(np.mean([r[1] for r in self.rows]))

    @property
    def mean_f1(self):
        return float(np.mean([r[2] for r in self.rows]))


@dataclass
class TrainResult:
    history: list
    best_path: Path
    final_path: Path
    best_val_iou: float


@dataclass
class RunSummary:
    run: int
    seed: int
    train_iou: float
    train_f1: float
    best_val_iou: float
    output_dir: Path


# --------------------------
# BATCHING
# --------------------------
def _chunks(samples, batch_size):
    """Consecutive runs of at most ``batch_size`` samples sharing one size."""
    chunk = []
    for sample in samples:
        if chunk and (len(chunk) == batch_size or chunk[0].image.shape != sample.image.shape):
            yield chunk
            chunk = []
        chunk.append(sample)
    if chunk:
        yield chunk


def iterate_batches(samples, batch_size, rng, use_augment=False):
    order = rng.permutation(len(samples))
    shuffled = [samples[i] for i in order]
    for chunk in _chunks(shuffled, batch_size):
        if use_augment:
            chunk = [augment(s, rng) for s in chunk]
        yield chunk


# --------------------------
# EVALUATION
# --------------------------
def predict_logits(model, images):
    return model(Tensor(images)).data


def evaluate(model, samples, threshold=0.5, batch_size=8):
    if not samples:
        raise ConfigError("cannot evaluate an empty dataset")
    report = EvalReport()
    for chunk in _chunks(list(samples), batch_size):
        images, _ = stack_batch(chunk)
        preds = threshold_logits(predict_logits(model, images), threshold)
        for sample, pred in zip(chunk, preds):
            report.rows.append((sample.id, iou(pred, sample.mask), f1_dice(pred, sample.mask)))
    return report


def predict_mask(model, image, threshold=0.5):
    """Binary uint8 [H,W] mask for one [3,H,W] image."""
    logits = predict_logits(model, np.asarray(image, dtype=np.float32)[None])
    return threshold_logits(logits[0, 0], threshold).astype(np.uint8)


def activation_maps(model, image):
    """Per encoder stage (and bottleneck) channel-mean activation, min-max scaled to uint8."""
    acts = model.stage_activations(Tensor(np.asarray(image, dtype=np.float32)[None]))
    maps = []
    for act in acts:
        m = act.data[0].astype(np.float64).mean(axis=0)
        lo, hi = m.min(), m.max()
        if hi > lo:
            maps.append(np.rint((m - lo) / (hi - lo) * 255.0).astype(np.uint8))
        else:
            maps.append(np.zeros(m.shape, dtype=np.uint8))
    return maps


# --------------------------
# TRAINING
# --------------------------
def write_history(path, history):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(HISTORY_FIELDS)
        for rec in history:
            writer.writerow([rec.epoch, repr(rec.lr), repr(rec.train_loss), repr(rec.val_iou), repr(rec.val_f1)])


def train_step(model, optimizer, chunk, cfg, lr):
    images, masks = stack_batch(chunk)
    optimizer.zero_grad()
    with Tape() as tape:
        loss = bce_dice_loss(model(Tensor(images)), masks, cfg.bce_weight, cfg.dice_weight)
    tape.backward(loss)
    optimizer.step(lr)
    return loss.item()


def train_loop(model, train_samples, val_samples, cfg, output_dir):
    """
    Optimise ``model`` in place for ``cfg.epochs`` epochs.

    Without validation samples the training samples are scored instead.
    Writes ``history.csv``, ``best.ckpt`` (best validation IoU) and
    ``final.ckpt`` under ``output_dir``.
    """
    if not train_samples:
        raise ConfigError("training set is empty")
    val_samples = val_samples or train_samples
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    history_path = output_dir / HISTORY_FILE
    best_path = output_dir / BEST_CHECKPOINT

    rng = np.random.default_rng(cfg.seed)
    optimizer = Adam(model.named_parameters())
    history = []
    best_iou = -np.inf
    for epoch in range(cfg.epochs):
        lr = learning_rate(epoch, cfg)
        total, seen = 0.0, 0
        for chunk in iterate_batches(train_samples, cfg.batch_size, rng, cfg.augment):
            total += train_step(model, optimizer, chunk, cfg, lr) * len(chunk)
            seen += len(chunk)
        report = evaluate(model, val_samples, batch_size=cfg.batch_size)
        rec = EpochRecord(epoch, lr, total / seen, report.mean_iou, report.mean_f1)
        history.append(rec)
        write_history(history_path, history)
        logger.info(
            "epoch %d lr %.3e loss %.5f val IoU %.4f val F1 %.4f",
            rec.epoch, rec.lr, rec.train_loss, rec.val_iou, rec.val_f1,
        )
        if rec.val_iou > best_iou:
            best_iou = rec.val_iou
            save_checkpoint(best_path, model)

    final_path = save_checkpoint(output_dir / FINAL_CHECKPOINT, model)
    logger.info("best checkpoint %s (val IoU %.4f)", best_path, best_iou)
    return TrainResult(history=history, best_path=best_path, final_path=final_path, best_val_iou=best_iou)


def run_training(run_config, runs=1):
    """``runs`` independent trainings with seeds ``seed + r``; one summary per run."""
    samples = load_dataset(run_config.data_dir, size=run_config.image_size)
    if not samples:
        raise ConfigError(f"dataset {run_config.data_dir} is empty")
    summaries = []
    for r in range(runs):
        cfg = run_config.train.with_seed(run_config.train.seed + r)
        output_dir = Path(run_config.output_dir)
        if runs > 1:
            output_dir = output_dir / f"run_{r}"
        if cfg.val_ratio > 0:
            train, val = split(samples, 1.0 - cfg.val_ratio, cfg.seed)
        else:
            train, val = samples, []
        model = build(run_config.model, cfg.seed)
        result = train_loop(model, train, val, cfg, output_dir)
        scored = evaluate(model, train, batch_size=cfg.batch_size)
        summaries.append(
            RunSummary(
                run=r,
                seed=cfg.seed,
                train_iou=scored.mean_iou,
                train_f1=scored.mean_f1,
                best_val_iou=result.best_val_iou,
                output_dir=output_dir,
            )
        )
    return summaries


def mean_std(values):
    values = np.asarray(values, dtype=np.float64)
    return float(values.mean()), float(values.std())
