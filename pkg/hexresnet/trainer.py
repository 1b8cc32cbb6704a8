"""
Training and evaluation loop.

SGD with momentum and an iteration-keyed learning-rate schedule; one
validation pass, one metrics record and one checkpoint per epoch.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from .checkpoint import Checkpoint, save_checkpoint
from .cifar import BatchLoader, CifarDataset, CifarSplits, SplitSpec, compute_channel_stats, split_train_validation, standardize
from .config import ArchConfig, DataConfig, TrainConfig
from .errors import ConfigError, TrainingDivergedError
from .layers import softmax_cross_entropy
from .metrics import EvalResult, MetricsRecord, append_record, topk_accuracy, write_json
from .optim import SGD, learning_rate_at
from .resnet import ResNet

logger = logging.getLogger(__name__)

METRICS_FILE = "metrics.jsonl"
CHECKPOINT_FILE = "checkpoint.bin"
RUN_CONFIG_FILE = "run_config.json"
EVAL_BATCH_SIZE = 500


@dataclass
class TrainingData:
    train: CifarDataset
    validation: CifarDataset
    means: Tuple[float, float, float]
    stds: Tuple[float, float, float]
    test: Optional[CifarDataset] = None


def prepare_data(splits: CifarSplits, cfg: TrainConfig, data_cfg: DataConfig) -> TrainingData:
    """
    Split the 50k training records into train/validation and pick the
    normalization statistics (frozen constants, or recomputed from the train part).
    """
    available = len(splits.train) - cfg.validation_size
    train_count = available if cfg.train_subset is None else min(cfg.train_subset, available)
    if train_count < 1:
        raise ConfigError(
            f"validation size {cfg.validation_size} leaves no training records out of {len(splits.train)}"
        )
    train, validation = split_train_validation(
        splits.train, SplitSpec(train=train_count, validation=cfg.validation_size, seed=cfg.seed)
    )
    if data_cfg.channel_means is None or data_cfg.channel_stds is None:
        means, stds = compute_channel_stats(train.images)
        logger.info("Computed channel statistics: means=%s stds=%s", np.round(means, 4), np.round(stds, 4))
    else:
        means, stds = np.asarray(data_cfg.channel_means), np.asarray(data_cfg.channel_stds)
    return TrainingData(
        train=train,
        validation=validation,
        means=tuple(float(m) for m in means),  # type: ignore[arg-type]
        stds=tuple(float(s) for s in stds),  # type: ignore[arg-type]
        test=splits.test,
    )


def evaluate(
    model: ResNet,
    images: np.ndarray,
    labels: np.ndarray,
    means: Sequence[float],
    stds: Sequence[float],
    batch_size: int = EVAL_BATCH_SIZE,
) -> EvalResult:
    """Mean cross-entropy and top-1/top-5 percentages in eval mode; the model's mode is restored."""
    was_training = model.training
    model.eval()
    try:
        total_loss = 0.0
        all_scores = []
        for start in range(0, len(labels), batch_size):
            x = standardize(images[start:start + batch_size], means, stds)
            y = np.asarray(labels[start:start + batch_size], dtype=np.int64)
            scores = model.forward(x)
            loss, _ = softmax_cross_entropy(scores, y)
            total_loss += loss * len(y)
            all_scores.append(scores)
    finally:
        model.train(was_training)
    count = int(len(labels))
    if count == 0:
        return EvalResult(loss=float("nan"), top1=0.0, top5=0.0, count=0)
    acc = topk_accuracy(np.concatenate(all_scores), np.asarray(labels), ks=(1, 5))
    return EvalResult(loss=total_loss / count, top1=acc[1], top5=acc[5], count=count)


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    records: List[MetricsRecord] = field(default_factory=list)


class Trainer:
    """Owns one model, its optimizer and the global iteration counter."""

    def __init__(
        self,
        model: ResNet,
        arch: ArchConfig,
        data: TrainingData,
        cfg: TrainConfig,
        output_dir: Optional[Union[str, Path]] = None,
        workers: int = 0,
    ) -> None:
        self.model = model
        self.arch = arch
        self.data = data
        self.cfg = cfg
        self.output_dir = Path(output_dir) if output_dir is not None else None
        self.optimizer = SGD(
            model.named_parameters(),
            lr=cfg.lr,
            momentum=cfg.momentum,
            weight_decay=cfg.weight_decay,
            decay_batchnorm=cfg.decay_batchnorm,
        )
        self.loader = BatchLoader(
            data.train,
            cfg.batch_size,
            data.means,
            data.stds,
            seed=cfg.seed,
            shuffle=True,
            augment=True,
            workers=workers,
        )
        self.iteration = 0
        self.epoch = 0

    @property
    def metrics_path(self) -> Optional[Path]:
        return self.output_dir / METRICS_FILE if self.output_dir else None

    @property
    def checkpoint_path(self) -> Optional[Path]:
        return self.output_dir / CHECKPOINT_FILE if self.output_dir else None

    def resume(self, ckpt: Checkpoint) -> None:
        ckpt.restore(self.model, self.optimizer)
        self.iteration = ckpt.iteration
        self.epoch = ckpt.epoch
        logger.info("Resuming at epoch %d, iteration %d", self.epoch, self.iteration)

    def checkpoint(self) -> Checkpoint:
        return Checkpoint.capture(self.model, self.arch, self.cfg, self.iteration, self.epoch, self.optimizer)

    def evaluate(self, images: Optional[np.ndarray] = None, labels: Optional[np.ndarray] = None) -> EvalResult:
        if images is None or labels is None:
            images, labels = self.data.validation.images, self.data.validation.labels
        return evaluate(self.model, images, labels, self.data.means, self.data.stds)

    def _train_epoch(self, epoch: int) -> float:
        self.model.train()
        total, seen = 0.0, 0
        for x, y in self.loader.epoch(epoch):
            lr = learning_rate_at(self.iteration, self.cfg.lr, self.cfg.lr_drops, self.cfg.lr_drop_factor)
            self.optimizer.lr = lr
            self.optimizer.zero_grad()
            scores = self.model.forward(x)
            loss, grad = softmax_cross_entropy(scores, y)
            if not np.isfinite(loss):
                raise TrainingDivergedError(self.iteration, loss)
            self.model.backward(grad)
            self.optimizer.step()
            self.iteration += 1
            total += loss * len(y)
            seen += len(y)
            if self.iteration % self.cfg.log_interval == 0:
                logger.debug("iteration %d loss=%.4f lr=%g", self.iteration, loss, lr)
        return total / max(seen, 1)

    def _record(self, train_loss: Optional[float], started: float) -> MetricsRecord:
        result = self.evaluate()
        record = MetricsRecord(
            epoch=self.epoch,
            iteration=self.iteration,
            lr=learning_rate_at(self.iteration, self.cfg.lr, self.cfg.lr_drops, self.cfg.lr_drop_factor),
            train_loss=train_loss,
            val_loss=result.loss,
            val_top1=result.top1,
            val_top5=result.top5,
            seconds=time.perf_counter() - started,
        )
        if self.metrics_path is not None:
            append_record(self.metrics_path, record)
        return record

    def train(self) -> TrainResult:
        """Run the remaining epochs up to ``cfg.epochs``; with none left, record a single evaluation."""
        if self.output_dir is not None:
            self.output_dir.mkdir(parents=True, exist_ok=True)
            write_json(
                self.output_dir / RUN_CONFIG_FILE,
                {"arch": self.arch.model_dump(mode="json"), "train": self.cfg.model_dump(mode="json")},
            )
        logger.info(
            "Training depth-%d %s for epochs %d..%d on %d images (%d batches/epoch)",
            self.arch.depth,
            self.arch.shortcut_mode.value,
            self.epoch + 1,
            self.cfg.epochs,
            len(self.data.train),
            len(self.loader),
        )
        records: List[MetricsRecord] = []
        if self.epoch >= self.cfg.epochs:
            records.append(self._record(None, time.perf_counter()))
        while self.epoch < self.cfg.epochs:
            started = time.perf_counter()
            train_loss = self._train_epoch(self.epoch)
            self.epoch += 1
            record = self._record(train_loss, started)
            records.append(record)
            logger.info(
                "epoch %d/%d loss=%.4f val_loss=%.4f top1=%.2f%% top5=%.2f%% lr=%g (%.1fs)",
                record.epoch,
                self.cfg.epochs,
                train_loss,
                record.val_loss,
                record.val_top1,
                record.val_top5,
                record.lr,
                record.seconds,
            )
            if self.checkpoint_path is not None:
                save_checkpoint(self.checkpoint_path, self.checkpoint())
        return TrainResult(checkpoint=self.checkpoint(), records=records)


def train(
    model: ResNet,
    arch: ArchConfig,
    data: TrainingData,
    cfg: TrainConfig,
    output_dir: Optional[Union[str, Path]] = None,
    resume_from: Optional[Checkpoint] = None,
    workers: int = 0,
) -> TrainResult:
    trainer = Trainer(model, arch, data, cfg, output_dir=output_dir, workers=workers)
    if resume_from is not None:
        trainer.resume(resume_from)
    return trainer.train()
