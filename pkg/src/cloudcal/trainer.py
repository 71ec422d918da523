"""Training regimes: baseline, adaptive-relabel fine-tuning, and relabeling.

Baseline training fits the model to the dataset's stored (possibly noisy)
masks.  Fine-tuning ignores the stored masks entirely: every batch is
relabeled on the fly by thresholding the band-mixed intensities with the
controller's live threshold, the model takes one Adam step against those
labels, and the controller then observes the batch loss.  Relabeling
applies a fixed threshold once and returns a new dataset.

Histories serialize to CSV with the header ``step,epoch,loss,threshold,
best_loss,action`` (threshold fields blank for baseline runs) and
per-epoch evaluation snapshots to ``epoch,miou,precision,recall,f1,oa``,
all values printed with 6 decimal places.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .controller import ControllerConfig, ThresholdController
from .core import ImagePatch, Mask, binarize, morph_clean, to_intensity, uniform_weights
from .data import Dataset, relabeled_copy
from .errors import ConfigError, DatasetError
from .metrics import ConfusionMatrix, MetricsReport, accumulate, report
from .model import AdamState, SegModel, adam_step, backward, bce_loss
from .model import fit_feature_normalization, forward, predict_mask

logger = logging.getLogger(__name__)

MODE_BASELINE = "baseline"
MODE_CAL_FINETUNE = "cal_finetune"
MODE_RELABEL_ONLY = "relabel_only"
MODES = (MODE_BASELINE, MODE_CAL_FINETUNE, MODE_RELABEL_ONLY)

HISTORY_CSV_HEADER = "step,epoch,loss,threshold,best_loss,action"
SNAPSHOTS_CSV_HEADER = "epoch,miou,precision,recall,f1,oa"


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    epochs: int = 3
    batch_size: int = 4
    shuffle_seed: int = 0
    window: int = 5
    mode: str = MODE_BASELINE
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    intensity_weights: tuple[float, ...] | None = None
    prediction_cut: float = 0.5

    def validate(self) -> None:
        if not (self.learning_rate >= 0.0 and np.isfinite(self.learning_rate)):
            raise ConfigError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not (0.0 <= self.prediction_cut <= 1.0):
            raise ConfigError(f"prediction_cut must lie in [0, 1], got {self.prediction_cut}")
        ThresholdController(self.controller)  # rejects invalid controller params


@dataclass
class HistoryRecord:
    step: int
    epoch: int
    loss: float
    threshold: float | None
    best_loss: float | None
    action: str


@dataclass
class EpochSnapshot:
    epoch: int
    miou: float
    precision: float
    recall: float
    f1: float
    oa: float


@dataclass
class TrainHistory:
    records: list[HistoryRecord] = field(default_factory=list)
    snapshots: list[EpochSnapshot] = field(default_factory=list)
    degenerate_batches: int = 0


def new_model_for(dataset: Dataset, config: TrainConfig) -> tuple[SegModel, AdamState]:
    """Fresh zero-initialized model with normalization fit on the dataset."""
    model = SegModel.create(window=config.window, bands=len(dataset.bands))
    fit_feature_normalization(model, (item.patch for item in dataset.items))
    return model, AdamState.create(model, learning_rate=config.learning_rate)


def batch_order(seed: int, epoch: int, count: int) -> np.ndarray:
    """Deterministic shuffle, a pure function of (seed, epoch)."""
    return np.random.default_rng([seed, epoch]).permutation(count)


def _batches(order: np.ndarray, batch_size: int):
    for start in range(0, order.shape[0], batch_size):
        yield order[start:start + batch_size]


def _batch_step(model: SegModel, state: AdamState,
                patches: Sequence[ImagePatch], masks: Sequence[Mask]) -> float:
    """Forward, mean batch loss, analytic gradient and one Adam update."""
    total_pixels = 0
    loss_sum = 0.0
    grad_w = np.zeros(model.n_features)
    grad_b = 0.0
    for patch, mask in zip(patches, masks):
        n = patch.height * patch.width
        loss_sum += bce_loss(forward(model, patch), mask) * n
        gw, gb = backward(model, patch, mask)
        grad_w += gw * n
        grad_b += gb * n
        total_pixels += n
    loss = loss_sum / total_pixels
    adam_step(model, state, grad_w / total_pixels, grad_b / total_pixels)
    return loss


def _snapshot(history: TrainHistory, epoch: int, eval_dataset: Dataset | None,
              model: SegModel, cut: float) -> None:
    if eval_dataset is None:
        return
    rep = evaluate(eval_dataset, model, cut)
    history.snapshots.append(EpochSnapshot(
        epoch=epoch, miou=rep.miou, precision=rep.precision,
        recall=rep.recall, f1=rep.f1, oa=rep.oa,
    ))


def train_baseline(dataset: Dataset, model: SegModel, state: AdamState,
                   config: TrainConfig, eval_dataset: Dataset | None = None,
                   start_step: int = 0) -> TrainHistory:
    """Train against the dataset's stored masks; model and state are mutated."""
    config.validate()
    if not dataset.items:
        raise ConfigError("training dataset is empty")
    for item in dataset.items:
        if item.mask is None:
            raise ConfigError(f"entry {item.id!r} has no mask; baseline training needs labels")
    history = TrainHistory()
    step = start_step
    for epoch in range(1, config.epochs + 1):
        order = batch_order(config.shuffle_seed, epoch, len(dataset.items))
        for batch in _batches(order, config.batch_size):
            items = [dataset.items[i] for i in batch]
            loss = _batch_step(
                model, state,
                [it.patch for it in items], [it.mask for it in items],
            )
            step += 1
            history.records.append(HistoryRecord(
                step=step, epoch=epoch, loss=loss,
                threshold=None, best_loss=None, action="",
            ))
        _snapshot(history, epoch, eval_dataset, model, config.prediction_cut)
    return history


def cal_finetune(dataset: Dataset, model: SegModel, state: AdamState,
                 config: TrainConfig, eval_dataset: Dataset | None = None,
                 ) -> tuple[TrainHistory, ThresholdController]:
    """Fine-tune with on-the-fly relabeling; stored masks are never read.

    Per batch: mix bands to intensity, threshold at the controller's live
    value, take one optimizer step against those labels, then let the
    controller observe the batch loss.
    """
    config.validate()
    if config.mode != MODE_CAL_FINETUNE:
        raise ConfigError(f"cal_finetune requires mode {MODE_CAL_FINETUNE!r}, got {config.mode!r}")
    if not dataset.items:
        raise ConfigError("training dataset is empty")
    weights = config.intensity_weights
    if weights is None:
        weights = uniform_weights(len(dataset.bands))
    controller = ThresholdController(config.controller)
    history = TrainHistory()
    step = 0
    for epoch in range(1, config.epochs + 1):
        order = batch_order(config.shuffle_seed, epoch, len(dataset.items))
        for batch in _batches(order, config.batch_size):
            items = [dataset.items[i] for i in batch]
            threshold = controller.current_threshold()
            labels = [
                binarize(to_intensity(it.patch, weights), threshold) for it in items
            ]
            positives = sum(int(lab.values.sum()) for lab in labels)
            pixels = sum(lab.values.size for lab in labels)
            if positives == 0 or positives == pixels:
                history.degenerate_batches += 1
            loss = _batch_step(model, state, [it.patch for it in items], labels)
            event = controller.observe(loss)
            step += 1
            history.records.append(HistoryRecord(
                step=step, epoch=epoch, loss=loss,
                threshold=event.threshold_after,
                best_loss=event.best_loss_after,
                action=event.action,
            ))
        _snapshot(history, epoch, eval_dataset, model, config.prediction_cut)
    if history.degenerate_batches:
        logger.info("fine-tuning produced %d degenerate (single-class) relabeled batches",
                    history.degenerate_batches)
    return history, controller


def relabel_dataset(dataset: Dataset, threshold: float,
                    weights: Sequence[float] | None = None,
                    opening_radius: int = 0, closing_radius: int = 0) -> Dataset:
    """Replace every mask by thresholding the band-mixed intensities."""
    if not (0.0 <= threshold <= 255.0):
        raise ConfigError(f"relabel threshold must lie in [0, 255], got {threshold}")
    if weights is None:
        weights = uniform_weights(len(dataset.bands))
    masks = []
    for item in dataset.items:
        mask = binarize(to_intensity(item.patch, weights), threshold)
        if opening_radius or closing_radius:
            mask = morph_clean(mask, opening_radius, closing_radius)
        masks.append(mask)
    return relabeled_copy(dataset, masks)


def evaluate_confusion(dataset: Dataset, model: SegModel, cut: float = 0.5) -> ConfusionMatrix:
    """Micro-averaged confusion counts over all labeled patches."""
    if not dataset.items:
        raise DatasetError("cannot evaluate an empty dataset")
    cm = ConfusionMatrix()
    for item in dataset.items:
        if item.mask is None:
            raise DatasetError(f"entry {item.id!r} has no ground-truth mask")
        cm = accumulate(cm, predict_mask(model, item.patch, cut), item.mask)
    return cm


def evaluate(dataset: Dataset, model: SegModel, cut: float = 0.5) -> MetricsReport:
    return report(evaluate_confusion(dataset, model, cut))


def epoch_mean_losses(history: TrainHistory) -> dict[int, float]:
    """Mean of the recorded batch losses per epoch."""
    sums: dict[int, list[float]] = {}
    for record in history.records:
        sums.setdefault(record.epoch, []).append(record.loss)
    return {epoch: float(np.mean(losses)) for epoch, losses in sorted(sums.items())}


def _fmt(value: float | None) -> str:
    return "" if value is None else f"{value:.6f}"


def write_history_csv(history: TrainHistory, path) -> Path:
    path = Path(path)
    lines = [HISTORY_CSV_HEADER]
    for r in history.records:
        lines.append(
            f"{r.step},{r.epoch},{r.loss:.6f},{_fmt(r.threshold)},{_fmt(r.best_loss)},{r.action}"
        )
    path.write_text("\n".join(lines) + "\n", encoding="ascii")
    return path


def write_snapshots_csv(history: TrainHistory, path) -> Path:
    path = Path(path)
    lines = [SNAPSHOTS_CSV_HEADER]
    for s in history.snapshots:
        lines.append(
            f"{s.epoch},{s.miou:.6f},{s.precision:.6f},{s.recall:.6f},{s.f1:.6f},{s.oa:.6f}"
        )
    path.write_text("\n".join(lines) + "\n", encoding="ascii")
    return path


def read_history_csv(path) -> list[HistoryRecord]:
    path = Path(path)
    lines = path.read_text(encoding="ascii").splitlines()
    if not lines or lines[0] != HISTORY_CSV_HEADER:
        raise DatasetError(f"{path}: not a history CSV (bad header)")
    records = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        cells = line.split(",")
        if len(cells) != 6:
            raise DatasetError(f"{path}:{lineno}: expected 6 cells, got {len(cells)}")
        records.append(HistoryRecord(
            step=int(cells[0]),
            epoch=int(cells[1]),
            loss=float(cells[2]),
            threshold=float(cells[3]) if cells[3] else None,
            best_loss=float(cells[4]) if cells[4] else None,
            action=cells[5],
        ))
    return records


def read_snapshots_csv(path) -> list[EpochSnapshot]:
    path = Path(path)
    lines = path.read_text(encoding="ascii").splitlines()
    if not lines or lines[0] != SNAPSHOTS_CSV_HEADER:
        raise DatasetError(f"{path}: not a snapshots CSV (bad header)")
    snapshots = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        cells = line.split(",")
        if len(cells) != 6:
            raise DatasetError(f"{path}:{lineno}: expected 6 cells, got {len(cells)}")
        snapshots.append(EpochSnapshot(
            epoch=int(cells[0]), miou=float(cells[1]), precision=float(cells[2]),
            recall=float(cells[3]), f1=float(cells[4]), oa=float(cells[5]),
        ))
    return snapshots
