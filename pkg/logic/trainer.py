"""
Weakly supervised training.

Training clips carry only weak labels; frame targets for the strong head are
the weak label replicated over every frame. The loss is a weighted sum of the
strong and weak binary cross-entropies, and training stops early when the
validation metric weak_F / 100 - strong_ER stops improving.
"""
import csv
import dataclasses
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from exceptions import ConfigError, InvalidArgumentError, NumericalError
from .crnn_model import ModelConfig, SedModel, build
from .dataset import Example
from .event_decoding import weak_from_strong
from .losses import combined_loss
from .optim import AdamState, adam_step
from .sed_metrics import SplitReport, evaluate_split
from .tensor import TRAIN

__all__ = [
    'TrainConfig', 'EpochReport', 'FitResult', 'SweepRow', 'EarlyStopping',
    'replicate_weak_to_strong', 'weak_vector', 'weak_from_strong', 'training_metric',
    'fit', 'weight_sweep', 'dropout_sweep', 'sweep_weight_pairs',
    'EPOCH_LOG_HEADER', 'SWEEP_HEADER', 'SWEEP_WEIGHTS', 'SWEEP_DROPOUTS',
]

logger = logging.getLogger(__name__)

SWEEP_WEIGHTS = (0.002, 0.02, 0.2, 1.0)
SWEEP_DROPOUTS = (0.05, 0.15, 0.25, 0.5, 0.75)
EPOCH_LOG_HEADER = ['epoch', 'strong_loss', 'weak_loss', 'total_loss', 'precision', 'recall',
                    'f_score', 'strong_er', 'strong_f', 'metric', 'best']


@dataclass
class TrainConfig:
    strong_weight: float = 1.0
    weak_weight: float = 1.0
    max_epochs: int = 1000
    patience: int = 100
    batch_size: int = 32
    dropout_rate: float = 0.15
    lr: float = 1e-3
    seed: int = 0
    metric_segment_s: float = 1.0
    threshold: float = 0.5
    # Validation scoring only; parameter updates always run on the calling thread.
    threads: int = 1

    def validate(self) -> "TrainConfig":
        if self.strong_weight < 0 or self.weak_weight < 0:
            raise ConfigError("Loss weights must be nonnegative.")
        if self.strong_weight == 0 and self.weak_weight == 0:
            raise ConfigError("At least one of strong_weight and weak_weight must be positive.")
        if self.max_epochs < 1:
            raise ConfigError(f"max_epochs must be at least 1, got {self.max_epochs}.")
        if not 1 <= self.patience < self.max_epochs:
            raise ConfigError(
                f"patience ({self.patience}) must be at least 1 and below max_epochs "
                f"({self.max_epochs}).")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be at least 1, got {self.batch_size}.")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}.")
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}.")
        if self.metric_segment_s <= 0:
            raise ConfigError(f"metric_segment_s must be positive, got {self.metric_segment_s}.")
        if self.threads < 1:
            raise ConfigError(f"threads must be at least 1, got {self.threads}.")
        return self


@dataclass
class EpochReport:
    epoch: int
    strong_loss: float
    weak_loss: float
    total_loss: float
    precision: float
    recall: float
    f_score: float
    strong_er: float | None
    strong_f: float | None
    metric: float
    is_best: bool = False

    def csv_row(self) -> list[str]:
        def fmt(v):
            return '' if v is None else f"{v:.6f}"
        return [str(self.epoch), fmt(self.strong_loss), fmt(self.weak_loss), fmt(self.total_loss),
                fmt(self.precision), fmt(self.recall), fmt(self.f_score), fmt(self.strong_er),
                fmt(self.strong_f), fmt(self.metric), '1' if self.is_best else '0']


@dataclass
class FitResult:
    best_epoch: int
    best_metric: float
    history: list[EpochReport] = field(default_factory=list)
    stopped_early: bool = False


def replicate_weak_to_strong(weak: np.ndarray, num_frames: int) -> np.ndarray:
    """T x C grid whose every row is the weak label vector."""
    if num_frames < 1:
        raise InvalidArgumentError(f"num_frames must be at least 1, got {num_frames}.")
    weak = np.asarray(weak)
    return np.tile(weak, (num_frames, 1))


def weak_vector(labels: set[int], num_classes: int) -> np.ndarray:
    vector = np.zeros(num_classes)
    vector[list(labels)] = 1.0
    return vector


def training_metric(weak_f: float, strong_er: float | None) -> float:
    """weak_F / 100 - strong_ER, higher is better; weak_F / 100 alone without strong references."""
    if strong_er is None:
        return weak_f / 100.0
    return weak_f / 100.0 - strong_er


class EarlyStopping:
    """Tracks the best score; stops once `patience` epochs pass without a strict improvement."""
    def __init__(self, patience: int):
        self.patience = patience
        self.best_score = -math.inf
        self.best_epoch = 0
        self.epochs_without_improvement = 0

    def update(self, epoch: int, score: float) -> bool:
        """Records an epoch's score; returns True if it is a new best."""
        if score > self.best_score:
            self.best_score = score
            self.best_epoch = epoch
            self.epochs_without_improvement = 0
            return True
        self.epochs_without_improvement += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.epochs_without_improvement >= self.patience


def _stack(examples: list[Example], num_classes: int) -> tuple[np.ndarray, np.ndarray]:
    frame_counts = {e.features.num_frames for e in examples}
    if len(frame_counts) != 1:
        raise ConfigError(
            f"All training clips must have the same number of frames, got {sorted(frame_counts)}.")
    features = np.stack([e.features.values for e in examples])
    targets = np.stack([weak_vector(e.weak, num_classes) for e in examples])
    return features, targets


def _snapshot(model: SedModel) -> tuple[dict[str, np.ndarray], dict[str, np.ndarray]]:
    return ({n: t.values.copy() for n, t in model.parameters().items()},
            {n: a.copy() for n, a in model.buffers().items()})


def _restore(model: SedModel, snapshot) -> None:
    params, buffers = snapshot
    for name, tensor in model.parameters().items():
        tensor.assign(params[name])
    model.load_buffers(buffers)


def _train_epoch(model: SedModel, features: np.ndarray, targets: np.ndarray, cfg: TrainConfig,
                 state: AdamState, rng: np.random.Generator, epoch: int) -> tuple[float, float, float]:
    count, num_frames = features.shape[0], features.shape[1]
    order = rng.permutation(count)
    sums = np.zeros(3)
    for batch_no, start in enumerate(range(0, count, cfg.batch_size)):
        idx = order[start:start + cfg.batch_size]
        weak_target = targets[idx]
        strong_target = np.stack([replicate_weak_to_strong(w, num_frames) for w in weak_target])

        strong, weak = model.forward_batch(features[idx], TRAIN)
        result = combined_loss(strong, strong_target, weak, weak_target,
                               cfg.strong_weight, cfg.weak_weight)
        if not math.isfinite(result.total):
            raise NumericalError(
                f"Loss became {result.total} in epoch {epoch}, batch {batch_no} "
                f"(strong {result.strong_loss}, weak {result.weak_loss}).", code='NAN_LOSS')
        model.backward(result.grad_strong, result.grad_weak)
        adam_step(model.parameters(), state)
        sums += len(idx) * np.array([result.strong_loss, result.weak_loss, result.total])
    return tuple(float(v) for v in sums / count)


def fit(model: SedModel, train_set: list[Example], validation_set: list[Example],
        cfg: TrainConfig, log_path: str | Path | None = None) -> FitResult:
    """
    Trains `model` in place on weak labels only and leaves it holding the
    parameters of the best validation epoch.

    Raises:
        InvalidArgumentError: if either split is empty.
        ConfigError: if training clips differ in frame count.
        NumericalError: if the loss becomes NaN or infinite.
    """
    cfg.validate()
    if not train_set:
        raise InvalidArgumentError("The training set is empty.")
    if not validation_set:
        raise InvalidArgumentError("The validation set is empty.")
    if not any(e.strong is not None for e in validation_set):
        logger.warning("Validation split has no strong labels; early stopping uses weak F only.")

    features, targets = _stack(train_set, model.num_classes)
    state = AdamState(lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    stopper = EarlyStopping(cfg.patience)
    result = FitResult(best_epoch=0, best_metric=-math.inf)
    best = _snapshot(model)

    log_file = None
    if log_path is not None:
        Path(log_path).parent.mkdir(parents=True, exist_ok=True)
        log_file = open(log_path, 'w', newline='', encoding='utf-8')
    try:
        writer = csv.writer(log_file) if log_file else None
        if writer:
            writer.writerow(EPOCH_LOG_HEADER)
        for epoch in range(1, cfg.max_epochs + 1):
            strong_loss, weak_loss, total = _train_epoch(model, features, targets, cfg, state, rng, epoch)
            report = evaluate_split(model, validation_set, cfg.metric_segment_s, cfg.threshold,
                                    cfg.threads)
            metric = training_metric(report.f_score, report.strong_er)
            improved = stopper.update(epoch, metric)
            if improved:
                best = _snapshot(model)
            epoch_report = EpochReport(epoch, strong_loss, weak_loss, total, report.precision,
                                       report.recall, report.f_score, report.strong_er,
                                       report.strong_f, metric, improved)
            result.history.append(epoch_report)
            if writer:
                writer.writerow(epoch_report.csv_row())
                log_file.flush()
            logger.info("Epoch %d: loss %.4f (strong %.4f, weak %.4f)  weak P/R/F %.1f/%.1f/%.1f  "
                        "ER %s  segF %s  metric %.4f%s", epoch, total, strong_loss, weak_loss,
                        report.precision, report.recall, report.f_score,
                        'n/a' if report.strong_er is None else f"{report.strong_er:.3f}",
                        'n/a' if report.strong_f is None else f"{report.strong_f:.1f}",
                        metric, "  *best*" if improved else "")
            if stopper.should_stop:
                result.stopped_early = True
                logger.info("Stopping early after epoch %d: no improvement for %d epochs.",
                            epoch, cfg.patience)
                break
    finally:
        if log_file:
            log_file.close()

    _restore(model, best)
    result.best_epoch, result.best_metric = stopper.best_epoch, stopper.best_score
    logger.info("Best epoch %d with metric %.4f.", result.best_epoch, result.best_metric)
    return result


@dataclass
class SweepRow:
    strong_weight: float
    weak_weight: float
    dropout_rate: float
    report: SplitReport
    best_epoch: int

    def csv_row(self, include_dropout: bool = False) -> list[str]:
        def fmt(v):
            return 'n/a' if v is None else f"{v:.4f}"
        prefix = [f"{self.dropout_rate:g}"] if include_dropout else []
        return prefix + [f"{self.strong_weight:g}", f"{self.weak_weight:g}",
                         fmt(self.report.precision), fmt(self.report.recall), fmt(self.report.f_score),
                         fmt(self.report.strong_er), fmt(self.report.strong_f)]


SWEEP_HEADER = ['strong_weight', 'weak_weight', 'precision', 'recall', 'f_score', 'strong_er', 'strong_f']


def sweep_weight_pairs(weights=SWEEP_WEIGHTS) -> list[tuple[float, float]]:
    """
    (w, 1) for every weight in ascending order, then (1, w) for every weight
    below 1 in descending order.
    """
    weights = sorted(set(float(w) for w in weights))
    if not weights:
        raise InvalidArgumentError("At least one loss weight is required.")
    if any(w <= 0 for w in weights):
        raise InvalidArgumentError(f"Loss weights must be positive, got {weights}.")
    pairs = [(w, 1.0) for w in weights]
    pairs += [(1.0, w) for w in reversed(weights) if w < 1.0]
    return pairs


def _run(train_set, validation_set, model_config: ModelConfig, train_config: TrainConfig,
         strong_weight: float, weak_weight: float, dropout_rate: float) -> SweepRow:
    cfg = dataclasses.replace(train_config, strong_weight=strong_weight, weak_weight=weak_weight,
                              dropout_rate=dropout_rate)
    model = build(dataclasses.replace(model_config, dropout_rate=dropout_rate))
    fit_result = fit(model, train_set, validation_set, cfg)
    report = evaluate_split(model, validation_set, cfg.metric_segment_s, cfg.threshold,
                            cfg.threads)
    return SweepRow(strong_weight, weak_weight, dropout_rate, report, fit_result.best_epoch)


def weight_sweep(train_set: list[Example], validation_set: list[Example],
                 weight_pairs: list[tuple[float, float]], model_config: ModelConfig,
                 train_config: TrainConfig) -> list[SweepRow]:
    """Trains one fresh, identically seeded model per (strong, weak) weight pair."""
    rows = []
    for strong_weight, weak_weight in weight_pairs:
        logger.info("Sweep: strong weight %g, weak weight %g.", strong_weight, weak_weight)
        rows.append(_run(train_set, validation_set, model_config, train_config,
                         strong_weight, weak_weight, train_config.dropout_rate))

    by_pair = {(r.strong_weight, r.weak_weight): r for r in rows}
    if (1.0, 1.0) in by_pair and (1.0, 0.002) in by_pair:
        logger.info("Weak F with weak weight 0.002: %.1f vs. balanced weights: %.1f.",
                    by_pair[(1.0, 0.002)].report.f_score, by_pair[(1.0, 1.0)].report.f_score)
    return rows


def dropout_sweep(train_set: list[Example], validation_set: list[Example],
                  dropout_rates: list[float], model_config: ModelConfig,
                  train_config: TrainConfig) -> list[SweepRow]:
    """Trains one fresh model per dropout rate with both loss weights at 1."""
    if not dropout_rates:
        raise InvalidArgumentError("At least one dropout rate is required.")
    rows = []
    for rate in dropout_rates:
        logger.info("Sweep: dropout %g.", rate)
        rows.append(_run(train_set, validation_set, model_config, train_config, 1.0, 1.0, rate))
    return rows
