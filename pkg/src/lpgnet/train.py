"""Training loop, evaluation, and model construction from a config."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Callable, Sequence

import numpy as np

from .baseline import StackedTransformer
from .checkpoint import Checkpoint
from .data import DatasetSplit, Dialogue, FeatureHeader, pad_batch
from .errors import ContractError, DivergenceError, SchemaError
from .heads import KL_DIRECTIONS
from .metrics import MetricsReport, confusion_matrix, report_from_confusion
from .model import Ablation, LpgNet
from .optim import Adam
from .rng import Streams, generator
from .tensor import no_grad

log = logging.getLogger(__name__)

ARCHS = ("lpgnet", "stacked")


@dataclass
class TrainConfig:
    """Flat training configuration. Defaults follow the reported setup."""

    arch: str = "lpgnet"
    learning_rate: float = 3e-4
    batch_size: int = 32
    hidden: int = 768
    d_ff: int | None = None
    epochs: int = 150
    weight_decay: float = 1e-5
    dropout: float = 0.1
    tau: float = 1.0
    lambda_task: float = 1.5
    lambda_ce: float = 1.0
    lambda_kl: float = 0.3
    seed: int = 0
    ablation: list[str] = field(default_factory=list)
    kl_direction: str = "student_teacher"
    students: bool = True
    grad_clip: float | None = None
    val_ratio: float = 0.1
    leaky_slope: float = 0.01

    def __post_init__(self):
        self.ablation = sorted(set(self.ablation))
        self.validate()

    def validate(self) -> None:
        if self.arch not in ARCHS:
            raise ContractError(f"arch must be one of {ARCHS}, got {self.arch!r}")
        if not self.learning_rate > 0 or not self.tau > 0:
            raise ContractError("learning_rate and tau must be positive")
        if self.batch_size < 1 or self.hidden < 1 or self.epochs < 1:
            raise ContractError("batch_size, hidden and epochs must be positive")
        if self.weight_decay < 0 or not 0 <= self.dropout < 1:
            raise ContractError("weight_decay must be >= 0 and dropout in [0, 1)")
        if min(self.lambdas) < 0:
            raise ContractError("loss weights must be non-negative")
        if self.kl_direction not in KL_DIRECTIONS:
            raise ContractError(f"kl_direction must be one of {KL_DIRECTIONS}")
        if not 0 < self.val_ratio < 1:
            raise ContractError("val_ratio must lie in (0, 1)")
        self.ablation_flags  # noqa: B018 - raises on bad combinations

    @property
    def lambdas(self) -> tuple[float, float, float]:
        return (self.lambda_task, self.lambda_ce, self.lambda_kl)

    @property
    def ablation_flags(self) -> Ablation:
        return Ablation.from_names(self.ablation)

    @property
    def ffn_width(self) -> int:
        return self.d_ff if self.d_ff is not None else 2 * self.hidden

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        obj = dict(obj)
        ablation = list(obj.pop("ablation", []) or [])
        for flag in Ablation.names():
            if flag in obj:
                if obj.pop(flag):
                    ablation.append(flag)
        unknown = set(obj) - known
        if unknown:
            raise ContractError(f"unknown config keys {sorted(unknown)}")
        return cls(**obj, ablation=ablation)

    @classmethod
    def desk(cls, **overrides) -> "TrainConfig":
        """Desk-scale preset: d=64 and a schedule short enough for a laptop."""
        base = dict(hidden=64, epochs=50, batch_size=8, learning_rate=1e-3)
        base.update(overrides)
        return cls(**base)


def build_model(config: TrainConfig, header: FeatureHeader, seed: int | None = None):
    seed = config.seed if seed is None else seed
    rng = generator(seed, "init")
    common = dict(f_t=header.f_t, f_a=header.f_a, num_classes=header.num_classes, d=config.hidden,
                  d_ff=config.ffn_width, dropout=config.dropout, rng=rng)
    if config.arch == "stacked":
        return StackedTransformer(**common)
    return LpgNet(**common, ablation=config.ablation_flags, students=config.students, tau=config.tau,
                  lambdas=config.lambdas, kl_direction=config.kl_direction, leaky_slope=config.leaky_slope)


def model_from_checkpoint(ckpt: Checkpoint):
    config = TrainConfig.from_dict(ckpt.config)
    hp = ckpt.model["hparams"]
    header = FeatureHeader(hp["f_t"], hp["f_a"], hp["num_classes"], tuple(ckpt.labels))
    model = build_model(config, header)
    model.load_state_dict(ckpt.state)
    return model.eval()


def training_batches(dialogues: Sequence[Dialogue], batch_size: int, min_batch: int = 2):
    """Chunk dialogues, folding an undersized tail into the previous batch."""
    groups = [list(dialogues[i : i + batch_size]) for i in range(0, len(dialogues), batch_size)]
    if len(groups) > 1 and len(groups[-1]) < min_batch:
        groups[-2].extend(groups.pop())
    return [b for g in groups for b in pad_batch(g, len(g))]


def predict(model, dialogues: Sequence[Dialogue], batch_size: int = 32) -> tuple[np.ndarray, np.ndarray]:
    """Return flat ``(y_true, y_pred)`` over every valid utterance."""
    was_training = model.training
    model.eval()
    trues, preds = [], []
    try:
        with no_grad():
            for batch in pad_batch(list(dialogues), batch_size):
                out = model.forward(batch)
                valid = batch.mask > 0
                trues.append(batch.labels[valid])
                preds.append(out.predictions()[valid])
    finally:
        model.train(was_training)
    if not trues:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    return np.concatenate(trues), np.concatenate(preds)


def evaluate(model_or_ckpt, dialogues: Sequence[Dialogue], batch_size: int = 32, labels=None) -> MetricsReport:
    """Score a model (or checkpoint) on ``dialogues``; padding never counts."""
    if isinstance(model_or_ckpt, Checkpoint):
        labels = labels or model_or_ckpt.labels
        model = model_from_checkpoint(model_or_ckpt)
    else:
        model = model_or_ckpt
    num_classes = model.hparams["num_classes"]
    if not dialogues or sum(len(d) for d in dialogues) == 0:
        raise ContractError("evaluation set is empty")
    for d in dialogues:
        if d.labels.size and d.labels.max() >= num_classes:
            raise SchemaError(f"dialogue {d.id!r} has label {int(d.labels.max())} but the model has {num_classes} classes")
    y_true, y_pred = predict(model, dialogues, batch_size)
    return report_from_confusion(confusion_matrix(y_true, y_pred, num_classes), labels)


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    history: list[dict]
    model: object
    best_epoch: int

    @property
    def best(self) -> dict:
        return self.history[self.best_epoch - 1]


HISTORY_FIELDS = ("epoch", "loss_total", "loss_task", "loss_ce_t", "loss_ce_a", "loss_kl_t", "loss_kl_a",
                  "train_accuracy", "val_accuracy", "val_macro_f1", "val_weighted_f1", "val_ova_accuracy")


def train(config: TrainConfig, split: DatasetSplit, progress: Callable[[dict], None] | None = None) -> TrainResult:
    """Fit a model on ``split.train`` and keep the epoch with the best validation macro-F1."""
    if not split.train or not split.val:
        raise ContractError("training needs non-empty train and validation splits")
    if config.arch == "lpgnet" and (config.batch_size < 2 or len(split.train) < 2):
        raise ContractError("batch-norm training needs batch_size >= 2 and at least two training dialogues")
    model = build_model(config, split.header)
    model.train()
    opt = Adam(model.named_parameters(), lr=config.learning_rate, weight_decay=config.weight_decay,
               grad_clip=config.grad_clip)
    streams = Streams(config.seed)
    labels = list(split.header.labels)
    history: list[dict] = []
    best_state, best_score, best_epoch = None, -math.inf, 0
    for epoch in range(1, config.epochs + 1):
        order = generator(config.seed, "shuffle", epoch).permutation(len(split.train))
        batches = training_batches([split.train[i] for i in order], config.batch_size)
        sums = dict.fromkeys(("total", "task", "ce_t", "ce_a", "kl_t", "kl_a"), 0.0)
        correct = seen = 0
        for bi, batch in enumerate(batches):
            opt.zero_grad()
            bundle, out = model.loss(batch, noise=streams.child("dropout", epoch, bi))
            value = bundle.total.item()
            if not math.isfinite(value):
                raise DivergenceError(epoch, bi, value)
            bundle.total.backward()
            opt.step()
            n = batch.num_valid
            for key, v in bundle.values().items():
                sums[key] += v * n
            valid = batch.mask > 0
            correct += int((out.predictions()[valid] == batch.labels[valid]).sum())
            seen += n
        val = evaluate(model, split.val, config.batch_size, labels)
        row = {"epoch": epoch}
        row.update({f"loss_{k}": v / seen for k, v in sums.items()})
        row.update(train_accuracy=correct / seen, val_accuracy=val.accuracy, val_macro_f1=val.macro_f1,
                   val_weighted_f1=val.weighted_f1, val_ova_accuracy=val.ova_binary_accuracy)
        history.append(row)
        if progress is not None:
            progress(row)
        log.debug("epoch %d: %s", epoch, row)
        if val.macro_f1 > best_score:
            best_score, best_epoch, best_state = val.macro_f1, epoch, model.state_dict()
    model.load_state_dict(best_state)
    model.eval()
    ckpt = Checkpoint(
        state=best_state,
        config=config.to_dict(),
        model={"arch": config.arch, "hparams": dict(model.hparams), "labels": labels},
        epoch=best_epoch,
        history=history,
        buffers=tuple(name for name, _ in model.named_buffers()),
    )
    return TrainResult(ckpt, history, model, best_epoch)


def write_history_csv(path, history: Sequence[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(HISTORY_FIELDS), lineterminator="\n")
        writer.writeheader()
        for row in history:
            writer.writerow({k: row[k] for k in HISTORY_FIELDS})


def with_overrides(config: TrainConfig, **kwargs) -> TrainConfig:
    return replace(config, **{k: v for k, v in kwargs.items() if v is not None})
