"""Multi-seed runs and the ablation table."""
from __future__ import annotations

import statistics
from dataclasses import dataclass, replace
from typing import Callable, Sequence

from .data import DatasetSplit, Dialogue, FeatureHeader, split_train_val
from .metrics import MetricsReport
from .train import TrainConfig, TrainResult, evaluate, train

VARIANTS: dict[str, list[str]] = {
    "full": [],
    "text_only": ["text_only"],
    "audio_only": ["audio_only"],
    "no_inter_attention": ["no_inter_attention"],
    "no_intra_attention": ["no_intra_attention"],
    "no_ffn": ["no_ffn"],
    "no_dual_gate": ["no_dual_gate"],
}


@dataclass
class RunOutcome:
    seed: int
    result: TrainResult
    test: MetricsReport


def resolve_split(header: FeatureHeader, train_pool: Sequence[Dialogue], val: Sequence[Dialogue] | None,
                  test: Sequence[Dialogue], seed: int, val_ratio: float) -> DatasetSplit:
    """Use the given validation set, or carve one out of the training pool per seed."""
    if val:
        return DatasetSplit(header, list(train_pool), list(val), list(test))
    tr, va = split_train_val(train_pool, val_ratio, seed)
    return DatasetSplit(header, tr, va, list(test))


def run_seed(config: TrainConfig, split: DatasetSplit, progress: Callable | None = None) -> RunOutcome:
    result = train(config, split, progress)
    test = evaluate(result.model, split.test, config.batch_size, list(split.header.labels))
    return RunOutcome(config.seed, result, test)


def summarize(outcomes: Sequence[RunOutcome]) -> dict:
    """Mean and standard deviation of test scores across seeds."""

    def stats(values):
        values = list(values)
        return {"mean": statistics.fmean(values), "std": statistics.pstdev(values) if len(values) > 1 else 0.0}

    return {
        "seeds": [o.seed for o in outcomes],
        "test_accuracy": stats(o.test.accuracy for o in outcomes),
        "test_macro_f1": stats(o.test.macro_f1 for o in outcomes),
        "test_weighted_f1": stats(o.test.weighted_f1 for o in outcomes),
        "test_ova_accuracy": stats(o.test.ova_binary_accuracy for o in outcomes),
    }


def run_ablations(config: TrainConfig, split: DatasetSplit, variants: Sequence[str] = tuple(VARIANTS)) -> list[dict]:
    """Train every variant with the same seed and data; one row per variant."""
    rows = []
    for name in variants:
        cfg = replace(config, ablation=list(VARIANTS[name]))
        outcome = run_seed(cfg, split)
        rows.append({
            "variant": name,
            "test_accuracy": outcome.test.accuracy,
            "test_macro_f1": outcome.test.macro_f1,
            "best_epoch": outcome.result.best_epoch,
            "val_macro_f1": outcome.result.best["val_macro_f1"],
        })
    return rows
